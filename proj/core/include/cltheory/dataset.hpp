#pragma once

#include "cltheory/types.hpp"

#include <string>

namespace cltheory {

enum class Split { Train, Test };

struct Dataset {
  Matrix x;  // P x N0, one example per row
  Vector y;  // P labels
  std::string task_id;
  Split split = Split::Train;
  std::string provenance;

  Eigen::Index size() const { return x.rows(); }
  Eigen::Index input_dim() const { return x.cols(); }
  // Throws when X and Y disagree in length or hold non-finite values.
  void validate() const;
};

}  // namespace cltheory
