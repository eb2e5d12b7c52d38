#pragma once

#include <Eigen/Dense>

#include <limits>
#include <stdexcept>
#include <string>

namespace cltheory {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Raised for violated preconditions or numerical failures. The message names
// the module and the violated condition.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Perturbation penalty. Infinite is a symbolic state, never a large float.
class Lambda {
 public:
  static Lambda finite(double value);
  static Lambda infinite() { return Lambda(0.0, true); }

  bool is_infinite() const { return infinite_; }
  // Only meaningful for finite penalties.
  double value() const;
  std::string to_string() const;
  // Finite value, or +inf for CSV/JSON reporting.
  double as_double() const {
    return infinite_ ? std::numeric_limits<double>::infinity() : value_;
  }

  friend bool operator==(const Lambda& a, const Lambda& b) {
    return a.infinite_ == b.infinite_ && (a.infinite_ || a.value_ == b.value_);
  }

 private:
  Lambda(double v, bool inf) : value_(v), infinite_(inf) {}
  double value_;
  bool infinite_;
};

enum class Nonlinearity { Linear, Relu };

Nonlinearity parse_nonlinearity(const std::string& name);
std::string to_string(Nonlinearity nl);

}  // namespace cltheory
