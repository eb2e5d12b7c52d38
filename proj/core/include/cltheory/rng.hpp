#pragma once

#include <cstdint>
#include <limits>
#include <string_view>

namespace cltheory {

// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// FNV-1a over the tag bytes, so purpose tags are stable across builds.
constexpr std::uint64_t tag_hash(std::string_view tag) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : tag) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Stream key for (seed, task_index, purpose-tag). The key is
// mix64(mix64(mix64(seed) ^ task_index) ^ tag_hash(tag)); draw n of the stream
// is mix64(key + n * golden), so any draw can be regenerated from its counter.
constexpr std::uint64_t stream_key(std::uint64_t seed, std::uint64_t task_index,
                                   std::string_view tag) {
  return mix64(mix64(mix64(seed) ^ task_index) ^ tag_hash(tag));
}

// Counter-based generator satisfying UniformRandomBitGenerator.
class CounterRng {
 public:
  using result_type = std::uint64_t;

  explicit CounterRng(std::uint64_t key, std::uint64_t counter = 0)
      : key_(key), counter_(counter) {}
  CounterRng(std::uint64_t seed, std::uint64_t task_index, std::string_view tag)
      : key_(stream_key(seed, task_index, tag)), counter_(0) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    return mix64(key_ + (counter_++) * 0x9e3779b97f4a7c15ULL);
  }

  // Independent child stream, e.g. one per matrix row.
  CounterRng child(std::uint64_t index) const { return CounterRng(mix64(key_ ^ mix64(index + 1))); }

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_;
};

}  // namespace cltheory
