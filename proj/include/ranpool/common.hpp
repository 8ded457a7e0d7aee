#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace ranpool {

using StationId = std::int64_t;
using Rng = std::mt19937_64;

/// Input that cannot be parsed (CSV rows, JSON documents).
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration or precondition on user-supplied parameters.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// NaN/Inf, divergence, or any other numerical breakdown during training.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape or partition mismatch between parameter sets.
class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::uint64_t fnv1a64(std::string_view bytes,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Independent rng stream for a named stage under a global seed.
inline Rng derive_rng(std::uint64_t seed, std::string_view stage) {
  return Rng(splitmix64(seed ^ fnv1a64(stage)));
}

inline Rng derive_rng(std::uint64_t seed, std::string_view stage,
                      std::uint64_t index) {
  return Rng(splitmix64(splitmix64(seed ^ fnv1a64(stage)) + index));
}

}  // namespace ranpool
