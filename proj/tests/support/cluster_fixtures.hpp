#pragma once

#include <Eigen/Core>

#include <random>
#include <vector>

#include "ranpool/common.hpp"

namespace ranpool::testing {

/// Three well separated unit-variance blobs of `per_blob` points each.
inline Eigen::MatrixX2d blobs(int per_blob, std::uint64_t seed, std::vector<int>* labels = nullptr) {
  const double centers[3][2] = {{0, 0}, {30, 0}, {15, 25}};
  Rng rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::MatrixX2d p(3 * per_blob, 2);
  for (int b = 0; b < 3; ++b)
    for (int i = 0; i < per_blob; ++i) {
      p.row(b * per_blob + i) << centers[b][0] + n(rng), centers[b][1] + n(rng);
      if (labels) labels->push_back(b);
    }
  return p;
}

}  // namespace ranpool::testing
