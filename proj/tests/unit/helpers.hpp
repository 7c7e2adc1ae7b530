// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include <gtest/gtest.h>

#include "forge/linalg.hpp"
#include "forge/rng.hpp"

namespace forge::test {

inline constexpr double kFdEps = 1e-4;
inline constexpr double kFdTol = 1e-3;
// Gradients below this magnitude are compared in absolute terms.
inline constexpr double kFdFloor = 1e-6;

inline Mat random_mat(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  return gaussian_matrix(rows, cols, scale, rng);
}

inline double fd_rel_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), kFdFloor});
}

// Central differences of loss() over every entry of t against `analytic`.
// Returns the worst per-coordinate relative error.
template <typename Loss>
double worst_fd_error(Mat& t, const Mat& analytic, Loss loss) {
  EXPECT_EQ(t.rows(), analytic.rows());
  EXPECT_EQ(t.cols(), analytic.cols());
  double worst = 0.0;
  for (Eigen::Index i = 0; i < t.size(); ++i) {
    const double keep = t.data()[i];
    t.data()[i] = keep + kFdEps;
    const double up = loss();
    t.data()[i] = keep - kFdEps;
    const double down = loss();
    t.data()[i] = keep;
    worst = std::max(worst, fd_rel_error(analytic.data()[i], (up - down) / (2.0 * kFdEps)));
  }
  return worst;
}

}  // namespace forge::test
