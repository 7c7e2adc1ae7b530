// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

#include <Eigen/Dense>

namespace forge {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); }

inline double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

// Row-wise softmax; rows sum to one.
inline void softmax_rows(Mat& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const double mx = m.row(r).maxCoeff();
    m.row(r) = (m.row(r).array() - mx).exp();
    m.row(r) /= m.row(r).sum();
  }
}

// FNV-1a over the raw bytes of a matrix, chained through `seed`.
inline std::uint64_t hash_bytes(const void* data, std::size_t n, std::uint64_t seed) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;

inline std::uint64_t hash_matrix(const Mat& m, std::uint64_t seed = kFnvOffset) {
  const std::int64_t shape[2] = {m.rows(), m.cols()};
  seed = hash_bytes(shape, sizeof(shape), seed);
  return hash_bytes(m.data(), sizeof(double) * static_cast<std::size_t>(m.size()), seed);
}

}  // namespace forge
