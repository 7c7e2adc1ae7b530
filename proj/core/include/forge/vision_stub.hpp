// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>

#include "forge/imaging.hpp"
#include "forge/linalg.hpp"

namespace forge {

struct StubConfig {
  int base = 384;
  int vit_patch = 14;
  int d_model = 16;
  std::uint64_t seed = 0;

  int grid() const { return base / vit_patch; }
  int token_count() const { return grid() * grid(); }
  int fan_in() const { return vit_patch * vit_patch * 3; }
};

// Frozen stand-in for the vision encoder: every vit_patch x vit_patch cell of
// a base x base buffer is flattened (y, x, channel order, pixels in [0,1]) and
// multiplied by a fixed Gaussian projection. Cells beyond the floor grid are
// dropped. The projection has no bias, so encoding is linear in the pixels.
class VisionStub {
 public:
  explicit VisionStub(const StubConfig& cfg);

  const StubConfig& config() const { return cfg_; }
  const Mat& projection() const { return projection_; }

  // (token_count x d_model) embeddings, one row per cell, row-major over cells.
  Mat encode(const Image& buffer) const;
  Mat encode(const FloatImage& buffer) const;

  std::uint64_t weights_hash() const;

  void save(const std::filesystem::path& path) const;
  static VisionStub load(const std::filesystem::path& path);

 private:
  VisionStub(const StubConfig& cfg, Mat projection);

  StubConfig cfg_;
  Mat projection_;  // fan_in x d_model
};

}  // namespace forge
