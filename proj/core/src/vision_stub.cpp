// SPDX-License-Identifier: Apache-2.0
#include "forge/vision_stub.hpp"

#include <cmath>
#include <random>
#include <string>

#include "forge/error.hpp"
#include "forge/rng.hpp"
#include "forge/tensor_file.hpp"

namespace forge {
namespace {

void check_config(const StubConfig& cfg) {
  if (cfg.vit_patch < 1 || cfg.base < cfg.vit_patch) throw DomainError("vision stub needs base >= vit_patch >= 1");
  if (cfg.d_model < 1) throw DomainError("vision stub d_model must be positive");
}

template <typename Pixel>
Mat encode_cells(const StubConfig& cfg, const Mat& projection, int width, int height, Pixel pixel) {
  if (width != cfg.base || height != cfg.base)
    throw DomainError("vision stub expects a " + std::to_string(cfg.base) + "x" + std::to_string(cfg.base) +
                      " buffer, got " + std::to_string(width) + "x" + std::to_string(height));
  const int grid = cfg.grid();
  const int p = cfg.vit_patch;
  Mat cells(cfg.token_count(), cfg.fan_in());
  for (int gy = 0; gy < grid; ++gy) {
    for (int gx = 0; gx < grid; ++gx) {
      const Eigen::Index row = static_cast<Eigen::Index>(gy) * grid + gx;
      Eigen::Index col = 0;
      for (int y = 0; y < p; ++y)
        for (int x = 0; x < p; ++x)
          for (int c = 0; c < 3; ++c) cells(row, col++) = pixel(gx * p + x, gy * p + y, c);
    }
  }
  return cells * projection;
}

}  // namespace

VisionStub::VisionStub(const StubConfig& cfg) : cfg_(cfg) {
  check_config(cfg_);
  std::mt19937_64 rng(derive_seed(cfg_.seed, "vision_stub"));
  projection_ = gaussian_matrix(cfg_.fan_in(), cfg_.d_model, 1.0 / std::sqrt(static_cast<double>(cfg_.fan_in())), rng);
}

VisionStub::VisionStub(const StubConfig& cfg, Mat projection) : cfg_(cfg), projection_(std::move(projection)) {
  check_config(cfg_);
  if (projection_.rows() != cfg_.fan_in() || projection_.cols() != cfg_.d_model)
    throw DomainError("vision stub projection shape does not match its header");
}

Mat VisionStub::encode(const Image& buffer) const {
  return encode_cells(cfg_, projection_, buffer.width, buffer.height,
                      [&](int x, int y, int c) { return buffer.at(x, y, c) / 255.0; });
}

Mat VisionStub::encode(const FloatImage& buffer) const {
  return encode_cells(cfg_, projection_, buffer.width, buffer.height,
                      [&](int x, int y, int c) { return buffer.at(x, y, c); });
}

std::uint64_t VisionStub::weights_hash() const { return hash_matrix(projection_); }

void VisionStub::save(const std::filesystem::path& path) const {
  const nlohmann::json meta = {{"kind", "vision_stub"},
                               {"seed", cfg_.seed},
                               {"base", cfg_.base},
                               {"vit_patch", cfg_.vit_patch},
                               {"d_model", cfg_.d_model}};
  write_tensor_file(path, meta, {{"projection", projection_}});
}

VisionStub VisionStub::load(const std::filesystem::path& path) {
  const TensorFile file = read_tensor_file(path);
  if (file.meta.value("kind", "") != "vision_stub") throw DomainError(path.string() + " is not a vision stub file");
  StubConfig cfg;
  cfg.seed = file.meta.at("seed").get<std::uint64_t>();
  cfg.base = file.meta.at("base").get<int>();
  cfg.vit_patch = file.meta.at("vit_patch").get<int>();
  cfg.d_model = file.meta.at("d_model").get<int>();
  return VisionStub(cfg, file.at("projection"));
}

}  // namespace forge
