// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "forge/linalg.hpp"

namespace forge {

struct ResamplerConfig {
  int d = 16;            // embedding width
  int m = 128;           // latent query count
  int layers = 2;
  int heads = 4;
  double ln_eps = 1e-5;
  std::uint64_t seed = 0;
};

struct ResamplerLayer {
  Mat wq, wk, wv, wo;  // d x d
  Mat ff_in;           // d x 4d
  Mat ff_out;          // 4d x d
  Mat ln_scale;        // 1 x d
  Mat ln_shift;        // 1 x d
};

// Perceiver-resampler weights. Each layer updates the latents as
//
//   kv      = [inputs; latents; instruction]
//   latents = latents + MHA(latents Wq, kv Wk, kv Wv) Wo
//   latents = latents + GELU(LN(latents) ff_in) ff_out
//
// starting from latents = queries. Multi-head attention splits the d columns
// into `heads` contiguous groups with scale 1/sqrt(d/heads).
struct ResamplerParams {
  ResamplerConfig config;
  Mat queries;  // m x d
  std::vector<ResamplerLayer> layers;

  static ResamplerParams init(const ResamplerConfig& cfg);
  // Same shapes, every tensor zero; used as a gradient accumulator.
  static ResamplerParams zeros(const ResamplerConfig& cfg);

  void for_each_tensor(const std::function<void(const std::string&, Mat&)>& fn);
  void for_each_tensor(const std::function<void(const std::string&, const Mat&)>& fn) const;

  // this += scale * other, tensor by tensor; shapes must match.
  void add_scaled(const ResamplerParams& other, double scale);
  std::uint64_t hash() const;
  void save(const std::filesystem::path& path) const;
  static ResamplerParams load(const std::filesystem::path& path);
};

enum class SamplingKind { PerPatch, FixedSampling, InstructionAware };

struct SamplingMode {
  SamplingKind kind = SamplingKind::PerPatch;
  Mat instruction;  // t x d, InstructionAware only

  static SamplingMode per_patch() { return {}; }
  static SamplingMode fixed() { return {SamplingKind::FixedSampling, {}}; }
  static SamplingMode instruction_aware(Mat instruction) {
    return {SamplingKind::InstructionAware, std::move(instruction)};
  }
};

const char* to_string(SamplingKind kind);
SamplingKind sampling_kind_from_string(const std::string& s);

// Output rows per image for `patches` encoded buffers.
inline int resampled_count(SamplingKind kind, int m, int patches) {
  return kind == SamplingKind::FixedSampling ? m : m * patches;
}

// PerPatch / InstructionAware: each patch is downsampled independently and the
// m-row blocks are concatenated in patch order. FixedSampling: all patches are
// concatenated into one sequence and downsampled once to m rows.
Mat resample(std::span<const Mat> patch_embeddings, const ResamplerParams& params, const SamplingMode& mode);

struct ResamplerGrad {
  ResamplerParams params;
  std::vector<Mat> inputs;  // one per patch
  Mat instruction;          // t x d, InstructionAware only
};

// Reverse-mode gradients of sum(upstream .* resample(...)).
ResamplerGrad resample_grad(std::span<const Mat> patch_embeddings, const ResamplerParams& params,
                            const SamplingMode& mode, const Mat& upstream);

}  // namespace forge
