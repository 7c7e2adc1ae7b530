// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "forge/corpus.hpp"
#include "forge/decoder.hpp"
#include "forge/resampler.hpp"
#include "forge/sequencer.hpp"
#include "forge/vision_stub.hpp"

namespace forge {

// Trainable part of the stack. The vision stub is deliberately not a member:
// training code only ever sees its outputs.
struct Model {
  ResamplerParams resampler;
  DecoderParams decoder;
  SamplingKind sampling = SamplingKind::PerPatch;

  std::uint64_t hash() const;
  void save(const std::filesystem::path& dir) const;
  static Model load(const std::filesystem::path& dir);
};

// image_id -> frozen encoder output for each encoded buffer of that image.
using PatchEmbeddings = std::map<std::string, std::vector<Mat>>;

struct TrainBatch {
  std::vector<TokenSequence> sequences;
  PatchEmbeddings images;
};

struct PipelineConfig {
  int base = 28;
  int max_patches = 4;
  StubConfig stub{28, 7, 16, 0};
  int m = 4;
  std::size_t context = 96;
  TokenizeOptions tokenize;
};

// Plans, loads and encodes every image referenced by docs, then tokenizes and
// packs the documents.
TrainBatch build_batch(const std::vector<InterleavedDoc>& docs, const ImageStore& store, const VisionStub& stub,
                       const PipelineConfig& cfg, PackStats* stats = nullptr);

// Encoder output for one image: plan, extract, encode each buffer.
std::vector<Mat> encode_image(const Image& image, const VisionStub& stub, int max_patches);

// Tensor-name prefixes excluded from updates, e.g. "resampler." or
// "decoder.embed".
struct FrozenSet {
  std::vector<std::string> prefixes;
  bool frozen(const std::string& name) const;
};

struct LossAndGrad {
  double loss = 0.0;
  std::size_t targets = 0;
  ResamplerParams resampler;
  DecoderParams decoder;
};

// Mean masked NLL over every loss-bearing target of the batch, with exact
// gradients for resampler and decoder parameters.
LossAndGrad loss_and_grad(const TrainBatch& batch, const Model& model);
double batch_loss(const TrainBatch& batch, const Model& model);

// Resampled tokens for each vision span of seq.
std::vector<Mat> vision_tokens_for(const TokenSequence& seq, const PatchEmbeddings& images, const Model& model);

struct StepResult {
  double loss = 0.0;
  std::size_t targets = 0;
  double grad_norm = 0.0;
};

// One SGD step on every tensor not in `frozen`; returns the pre-update loss.
StepResult train_step(const TrainBatch& batch, Model& model, double lr, const FrozenSet& frozen = {});

// Greedy continuation of an unpadded prefix, stopping at Eos (not returned) or
// after max_new tokens or at the decoder context limit.
std::vector<std::int32_t> greedy_decode(const Model& model, const TokenSequence& prefix, const PatchEmbeddings& images,
                                        std::size_t max_new);

}  // namespace forge
