// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <limits>

#include "forge/error.hpp"
#include "forge/training.hpp"
#include "helpers.hpp"
#include "toy_setup.hpp"

namespace forge {
namespace {

using test::worst_fd_error;

struct Tiny {
  PipelineConfig pc;
  VisionStub stub;
  TrainBatch batch;
  Model model;
};

Tiny tiny(SamplingKind sampling = SamplingKind::PerPatch) {
  PipelineConfig pc;
  pc.base = 28;
  pc.max_patches = 4;
  pc.stub = StubConfig{28, 7, 8, 5};
  pc.m = 2;
  pc.context = 40;
  pc.tokenize.sampling = sampling;
  VisionStub stub(pc.stub);
  const std::vector<InterleavedDoc> docs = {
      {"d0", {TextBlock{"ab "}, ImageBlock{"wide", {56, 28}}, TextBlock{"cd"}}},
      {"d1", {ImageBlock{"sq", {28, 28}}, TextBlock{"xyz"}}},
  };
  TrainBatch batch = build_batch(docs, SyntheticImageStore(), stub, pc);
  Model model;
  model.sampling = sampling;
  model.resampler = ResamplerParams::init({8, 2, 1, 2, 1e-5, 1});
  model.decoder = DecoderParams::init({token::kVocabSize, 8, 8, 40, false, 2});
  return {pc, stub, std::move(batch), std::move(model)};
}

void check_pipeline_gradients(SamplingKind sampling) {
  Tiny t = tiny(sampling);
  const LossAndGrad g = loss_and_grad(t.batch, t.model);
  EXPECT_NEAR(g.loss, batch_loss(t.batch, t.model), 1e-12);
  auto loss = [&] { return batch_loss(t.batch, t.model); };
  std::vector<std::pair<std::string, Mat*>> params;
  std::vector<const Mat*> grads;
  t.model.resampler.for_each_tensor([&](const std::string& n, Mat& m) { params.emplace_back("resampler." + n, &m); });
  t.model.decoder.for_each_tensor([&](const std::string& n, Mat& m) { params.emplace_back("decoder." + n, &m); });
  g.resampler.for_each_tensor([&](const std::string&, const Mat& m) { grads.push_back(&m); });
  g.decoder.for_each_tensor([&](const std::string&, const Mat& m) { grads.push_back(&m); });
  ASSERT_EQ(params.size(), grads.size());
  for (std::size_t i = 0; i < params.size(); ++i)
    EXPECT_LE(worst_fd_error(*params[i].second, *grads[i], loss), test::kFdTol) << params[i].first;
}

TEST(Training, PerPatchGradientsMatchFiniteDifferences) { check_pipeline_gradients(SamplingKind::PerPatch); }
TEST(Training, FixedGradientsMatchFiniteDifferences) { check_pipeline_gradients(SamplingKind::FixedSampling); }

TEST(Training, BatchIsWellFormed) {
  const Tiny t = tiny();
  EXPECT_EQ(t.batch.images.size(), 2u);
  EXPECT_EQ(t.batch.images.at("wide").size(), 3u);  // 2x1 grid plus the global view
  EXPECT_EQ(t.batch.images.at("sq").size(), 1u);
  for (const auto& s : t.batch.sequences) {
    EXPECT_EQ(check_sequence(s), "");
    EXPECT_EQ(s.size(), 40u);
  }
}

TEST(Training, ZeroLearningRateLeavesParameters) {
  Tiny t = tiny();
  const auto before = t.model.hash();
  const auto r = train_step(t.batch, t.model, 0.0);
  EXPECT_EQ(t.model.hash(), before);
  EXPECT_GT(r.grad_norm, 0.0);
  EXPECT_EQ(r.targets, 8u);
  EXPECT_THROW(train_step(t.batch, t.model, -1.0), DomainError);
  EXPECT_THROW(train_step(t.batch, t.model, std::numeric_limits<double>::quiet_NaN()), DomainError);
}

TEST(Training, FrozenPrefixesStayFixed) {
  Tiny t = tiny();
  const auto resampler = t.model.resampler.hash();
  const Mat embed = t.model.decoder.embed;
  const Mat wq = t.model.decoder.wq;
  train_step(t.batch, t.model, 0.1, FrozenSet{{"resampler.", "decoder.embed"}});
  EXPECT_EQ(t.model.resampler.hash(), resampler);
  EXPECT_EQ(t.model.decoder.embed, embed);
  EXPECT_NE(t.model.decoder.wq, wq);
}

TEST(Training, NonFiniteLossRaises) {
  Tiny t = tiny();
  t.model.decoder.head_bias(0, 'c') = std::numeric_limits<double>::infinity();
  EXPECT_THROW(train_step(t.batch, t.model, 0.1), TrainingError);
}

TEST(Training, InstructionAwareRejected) {
  Tiny t = tiny();
  t.model.sampling = SamplingKind::InstructionAware;
  EXPECT_THROW(batch_loss(t.batch, t.model), DomainError);
}

TEST(Training, MissingImageRaises) {
  Tiny t = tiny();
  t.batch.images.erase("sq");
  EXPECT_THROW(batch_loss(t.batch, t.model), DomainError);
}

TEST(Training, ToyCorpusLossDecreasesAndStubUntouched) {
  const PipelineConfig pc = testgen::toy_pipeline();
  const VisionStub stub(pc.stub);
  const auto stub_hash = stub.weights_hash();
  const TrainBatch batch = testgen::toy_batch(stub, pc);
  Model model = testgen::toy_model(pc);
  const double initial = batch_loss(batch, model);
  for (int s = 0; s < 20; ++s) train_step(batch, model, 0.1);
  EXPECT_LT(batch_loss(batch, model), initial);
  EXPECT_EQ(stub.weights_hash(), stub_hash);
}

TEST(Training, DeterministicSteps) {
  Tiny a = tiny(), b = tiny();
  for (int s = 0; s < 3; ++s) {
    train_step(a.batch, a.model, 0.1);
    train_step(b.batch, b.model, 0.1);
  }
  EXPECT_EQ(a.model.hash(), b.model.hash());
}

TEST(Training, SaveLoadRoundTrip) {
  Tiny t = tiny(SamplingKind::FixedSampling);
  train_step(t.batch, t.model, 0.1);
  const auto dir = std::filesystem::temp_directory_path() / "forge_model_test";
  t.model.save(dir);
  const Model back = Model::load(dir);
  EXPECT_EQ(back.hash(), t.model.hash());
  EXPECT_EQ(back.sampling, SamplingKind::FixedSampling);
  EXPECT_DOUBLE_EQ(batch_loss(t.batch, back), batch_loss(t.batch, t.model));
  std::filesystem::remove_all(dir);
}

TEST(Training, GreedyDecodeFollowsArgmax) {
  Tiny t = tiny();
  TokenSequence prefix;
  prefix.push(token::kBos, TokenKind::Bos, false);
  prefix.push('a', TokenKind::Text, true);
  // A bias spike on 'q' dominates every row.
  t.model.decoder.head_bias(0, 'q') = 100.0;
  EXPECT_EQ(greedy_decode(t.model, prefix, t.batch.images, 5), (std::vector<std::int32_t>(5, 'q')));
  t.model.decoder.head_bias(0, token::kEos) = 200.0;
  EXPECT_TRUE(greedy_decode(t.model, prefix, t.batch.images, 5).empty());
  // Specials other than Eos are never emitted.
  t.model.decoder.head_bias(0, token::kEos) = 0.0;
  t.model.decoder.head_bias(0, token::kPad) = 300.0;
  EXPECT_EQ(greedy_decode(t.model, prefix, t.batch.images, 2), (std::vector<std::int32_t>(2, 'q')));
  // The context limit caps the continuation.
  EXPECT_EQ(greedy_decode(t.model, prefix, t.batch.images, 100).size(), 38u);
}

}  // namespace
}  // namespace forge
