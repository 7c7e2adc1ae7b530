// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include <random>

#include "forge/decoder.hpp"
#include "forge/imaging.hpp"
#include "forge/mixer.hpp"
#include "forge/resampler.hpp"
#include "forge/rng.hpp"
#include "forge/sequencer.hpp"
#include "forge/vision_stub.hpp"

namespace forge {
namespace {

void BM_PlanPatches(benchmark::State& state) {
  std::mt19937 rng(1);
  for (auto _ : state) {
    const ImageDims dims{1 + static_cast<int>(rng() % 4000), 1 + static_cast<int>(rng() % 4000)};
    benchmark::DoNotOptimize(plan_patches(dims, 384, static_cast<int>(state.range(0))));
  }
}
BENCHMARK(BM_PlanPatches)->Arg(4)->Arg(9)->Arg(16);

void BM_ExtractAndEncode(benchmark::State& state) {
  const Image img(1000, 600, {90, 120, 200});
  const PatchPlan plan = plan_patches(img.dims());
  const VisionStub stub(StubConfig{});
  for (auto _ : state) {
    const PatchSet set = extract_patches(img, plan);
    for (const auto& buf : set.buffers()) benchmark::DoNotOptimize(stub.encode(buf));
  }
}
BENCHMARK(BM_ExtractAndEncode)->Unit(benchmark::kMillisecond);

void BM_Resample(benchmark::State& state) {
  std::mt19937_64 rng(2);
  const auto patches = static_cast<int>(state.range(0));
  std::vector<Mat> in;
  for (int i = 0; i < patches; ++i) in.push_back(gaussian_matrix(729, 16, 1.0, rng));
  const ResamplerParams params = ResamplerParams::init({16, 128, 2, 4, 1e-5, 3});
  const SamplingMode mode = state.range(1) ? SamplingMode::fixed() : SamplingMode::per_patch();
  for (auto _ : state) benchmark::DoNotOptimize(resample(in, params, mode));
}
BENCHMARK(BM_Resample)->Args({1, 0})->Args({7, 0})->Args({7, 1})->Unit(benchmark::kMillisecond);

void BM_TokenizeAndPack(benchmark::State& state) {
  std::vector<InterleavedDoc> docs;
  std::map<std::string, PatchPlan> plans;
  for (int i = 0; i < 200; ++i) {
    const std::string id = "img" + std::to_string(i);
    const ImageDims dims{28 + (i * 13) % 100, 28 + (i * 7) % 100};
    plans[id] = plan_patches(dims, 28, 4);
    docs.push_back({"d" + std::to_string(i), {TextBlock{std::string(40, 'x')}, ImageBlock{id, dims}, TextBlock{"tail"}}});
  }
  for (auto _ : state) {
    std::vector<TokenSequence> seqs;
    for (const auto& d : docs) seqs.push_back(tokenize_doc(d, plans, 4, {}));
    benchmark::DoNotOptimize(pack(seqs, static_cast<std::size_t>(state.range(0))));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(docs.size()));
}
BENCHMARK(BM_TokenizeAndPack)->Arg(96)->Arg(2048);

void BM_Mix(benchmark::State& state) {
  for (auto _ : state) {
    MixtureSpec spec;
    for (const auto& [name, w] : std::vector<std::pair<std::string, std::int64_t>>{{"html", 7}, {"pdf", 5}, {"arxiv", 1}})
      spec.entries.push_back({name, {w, 1}, std::make_shared<VectorSource>(std::vector<std::string>(100, name)), {}});
    benchmark::DoNotOptimize(mix(std::move(spec), 13000));
  }
  state.SetItemsProcessed(state.iterations() * 13000);
}
BENCHMARK(BM_Mix);

void BM_DecoderForwardBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  TokenSequence seq;
  seq.push(token::kBos, TokenKind::Bos, false);
  while (seq.size() < n) seq.push('a' + static_cast<int>(seq.size() % 26), TokenKind::Text, true);
  const DecoderParams params = DecoderParams::init({token::kVocabSize, 16, 16, static_cast<int>(n), false, 1});
  const auto weights = nll_weights(seq);
  for (auto _ : state) {
    DecoderCache cache;
    forward_logprobs(seq, {}, params, &cache);
    DecoderParams grads = DecoderParams::zeros(params.config);
    decoder_backward(seq, {}, params, cache, weights, grads, nullptr);
    benchmark::DoNotOptimize(grads.head_bias.data());
  }
}
BENCHMARK(BM_DecoderForwardBackward)->Arg(96)->Arg(512);

}  // namespace
}  // namespace forge
