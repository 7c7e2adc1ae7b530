// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include <random>

#include "forge/curation.hpp"

namespace forge {
namespace {

OcrRecord make_record(int items) {
  std::mt19937 rng(4);
  OcrRecord rec{"bench", {1024, 768}, {}};
  for (int i = 0; i < items; ++i) {
    const int x = static_cast<int>(rng() % 1000), y = static_cast<int>(rng() % 740);
    rec.items.push_back({"the text word" + std::to_string(i), {x, y, x + 20, y + 20}, OcrUnit::Word});
  }
  return rec;
}

void BM_OcrCaption(benchmark::State& state) {
  const OcrRecord rec = make_record(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(ocr_caption(rec, 1));
}
BENCHMARK(BM_OcrCaption)->Arg(10)->Arg(200);

void BM_ParseAugmented(benchmark::State& state) {
  const std::string caption = ocr_caption(make_record(static_cast<int>(state.range(0))), 1);
  for (auto _ : state) benchmark::DoNotOptimize(parse_augmented(caption));
  state.SetBytesProcessed(state.iterations() * static_cast<std::int64_t>(caption.size()));
}
BENCHMARK(BM_ParseAugmented)->Arg(10)->Arg(200);

void BM_GroundCaption(benchmark::State& state) {
  GroundRecord rec{"bench", {640, 480}, "a dog and a cat sit near a red car under a tree by the road", {}};
  for (const char* label : {"dog", "cat", "car", "tree", "road"}) rec.objects.push_back({label, {10, 20, 200, 300}, 0});
  const auto fmt = static_cast<GroundFormat>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(ground_caption(rec, fmt));
}
BENCHMARK(BM_GroundCaption)->DenseRange(0, 2);

}  // namespace
}  // namespace forge
