// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "forge/error.hpp"
#include "forge/mixer.hpp"

namespace forge {
namespace {

std::shared_ptr<ItemSource> items(const std::string& prefix, int n) {
  std::vector<std::string> v;
  for (int i = 0; i < n; ++i) v.push_back(prefix + std::to_string(i));
  return std::make_shared<VectorSource>(v);
}

MixtureSpec spec_of(std::vector<std::pair<std::string, std::int64_t>> weights, int items_each = 10) {
  MixtureSpec spec;
  for (const auto& [name, w] : weights) spec.entries.push_back({name, {w, 1}, items(name, items_each), {}});
  return spec;
}

std::map<std::string, int> tally(const std::vector<MixedItem>& out) {
  std::map<std::string, int> c;
  for (const auto& m : out) ++c[m.name];
  return c;
}

TEST(Mixer, SingleSource) {
  const auto out = mix(spec_of({{"A", 1}}), 25);
  EXPECT_EQ(tally(out), (std::map<std::string, int>{{"A", 25}}));
}

TEST(Mixer, SevenFiveOneIsExact) {
  const auto out = mix(spec_of({{"H", 7}, {"P", 5}, {"X", 1}}), 13000);
  EXPECT_EQ(tally(out), (std::map<std::string, int>{{"H", 7000}, {"P", 5000}, {"X", 1000}}));
}

TEST(Mixer, EqualWeightsTieBreakByName) {
  const auto out = mix(spec_of({{"B", 1}, {"A", 1}}), 5);
  EXPECT_EQ(tally(out), (std::map<std::string, int>{{"A", 3}, {"B", 2}}));
  EXPECT_EQ(out[0].name, "A");
  EXPECT_EQ(out[1].name, "B");
}

TEST(Mixer, BoundedDeviationAndStarvationFreedom) {
  std::mt19937 rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const int lanes = 1 + static_cast<int>(rng() % 6);
    std::vector<std::pair<std::string, std::int64_t>> w;
    std::int64_t total = 0;
    for (int i = 0; i < lanes; ++i) {
      w.emplace_back(std::string(1, static_cast<char>('a' + i)), 1 + rng() % 20);
      total += w.back().second;
    }
    Mixer mixer(spec_of(w));
    std::vector<std::int64_t> count(lanes, 0), last(lanes, -1);
    for (int t = 1; t <= 500; ++t) {
      const auto item = mixer.next();
      ASSERT_TRUE(item.has_value());
      const int lane = item->name[0] - 'a';
      ++count[lane];
      for (int i = 0; i < lanes; ++i) {
        const double dev = std::abs(static_cast<double>(count[i]) - static_cast<double>(t) * w[i].second / total);
        ASSERT_LT(dev, 1.0) << "trial " << trial << " t " << t;
      }
      // First draw within ceil(W / w); later gaps stay below 2 W / w.
      if (last[lane] < 0)
        ASSERT_LE(t, (total + w[lane].second - 1) / w[lane].second);
      else
        ASSERT_LT((t - last[lane]) * w[lane].second, 2 * total);
      last[lane] = t;
    }
    for (int i = 0; i < lanes; ++i) EXPECT_GE(last[i], 0);
  }
}

TEST(Mixer, Deterministic) {
  const auto a = mix(spec_of({{"x", 3}, {"y", 2}, {"z", 2}}), 100);
  const auto b = mix(spec_of({{"z", 2}, {"x", 3}, {"y", 2}}), 100);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].item, b[i].item);
}

TEST(Mixer, WrapCountsEpochs) {
  const auto out = mix(spec_of({{"A", 1}}, 3), 7);
  EXPECT_EQ(out[2].epoch, 0u);
  EXPECT_EQ(out[3].epoch, 1u);
  EXPECT_EQ(out[3].item, "A0");
  EXPECT_EQ(out[6].epoch, 2u);
}

TEST(Mixer, DropPolicyStopsExhaustedSources) {
  MixtureSpec spec = spec_of({{"A", 1}, {"B", 1}}, 2);
  spec.entries[1].source = items("B", 5);
  spec.on_exhaust = ExhaustPolicy::Drop;
  const auto out = mix(std::move(spec), 100);
  EXPECT_EQ(tally(out), (std::map<std::string, int>{{"A", 2}, {"B", 5}}));
}

TEST(Mixer, Errors) {
  EXPECT_THROW(Mixer(MixtureSpec{}), DomainError);
  EXPECT_THROW(Mixer(spec_of({{"A", 1}, {"A", 2}})), DomainError);
  MixtureSpec empty = spec_of({{"A", 1}});
  empty.entries[0].source = std::make_shared<VectorSource>(std::vector<std::string>{});
  Mixer m(std::move(empty));
  EXPECT_THROW(m.next(), DomainError);
}

TEST(Mixer, RationalWeights) {
  EXPECT_EQ(parse_weight(nlohmann::json(0.7)).num, 7);
  EXPECT_EQ(parse_weight(nlohmann::json(0.7)).den, 10);
  EXPECT_EQ(parse_weight(nlohmann::json("3/6")).num, 1);
  EXPECT_EQ(parse_weight(nlohmann::json("3/6")).den, 2);
  EXPECT_EQ(parse_weight(nlohmann::json(4)).num, 4);
  EXPECT_THROW(parse_weight(nlohmann::json(-1)), DomainError);
  EXPECT_THROW(parse_weight(nlohmann::json("abc")), DomainError);
  MixtureSpec spec;
  spec.entries.push_back({"a", parse_weight(nlohmann::json("0.7")), items("a", 5), {}});
  spec.entries.push_back({"b", parse_weight(nlohmann::json("1/2")), items("b", 5), {}});
  spec.entries.push_back({"c", parse_weight(nlohmann::json(0.1)), items("c", 5), {}});
  EXPECT_EQ(tally(mix(std::move(spec), 1300)), (std::map<std::string, int>{{"a", 700}, {"b", 500}, {"c", 100}}));
}

TEST(Mixer, LoadsTomlAndJsonSpecs) {
  const auto dir = std::filesystem::temp_directory_path() / "forge_mixer_test";
  std::filesystem::create_directories(dir);
  for (const char* name : {"h", "p"}) {
    std::ofstream f(dir / (std::string(name) + ".jsonl"));
    for (int i = 0; i < 4; ++i) f << "{\"i\": " << i << "}\n\n";
  }
  std::ofstream(dir / "mix.toml") << "on_exhaust = \"wrap\"\n[[source]]\nname = \"h\"\nweight = 3\npath = \"h.jsonl\"\n"
                                     "[[source]]\nname = \"p\" # comment\nweight = 1\npath = \"p.jsonl\"\n";
  std::ofstream(dir / "mix.json") << R"({"sources": [{"name": "h", "weight": 3, "path": "h.jsonl"},
                                                     {"name": "p", "weight": "1", "path": "p.jsonl"}]})";
  for (const char* file : {"mix.toml", "mix.json"}) {
    const auto out = mix(load_mixture_spec(dir / file), 40);
    EXPECT_EQ(tally(out), (std::map<std::string, int>{{"h", 30}, {"p", 10}})) << file;
    EXPECT_EQ(out[0].item, "{\"i\": 0}");
  }
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace forge
