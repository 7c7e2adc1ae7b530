// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace forge {

struct Rational {
  std::int64_t num = 1;
  std::int64_t den = 1;
};

// Accepts integers, decimal numbers ("0.7", 0.25) and "a/b" strings.
Rational parse_weight(const nlohmann::json& j);

// Smooth weighted round-robin over integer weights. Each step every active
// lane gains its weight in credit; the lane with the most credit is picked
// (ties: lower lane index) and pays the total active weight. After t picks
// every lane's count is within 1 of t * w_i / W.
class WeightedScheduler {
 public:
  explicit WeightedScheduler(std::vector<std::int64_t> weights);

  std::size_t next();
  void deactivate(std::size_t lane);
  bool active(std::size_t lane) const { return active_[lane]; }
  bool any_active() const;
  std::size_t lanes() const { return weights_.size(); }
  std::int64_t total_weight() const { return total_; }
  std::int64_t weight(std::size_t lane) const { return weights_[lane]; }

 private:
  std::vector<std::int64_t> weights_;
  std::vector<std::int64_t> credit_;
  std::vector<bool> active_;
  std::int64_t total_ = 0;
};

class ItemSource {
 public:
  virtual ~ItemSource() = default;
  virtual std::optional<std::string> next() = 0;
  virtual void rewind() = 0;
};

class VectorSource final : public ItemSource {
 public:
  explicit VectorSource(std::vector<std::string> items) : items_(std::move(items)) {}
  std::optional<std::string> next() override;
  void rewind() override { pos_ = 0; }

 private:
  std::vector<std::string> items_;
  std::size_t pos_ = 0;
};

// Non-blank lines of a JSONL file, read lazily.
class JsonlSource final : public ItemSource {
 public:
  explicit JsonlSource(std::filesystem::path path);
  std::optional<std::string> next() override;
  void rewind() override;

 private:
  std::filesystem::path path_;
  std::ifstream in_;
};

enum class ExhaustPolicy { Wrap, Drop };

struct MixtureEntry {
  std::string name;
  Rational weight;
  std::shared_ptr<ItemSource> source;
  std::string path;  // informational, empty for in-memory sources
};

struct MixtureSpec {
  std::vector<MixtureEntry> entries;
  ExhaustPolicy on_exhaust = ExhaustPolicy::Wrap;
};

struct MixedItem {
  std::string name;
  std::string item;
  std::uint64_t epoch = 0;  // times this source had wrapped when the item was drawn
  std::uint64_t step = 0;
};

// Deterministic weighted interleaving. Entries are scheduled in lexicographic
// name order, which fixes the tie-break.
class Mixer {
 public:
  explicit Mixer(MixtureSpec spec);

  std::optional<MixedItem> next();

  const std::vector<std::string>& names() const { return names_; }
  const std::vector<std::uint64_t>& counts() const { return counts_; }
  const std::vector<std::uint64_t>& epochs() const { return epochs_; }
  std::int64_t scaled_weight(std::size_t lane) const { return scheduler_.weight(lane); }

 private:
  std::vector<MixtureEntry> entries_;
  std::vector<std::string> names_;
  WeightedScheduler scheduler_;
  ExhaustPolicy policy_;
  std::vector<std::uint64_t> counts_;
  std::vector<std::uint64_t> epochs_;
  std::uint64_t step_ = 0;
};

std::vector<MixedItem> mix(MixtureSpec spec, std::size_t n);

// {"on_exhaust": "wrap"|"drop", "sources": [{"name", "weight", "path"}]}; a
// TOML file using [[source]] tables is accepted too. Relative paths resolve
// against the config's directory.
MixtureSpec load_mixture_spec(const std::filesystem::path& path);
MixtureSpec mixture_spec_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);

}  // namespace forge
