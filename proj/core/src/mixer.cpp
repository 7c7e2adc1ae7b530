// SPDX-License-Identifier: Apache-2.0
#include "forge/mixer.hpp"

#include <algorithm>
#include <numeric>
#include <set>
#include <string>

#include "forge/config.hpp"
#include "forge/error.hpp"

namespace forge {

Rational parse_weight(const nlohmann::json& j) {
  Rational r;
  if (j.is_number_integer()) {
    r = {j.get<std::int64_t>(), 1};
  } else if (j.is_number()) {
    // Decimal literal: go through its shortest text form so 0.7 means 7/10.
    return parse_weight(nlohmann::json(j.dump()));
  } else if (j.is_string()) {
    const std::string s = j.get<std::string>();
    try {
      if (const auto slash = s.find('/'); slash != std::string::npos) {
        r = {std::stoll(s.substr(0, slash)), std::stoll(s.substr(slash + 1))};
      } else if (const auto dot = s.find('.'); dot != std::string::npos) {
        if (s.find_first_of("eE") != std::string::npos) throw DomainError("exponent");
        const std::string frac = s.substr(dot + 1);
        if (frac.size() > 12) throw DomainError("too many decimals");
        std::int64_t den = 1;
        for (std::size_t i = 0; i < frac.size(); ++i) den *= 10;
        const std::string whole = s.substr(0, dot);
        r = {std::stoll(whole.empty() ? "0" : whole) * den + (frac.empty() ? 0 : std::stoll(frac)), den};
      } else {
        r = {std::stoll(s), 1};
      }
    } catch (const std::exception&) {
      throw DomainError("unparseable mixture weight '" + s + "'");
    }
  } else {
    throw DomainError("mixture weight must be a number or string");
  }
  if (r.num <= 0 || r.den <= 0) throw DomainError("mixture weights must be positive");
  const std::int64_t g = std::gcd(r.num, r.den);
  return {r.num / g, r.den / g};
}

WeightedScheduler::WeightedScheduler(std::vector<std::int64_t> weights)
    : weights_(std::move(weights)), credit_(weights_.size(), 0), active_(weights_.size(), true) {
  if (weights_.empty()) throw DomainError("scheduler needs at least one lane");
  for (auto w : weights_) {
    if (w <= 0) throw DomainError("scheduler weights must be positive");
    total_ += w;
  }
}

std::size_t WeightedScheduler::next() {
  if (!any_active()) throw DomainError("scheduler has no active lanes");
  std::size_t best = weights_.size();
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    if (!active_[i]) continue;
    credit_[i] += weights_[i];
    if (best == weights_.size() || credit_[i] > credit_[best]) best = i;
  }
  credit_[best] -= total_;
  return best;
}

void WeightedScheduler::deactivate(std::size_t lane) {
  if (!active_[lane]) return;
  active_[lane] = false;
  total_ -= weights_[lane];
  std::fill(credit_.begin(), credit_.end(), 0);
}

bool WeightedScheduler::any_active() const { return std::find(active_.begin(), active_.end(), true) != active_.end(); }

std::optional<std::string> VectorSource::next() {
  if (pos_ >= items_.size()) return std::nullopt;
  return items_[pos_++];
}

JsonlSource::JsonlSource(std::filesystem::path path) : path_(std::move(path)), in_(path_) {
  if (!in_) throw DomainError("cannot open mixture source " + path_.string());
}

std::optional<std::string> JsonlSource::next() {
  std::string line;
  while (std::getline(in_, line))
    if (line.find_first_not_of(" \t\r") != std::string::npos) return line;
  return std::nullopt;
}

void JsonlSource::rewind() {
  in_.clear();
  in_.seekg(0);
}

namespace {

std::vector<std::int64_t> integer_weights(const std::vector<MixtureEntry>& entries) {
  std::int64_t lcm = 1;
  for (const auto& e : entries) lcm = std::lcm(lcm, e.weight.den);
  std::vector<std::int64_t> w;
  std::int64_t g = 0;
  for (const auto& e : entries) {
    w.push_back(e.weight.num * (lcm / e.weight.den));
    g = std::gcd(g, w.back());
  }
  for (auto& x : w) x /= g;
  return w;
}

std::vector<MixtureEntry> sorted_entries(MixtureSpec& spec) {
  if (spec.entries.empty()) throw DomainError("mixture spec has no entries");
  std::set<std::string> seen;
  for (const auto& e : spec.entries) {
    if (!seen.insert(e.name).second) throw DomainError("duplicate mixture entry '" + e.name + "'");
    if (!e.source) throw DomainError("mixture entry '" + e.name + "' has no source");
    if (e.weight.num <= 0 || e.weight.den <= 0) throw DomainError("mixture entry '" + e.name + "' needs a positive weight");
  }
  auto entries = std::move(spec.entries);
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) { return a.name < b.name; });
  return entries;
}

}  // namespace

Mixer::Mixer(MixtureSpec spec)
    : entries_(sorted_entries(spec)),
      scheduler_(integer_weights(entries_)),
      policy_(spec.on_exhaust),
      counts_(entries_.size(), 0),
      epochs_(entries_.size(), 0) {
  for (const auto& e : entries_) names_.push_back(e.name);
}

std::optional<MixedItem> Mixer::next() {
  while (scheduler_.any_active()) {
    const std::size_t lane = scheduler_.next();
    auto& entry = entries_[lane];
    auto item = entry.source->next();
    if (!item) {
      if (policy_ == ExhaustPolicy::Drop) {
        scheduler_.deactivate(lane);
        continue;
      }
      entry.source->rewind();
      ++epochs_[lane];
      item = entry.source->next();
      if (!item) throw DomainError("mixture source '" + entry.name + "' yields no items");
    }
    ++counts_[lane];
    return MixedItem{entry.name, std::move(*item), epochs_[lane], step_++};
  }
  return std::nullopt;
}

std::vector<MixedItem> mix(MixtureSpec spec, std::size_t n) {
  Mixer mixer(std::move(spec));
  std::vector<MixedItem> out;
  out.reserve(n);
  while (out.size() < n) {
    auto item = mixer.next();
    if (!item) break;
    out.push_back(std::move(*item));
  }
  return out;
}

MixtureSpec mixture_spec_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  MixtureSpec spec;
  const std::string policy = j.value("on_exhaust", "wrap");
  if (policy == "wrap")
    spec.on_exhaust = ExhaustPolicy::Wrap;
  else if (policy == "drop")
    spec.on_exhaust = ExhaustPolicy::Drop;
  else
    throw DomainError("on_exhaust must be 'wrap' or 'drop'");
  const auto& list = j.contains("sources") ? j.at("sources") : j.at("source");
  for (const auto& s : list) {
    MixtureEntry e;
    e.name = s.at("name").get<std::string>();
    e.weight = parse_weight(s.at("weight"));
    std::filesystem::path p = s.at("path").get<std::string>();
    if (p.is_relative()) p = base_dir / p;
    e.path = p.string();
    e.source = std::make_shared<JsonlSource>(p);
    spec.entries.push_back(std::move(e));
  }
  return spec;
}

MixtureSpec load_mixture_spec(const std::filesystem::path& path) {
  return mixture_spec_from_json(load_config_file(path), path.parent_path());
}

}  // namespace forge
