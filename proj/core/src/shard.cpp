// SPDX-License-Identifier: Apache-2.0
#include "forge/shard.hpp"

#include <array>
#include <cstdio>
#include <fstream>

#include "forge/error.hpp"

namespace forge {
namespace {

constexpr std::array<char, 8> kMagic = {'F', 'R', 'G', 'S', 'H', 'R', 'D', '1'};

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

void put_string(std::ostream& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

class Reader {
 public:
  Reader(std::istream& in, std::string source) : in_(in), source_(std::move(source)) {}

  template <typename T>
  T get() {
    T v{};
    in_.read(reinterpret_cast<char*>(&v), sizeof(T));
    check(sizeof(T));
    return v;
  }

  std::string get_string() {
    const auto n = get<std::uint32_t>();
    std::string s(n, '\0');
    in_.read(s.data(), n);
    check(n);
    return s;
  }

  bool at_end() { return in_.peek() == std::istream::traits_type::eof(); }
  std::size_t offset() const { return offset_; }

 private:
  void check(std::size_t n) {
    if (!in_) throw ParseError("truncated shard " + source_, offset_);
    offset_ += n;
  }

  std::istream& in_;
  std::string source_;
  std::size_t offset_ = 0;
};

}  // namespace

void write_shard(const std::filesystem::path& path, const std::vector<TokenSequence>& seqs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DomainError("cannot open " + path.string() + " for writing");
  out.write(kMagic.data(), kMagic.size());
  for (const auto& s : seqs) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
    for (auto id : s.ids) put<std::int32_t>(out, id);
    for (auto k : s.kinds) put<std::uint8_t>(out, static_cast<std::uint8_t>(k));
    for (auto m : s.loss_mask) put<std::uint8_t>(out, m);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(s.vision_spans.size()));
    for (const auto& span : s.vision_spans) {
      put<std::uint32_t>(out, static_cast<std::uint32_t>(span.start));
      put<std::uint32_t>(out, static_cast<std::uint32_t>(span.length));
      put_string(out, span.image_id);
    }
    put<std::uint32_t>(out, static_cast<std::uint32_t>(s.doc_ids.size()));
    for (const auto& d : s.doc_ids) put_string(out, d);
  }
  if (!out) throw DomainError("write failed for " + path.string());
}

std::vector<TokenSequence> read_shard(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DomainError("cannot open " + path.string());
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw ParseError("bad shard magic in " + path.string(), 0);
  Reader r(in, path.string());
  std::vector<TokenSequence> out;
  while (!r.at_end()) {
    TokenSequence s;
    const auto n = r.get<std::uint32_t>();
    s.ids.resize(n);
    s.kinds.resize(n);
    s.loss_mask.resize(n);
    for (auto& id : s.ids) id = r.get<std::int32_t>();
    for (auto& k : s.kinds) {
      const auto raw = r.get<std::uint8_t>();
      if (raw > static_cast<std::uint8_t>(TokenKind::ImageBoundary)) throw ParseError("bad token kind", r.offset() + 8);
      k = static_cast<TokenKind>(raw);
    }
    for (auto& m : s.loss_mask) m = r.get<std::uint8_t>();
    const auto spans = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < spans; ++i) {
      VisionSpan span;
      span.start = r.get<std::uint32_t>();
      span.length = r.get<std::uint32_t>();
      span.image_id = r.get_string();
      s.vision_spans.push_back(std::move(span));
    }
    const auto docs = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < docs; ++i) s.doc_ids.push_back(r.get_string());
    out.push_back(std::move(s));
  }
  return out;
}

nlohmann::json write_shards(const std::filesystem::path& dir, const std::vector<TokenSequence>& seqs,
                            std::size_t per_shard, const PackStats& stats) {
  if (per_shard < 1) throw DomainError("sequences per shard must be >= 1");
  std::filesystem::create_directories(dir);
  nlohmann::json index;
  index["shards"] = nlohmann::json::array();
  for (std::size_t begin = 0, n = 0; begin < seqs.size(); begin += per_shard, ++n) {
    const std::size_t end = std::min(seqs.size(), begin + per_shard);
    char name[32];
    std::snprintf(name, sizeof(name), "shard-%05zu.bin", n);
    write_shard(dir / name, {seqs.begin() + static_cast<std::ptrdiff_t>(begin), seqs.begin() + static_cast<std::ptrdiff_t>(end)});
    index["shards"].push_back({{"path", name}, {"sequences", end - begin}});
  }
  index["context"] = seqs.empty() ? 0 : seqs.front().size();
  index["counts"] = {{"docs_in", stats.docs_in},           {"docs_rejected", stats.docs_rejected},
                     {"sequences", stats.sequences_out},   {"tokens_in", stats.tokens_in},
                     {"tokens_rejected", stats.tokens_rejected}, {"tokens_out", stats.tokens_out},
                     {"pad_tokens", stats.pad_tokens}};
  index["rejected"] = nlohmann::json::array();
  for (const auto& r : stats.rejected) index["rejected"].push_back({{"doc_id", r.doc_id}, {"span_length", r.span_length}});
  std::ofstream(dir / "index.json") << index.dump(2) << '\n';
  return index;
}

std::vector<TokenSequence> read_indexed_shards(const std::filesystem::path& index_path) {
  std::ifstream in(index_path);
  if (!in) throw DomainError("cannot open " + index_path.string());
  const auto index = nlohmann::json::parse(in);
  std::vector<TokenSequence> out;
  for (const auto& shard : index.at("shards")) {
    auto seqs = read_shard(index_path.parent_path() / shard.at("path").get<std::string>());
    std::move(seqs.begin(), seqs.end(), std::back_inserter(out));
  }
  return out;
}

}  // namespace forge
