// SPDX-License-Identifier: Apache-2.0
#include "forge/corpus.hpp"

#include <fstream>

#include "forge/error.hpp"
#include "forge/linalg.hpp"
#include "forge/rng.hpp"

namespace forge {

InterleavedDoc doc_from_json(const nlohmann::json& j) {
  InterleavedDoc doc;
  doc.doc_id = j.at("doc_id").get<std::string>();
  for (const auto& b : j.at("blocks")) {
    if (b.contains("text")) {
      doc.blocks.emplace_back(TextBlock{b.at("text").get<std::string>(), b.value("prompt", false)});
    } else if (b.contains("image")) {
      const ImageDims dims{b.at("w").get<int>(), b.at("h").get<int>()};
      if (!dims.valid()) throw DomainError("image block in " + doc.doc_id + " has invalid dims");
      doc.blocks.emplace_back(ImageBlock{b.at("image").get<std::string>(), dims});
    } else {
      throw DomainError("block in " + doc.doc_id + " is neither text nor image");
    }
  }
  if (doc.blocks.empty()) throw DomainError("document " + doc.doc_id + " has no blocks");
  return doc;
}

nlohmann::json to_json(const InterleavedDoc& doc) {
  nlohmann::json blocks = nlohmann::json::array();
  for (const auto& b : doc.blocks) {
    if (const auto* t = std::get_if<TextBlock>(&b)) {
      nlohmann::json tj = {{"text", t->text}};
      if (t->prompt) tj["prompt"] = true;
      blocks.push_back(tj);
    } else {
      const auto& img = std::get<ImageBlock>(b);
      blocks.push_back({{"image", img.image_id}, {"w", img.dims.width}, {"h", img.dims.height}});
    }
  }
  return {{"doc_id", doc.doc_id}, {"blocks", blocks}};
}

std::vector<InterleavedDoc> read_docs_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DomainError("cannot open " + path.string());
  return read_jsonl<InterleavedDoc>(in, path.string(), doc_from_json);
}

std::vector<nlohmann::json> read_json_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DomainError("cannot open " + path.string());
  return read_jsonl<nlohmann::json>(in, path.string(), [](nlohmann::json j) { return j; });
}

void write_json_lines(const std::filesystem::path& path, const std::vector<nlohmann::json>& rows) {
  std::ofstream out(path);
  if (!out) throw DomainError("cannot open " + path.string() + " for writing");
  for (const auto& r : rows) out << r.dump() << '\n';
}

Image SyntheticImageStore::load(const std::string& image_id, ImageDims expected) const {
  if (!expected.valid()) throw DomainError("synthetic image '" + image_id + "' needs valid dims");
  const std::uint64_t h = hash_bytes(image_id.data(), image_id.size(), kFnvOffset);
  std::mt19937_64 rng(splitmix64(h));
  // A few axis-aligned colour bands over a gradient, so patches differ.
  const int bands = 2 + static_cast<int>(uniform_index(rng, 4));
  std::vector<std::array<std::uint8_t, 3>> colors(static_cast<std::size_t>(bands));
  for (auto& c : colors)
    for (auto& v : c) v = static_cast<std::uint8_t>(uniform_index(rng, 256));
  const bool vertical = (h & 1) != 0;
  Image img(expected.width, expected.height);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const int along = vertical ? y : x;
      const int extent = vertical ? img.height : img.width;
      const auto& c = colors[static_cast<std::size_t>(along * bands / extent)];
      const int shade = (vertical ? x : y) * 64 / std::max(1, vertical ? img.width : img.height);
      for (int ch = 0; ch < 3; ++ch) img.at(x, y, ch) = static_cast<std::uint8_t>(std::min(255, c[ch] / 2 + shade + 32 * ch));
    }
  }
  return img;
}

Image read_raw_rgb(const std::filesystem::path& path, ImageDims dims) {
  if (!dims.valid()) throw DomainError("raw image " + path.string() + " needs dims");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DomainError("cannot open " + path.string());
  Image img(dims.width, dims.height);
  in.read(reinterpret_cast<char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.rgb.size()) || in.peek() != std::ifstream::traits_type::eof())
    throw DomainError("raw image " + path.string() + " is not " + std::to_string(dims.width) + "x" +
                      std::to_string(dims.height) + " RGB");
  return img;
}

Image RawDirectoryImageStore::load(const std::string& image_id, ImageDims expected) const {
  const auto path = root_ / (image_id + ".rgb");
  if (!std::filesystem::exists(path)) throw DomainError("image '" + image_id + "' not found under " + root_.string());
  return read_raw_rgb(path, expected);
}

std::vector<EvalItem> read_eval_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DomainError("cannot open " + path.string());
  return read_jsonl<EvalItem>(in, path.string(), [](const nlohmann::json& j) {
    EvalItem item;
    item.id = j.at("id").get<std::string>();
    item.image_id = j.at("image").get<std::string>();
    item.dims = {j.at("w").get<int>(), j.at("h").get<int>()};
    item.question = j.value("question", "");
    item.answer = j.at("answer").get<std::string>();
    return item;
  });
}

}  // namespace forge
