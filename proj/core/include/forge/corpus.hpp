// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <istream>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "forge/imaging.hpp"
#include "forge/sequencer.hpp"

namespace forge {

// {"doc_id": ..., "blocks": [{"text": ..., "prompt"?: bool} | {"image": ..., "w": ..., "h": ...}]}
InterleavedDoc doc_from_json(const nlohmann::json& j);
nlohmann::json to_json(const InterleavedDoc& doc);

// Calls parse(line_json) for every non-blank line; errors carry the line number.
template <typename T, typename Parse>
std::vector<T> read_jsonl(std::istream& in, const std::string& source, Parse parse);

std::vector<InterleavedDoc> read_docs_jsonl(const std::filesystem::path& path);
std::vector<nlohmann::json> read_json_lines(const std::filesystem::path& path);
void write_json_lines(const std::filesystem::path& path, const std::vector<nlohmann::json>& rows);

// Resolves image ids to pixels.
class ImageStore {
 public:
  virtual ~ImageStore() = default;
  virtual Image load(const std::string& image_id, ImageDims expected) const = 0;
};

// Deterministic test pattern derived from the image id; any dims accepted.
class SyntheticImageStore final : public ImageStore {
 public:
  Image load(const std::string& image_id, ImageDims expected) const override;
};

// <root>/<image_id>.rgb holding width*height*3 raw bytes.
class RawDirectoryImageStore : public ImageStore {
 public:
  explicit RawDirectoryImageStore(std::filesystem::path root) : root_(std::move(root)) {}
  Image load(const std::string& image_id, ImageDims expected) const override;

 protected:
  std::filesystem::path root_;
};

Image read_raw_rgb(const std::filesystem::path& path, ImageDims dims);

std::vector<EvalItem> read_eval_jsonl(const std::filesystem::path& path);

}  // namespace forge

#include "forge/corpus_inl.hpp"
