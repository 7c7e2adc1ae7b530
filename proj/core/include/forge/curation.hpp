// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "forge/imaging.hpp"

namespace forge {

// Inclusive-exclusive pixel box as written in captions: x1 < x2, y1 < y2.
struct BBox {
  int x1 = 0;
  int y1 = 0;
  int x2 = 0;
  int y2 = 0;
  friend bool operator==(const BBox&, const BBox&) = default;
};

bool bbox_in_bounds(const BBox& b, ImageDims dims);

enum class OcrUnit { Word, Line, Full };

struct OcrItem {
  std::string text;
  BBox bbox;
  OcrUnit unit = OcrUnit::Word;
};

struct OcrRecord {
  std::string image_id;
  ImageDims dims;
  std::vector<OcrItem> items;
};

// Level 0..5 = {Word, Line, Full} x {text only, text + bbox}:
// 0 word, 1 word+bbox, 2 line, 3 line+bbox, 4 full, 5 full+bbox.
struct OcrLevel {
  OcrUnit unit;
  bool with_bbox;
};
OcrLevel ocr_level(int level);

const std::vector<std::string>& default_stop_phrases();

// Removes leading stop phrases (case-insensitive, whole words) and the
// whitespace after them, repeatedly.
std::string strip_stop_phrases(std::string_view segment, const std::vector<std::string>& stop_phrases);

// Segments of the level's unit in reading order (top-to-bottom, then
// left-to-right), joined by ", ". Bbox levels follow each segment with
// " ( <bbox>x1, y1, x2, y2</bbox> )". A Full request on a record without Full
// items falls back to one segment spanning all Line (else Word) items.
std::string ocr_caption(const OcrRecord& rec, int level,
                        const std::vector<std::string>& stop_phrases = default_stop_phrases());

enum class GroundFormat { BboxTag, StartsExtends, RegionName };

const char* to_string(GroundFormat fmt);
GroundFormat ground_format_from_int(int fmt);  // 1, 2, 3

struct GroundObject {
  std::string label;
  BBox bbox;
  int occurrence = 0;  // which whole-word occurrence of label in the caption
};

struct GroundRecord {
  std::string image_id;
  ImageDims dims;
  std::string caption;
  std::vector<GroundObject> objects;
};

extern const std::array<const char*, 9> kRegionNames;

// Index into kRegionNames of the 3x3 cell holding the box centre.
int region_index(const BBox& b, ImageDims dims);

std::string render_bbox_tag(const BBox& b);
std::string render_starts_extends(const BBox& b);

struct GroundResult {
  std::string caption;
  std::vector<std::string> skipped;  // labels not found (or occurrence already used)
};

// Rewrites each object's label occurrence to "label ( grounding_info )".
GroundResult ground_caption(const GroundRecord& rec, GroundFormat fmt);

enum class InfoKind { BboxTag, StartsExtends, Region };

struct ParsedAnnotation {
  std::string segment;  // text since the previous annotation, trimmed, leading ", " dropped
  InfoKind kind = InfoKind::BboxTag;
  std::optional<BBox> bbox;
  std::string region;
  std::size_t begin = 0;  // byte offset of " ( "
  std::size_t end = 0;    // one past the closing ")"
};

// Inverse of the emitters. Throws ParseError with the byte offset when a
// <bbox> tag or a "starts at" clause is malformed or not closed.
std::vector<ParsedAnnotation> parse_augmented(std::string_view caption);

// The caption with every annotation removed.
std::string strip_annotations(std::string_view caption);

OcrRecord ocr_record_from_json(const nlohmann::json& j);
GroundRecord ground_record_from_json(const nlohmann::json& j);
nlohmann::json to_json(const OcrRecord& rec);
nlohmann::json to_json(const GroundRecord& rec);

}  // namespace forge
