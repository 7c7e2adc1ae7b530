// SPDX-License-Identifier: Apache-2.0
#include "forge/curation.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <tuple>

#include "forge/error.hpp"

namespace forge {

const std::array<const char*, 9> kRegionNames = {
    "top-left corner of the image",    "top of the image",    "top-right corner of the image",
    "left of the image",               "center of the image", "right of the image",
    "bottom-left corner of the image", "bottom of the image", "bottom-right corner of the image",
};

namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
bool is_word(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '_'; }
char lower(char c) { return static_cast<char>(std::tolower(static_cast<unsigned char>(c))); }

bool iequals_at(std::string_view s, std::size_t at, std::string_view needle) {
  if (at + needle.size() > s.size()) return false;
  for (std::size_t i = 0; i < needle.size(); ++i)
    if (lower(s[at + i]) != lower(needle[i])) return false;
  return true;
}

// Trims and collapses internal whitespace runs to one space.
std::string normalize_space(std::string_view s) {
  std::string out;
  bool pending = false;
  for (char c : s) {
    if (is_space(c)) {
      pending = !out.empty();
      continue;
    }
    if (pending) out.push_back(' ');
    pending = false;
    out.push_back(c);
  }
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

BBox union_box(const std::vector<const OcrItem*>& items) {
  BBox u = items.front()->bbox;
  for (const auto* it : items) {
    u.x1 = std::min(u.x1, it->bbox.x1);
    u.y1 = std::min(u.y1, it->bbox.y1);
    u.x2 = std::max(u.x2, it->bbox.x2);
    u.y2 = std::max(u.y2, it->bbox.y2);
  }
  return u;
}

std::vector<const OcrItem*> items_of(const OcrRecord& rec, OcrUnit unit) {
  std::vector<const OcrItem*> out;
  for (const auto& it : rec.items)
    if (it.unit == unit) out.push_back(&it);
  std::stable_sort(out.begin(), out.end(), [](const OcrItem* a, const OcrItem* b) {
    return std::tie(a->bbox.y1, a->bbox.x1) < std::tie(b->bbox.y1, b->bbox.x1);
  });
  return out;
}

void validate_box(const BBox& b, ImageDims dims, const std::string& what) {
  if (!bbox_in_bounds(b, dims)) throw DomainError(what + " has an empty or out-of-bounds bbox");
}

}  // namespace

bool bbox_in_bounds(const BBox& b, ImageDims dims) {
  return b.x1 >= 0 && b.y1 >= 0 && b.x1 < b.x2 && b.y1 < b.y2 && b.x2 <= dims.width && b.y2 <= dims.height;
}

OcrLevel ocr_level(int level) {
  if (level < 0 || level > 5) throw DomainError("OCR level must be in 0..5, got " + std::to_string(level));
  static constexpr OcrUnit units[] = {OcrUnit::Word, OcrUnit::Line, OcrUnit::Full};
  return {units[level / 2], level % 2 == 1};
}

const std::vector<std::string>& default_stop_phrases() {
  static const std::vector<std::string> phrases = {"the text", "the word"};
  return phrases;
}

std::string strip_stop_phrases(std::string_view segment, const std::vector<std::string>& stop_phrases) {
  std::string_view s = trim(segment);
  bool changed = true;
  while (changed) {
    changed = false;
    for (const auto& phrase : stop_phrases) {
      if (phrase.empty() || !iequals_at(s, 0, phrase)) continue;
      if (s.size() > phrase.size() && is_word(s[phrase.size()]) && is_word(phrase.back())) continue;
      s.remove_prefix(phrase.size());
      s = trim(s);
      changed = true;
    }
  }
  return std::string(s);
}

std::string render_bbox_tag(const BBox& b) {
  return "<bbox>" + std::to_string(b.x1) + ", " + std::to_string(b.y1) + ", " + std::to_string(b.x2) + ", " +
         std::to_string(b.y2) + "</bbox>";
}

std::string render_starts_extends(const BBox& b) {
  return "starts at (" + std::to_string(b.x1) + ", " + std::to_string(b.y1) + ") and extends up to (" +
         std::to_string(b.x2) + ", " + std::to_string(b.y2) + ")";
}

std::string ocr_caption(const OcrRecord& rec, int level, const std::vector<std::string>& stop_phrases) {
  const OcrLevel lv = ocr_level(level);
  struct Segment {
    std::string text;
    BBox bbox;
  };
  std::vector<Segment> segments;
  auto items = items_of(rec, lv.unit);
  if (items.empty() && lv.unit == OcrUnit::Full) {
    auto parts = items_of(rec, OcrUnit::Line);
    if (parts.empty()) parts = items_of(rec, OcrUnit::Word);
    if (!parts.empty()) {
      std::string joined;
      for (const auto* p : parts) {
        const std::string t = normalize_space(p->text);
        if (t.empty()) continue;
        if (!joined.empty()) joined.push_back(' ');
        joined += t;
      }
      segments.push_back({strip_stop_phrases(joined, stop_phrases), union_box(parts)});
    }
  } else {
    for (const auto* it : items) segments.push_back({strip_stop_phrases(normalize_space(it->text), stop_phrases), it->bbox});
  }

  std::string out;
  for (const auto& seg : segments) {
    if (seg.text.empty()) continue;
    validate_box(seg.bbox, rec.dims, "OCR item '" + seg.text + "'");
    if (!out.empty()) out += ", ";
    out += seg.text;
    if (lv.with_bbox) out += " ( " + render_bbox_tag(seg.bbox) + " )";
  }
  return out;
}

const char* to_string(GroundFormat fmt) {
  switch (fmt) {
    case GroundFormat::BboxTag: return "bbox";
    case GroundFormat::StartsExtends: return "starts_extends";
    case GroundFormat::RegionName: return "region";
  }
  return "?";
}

GroundFormat ground_format_from_int(int fmt) {
  switch (fmt) {
    case 1: return GroundFormat::BboxTag;
    case 2: return GroundFormat::StartsExtends;
    case 3: return GroundFormat::RegionName;
  }
  throw DomainError("grounding format must be 1, 2 or 3, got " + std::to_string(fmt));
}

int region_index(const BBox& b, ImageDims dims) {
  if (!dims.valid()) throw DomainError("region lookup needs valid image dims");
  // Centre doubled to stay in integers: cell = floor(3 * cx / W).
  const long long cx2 = static_cast<long long>(b.x1) + b.x2;
  const long long cy2 = static_cast<long long>(b.y1) + b.y2;
  const int col = static_cast<int>(std::clamp<long long>(3 * cx2 / (2LL * dims.width), 0, 2));
  const int row = static_cast<int>(std::clamp<long long>(3 * cy2 / (2LL * dims.height), 0, 2));
  return row * 3 + col;
}

GroundResult ground_caption(const GroundRecord& rec, GroundFormat fmt) {
  struct Insertion {
    std::size_t at;
    std::string text;
  };
  std::vector<Insertion> inserts;
  std::vector<std::size_t> used;
  GroundResult result;
  const std::string& cap = rec.caption;
  for (const auto& obj : rec.objects) {
    if (obj.label.empty()) throw DomainError("grounding object with empty label in " + rec.image_id);
    validate_box(obj.bbox, rec.dims, "object '" + obj.label + "'");
    std::size_t found = std::string::npos;
    int seen = 0;
    for (std::size_t at = 0; at + obj.label.size() <= cap.size(); ++at) {
      if (!iequals_at(cap, at, obj.label)) continue;
      const bool left_ok = at == 0 || !is_word(cap[at - 1]) || !is_word(obj.label.front());
      const std::size_t end = at + obj.label.size();
      const bool right_ok = end == cap.size() || !is_word(cap[end]) || !is_word(obj.label.back());
      if (!left_ok || !right_ok) continue;
      if (seen++ == obj.occurrence) {
        found = end;
        break;
      }
    }
    if (found == std::string::npos || std::find(used.begin(), used.end(), found) != used.end()) {
      result.skipped.push_back(obj.label);
      continue;
    }
    used.push_back(found);
    std::string info;
    switch (fmt) {
      case GroundFormat::BboxTag: info = render_bbox_tag(obj.bbox); break;
      case GroundFormat::StartsExtends: info = render_starts_extends(obj.bbox); break;
      case GroundFormat::RegionName: info = kRegionNames[static_cast<std::size_t>(region_index(obj.bbox, rec.dims))]; break;
    }
    inserts.push_back({found, " ( " + info + " )"});
  }
  std::sort(inserts.begin(), inserts.end(), [](const auto& a, const auto& b) { return a.at > b.at; });
  result.caption = cap;
  for (const auto& ins : inserts) result.caption.insert(ins.at, ins.text);
  return result;
}

namespace {

class AnnotationParser {
 public:
  explicit AnnotationParser(std::string_view s) : s_(s) {}

  std::vector<ParsedAnnotation> run() {
    std::vector<ParsedAnnotation> out;
    std::size_t segment_start = 0;
    std::size_t at = 0;
    while (at < s_.size()) {
      const std::size_t open = s_.find(" ( ", at);
      const std::size_t stray = s_.find("<bbox>", at);
      if (open == std::string_view::npos) {
        if (stray != std::string_view::npos) parse_bare_tag(stray);
        break;
      }
      if (stray != std::string_view::npos && stray < open) parse_bare_tag(stray);
      ParsedAnnotation ann;
      if (!parse_info(open + 3, ann)) {
        at = open + 1;
        continue;
      }
      ann.begin = open;
      std::string_view seg = s_.substr(segment_start, open - segment_start);
      seg = trim(seg);
      if (seg.size() >= 1 && seg.front() == ',') seg = trim(seg.substr(1));
      ann.segment = std::string(seg);
      segment_start = at = ann.end;
      out.push_back(std::move(ann));
    }
    return out;
  }

 private:
  [[noreturn]] void fail(const std::string& msg, std::size_t at) const { throw ParseError(msg, at); }

  bool lit(std::size_t& at, std::string_view text) const {
    if (s_.substr(at, text.size()) != text) return false;
    at += text.size();
    return true;
  }

  void need(std::size_t& at, std::string_view text) const {
    if (!lit(at, text)) fail("expected '" + std::string(text) + "'", at);
  }

  int number(std::size_t& at) const {
    int v = 0;
    const char* first = s_.data() + at;
    const auto [ptr, ec] = std::from_chars(first, s_.data() + s_.size(), v);
    if (ec != std::errc{} || ptr == first) fail("expected integer", at);
    at += static_cast<std::size_t>(ptr - first);
    return v;
  }

  BBox bbox_body(std::size_t& at) const {
    BBox b;
    b.x1 = number(at);
    need(at, ", ");
    b.y1 = number(at);
    need(at, ", ");
    b.x2 = number(at);
    need(at, ", ");
    b.y2 = number(at);
    need(at, "</bbox>");
    return b;
  }

  // A <bbox> outside " ( ... )" is only legal as part of an annotation.
  [[noreturn]] void parse_bare_tag(std::size_t tag) const {
    std::size_t at = tag + 6;
    bbox_body(at);
    fail("<bbox> tag outside an annotation", tag);
  }

  bool parse_info(std::size_t at, ParsedAnnotation& ann) const {
    if (lit(at, "<bbox>")) {
      ann.kind = InfoKind::BboxTag;
      ann.bbox = bbox_body(at);
      need(at, " )");
      ann.end = at;
      return true;
    }
    if (lit(at, "starts at (")) {
      BBox b;
      b.x1 = number(at);
      need(at, ", ");
      b.y1 = number(at);
      need(at, ") and extends up to (");
      b.x2 = number(at);
      need(at, ", ");
      b.y2 = number(at);
      need(at, ")");
      need(at, " )");
      ann.kind = InfoKind::StartsExtends;
      ann.bbox = b;
      ann.end = at;
      return true;
    }
    for (const char* name : kRegionNames) {
      std::size_t probe = at;
      if (lit(probe, name) && lit(probe, " )")) {
        ann.kind = InfoKind::Region;
        ann.region = name;
        ann.end = probe;
        return true;
      }
    }
    return false;
  }

  std::string_view s_;
};

}  // namespace

std::vector<ParsedAnnotation> parse_augmented(std::string_view caption) { return AnnotationParser(caption).run(); }

std::string strip_annotations(std::string_view caption) {
  std::string out;
  std::size_t at = 0;
  for (const auto& ann : parse_augmented(caption)) {
    out.append(caption.substr(at, ann.begin - at));
    at = ann.end;
  }
  out.append(caption.substr(at));
  return out;
}

namespace {

BBox bbox_from(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 4) throw DomainError("bbox must be [x1, y1, x2, y2]");
  return {j[0].get<int>(), j[1].get<int>(), j[2].get<int>(), j[3].get<int>()};
}

nlohmann::json bbox_json(const BBox& b) { return nlohmann::json::array({b.x1, b.y1, b.x2, b.y2}); }

OcrUnit unit_from(const std::string& s) {
  if (s == "word") return OcrUnit::Word;
  if (s == "line") return OcrUnit::Line;
  if (s == "full") return OcrUnit::Full;
  throw DomainError("OCR level must be word, line or full, got '" + s + "'");
}

const char* unit_name(OcrUnit u) {
  switch (u) {
    case OcrUnit::Word: return "word";
    case OcrUnit::Line: return "line";
    case OcrUnit::Full: return "full";
  }
  return "?";
}

}  // namespace

OcrRecord ocr_record_from_json(const nlohmann::json& j) {
  OcrRecord rec;
  rec.image_id = j.at("image_id").get<std::string>();
  rec.dims = {j.at("width").get<int>(), j.at("height").get<int>()};
  if (!rec.dims.valid()) throw DomainError("record " + rec.image_id + " has invalid dims");
  for (const auto& it : j.value("items", nlohmann::json::array())) {
    OcrItem item{it.at("text").get<std::string>(), bbox_from(it.at("bbox")), unit_from(it.value("level", "word"))};
    validate_box(item.bbox, rec.dims, "OCR item in " + rec.image_id);
    rec.items.push_back(std::move(item));
  }
  return rec;
}

GroundRecord ground_record_from_json(const nlohmann::json& j) {
  GroundRecord rec;
  rec.image_id = j.at("image_id").get<std::string>();
  rec.dims = {j.at("width").get<int>(), j.at("height").get<int>()};
  if (!rec.dims.valid()) throw DomainError("record " + rec.image_id + " has invalid dims");
  rec.caption = j.at("caption").get<std::string>();
  for (const auto& o : j.value("objects", nlohmann::json::array())) {
    GroundObject obj{o.at("label").get<std::string>(), bbox_from(o.at("bbox")), o.value("occurrence", 0)};
    if (obj.label.empty()) throw DomainError("object with empty label in " + rec.image_id);
    validate_box(obj.bbox, rec.dims, "object in " + rec.image_id);
    rec.objects.push_back(std::move(obj));
  }
  return rec;
}

nlohmann::json to_json(const OcrRecord& rec) {
  nlohmann::json items = nlohmann::json::array();
  for (const auto& it : rec.items) items.push_back({{"text", it.text}, {"bbox", bbox_json(it.bbox)}, {"level", unit_name(it.unit)}});
  return {{"image_id", rec.image_id}, {"width", rec.dims.width}, {"height", rec.dims.height}, {"items", items}};
}

nlohmann::json to_json(const GroundRecord& rec) {
  nlohmann::json objs = nlohmann::json::array();
  for (const auto& o : rec.objects)
    objs.push_back({{"label", o.label}, {"bbox", bbox_json(o.bbox)}, {"occurrence", o.occurrence}});
  return {{"image_id", rec.image_id}, {"width", rec.dims.width}, {"height", rec.dims.height},
          {"caption", rec.caption},   {"objects", objs}};
}

}  // namespace forge
