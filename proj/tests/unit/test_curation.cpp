// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "curation_gen.hpp"
#include "forge/curation.hpp"
#include "forge/error.hpp"

namespace forge {
namespace {

OcrRecord one_item(const std::string& text, BBox box, OcrUnit unit = OcrUnit::Word) {
  return {"img", {100, 100}, {{text, box, unit}}};
}

TEST(Ocr, BboxSegmentFormat) {
  EXPECT_EQ(ocr_caption(one_item("STOP", {10, 20, 50, 60}), 1), "STOP ( <bbox>10, 20, 50, 60</bbox> )");
  EXPECT_EQ(ocr_caption(one_item("STOP", {10, 20, 50, 60}), 0), "STOP");
}

TEST(Ocr, StopPhraseStripped) {
  EXPECT_EQ(ocr_caption(one_item("the text SALE", {0, 0, 5, 5}), 0), "SALE");
  EXPECT_EQ(ocr_caption(one_item("The Word  Exit", {0, 0, 5, 5}), 1), "Exit ( <bbox>0, 0, 5, 5</bbox> )");
  EXPECT_EQ(strip_stop_phrases("the text the word open", default_stop_phrases()), "open");
  EXPECT_EQ(strip_stop_phrases("the textile", default_stop_phrases()), "the textile");
  EXPECT_EQ(strip_stop_phrases("SALE the text", default_stop_phrases()), "SALE the text");
  EXPECT_EQ(strip_stop_phrases("the text", default_stop_phrases()), "");
}

TEST(Ocr, StopPhraseIdempotent) {
  std::mt19937_64 rng(3);
  const std::vector<std::string> prefixes = {"", "the text ", "THE WORD ", "the text the word ", "the "};
  for (int i = 0; i < 500; ++i) {
    const std::string s = prefixes[rng() % prefixes.size()] + testgen::random_phrase(rng, 4);
    const std::string once = strip_stop_phrases(s, default_stop_phrases());
    EXPECT_EQ(strip_stop_phrases(once, default_stop_phrases()), once);
    EXPECT_NE(s.find(once), std::string::npos);
    EXPECT_EQ(s.substr(s.size() - once.size()), once);
  }
}

TEST(Ocr, ReadingOrderAndUnits) {
  OcrRecord rec{"img", {200, 100}, {}};
  rec.items = {{"right", {100, 10, 150, 20}, OcrUnit::Word}, {"left", {10, 10, 50, 20}, OcrUnit::Word},
               {"below", {0, 50, 40, 60}, OcrUnit::Word},     {"top line", {10, 10, 150, 20}, OcrUnit::Line},
               {"low line", {0, 50, 40, 60}, OcrUnit::Line}};
  EXPECT_EQ(ocr_caption(rec, 0), "left, right, below");
  EXPECT_EQ(ocr_caption(rec, 2), "top line, low line");
  EXPECT_EQ(ocr_caption(rec, 3), "top line ( <bbox>10, 10, 150, 20</bbox> ), low line ( <bbox>0, 50, 40, 60</bbox> )");
  // No Full items: one segment over the lines, boxed by their union.
  EXPECT_EQ(ocr_caption(rec, 4), "top line low line");
  EXPECT_EQ(ocr_caption(rec, 5), "top line low line ( <bbox>0, 10, 150, 60</bbox> )");
}

TEST(Ocr, LevelsAndErrors) {
  for (int level = 0; level < 6; ++level) {
    EXPECT_EQ(ocr_level(level).with_bbox, level % 2 == 1);
    EXPECT_EQ(static_cast<int>(ocr_level(level).unit), level / 2);
  }
  EXPECT_THROW(ocr_level(6), DomainError);
  EXPECT_THROW(ocr_level(-1), DomainError);
  EXPECT_THROW(ocr_caption(one_item("x", {0, 0, 101, 5}), 1), DomainError);
  EXPECT_EQ(ocr_caption(OcrRecord{"img", {10, 10}, {}}, 1), "");
}

TEST(Ocr, RandomRoundTrip) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 1000; ++i) {
    const auto rec = testgen::random_ocr_record(rng, i);
    for (int level = 0; level < 6; ++level) ASSERT_EQ(testgen::check_ocr_round_trip(rec, level), "") << "level " << level;
  }
}

TEST(Ocr, JsonRoundTrip) {
  std::mt19937_64 rng(2);
  const auto rec = testgen::random_ocr_record(rng, 0);
  const auto back = ocr_record_from_json(to_json(rec));
  for (int level = 0; level < 6; ++level) EXPECT_EQ(ocr_caption(back, level), ocr_caption(rec, level));
  EXPECT_THROW(ocr_record_from_json(nlohmann::json::parse(
                   R"({"image_id": "a", "width": 10, "height": 10, "items": [{"text": "x", "bbox": [0, 0, 11, 1]}]})")),
               DomainError);
  EXPECT_THROW(ocr_record_from_json(nlohmann::json::parse(
                   R"({"image_id": "a", "width": 10, "height": 10, "items": [{"text": "x", "bbox": [0, 0, 1, 1], "level": "page"}]})")),
               DomainError);
}

GroundRecord ground_one(const std::string& caption, const std::string& label, BBox box, ImageDims dims = {300, 300}) {
  return {"img", dims, caption, {{label, box, 0}}};
}

TEST(Grounding, Formats) {
  EXPECT_EQ(ground_caption(ground_one("a dog runs", "dog", {0, 0, 10, 10}), GroundFormat::RegionName).caption,
            "a dog ( top-left corner of the image ) runs");
  EXPECT_EQ(render_starts_extends({12, 30, 200, 180}), "starts at (12, 30) and extends up to (200, 180)");
  EXPECT_EQ(ground_caption(ground_one("a dog runs", "dog", {12, 30, 200, 180}), GroundFormat::StartsExtends).caption,
            "a dog ( starts at (12, 30) and extends up to (200, 180) ) runs");
  EXPECT_EQ(ground_caption(ground_one("a dog.", "dog", {1, 2, 3, 4}), GroundFormat::BboxTag).caption,
            "a dog ( <bbox>1, 2, 3, 4</bbox> ).");
  EXPECT_EQ(ground_format_from_int(2), GroundFormat::StartsExtends);
  EXPECT_THROW(ground_format_from_int(4), DomainError);
}

TEST(Grounding, WholeWordsAndOccurrences) {
  GroundRecord rec{"img", {100, 100}, "hotdog and a dog and a Dog", {{"dog", {0, 0, 1, 1}, 1}, {"cat", {0, 0, 1, 1}, 0}}};
  const auto r = ground_caption(rec, GroundFormat::BboxTag);
  EXPECT_EQ(r.caption, "hotdog and a dog and a Dog ( <bbox>0, 0, 1, 1</bbox> )");
  EXPECT_EQ(r.skipped, std::vector<std::string>{"cat"});
  rec.objects = {{"dog", {0, 0, 1, 1}, 0}, {"dog", {0, 0, 1, 1}, 0}};
  EXPECT_EQ(ground_caption(rec, GroundFormat::BboxTag).skipped.size(), 1u);
  rec.objects = {{"", {0, 0, 1, 1}, 0}};
  EXPECT_THROW(ground_caption(rec, GroundFormat::BboxTag), DomainError);
}

TEST(Grounding, RegionIsTotal) {
  std::mt19937_64 rng(5);
  std::vector<int> hits(9, 0);
  for (int i = 0; i < 20000; ++i) {
    const ImageDims dims = testgen::random_dims(rng);
    const BBox b = testgen::random_box(rng, dims);
    const int r = region_index(b, dims);
    ASSERT_GE(r, 0);
    ASSERT_LT(r, 9);
    ASSERT_EQ(r, testgen::oracle_region(b, dims));
    ++hits[static_cast<std::size_t>(r)];
  }
  for (int h : hits) EXPECT_GT(h, 0);
  EXPECT_EQ(region_index({299, 299, 300, 300}, {300, 300}), 8);
  EXPECT_EQ(region_index({140, 140, 160, 160}, {300, 300}), 4);
  EXPECT_EQ(kRegionNames[0], std::string("top-left corner of the image"));
}

TEST(Grounding, RandomRoundTrip) {
  std::mt19937_64 rng(12);
  for (int i = 0; i < 1000; ++i) {
    const auto gc = testgen::random_ground_record(rng, i);
    for (auto fmt : {GroundFormat::BboxTag, GroundFormat::StartsExtends, GroundFormat::RegionName})
      ASSERT_EQ(testgen::check_ground_round_trip(gc, fmt), "") << to_string(fmt) << " on '" << gc.record.caption << "'";
  }
}

TEST(Grounding, JsonRoundTrip) {
  std::mt19937_64 rng(8);
  const auto gc = testgen::random_ground_record(rng, 0);
  const auto back = ground_record_from_json(to_json(gc.record));
  EXPECT_EQ(ground_caption(back, GroundFormat::BboxTag).caption, ground_caption(gc.record, GroundFormat::BboxTag).caption);
}

TEST(Parse, MixedKinds) {
  const auto anns = parse_augmented("SALE ( <bbox>1, 2, 3, 4</bbox> ), a cat ( top of the image ) sat (no info) and "
                                    "a dog ( starts at (5, 6) and extends up to (7, 8) )");
  ASSERT_EQ(anns.size(), 3u);
  EXPECT_EQ(anns[0].segment, "SALE");
  EXPECT_EQ(*anns[0].bbox, (BBox{1, 2, 3, 4}));
  EXPECT_EQ(anns[1].segment, "a cat");
  EXPECT_EQ(anns[1].kind, InfoKind::Region);
  EXPECT_EQ(anns[1].region, "top of the image");
  EXPECT_EQ(anns[2].segment, "sat (no info) and a dog");
  EXPECT_EQ(anns[2].kind, InfoKind::StartsExtends);
  EXPECT_EQ(*anns[2].bbox, (BBox{5, 6, 7, 8}));
  EXPECT_EQ(strip_annotations("a cat ( top of the image ) sat"), "a cat sat");
  EXPECT_TRUE(parse_augmented("plain caption").empty());
}

TEST(Parse, TruncatedTagReportsOffset) {
  const std::string s = "STOP ( <bbox>10, 20";
  try {
    parse_augmented(s);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset(), s.size());
  }
  EXPECT_THROW(parse_augmented("<bbox>10, 20"), ParseError);
  EXPECT_THROW(parse_augmented("x ( <bbox>1, 2, 3, 4</bbox>"), ParseError);
  EXPECT_THROW(parse_augmented("x ( starts at (1, 2) and extends"), ParseError);
  EXPECT_THROW(parse_augmented("stray <bbox>1, 2, 3, 4</bbox> tag"), ParseError);
}

}  // namespace
}  // namespace forge
