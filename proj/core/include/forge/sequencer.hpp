// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "forge/imaging.hpp"
#include "forge/resampler.hpp"

namespace forge {

// Byte-level vocabulary: ids 0..255 are raw bytes, followed by four specials.
// Vision slots carry kVisionSlot, which lies outside the predictable vocabulary.
namespace token {
inline constexpr std::int32_t kBos = 256;
inline constexpr std::int32_t kEos = 257;
inline constexpr std::int32_t kPad = 258;
inline constexpr std::int32_t kImageBoundary = 259;
inline constexpr std::int32_t kVocabSize = 260;
inline constexpr std::int32_t kVisionSlot = 260;
}  // namespace token

enum class TokenKind : std::uint8_t { Text = 0, Vision = 1, Bos = 2, Eos = 3, Pad = 4, ImageBoundary = 5 };

const char* to_string(TokenKind kind);

struct TextBlock {
  std::string text;
  bool prompt = false;  // excluded from the loss in SFT masking
};

struct ImageBlock {
  std::string image_id;
  ImageDims dims;
};

using DocBlock = std::variant<TextBlock, ImageBlock>;

struct InterleavedDoc {
  std::string doc_id;
  std::vector<DocBlock> blocks;
};

// Vision slots [start, start + length) for one image; the boundary tokens sit
// at start - 1 and start + length.
struct VisionSpan {
  std::string image_id;
  std::size_t start = 0;
  std::size_t length = 0;
  friend bool operator==(const VisionSpan&, const VisionSpan&) = default;
};

struct TokenSequence {
  std::vector<std::int32_t> ids;
  std::vector<TokenKind> kinds;
  std::vector<std::uint8_t> loss_mask;
  std::vector<VisionSpan> vision_spans;
  std::vector<std::string> doc_ids;  // source documents, in order

  std::size_t size() const { return ids.size(); }
  void push(std::int32_t id, TokenKind kind, bool loss);
  friend bool operator==(const TokenSequence&, const TokenSequence&) = default;
};

enum class MaskMode {
  PreTraining,  // every text token carries loss
  Sft,          // text blocks flagged as prompt are masked out
};

struct TokenizeOptions {
  SamplingKind sampling = SamplingKind::PerPatch;
  MaskMode mask = MaskMode::PreTraining;
};

// [Bos, blocks..., Eos]. Text blocks become one token per byte; an image block
// becomes ImageBoundary, k vision slots, ImageBoundary with k from the
// resampler output law for the image's plan.
TokenSequence tokenize_doc(const InterleavedDoc& doc, const std::map<std::string, PatchPlan>& plans, int m,
                           const TokenizeOptions& opts = {});

// Concatenated bytes of every Text position.
std::string detokenize_text(const TokenSequence& seq);

// Structural checks shared by tests and the report command. Returns an empty
// string when the sequence is well formed, else the first violation.
std::string check_sequence(const TokenSequence& seq);

struct RejectedDoc {
  std::string doc_id;
  std::size_t span_length = 0;  // vision span including boundaries
};

struct PackStats {
  std::size_t docs_in = 0;
  std::size_t docs_rejected = 0;
  std::size_t sequences_out = 0;
  std::size_t tokens_in = 0;
  std::size_t tokens_rejected = 0;
  std::size_t tokens_out = 0;  // non-pad
  std::size_t pad_tokens = 0;
  std::vector<RejectedDoc> rejected;
};

// Greedy context packer. Text may split across sequences; a vision span and
// its boundaries never do. Completed sequences are padded to the context
// length. A document whose vision span cannot fit an empty context is rejected
// whole and recorded in stats().rejected.
class Packer {
 public:
  explicit Packer(std::size_t context);

  std::vector<TokenSequence> push(const TokenSequence& seq);
  std::vector<TokenSequence> finish();

  std::size_t context() const { return context_; }
  const PackStats& stats() const { return stats_; }

 private:
  void emit(std::vector<TokenSequence>& out);

  std::size_t context_;
  TokenSequence current_;
  PackStats stats_;
};

std::vector<TokenSequence> pack(std::span<const TokenSequence> seqs, std::size_t context, PackStats* stats = nullptr);

struct EvalItem {
  std::string id;
  std::string image_id;
  ImageDims dims;
  std::string question;  // empty for captioning
  std::string answer;
};

struct FewShotPrompt {
  std::vector<EvalItem> demos;
  EvalItem query;

  // Demos as image + answered text, then the query image with an open prompt.
  InterleavedDoc to_doc() const;
};

// Samples `shots` demonstrations without replacement from `pool`, excluding
// any item whose id equals the query's. Deterministic in (seed, query_index).
FewShotPrompt build_fewshot(std::span<const EvalItem> pool, const EvalItem& query, std::size_t query_index, int shots,
                            std::uint64_t seed);

// One prompt per item of `corpus`, demos drawn from the rest of the corpus.
std::vector<FewShotPrompt> build_fewshot(std::span<const EvalItem> corpus, int shots, std::uint64_t seed);

}  // namespace forge
