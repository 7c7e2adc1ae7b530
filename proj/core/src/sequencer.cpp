// SPDX-License-Identifier: Apache-2.0
#include "forge/sequencer.hpp"

#include <algorithm>

#include "forge/error.hpp"
#include "forge/rng.hpp"

namespace forge {

const char* to_string(TokenKind kind) {
  switch (kind) {
    case TokenKind::Text: return "text";
    case TokenKind::Vision: return "vision";
    case TokenKind::Bos: return "bos";
    case TokenKind::Eos: return "eos";
    case TokenKind::Pad: return "pad";
    case TokenKind::ImageBoundary: return "image_boundary";
  }
  return "?";
}

void TokenSequence::push(std::int32_t id, TokenKind kind, bool loss) {
  ids.push_back(id);
  kinds.push_back(kind);
  loss_mask.push_back(loss ? 1 : 0);
}

TokenSequence tokenize_doc(const InterleavedDoc& doc, const std::map<std::string, PatchPlan>& plans, int m,
                           const TokenizeOptions& opts) {
  if (m < 1) throw DomainError("query count must be >= 1");
  if (doc.blocks.empty()) throw DomainError("document " + doc.doc_id + " has no blocks");
  TokenSequence seq;
  seq.doc_ids.push_back(doc.doc_id);
  seq.push(token::kBos, TokenKind::Bos, false);
  for (const auto& block : doc.blocks) {
    if (const auto* text = std::get_if<TextBlock>(&block)) {
      const bool loss = opts.mask == MaskMode::PreTraining || !text->prompt;
      for (unsigned char byte : text->text) seq.push(byte, TokenKind::Text, loss);
      continue;
    }
    const auto& image = std::get<ImageBlock>(block);
    const auto it = plans.find(image.image_id);
    if (it == plans.end())
      throw DomainError("document " + doc.doc_id + " references unresolved image '" + image.image_id + "'");
    const int k = resampled_count(opts.sampling, m, it->second.buffer_count());
    seq.push(token::kImageBoundary, TokenKind::ImageBoundary, false);
    seq.vision_spans.push_back({image.image_id, seq.size(), static_cast<std::size_t>(k)});
    for (int i = 0; i < k; ++i) seq.push(token::kVisionSlot, TokenKind::Vision, false);
    seq.push(token::kImageBoundary, TokenKind::ImageBoundary, false);
  }
  seq.push(token::kEos, TokenKind::Eos, false);
  return seq;
}

std::string detokenize_text(const TokenSequence& seq) {
  std::string out;
  for (std::size_t i = 0; i < seq.size(); ++i)
    if (seq.kinds[i] == TokenKind::Text) out.push_back(static_cast<char>(seq.ids[i]));
  return out;
}

std::string check_sequence(const TokenSequence& seq) {
  const std::size_t n = seq.size();
  if (seq.kinds.size() != n || seq.loss_mask.size() != n) return "ids, kinds and loss_mask differ in length";
  std::vector<std::uint8_t> covered(n, 0);
  for (const auto& span : seq.vision_spans) {
    if (span.length == 0 || span.start == 0 || span.start + span.length >= n)
      return "vision span for '" + span.image_id + "' lacks room for its boundaries";
    if (seq.kinds[span.start - 1] != TokenKind::ImageBoundary || seq.kinds[span.start + span.length] != TokenKind::ImageBoundary)
      return "vision span for '" + span.image_id + "' is not flanked by image boundaries";
    covered[span.start - 1] = covered[span.start + span.length] = 2;
    for (std::size_t p = span.start; p < span.start + span.length; ++p) {
      if (seq.kinds[p] != TokenKind::Vision) return "vision span for '" + span.image_id + "' is not contiguous";
      covered[p] = 1;
    }
  }
  for (std::size_t p = 0; p < n; ++p) {
    const TokenKind k = seq.kinds[p];
    if (seq.loss_mask[p] && k != TokenKind::Text)
      return "loss on non-text position " + std::to_string(p) + " (" + to_string(k) + ")";
    if (k == TokenKind::Vision && covered[p] != 1) return "vision slot " + std::to_string(p) + " outside any span";
    if (k == TokenKind::ImageBoundary && covered[p] != 2) return "unpaired image boundary at " + std::to_string(p);
    const std::int32_t id = seq.ids[p];
    const bool id_ok = (k == TokenKind::Text && id >= 0 && id < 256) || (k == TokenKind::Vision && id == token::kVisionSlot) ||
                       (k == TokenKind::Bos && id == token::kBos) || (k == TokenKind::Eos && id == token::kEos) ||
                       (k == TokenKind::Pad && id == token::kPad) ||
                       (k == TokenKind::ImageBoundary && id == token::kImageBoundary);
    if (!id_ok) return "token id " + std::to_string(id) + " inconsistent with kind at " + std::to_string(p);
  }
  return {};
}

Packer::Packer(std::size_t context) : context_(context) {
  if (context_ < 1) throw DomainError("context length must be >= 1");
}

void Packer::emit(std::vector<TokenSequence>& out) {
  stats_.tokens_out += current_.size();
  while (current_.size() < context_) {
    current_.push(token::kPad, TokenKind::Pad, false);
    ++stats_.pad_tokens;
  }
  ++stats_.sequences_out;
  out.push_back(std::move(current_));
  current_ = TokenSequence{};
}

std::vector<TokenSequence> Packer::push(const TokenSequence& seq) {
  std::vector<TokenSequence> out;
  ++stats_.docs_in;
  stats_.tokens_in += seq.size();
  const std::string doc_id = seq.doc_ids.empty() ? std::string{} : seq.doc_ids.front();
  for (const auto& span : seq.vision_spans) {
    if (span.length + 2 > context_) {
      ++stats_.docs_rejected;
      stats_.tokens_rejected += seq.size();
      stats_.rejected.push_back({doc_id, span.length + 2});
      return out;
    }
  }

  auto note_doc = [&] {
    if (current_.doc_ids.empty() || current_.doc_ids.back() != doc_id) current_.doc_ids.push_back(doc_id);
  };
  std::size_t next_span = 0;
  std::size_t i = 0;
  while (i < seq.size()) {
    const bool span_here = next_span < seq.vision_spans.size() && i + 1 == seq.vision_spans[next_span].start;
    const std::size_t unit = span_here ? seq.vision_spans[next_span].length + 2 : 1;
    if (current_.size() + unit > context_) emit(out);
    note_doc();
    if (span_here) {
      const auto& span = seq.vision_spans[next_span++];
      current_.vision_spans.push_back({span.image_id, current_.size() + 1, span.length});
    }
    for (std::size_t j = i; j < i + unit; ++j) {
      current_.ids.push_back(seq.ids[j]);
      current_.kinds.push_back(seq.kinds[j]);
      current_.loss_mask.push_back(seq.loss_mask[j]);
    }
    i += unit;
    if (current_.size() == context_) emit(out);
  }
  return out;
}

std::vector<TokenSequence> Packer::finish() {
  std::vector<TokenSequence> out;
  if (!current_.ids.empty()) emit(out);
  return out;
}

std::vector<TokenSequence> pack(std::span<const TokenSequence> seqs, std::size_t context, PackStats* stats) {
  Packer packer(context);
  std::vector<TokenSequence> out;
  for (const auto& s : seqs) {
    auto done = packer.push(s);
    std::move(done.begin(), done.end(), std::back_inserter(out));
  }
  auto tail = packer.finish();
  std::move(tail.begin(), tail.end(), std::back_inserter(out));
  if (stats) *stats = packer.stats();
  return out;
}

InterleavedDoc FewShotPrompt::to_doc() const {
  InterleavedDoc doc;
  doc.doc_id = "fewshot:" + query.id;
  for (const auto& demo : demos) {
    doc.blocks.emplace_back(ImageBlock{demo.image_id, demo.dims});
    const std::string text = demo.question.empty() ? "Caption: " + demo.answer + "\n"
                                                   : "Question: " + demo.question + " Answer: " + demo.answer + "\n";
    doc.blocks.emplace_back(TextBlock{text, true});
  }
  doc.blocks.emplace_back(ImageBlock{query.image_id, query.dims});
  doc.blocks.emplace_back(
      TextBlock{query.question.empty() ? std::string("Caption:") : "Question: " + query.question + " Answer:", true});
  return doc;
}

FewShotPrompt build_fewshot(std::span<const EvalItem> pool, const EvalItem& query, std::size_t query_index, int shots,
                            std::uint64_t seed) {
  if (shots < 0) throw DomainError("shot count must be non-negative");
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < pool.size(); ++i)
    if (pool[i].id != query.id) candidates.push_back(i);
  if (pool.size() <= static_cast<std::size_t>(shots) || candidates.size() < static_cast<std::size_t>(shots))
    throw DomainError(std::to_string(shots) + "-shot prompts need a demo pool larger than the shot count (pool has " +
                      std::to_string(pool.size()) + ")");
  FewShotPrompt prompt;
  prompt.query = query;
  for (std::size_t pick :
       sample_without_replacement(candidates.size(), static_cast<std::size_t>(shots), derive_seed(seed, query_index)))
    prompt.demos.push_back(pool[candidates[pick]]);
  return prompt;
}

std::vector<FewShotPrompt> build_fewshot(std::span<const EvalItem> corpus, int shots, std::uint64_t seed) {
  std::vector<FewShotPrompt> out;
  out.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) out.push_back(build_fewshot(corpus, corpus[i], i, shots, seed));
  return out;
}

}  // namespace forge
