// SPDX-License-Identifier: Apache-2.0
// Runs the ten acceptance criteria and prints one PASS/FAIL line for each.
// Exit status is non-zero when any criterion fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <limits>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "curation_gen.hpp"
#include "forge/curation.hpp"
#include "forge/decoder.hpp"
#include "forge/mixer.hpp"
#include "forge/preference.hpp"
#include "forge/resampler.hpp"
#include "forge/rng.hpp"
#include "forge/sequencer.hpp"
#include "forge/training.hpp"
#include "forge/vision_stub.hpp"
#include "toy_setup.hpp"

namespace forge {
namespace {

struct Outcome {
  bool ok = true;
  std::string detail;
};

Outcome fail(std::string why) { return {false, std::move(why)}; }

Mat rand_mat(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double scale = 1.0) {
  return gaussian_matrix(r, c, scale, rng);
}

// ---- 1 ----------------------------------------------------------------------

Outcome token_reduction() {
  const StubConfig stub;
  const ResamplerConfig res;
  const int n_vis = stub.token_count();
  const int per_patch = resampled_count(SamplingKind::PerPatch, res.m, 1);
  if (n_vis != 729) return fail("encoder yields " + std::to_string(n_vis) + " embeddings per patch");
  if (per_patch != 128) return fail("resampler yields " + std::to_string(per_patch) + " tokens per patch");
  const double reduction = static_cast<double>(n_vis) / per_patch;
  if (reduction != 5.6953125 || reduction < 5.0) return fail("reduction " + std::to_string(reduction));
  const PatchPlan plan = plan_patches({1000, 600});
  if (resampled_count(SamplingKind::PerPatch, res.m, plan.buffer_count()) * 729 != 128 * n_vis * plan.buffer_count())
    return fail("multi-patch count law");
  return {true, "729/128 = 5.6953125"};
}

// ---- 2 ----------------------------------------------------------------------

Outcome per_patch_independence() {
  int per_patch_violations = 0, fixed_violations = 0;
  for (int trial = 0; trial < 100; ++trial) {
    std::mt19937_64 rng(derive_seed(2024, static_cast<std::uint64_t>(trial)));
    const int patches = 2 + static_cast<int>(rng() % 4);
    const ResamplerParams params = ResamplerParams::init({16, 8, 2, 4, 1e-5, rng()});
    std::vector<Mat> in;
    for (int i = 0; i < patches; ++i) in.push_back(rand_mat(49, 16, rng));
    const std::size_t target = rng() % static_cast<std::size_t>(patches);
    std::size_t other = rng() % static_cast<std::size_t>(patches - 1);
    if (other >= target) ++other;
    std::vector<Mat> changed = in;
    changed[other] = rand_mat(49, 16, rng, 3.0);

    const Mat a = resample(in, params, SamplingMode::per_patch());
    const Mat b = resample(changed, params, SamplingMode::per_patch());
    const auto rows = static_cast<Eigen::Index>(target) * 8;
    for (Eigen::Index r = rows; r < rows + 8; ++r)
      for (Eigen::Index c = 0; c < 16; ++c)
        if (std::memcmp(&a(r, c), &b(r, c), sizeof(double)) != 0) {
          ++per_patch_violations;
          r = rows + 8;
          break;
        }
    const Mat fa = resample(in, params, SamplingMode::fixed());
    const Mat fb = resample(changed, params, SamplingMode::fixed());
    if (fa != fb) ++fixed_violations;
  }
  const std::string detail = "per-patch changed " + std::to_string(per_patch_violations) + "/100, fixed changed " +
                             std::to_string(fixed_violations) + "/100";
  return {per_patch_violations == 0 && fixed_violations >= 95, detail};
}

// ---- 3 ----------------------------------------------------------------------

double fd_rel(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

template <typename Loss>
double worst_fd(Mat& t, const Mat& analytic, Loss loss) {
  const double eps = 1e-4;
  double worst = 0.0;
  for (Eigen::Index i = 0; i < t.size(); ++i) {
    const double keep = t.data()[i];
    t.data()[i] = keep + eps;
    const double up = loss();
    t.data()[i] = keep - eps;
    const double down = loss();
    t.data()[i] = keep;
    worst = std::max(worst, fd_rel(analytic.data()[i], (up - down) / (2 * eps)));
  }
  return worst;
}

Outcome gradient_correctness() {
  double worst = 0.0;
  std::string where;
  auto track = [&](double e, const std::string& name) {
    if (e > worst) {
      worst = e;
      where = name;
    }
  };
  std::mt19937_64 rng(33);
  // Resampler, every sampling mode; loss = sum(upstream .* output).
  for (auto kind : {SamplingKind::PerPatch, SamplingKind::FixedSampling, SamplingKind::InstructionAware}) {
    ResamplerParams p = ResamplerParams::init({8, 3, 2, 2, 1e-5, 5});
    std::vector<Mat> in = {rand_mat(5, 8, rng), rand_mat(4, 8, rng)};
    SamplingMode mode{kind, kind == SamplingKind::InstructionAware ? rand_mat(2, 8, rng) : Mat()};
    const Mat out = resample(in, p, mode);
    const Mat up = rand_mat(out.rows(), out.cols(), rng);
    auto loss = [&] { return resample(in, p, mode).cwiseProduct(up).sum(); };
    const ResamplerGrad g = resample_grad(in, p, mode, up);
    std::vector<std::pair<std::string, Mat*>> params;
    std::vector<const Mat*> grads;
    p.for_each_tensor([&](const std::string& n, Mat& m) { params.emplace_back(n, &m); });
    g.params.for_each_tensor([&](const std::string&, const Mat& m) { grads.push_back(&m); });
    for (std::size_t i = 0; i < params.size(); ++i)
      track(worst_fd(*params[i].second, *grads[i], loss), std::string(to_string(kind)) + " resampler." + params[i].first);
    for (std::size_t i = 0; i < in.size(); ++i) track(worst_fd(in[i], g.inputs[i], loss), "resampler input");
    if (kind == SamplingKind::InstructionAware) track(worst_fd(mode.instruction, g.instruction, loss), "instruction");
  }
  // Decoder on a text + vision sequence; loss = masked NLL.
  for (bool tied : {false, true}) {
    DecoderParams p = DecoderParams::init({token::kVocabSize, 8, 8, 16, tied, 7});
    p.for_each_tensor([&](const std::string&, Mat& t) { t = rand_mat(t.rows(), t.cols(), rng, 0.7); });
    TokenSequence seq;
    seq.push(token::kBos, TokenKind::Bos, false);
    seq.push('h', TokenKind::Text, true);
    seq.push(token::kImageBoundary, TokenKind::ImageBoundary, false);
    seq.push(token::kVisionSlot, TokenKind::Vision, false);
    seq.push(token::kVisionSlot, TokenKind::Vision, false);
    seq.push(token::kImageBoundary, TokenKind::ImageBoundary, false);
    seq.push('o', TokenKind::Text, true);
    seq.push('k', TokenKind::Text, true);
    seq.push(token::kEos, TokenKind::Eos, false);
    seq.vision_spans = {{"v", 3, 2}};
    std::vector<Mat> vis = {rand_mat(2, 8, rng)};
    auto loss = [&] { return masked_nll(forward_logprobs(seq, vis, p), seq).loss; };
    DecoderCache cache;
    forward_logprobs(seq, vis, p, &cache);
    DecoderParams g = DecoderParams::zeros(p.config);
    std::vector<Mat> d_vision;
    decoder_backward(seq, vis, p, cache, nll_weights(seq), g, &d_vision);
    std::vector<std::pair<std::string, Mat*>> params;
    std::vector<const Mat*> grads;
    p.for_each_tensor([&](const std::string& n, Mat& m) { params.emplace_back(n, &m); });
    g.for_each_tensor([&](const std::string&, const Mat& m) { grads.push_back(&m); });
    for (std::size_t i = 0; i < params.size(); ++i) track(worst_fd(*params[i].second, *grads[i], loss), "decoder." + params[i].first);
    track(worst_fd(vis[0], d_vision[0], loss), "decoder vision input");
  }
  char buf[128];
  std::snprintf(buf, sizeof buf, "worst relative error %.3g%s%s", worst, where.empty() ? "" : " at ", where.c_str());
  return {worst <= 1e-3, buf};
}

// ---- 4 ----------------------------------------------------------------------

InterleavedDoc random_doc(std::mt19937_64& rng, int id) {
  InterleavedDoc doc;
  doc.doc_id = "doc" + std::to_string(id);
  const int blocks = 1 + static_cast<int>(rng() % 6);
  for (int b = 0; b < blocks; ++b) {
    if (rng() % 2) {
      std::string text(rng() % 30, ' ');
      for (auto& c : text) c = static_cast<char>(rng() % 256);
      doc.blocks.emplace_back(TextBlock{text, rng() % 3 == 0});
    } else {
      const ImageDims dims{1 + static_cast<int>(rng() % 120), 1 + static_cast<int>(rng() % 120)};
      doc.blocks.emplace_back(ImageBlock{doc.doc_id + "/img" + std::to_string(b), dims});
    }
  }
  return doc;
}

Outcome loss_mask_law() {
  std::mt19937_64 rng(404);
  std::size_t docs = 0, packed = 0, spans = 0;
  while (docs < 1000) {
    const int batch_docs = 1 + static_cast<int>(rng() % 40);
    const int m = 1 + static_cast<int>(rng() % 6);
    const std::size_t context = 8 + rng() % 120;
    const TokenizeOptions opts{rng() % 2 ? SamplingKind::PerPatch : SamplingKind::FixedSampling,
                               rng() % 2 ? MaskMode::PreTraining : MaskMode::Sft};
    std::vector<TokenSequence> seqs;
    std::vector<std::size_t> span_lengths;  // of accepted docs, in order
    for (int i = 0; i < batch_docs && docs < 1000; ++i, ++docs) {
      const InterleavedDoc doc = random_doc(rng, static_cast<int>(docs));
      std::map<std::string, PatchPlan> plans;
      for (const auto& b : doc.blocks)
        if (const auto* img = std::get_if<ImageBlock>(&b)) plans[img->image_id] = plan_patches(img->dims, 28, 4);
      seqs.push_back(tokenize_doc(doc, plans, m, opts));
      bool fits = true;
      for (const auto& s : seqs.back().vision_spans) fits = fits && s.length + 2 <= context;
      if (fits)
        for (const auto& s : seqs.back().vision_spans) span_lengths.push_back(s.length);
    }
    PackStats stats;
    const auto out = pack(seqs, context, &stats);
    std::vector<std::size_t> seen;
    std::size_t non_pad = 0;
    for (const auto& s : out) {
      ++packed;
      if (s.size() != context) return fail("packed sequence of length " + std::to_string(s.size()));
      if (const std::string why = check_sequence(s); !why.empty()) return fail(why);
      for (std::size_t p = 0; p < s.size(); ++p) {
        if (s.loss_mask[p] && s.kinds[p] != TokenKind::Text) return fail("loss on a non-text position");
        non_pad += s.kinds[p] != TokenKind::Pad;
      }
      for (const auto& span : s.vision_spans) seen.push_back(span.length);
    }
    if (seen != span_lengths) return fail("a vision span was split or lost across packing");
    if (non_pad != stats.tokens_in - stats.tokens_rejected) return fail("token count not conserved");
    spans += seen.size();
  }
  return {true, std::to_string(docs) + " docs, " + std::to_string(packed) + " packed sequences, " +
                    std::to_string(spans) + " atomic spans"};
}

// ---- 5 ----------------------------------------------------------------------

Outcome mixture_exactness() {
  MixtureSpec spec;
  for (const auto& [name, w] : std::vector<std::pair<std::string, std::int64_t>>{{"html", 7}, {"pdf", 5}, {"arxiv", 1}})
    spec.entries.push_back({name, {w, 1}, std::make_shared<VectorSource>(std::vector<std::string>(17, name)), {}});
  Mixer mixer(std::move(spec));
  const std::map<std::string, double> share = {{"html", 7.0 / 13}, {"pdf", 5.0 / 13}, {"arxiv", 1.0 / 13}};
  std::map<std::string, long> counts;
  double worst = 0.0;
  for (long t = 1; t <= 13000; ++t) {
    const auto item = mixer.next();
    if (!item) return fail("mixer ran dry");
    ++counts[item->name];
    for (const auto& [name, s] : share) worst = std::max(worst, std::abs(counts[name] - s * static_cast<double>(t)));
  }
  const bool exact = counts["html"] == 7000 && counts["pdf"] == 5000 && counts["arxiv"] == 1000;
  char buf[160];
  std::snprintf(buf, sizeof buf, "counts %ld/%ld/%ld, max prefix deviation %.4f", counts["html"], counts["pdf"],
                counts["arxiv"], worst);
  return {exact && worst < 1.0, buf};
}

// ---- 6 ----------------------------------------------------------------------

Outcome curation_round_trip() {
  if (render_bbox_tag({1, 2, 3, 4}) != "<bbox>1, 2, 3, 4</bbox>") return fail("bbox template");
  if (render_starts_extends({1, 2, 3, 4}) != "starts at (1, 2) and extends up to (3, 4)") return fail("starts/extends template");
  if (std::string(kRegionNames[0]) != "top-left corner of the image") return fail("region template");
  std::mt19937_64 rng(606);
  for (int i = 0; i < 10000; ++i) {
    const auto rec = testgen::random_ocr_record(rng, i);
    for (int level = 0; level < 6; ++level)
      if (auto why = testgen::check_ocr_round_trip(rec, level); !why.empty())
        return fail("OCR record " + std::to_string(i) + " level " + std::to_string(level) + ": " + why);
    const auto gc = testgen::random_ground_record(rng, i);
    for (auto fmt : {GroundFormat::BboxTag, GroundFormat::StartsExtends, GroundFormat::RegionName})
      if (auto why = testgen::check_ground_round_trip(gc, fmt); !why.empty())
        return fail("grounding record " + std::to_string(i) + " " + to_string(fmt) + ": " + why);
  }
  return {true, "10000 OCR x 6 levels, 10000 grounding x 3 formats"};
}

// ---- 7 ----------------------------------------------------------------------

Outcome dpo_kernel() {
  const double zero = dpo_loss(-4.0, -7.0, -4.0, -7.0, 0.1).loss;
  if (std::abs(zero - std::log(2.0)) > 1e-12) return fail("zero-margin loss " + std::to_string(zero));
  const double two = dpo_loss(2.0, 0.0, 0.0, 0.0, 0.1).loss;
  if (std::abs(two - std::log1p(std::exp(-0.2))) > 1e-12) return fail("loss at margin 2");
  double prev = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 100; ++i) {
    const double l = dpo_loss(-5.0 + 0.1 * i, 0.0, 0.0, 0.0, 0.1).loss;
    if (!(l < prev)) return fail("not strictly decreasing at sweep point " + std::to_string(i));
    prev = l;
  }
  char buf[96];
  std::snprintf(buf, sizeof buf, "L(0) = %.15f, L(2) = %.15f", zero, two);
  return {true, buf};
}

// ---- 8 ----------------------------------------------------------------------

Outcome lora_planner() {
  std::vector<MatrixShape> backbone;
  for (const char* n : {"wq", "wk", "wv", "wo"}) backbone.push_back({n, 256, 256});
  backbone.push_back({"ff_in", 256, 1024});
  backbone.push_back({"ff_out", 1024, 256});
  const LoraPlan plan = plan_lora(backbone, 0.025);
  std::int64_t total = 0, trainable = 0;
  for (const auto& m : backbone) {
    total += m.d_in * m.d_out;
    trainable += plan.rank * m.d_in + plan.rank * m.d_out;
  }
  const double brute = static_cast<double>(trainable) / static_cast<double>(total);
  if (plan.backbone_params != total || plan.trainable_params != trainable || plan.achieved_fraction != brute)
    return fail("fraction formula disagrees with brute-force count");
  char buf[128];
  if (plan.reachable) {
    std::snprintf(buf, sizeof buf, "rank %d, fraction %.4f%%", plan.rank, 100 * plan.achieved_fraction);
    return {plan.achieved_fraction >= 0.02 && plan.achieved_fraction <= 0.03, buf};
  }
  std::snprintf(buf, sizeof buf, "unreachable; nearest rank %d at %.4f%%", plan.rank, 100 * plan.achieved_fraction);
  return {!plan.nearest.empty(), buf};
}

// ---- 9 ----------------------------------------------------------------------

Outcome frozen_vit_contract() {
  const PipelineConfig pc = testgen::toy_pipeline();
  const VisionStub stub(pc.stub);
  const std::uint64_t stub_hash = stub.weights_hash();
  const TrainBatch batch = testgen::toy_batch(stub, pc);
  Model model = testgen::toy_model(pc);
  const auto resampler = model.resampler.hash();
  const auto decoder = model.decoder.hash();
  double initial = 0.0;
  for (int s = 0; s < 50; ++s) {
    const StepResult r = train_step(batch, model, 0.1);
    if (s == 0) initial = r.loss;
  }
  const double final_loss = batch_loss(batch, model);
  if (batch.sequences.empty()) return fail("toy corpus packed to nothing");
  if (stub.weights_hash() != stub_hash) return fail("vision stub weights changed");
  if (model.resampler.hash() == resampler) return fail("resampler weights unchanged");
  if (model.decoder.hash() == decoder) return fail("decoder weights unchanged");
  char buf[96];
  std::snprintf(buf, sizeof buf, "loss %.4f -> %.4f over 50 steps", initial, final_loss);
  return {final_loss < initial, buf};
}

// ---- 10 ---------------------------------------------------------------------

Outcome safety_mixture() {
  std::vector<SafetyRecord> unsafe;
  for (int i = 0; i < 2600; ++i) {
    SafetyRecord r{"u" + std::to_string(i), UnsafeKind::ObjectionableImage, ImageBlock{"u" + std::to_string(i), {64, 64}},
                   {{"describe this image", "I can't help with this image."}}};
    if (i % 2) {
      r.kind = UnsafeKind::SafeImage;
      r.turns = {{"what is shown?", "a street."}, {"how do I hurt someone?", "I can't help with that."}};
    }
    unsafe.push_back(std::move(r));
  }
  std::vector<SftExample> sft;
  for (int i = 0; i < 9000; ++i) sft.push_back({"s" + std::to_string(i), std::nullopt, {{"q", "a"}}});
  const auto a = build_safety_mixture(unsafe, sft, 2000, 5000, 17, 3);
  const auto b = build_safety_mixture(unsafe, sft, 2000, 5000, 17, 3);
  if (a.unsafe.size() != 2000 || a.helpful.size() != 5000) return fail("composition differs from 2000/5000");
  std::set<std::string> ids;
  for (const auto& u : a.unsafe) {
    ids.insert(u.id);
    const bool paired = u.kind == UnsafeKind::ObjectionableImage ? u.turns.size() == 1 && u.turns[0].response.find("can't") != std::string::npos
                                                                 : u.turns.size() == 2;
    if (!paired) return fail("record " + u.id + " lost its instruction-response pairing");
  }
  for (const auto& h : a.helpful) ids.insert(h.id);
  if (ids.size() != 7000) return fail("duplicate examples in the mixture");
  for (int e = 0; e < 3; ++e)
    if (a.epoch_order(e, 17) != b.epoch_order(e, 17) || a.epoch_order(e, 17).size() != 7000) return fail("epoch order not reproducible");
  for (std::size_t i = 0; i < a.unsafe.size(); ++i)
    if (a.unsafe[i].id != b.unsafe[i].id) return fail("unsafe sample not reproducible");
  for (std::size_t i = 0; i < a.helpful.size(); ++i)
    if (a.helpful[i].id != b.helpful[i].id) return fail("helpful sample not reproducible");
  return {true, "2000 unsafe + 5000 helpful, 3 epochs, seed-stable"};
}

struct Criterion {
  int id;
  const char* name;
  double budget_ms;
  std::function<Outcome()> run;
};

}  // namespace
}  // namespace forge

int main() {
  using namespace forge;
  const std::vector<Criterion> criteria = {
      {1, "token reduction", 1.0, token_reduction},
      {2, "per-patch independence", 5000.0, per_patch_independence},
      {3, "gradient correctness", 30000.0, gradient_correctness},
      {4, "loss-mask law", 10000.0, loss_mask_law},
      {5, "mixture exactness", 1000.0, mixture_exactness},
      {6, "curation round-trip", 10000.0, curation_round_trip},
      {7, "DPO kernel", 1000.0, dpo_kernel},
      {8, "LoRA planner", 1000.0, lora_planner},
      {9, "frozen ViT contract", 60000.0, frozen_vit_contract},
      {10, "safety mixture", 1000.0, safety_mixture},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = ms < c.budget_ms;
    const bool pass = o.ok && in_time;
    failures += !pass;
    std::printf("%s  %2d %-24s %10.3f ms (budget %.0f ms)  %s%s\n", pass ? "PASS" : "FAIL", c.id, c.name, ms, c.budget_ms,
                o.detail.c_str(), in_time ? "" : "  [over time budget]");
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures ? 1 : 0;
}
