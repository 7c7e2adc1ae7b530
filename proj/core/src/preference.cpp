// SPDX-License-Identifier: Apache-2.0
#include "forge/preference.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <tuple>

#include "forge/error.hpp"
#include "forge/rng.hpp"

namespace forge {

// ---- preference pairs -------------------------------------------------------

namespace {

bool valid_score(double s) { return std::isfinite(s) && s >= 1.0 && s <= 5.0; }

bool valid_set(const ScoredResponseSet& set) {
  if (set.responses.size() < 2) return false;
  for (const auto& r : set.responses)
    if (!valid_score(r.scores.helpfulness) || !valid_score(r.scores.visual_faithfulness) || !valid_score(r.scores.ethics))
      return false;
  return true;
}

ImageBlock image_from(const nlohmann::json& j) {
  ImageBlock img{j.at("image").get<std::string>(), {j.at("w").get<int>(), j.at("h").get<int>()}};
  if (!img.dims.valid()) throw DomainError("image '" + img.image_id + "' has invalid dims");
  return img;
}

}  // namespace

std::vector<PreferencePair> build_pairs(std::span<const ScoredResponseSet> sets, double threshold, PairStats* stats) {
  if (!(threshold >= 1.0 && threshold <= 5.0)) throw DomainError("pair threshold must lie in [1, 5]");
  PairStats local;
  PairStats& st = stats ? *stats : local;
  std::vector<PreferencePair> out;
  for (const auto& set : sets) {
    ++st.sets_in;
    if (!valid_set(set)) {
      st.skipped.push_back(set.instruction_id);
      continue;
    }
    const auto& rs = set.responses;
    std::size_t best = 0;
    for (std::size_t i = 1; i < rs.size(); ++i)
      if (std::make_tuple(-rs[i].scores.mean(), rs[i].model) < std::make_tuple(-rs[best].scores.mean(), rs[best].model))
        best = i;
    std::size_t worst = best == 0 ? 1 : 0;
    for (std::size_t i = 0; i < rs.size(); ++i) {
      if (i == best) continue;
      if (std::make_tuple(rs[i].scores.mean(), rs[i].model) < std::make_tuple(rs[worst].scores.mean(), rs[worst].model))
        worst = i;
    }
    if (rs[best].scores.mean() < threshold) {
      ++st.filtered_low_score;
      continue;
    }
    PreferencePair pair;
    pair.instruction_id = set.instruction_id;
    pair.instruction = set.instruction;
    pair.image = set.image;
    pair.preferred = rs[best].text;
    pair.preferred_model = rs[best].model;
    pair.dispreferred = {rs[worst].text};
    pair.dispreferred_model = rs[worst].model;
    pair.preferred_mean = rs[best].scores.mean();
    pair.dispreferred_mean = rs[worst].scores.mean();
    out.push_back(std::move(pair));
    ++st.emitted;
  }
  return out;
}

ScoredResponseSet scored_set_from_json(const nlohmann::json& j) {
  ScoredResponseSet set;
  set.instruction_id = j.at("instruction_id").get<std::string>();
  set.instruction = j.value("instruction", "");
  set.image = image_from(j);
  for (const auto& r : j.at("responses")) {
    const auto& s = r.at("scores");
    set.responses.push_back({r.at("model").get<std::string>(), r.at("text").get<std::string>(),
                             {s.at("helpfulness").get<double>(), s.at("visual_faithfulness").get<double>(),
                              s.at("ethics").get<double>()}});
  }
  return set;
}

nlohmann::json to_json(const PreferencePair& p) {
  return {{"instruction_id", p.instruction_id},
          {"instruction", p.instruction},
          {"image", p.image.image_id},
          {"w", p.image.dims.width},
          {"h", p.image.dims.height},
          {"preferred", p.preferred},
          {"preferred_model", p.preferred_model},
          {"dispreferred", p.dispreferred},
          {"dispreferred_model", p.dispreferred_model},
          {"preferred_mean", p.preferred_mean},
          {"dispreferred_mean", p.dispreferred_mean}};
}

PreferencePair preference_pair_from_json(const nlohmann::json& j) {
  PreferencePair p;
  p.instruction_id = j.at("instruction_id").get<std::string>();
  p.instruction = j.value("instruction", "");
  p.image = image_from(j);
  p.preferred = j.at("preferred").get<std::string>();
  p.preferred_model = j.value("preferred_model", "");
  p.dispreferred = j.at("dispreferred").get<std::vector<std::string>>();
  if (p.dispreferred.empty()) throw DomainError("pair " + p.instruction_id + " has no dispreferred response");
  p.dispreferred_model = j.value("dispreferred_model", "");
  p.preferred_mean = j.value("preferred_mean", 0.0);
  p.dispreferred_mean = j.value("dispreferred_mean", 0.0);
  return p;
}

// ---- DPO kernel -------------------------------------------------------------

DpoResult dpo_loss(double policy_chosen, double policy_rejected, double ref_chosen, double ref_rejected, double beta) {
  if (!(beta > 0.0) || !std::isfinite(beta)) throw DomainError("DPO beta must be positive and finite");
  for (double v : {policy_chosen, policy_rejected, ref_chosen, ref_rejected})
    if (!std::isfinite(v)) throw DomainError("DPO log-probabilities must be finite");
  DpoResult r;
  r.margin = (policy_chosen - ref_chosen) - (policy_rejected - ref_rejected);
  const double x = beta * r.margin;
  r.loss = x >= 0.0 ? std::log1p(std::exp(-x)) : -x + std::log1p(std::exp(x));
  const double sig_neg = x >= 0.0 ? std::exp(-x) / (1.0 + std::exp(-x)) : 1.0 / (1.0 + std::exp(x));
  r.d_policy_chosen = -beta * sig_neg;
  r.d_policy_rejected = beta * sig_neg;
  return r;
}

// ---- noised image -----------------------------------------------------------

FloatImage noised_dispreferred(const Image& image, double sigma, std::uint64_t seed) {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw DomainError("noise sigma must be finite and non-negative");
  FloatImage out = FloatImage::from_u8(image);
  if (sigma == 0.0) return out;
  std::mt19937_64 rng(derive_seed(seed, "noised_dispreferred"));
  std::normal_distribution<double> normal(0.0, sigma);
  for (auto& v : out.rgb) v = std::clamp(v + normal(rng), 0.0, 1.0);
  return out;
}

// ---- LoRA planning ----------------------------------------------------------

std::int64_t lora_trainable_params(std::span<const MatrixShape> targets, int rank) {
  std::int64_t n = 0;
  for (const auto& t : targets) n += static_cast<std::int64_t>(rank) * (t.d_in + t.d_out);
  return n;
}

LoraPlan plan_lora(std::span<const MatrixShape> backbone, double f) {
  if (!(f > 0.0 && f < 1.0)) throw DomainError("target fraction must lie in (0, 1)");
  if (backbone.empty()) throw DomainError("LoRA planning needs at least one target matrix");
  LoraPlan plan;
  plan.targets.assign(backbone.begin(), backbone.end());
  plan.target_fraction = f;
  std::int64_t max_rank = std::numeric_limits<std::int64_t>::max();
  for (const auto& t : backbone) {
    if (t.d_in < 1 || t.d_out < 1) throw DomainError("matrix '" + t.name + "' has a non-positive dimension");
    plan.backbone_params += t.d_in * t.d_out;
    max_rank = std::min({max_rank, t.d_in, t.d_out});
  }
  // The band edges are inclusive; the slack absorbs rounding in f * (1 +- band).
  const double lo = f * (1.0 - kLoraBand) * (1.0 - 1e-12);
  const double hi = f * (1.0 + kLoraBand) * (1.0 + 1e-12);
  auto fraction = [&](int r) {
    return static_cast<double>(lora_trainable_params(backbone, r)) / static_cast<double>(plan.backbone_params);
  };
  std::optional<LoraOption> below, above;
  for (int r = 1; r <= max_rank; ++r) {
    const double fr = fraction(r);
    if (fr > hi) {
      above = LoraOption{r, fr};
      break;
    }
    if (fr >= lo) {
      plan.reachable = true;
      plan.rank = r;
    } else {
      below = LoraOption{r, fr};
    }
  }
  if (!plan.reachable) {
    if (below) plan.nearest.push_back(*below);
    if (above) plan.nearest.push_back(*above);
    if (plan.nearest.empty()) throw DomainError("no LoRA rank is admissible for this backbone");
    const auto closest = std::min_element(plan.nearest.begin(), plan.nearest.end(), [&](const auto& a, const auto& b) {
      return std::abs(a.fraction - f) < std::abs(b.fraction - f);
    });
    plan.rank = closest->rank;
  }
  plan.trainable_params = lora_trainable_params(backbone, plan.rank);
  plan.achieved_fraction = fraction(plan.rank);
  return plan;
}

nlohmann::json to_json(const LoraPlan& plan) {
  nlohmann::json targets = nlohmann::json::array();
  for (const auto& t : plan.targets) targets.push_back({{"name", t.name}, {"d_in", t.d_in}, {"d_out", t.d_out}});
  nlohmann::json nearest = nlohmann::json::array();
  for (const auto& o : plan.nearest) nearest.push_back({{"rank", o.rank}, {"fraction", o.fraction}});
  return {{"targets", targets},
          {"backbone_params", plan.backbone_params},
          {"target_fraction", plan.target_fraction},
          {"band", {plan.target_fraction * (1.0 - kLoraBand), plan.target_fraction * (1.0 + kLoraBand)}},
          {"reachable", plan.reachable},
          {"rank", plan.rank},
          {"trainable_params", plan.trainable_params},
          {"achieved_fraction", plan.achieved_fraction},
          {"nearest", nearest}};
}

// ---- safety mixture ---------------------------------------------------------

std::vector<std::string> SafetyMixture::epoch_order(int epoch, std::uint64_t seed) const {
  std::vector<std::string> ids;
  for (const auto& u : unsafe) ids.push_back(u.id);
  for (const auto& h : helpful) ids.push_back(h.id);
  std::vector<std::string> out;
  for (std::size_t i : sample_without_replacement(ids.size(), ids.size(), derive_seed(seed, static_cast<std::uint64_t>(epoch))))
    out.push_back(ids[i]);
  return out;
}

SafetyMixture build_safety_mixture(std::span<const SafetyRecord> unsafe_pool, std::span<const SftExample> sft_pool,
                                   std::size_t unsafe_n, std::size_t helpful_n, std::uint64_t seed, int epochs) {
  if (unsafe_n > unsafe_pool.size())
    throw DomainError("requested " + std::to_string(unsafe_n) + " unsafe examples but the pool has " +
                      std::to_string(unsafe_pool.size()));
  if (helpful_n > sft_pool.size())
    throw DomainError("requested " + std::to_string(helpful_n) + " helpful examples but the SFT pool has " +
                      std::to_string(sft_pool.size()));
  if (epochs < 1) throw DomainError("safety fine-tuning needs at least one epoch");
  SafetyMixture mix;
  mix.epochs = epochs;
  for (std::size_t i : sample_without_replacement(unsafe_pool.size(), unsafe_n, derive_seed(seed, "unsafe")))
    mix.unsafe.push_back(unsafe_pool[i]);
  for (std::size_t i : sample_without_replacement(sft_pool.size(), helpful_n, derive_seed(seed, "helpful")))
    mix.helpful.push_back(sft_pool[i]);
  mix.helpful_missing = helpful_n == 0;
  return mix;
}

namespace {

std::vector<Turn> turns_from(const nlohmann::json& j) {
  std::vector<Turn> turns;
  for (const auto& t : j.at("turns")) turns.push_back({t.at("instruction").get<std::string>(), t.at("response").get<std::string>()});
  return turns;
}

}  // namespace

SafetyRecord safety_record_from_json(const nlohmann::json& j) {
  SafetyRecord r;
  r.id = j.at("id").get<std::string>();
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "objectionable_image")
    r.kind = UnsafeKind::ObjectionableImage;
  else if (kind == "safe_image")
    r.kind = UnsafeKind::SafeImage;
  else
    throw DomainError("safety record kind must be objectionable_image or safe_image");
  r.image = image_from(j);
  if (j.contains("turns")) {
    r.turns = turns_from(j);
  } else if (r.kind == UnsafeKind::ObjectionableImage) {
    r.turns = {{j.at("instruction").get<std::string>(), j.at("response").get<std::string>()}};
  } else {
    r.turns = {{j.at("safe_instruction").get<std::string>(), j.at("safe_response").get<std::string>()},
               {j.at("unsafe_instruction").get<std::string>(), j.at("unsafe_response").get<std::string>()}};
  }
  const std::size_t want = r.kind == UnsafeKind::ObjectionableImage ? 1 : 2;
  if (r.turns.size() != want)
    throw DomainError("safety record " + r.id + " needs " + std::to_string(want) + " instruction-response pair(s)");
  return r;
}

SftExample sft_example_from_json(const nlohmann::json& j) {
  SftExample e;
  e.id = j.at("id").get<std::string>();
  if (j.contains("image")) e.image = image_from(j);
  if (j.contains("turns"))
    e.turns = turns_from(j);
  else
    e.turns = {{j.at("instruction").get<std::string>(), j.at("response").get<std::string>()}};
  return e;
}

// ---- toy DPO loop -----------------------------------------------------------

namespace {

InterleavedDoc prompt_doc(const PreferencePair& pair, const std::string& image_id) {
  InterleavedDoc doc;
  doc.doc_id = pair.instruction_id;
  doc.blocks.emplace_back(ImageBlock{image_id, pair.image.dims});
  doc.blocks.emplace_back(TextBlock{pair.instruction + "\n", true});
  return doc;
}

TokenSequence tokenize_with(const InterleavedDoc& doc, const PipelineConfig& cfg) {
  std::map<std::string, PatchPlan> plans;
  for (const auto& b : doc.blocks)
    if (const auto* img = std::get_if<ImageBlock>(&b)) plans.emplace(img->image_id, plan_patches(img->dims, cfg.base, cfg.max_patches));
  TokenizeOptions opts = cfg.tokenize;
  opts.mask = MaskMode::Sft;
  return tokenize_doc(doc, plans, cfg.m, opts);
}

struct Evaluated {
  TokenSequence seq;
  std::vector<Mat> vision;
  DecoderCache cache;
  double logprob = 0.0;
};

Evaluated evaluate(const TokenSequence& seq, const PatchEmbeddings& images, const Model& model) {
  Evaluated e{seq, vision_tokens_for(seq, images, model), {}, 0.0};
  e.logprob = masked_logprob_sum(forward_logprobs(e.seq, e.vision, model.decoder, &e.cache), e.seq);
  return e;
}

double reference_logprob(const TokenSequence& seq, const PatchEmbeddings& images, const Model& ref) {
  return masked_logprob_sum(forward_logprobs(seq, vision_tokens_for(seq, images, ref), ref.decoder), seq);
}

// Accumulates d(coef * logprob)/d(params) for one evaluated sequence.
void accumulate(const Evaluated& e, double coef, const Model& model, const PatchEmbeddings& images, bool resampler_frozen,
                LossAndGrad& g) {
  std::vector<double> w = nll_weights(e.seq, model.decoder.config.vocab);
  for (auto& x : w)
    if (x != 0.0) x = -coef;
  std::vector<Mat> d_vision;
  decoder_backward(e.seq, e.vision, model.decoder, e.cache, w, g.decoder, &d_vision);
  if (resampler_frozen) return;
  const SamplingMode mode{model.sampling, {}};
  for (std::size_t s = 0; s < e.seq.vision_spans.size(); ++s)
    g.resampler.add_scaled(resample_grad(images.at(e.seq.vision_spans[s].image_id), model.resampler, mode, d_vision[s]).params, 1.0);
}

DpoResult dpo_step(const TokenSequence& chosen, const TokenSequence& rejected, const PatchEmbeddings& images,
                   Model& policy, const Model& reference, const DpoConfig& cfg) {
  const Evaluated c = evaluate(chosen, images, policy);
  const Evaluated r = evaluate(rejected, images, policy);
  const DpoResult res = dpo_loss(c.logprob, r.logprob, reference_logprob(chosen, images, reference),
                                 reference_logprob(rejected, images, reference), cfg.beta);
  LossAndGrad g{res.loss, 0, ResamplerParams::zeros(policy.resampler.config), DecoderParams::zeros(policy.decoder.config)};
  const bool resampler_frozen = cfg.frozen.frozen("resampler.");
  accumulate(c, res.d_policy_chosen, policy, images, resampler_frozen, g);
  accumulate(r, res.d_policy_rejected, policy, images, resampler_frozen, g);
  auto update = [&](const std::string& prefix, auto& params, const auto& grads) {
    std::vector<const Mat*> flat;
    grads.for_each_tensor([&](const std::string&, const Mat& t) { flat.push_back(&t); });
    std::size_t i = 0;
    params.for_each_tensor([&](const std::string& name, Mat& p) {
      const Mat& grad = *flat[i++];
      if (!grad.allFinite()) throw TrainingError("non-finite DPO gradient for " + prefix + name);
      if (!cfg.frozen.frozen(prefix + name)) p -= cfg.lr * grad;
    });
  };
  update("resampler.", policy.resampler, g.resampler);
  update("decoder.", policy.decoder, g.decoder);
  return res;
}

std::string bytes_to_string(const std::vector<std::int32_t>& ids) {
  std::string s;
  for (auto id : ids) s.push_back(static_cast<char>(id));
  return s;
}

double mean_margin(const std::vector<PreferencePair>& pairs, const PatchEmbeddings& images, const Model& policy,
                   const Model& reference, const PipelineConfig& cfg) {
  if (pairs.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& p : pairs) {
    const auto c = preference_sequence(p, p.preferred, images, cfg);
    const auto r = preference_sequence(p, p.dispreferred.front(), images, cfg);
    sum += (reference_logprob(c, images, policy) - reference_logprob(c, images, reference)) -
           (reference_logprob(r, images, policy) - reference_logprob(r, images, reference));
  }
  return sum / static_cast<double>(pairs.size());
}

}  // namespace

TokenSequence preference_sequence(const PreferencePair& pair, const std::string& response, const PatchEmbeddings& images,
                                  const PipelineConfig& cfg) {
  (void)images;
  InterleavedDoc doc = prompt_doc(pair, pair.image.image_id);
  doc.blocks.emplace_back(TextBlock{response, false});
  return tokenize_with(doc, cfg);
}

DpoReport run_dpo(std::vector<PreferencePair>& pairs, Model& policy, const Model& reference, const ImageStore& store,
                  const VisionStub& stub, const PipelineConfig& cfg, const DpoConfig& dpo) {
  if (dpo.epochs < 1) throw DomainError("DPO needs at least one epoch");
  if (policy.sampling == SamplingKind::InstructionAware || reference.sampling == SamplingKind::InstructionAware)
    throw DomainError("the toy DPO loop runs per-patch or fixed sampling only");
  PatchEmbeddings images;
  for (const auto& p : pairs)
    if (!images.count(p.image.image_id))
      images.emplace(p.image.image_id, encode_image(store.load(p.image.image_id, p.image.dims), stub, cfg.max_patches));

  DpoReport report;
  report.mean_margin_before = mean_margin(pairs, images, policy, reference, cfg);
  std::uint64_t draw = 0;
  for (int epoch = 0; epoch < dpo.epochs; ++epoch) {
    for (auto& pair : pairs) {
      const TokenSequence chosen = preference_sequence(pair, pair.preferred, images, cfg);
      const TokenSequence rejected = preference_sequence(pair, pair.dispreferred.front(), images, cfg);
      const DpoResult first = dpo_step(chosen, rejected, images, policy, reference, dpo);
      report.steps.push_back({pair.instruction_id, epoch, 1, first.loss, first.margin});
      if (!dpo.noised_step) continue;

      const std::string noised_id = pair.image.image_id + "#noised";
      const Image original = store.load(pair.image.image_id, pair.image.dims);
      const Image noised = noised_dispreferred(original, dpo.noise_sigma, derive_seed(dpo.seed, draw++)).to_u8();
      images[noised_id] = encode_image(noised, stub, cfg.max_patches);
      TokenSequence prompt = tokenize_with(prompt_doc(pair, noised_id), cfg);
      prompt.ids.pop_back();  // drop Eos so generation continues the prompt
      prompt.kinds.pop_back();
      prompt.loss_mask.pop_back();
      const std::string hallucinated = bytes_to_string(greedy_decode(policy, prompt, images, dpo.max_new_tokens));
      if (pair.dispreferred.size() < 2) pair.dispreferred.resize(2);
      pair.dispreferred[1] = hallucinated;
      const TokenSequence rejected2 = preference_sequence(pair, hallucinated, images, cfg);
      const DpoResult second = dpo_step(chosen, rejected2, images, policy, reference, dpo);
      report.steps.push_back({pair.instruction_id, epoch, 2, second.loss, second.margin});
    }
  }
  report.mean_margin_after = mean_margin(pairs, images, policy, reference, cfg);
  return report;
}

}  // namespace forge
