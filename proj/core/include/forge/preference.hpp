// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "forge/corpus.hpp"
#include "forge/imaging.hpp"
#include "forge/training.hpp"

namespace forge {

// ---- preference pairs -------------------------------------------------------

struct AxisScores {
  double helpfulness = 0.0;
  double visual_faithfulness = 0.0;
  double ethics = 0.0;

  double mean() const { return (helpfulness + visual_faithfulness + ethics) / 3.0; }
};

struct ScoredResponse {
  std::string model;
  std::string text;
  AxisScores scores;
};

struct ScoredResponseSet {
  std::string instruction_id;
  std::string instruction;
  ImageBlock image;
  std::vector<ScoredResponse> responses;
};

struct PreferencePair {
  std::string instruction_id;
  std::string instruction;
  ImageBlock image;
  std::string preferred;
  std::string preferred_model;
  // Slot 0 is the lowest-scoring response; slot 1, when filled, is the
  // policy's own answer to a noised copy of the image.
  std::vector<std::string> dispreferred;
  std::string dispreferred_model;
  double preferred_mean = 0.0;
  double dispreferred_mean = 0.0;
};

struct PairStats {
  std::size_t sets_in = 0;
  std::size_t emitted = 0;
  std::size_t filtered_low_score = 0;
  std::vector<std::string> skipped;  // instruction ids with < 2 responses or out-of-range scores
};

inline constexpr double kDefaultPairThreshold = 4.0;

// Preferred = highest mean of the three axes, dispreferred = lowest among the
// remaining responses; ties go to the lexicographically smaller model name.
// Sets whose preferred mean is below threshold are dropped and counted.
std::vector<PreferencePair> build_pairs(std::span<const ScoredResponseSet> sets, double threshold,
                                        PairStats* stats = nullptr);

ScoredResponseSet scored_set_from_json(const nlohmann::json& j);
nlohmann::json to_json(const PreferencePair& pair);
PreferencePair preference_pair_from_json(const nlohmann::json& j);

// ---- DPO kernel -------------------------------------------------------------

struct DpoResult {
  double loss = 0.0;
  double margin = 0.0;       // (pi_w - ref_w) - (pi_l - ref_l)
  double d_policy_chosen = 0.0;    // dL / d log pi(y_w)
  double d_policy_rejected = 0.0;  // dL / d log pi(y_l)
};

// L = -log sigmoid(beta * margin), evaluated as softplus(-beta * margin).
DpoResult dpo_loss(double policy_chosen, double policy_rejected, double ref_chosen, double ref_rejected, double beta);

// ---- noised image -----------------------------------------------------------

// Additive N(0, sigma^2) noise on [0,1] pixels, clipped to [0,1].
FloatImage noised_dispreferred(const Image& image, double sigma, std::uint64_t seed);

// ---- LoRA planning ----------------------------------------------------------

struct MatrixShape {
  std::string name;
  std::int64_t d_in = 0;
  std::int64_t d_out = 0;
};

struct LoraOption {
  int rank = 0;
  double fraction = 0.0;
};

struct LoraPlan {
  std::vector<MatrixShape> targets;
  std::int64_t backbone_params = 0;
  double target_fraction = 0.0;
  bool reachable = false;
  int rank = 0;                      // chosen rank; nearest rank when unreachable
  std::int64_t trainable_params = 0;
  double achieved_fraction = 0.0;
  std::vector<LoraOption> nearest;   // closest ranks below / above the band when unreachable
};

inline constexpr double kLoraBand = 0.2;

// r * (d_in + d_out) summed over targets.
std::int64_t lora_trainable_params(std::span<const MatrixShape> targets, int rank);

// Uniform rank over all targets, at most the smallest matrix dimension: the
// largest rank whose trainable fraction of the backbone lies in [0.8 f, 1.2 f].
// When none does, reachable is false and `nearest` lists the closest
// achievable fractions.
LoraPlan plan_lora(std::span<const MatrixShape> backbone, double target_fraction);

nlohmann::json to_json(const LoraPlan& plan);

// ---- safety mixture ---------------------------------------------------------

enum class UnsafeKind { ObjectionableImage, SafeImage };

struct Turn {
  std::string instruction;
  std::string response;
};

// Objectionable images carry one (safe instruction, abstention) turn; safe
// images carry a safe and an unsafe instruction-response pair.
struct SafetyRecord {
  std::string id;
  UnsafeKind kind = UnsafeKind::ObjectionableImage;
  ImageBlock image;
  std::vector<Turn> turns;
};

struct SftExample {
  std::string id;
  std::optional<ImageBlock> image;
  std::vector<Turn> turns;
};

struct SafetyMixture {
  std::vector<SafetyRecord> unsafe;
  std::vector<SftExample> helpful;
  int epochs = 3;
  bool helpful_missing = false;  // helpful_n == 0: exaggerated-safety risk

  // Example ids for one epoch: unsafe and helpful interleaved in a seeded order.
  std::vector<std::string> epoch_order(int epoch, std::uint64_t seed) const;
};

SafetyMixture build_safety_mixture(std::span<const SafetyRecord> unsafe_pool, std::span<const SftExample> sft_pool,
                                   std::size_t unsafe_n, std::size_t helpful_n, std::uint64_t seed, int epochs = 3);

SafetyRecord safety_record_from_json(const nlohmann::json& j);
SftExample sft_example_from_json(const nlohmann::json& j);

// ---- toy DPO loop -----------------------------------------------------------

struct DpoConfig {
  double beta = 0.1;
  double lr = 0.05;
  int epochs = 1;
  double noise_sigma = 0.5;
  bool noised_step = true;
  std::size_t max_new_tokens = 24;
  std::uint64_t seed = 0;
  FrozenSet frozen{{"resampler."}};
};

struct DpoStepLog {
  std::string instruction_id;
  int epoch = 0;
  int stage = 0;  // 1: scored dispreferred, 2: noised-image dispreferred
  double loss = 0.0;
  double margin = 0.0;
};

struct DpoReport {
  std::vector<DpoStepLog> steps;
  double mean_margin_before = 0.0;
  double mean_margin_after = 0.0;
};

// Prompt (image + instruction, masked) followed by the response (loss-bearing).
TokenSequence preference_sequence(const PreferencePair& pair, const std::string& response, const PatchEmbeddings& images,
                                  const PipelineConfig& cfg);

// Per pair and epoch: one DPO step against the scored dispreferred response,
// then (when enabled) a second step against the policy's greedy answer to a
// noised copy of the image. The reference model stays fixed.
DpoReport run_dpo(std::vector<PreferencePair>& pairs, Model& policy, const Model& reference, const ImageStore& store,
                  const VisionStub& stub, const PipelineConfig& cfg, const DpoConfig& dpo);

}  // namespace forge
