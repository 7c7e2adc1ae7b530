// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "forge/linalg.hpp"
#include "forge/sequencer.hpp"

namespace forge {

struct DecoderConfig {
  int vocab = token::kVocabSize;
  int d = 16;
  int vision_dim = 16;   // width of resampled vision tokens
  int max_context = 128;
  bool tied = false;     // output head = embed^T
  std::uint64_t seed = 0;
};

// One causal single-head self-attention block with residual and an output head:
//
//   h0[p] = embed[id_p] + pos[p]            (text / special positions)
//   h0[p] = vision_row_p vis_proj + pos[p]  (vision positions)
//   h1    = h0 + softmax_causal(h0 Wq (h0 Wk)^T / sqrt(d)) h0 Wv Wo
//   row p = log_softmax(h1[p] head + head_bias), the distribution of token p+1
struct DecoderParams {
  DecoderConfig config;
  Mat embed;      // V x d
  Mat pos;        // max_context x d
  Mat vis_proj;   // vision_dim x d
  Mat wq, wk, wv, wo;
  Mat head;       // d x V, unused when tied
  Mat head_bias;  // 1 x V

  static DecoderParams init(const DecoderConfig& cfg);
  static DecoderParams zeros(const DecoderConfig& cfg);

  void for_each_tensor(const std::function<void(const std::string&, Mat&)>& fn);
  void for_each_tensor(const std::function<void(const std::string&, const Mat&)>& fn) const;
  // this += scale * other, tensor by tensor; shapes must match.
  void add_scaled(const DecoderParams& other, double scale);
  std::uint64_t hash() const;
};

struct DecoderCache {
  Mat h0, q, k, v, probs, attn, h1, logprobs;
};

// (C x V) next-token log-probabilities. vision_tokens holds one matrix per
// entry of seq.vision_spans, with span.length rows each.
Mat forward_logprobs(const TokenSequence& seq, std::span<const Mat> vision_tokens, const DecoderParams& params,
                     DecoderCache* cache = nullptr);

struct NllResult {
  double loss = 0.0;
  std::size_t count = 0;
  bool empty_mask = false;  // no loss-bearing targets; loss reported as 0
};

// Mean of -log p(token p | < p) over positions p >= 1 with loss_mask set.
// Position 0 has no prediction and never contributes.
NllResult masked_nll(const Mat& logprobs, const TokenSequence& seq);

// Sum of target log-probabilities over loss-bearing positions.
double masked_logprob_sum(const Mat& logprobs, const TokenSequence& seq);

// Backward pass for loss = -sum_p weights[p] * log p(ids[p] | < p). weights
// has one entry per position; weights[0] is ignored. Gradients accumulate into
// `grads`; d_vision (optional) receives one matrix per vision span.
void decoder_backward(const TokenSequence& seq, std::span<const Mat> vision_tokens, const DecoderParams& params,
                      const DecoderCache& cache, std::span<const double> weights, DecoderParams& grads,
                      std::vector<Mat>* d_vision);

// Weights that make decoder_backward differentiate masked_nll.
std::vector<double> nll_weights(const TokenSequence& seq, int vocab = token::kVocabSize);

}  // namespace forge
