// SPDX-License-Identifier: Apache-2.0
#include "forge/decoder.hpp"

#include <cmath>
#include <limits>
#include <random>

#include "forge/error.hpp"
#include "forge/rng.hpp"

namespace forge {
namespace {

void validate(const DecoderConfig& cfg) {
  if (cfg.vocab < 1 || cfg.d < 1 || cfg.vision_dim < 1 || cfg.max_context < 1)
    throw DomainError("decoder config dims must be positive");
}

// Vision row feeding each position, or -1.
std::vector<std::pair<int, Eigen::Index>> vision_rows(const TokenSequence& seq, std::span<const Mat> vision,
                                                      const DecoderConfig& cfg) {
  if (vision.size() != seq.vision_spans.size())
    throw DomainError("sequence has " + std::to_string(seq.vision_spans.size()) + " vision spans but " +
                      std::to_string(vision.size()) + " vision token blocks were given");
  std::vector<std::pair<int, Eigen::Index>> rows(seq.size(), {-1, 0});
  for (std::size_t s = 0; s < vision.size(); ++s) {
    const auto& span = seq.vision_spans[s];
    if (static_cast<std::size_t>(vision[s].rows()) != span.length || vision[s].cols() != cfg.vision_dim)
      throw DomainError("vision block " + std::to_string(s) + " is " + std::to_string(vision[s].rows()) + "x" +
                        std::to_string(vision[s].cols()) + ", span needs " + std::to_string(span.length) + "x" +
                        std::to_string(cfg.vision_dim));
    if (span.start + span.length > seq.size()) throw DomainError("vision span exceeds sequence");
    for (std::size_t i = 0; i < span.length; ++i) rows[span.start + i] = {static_cast<int>(s), static_cast<Eigen::Index>(i)};
  }
  for (std::size_t p = 0; p < seq.size(); ++p)
    if (seq.kinds[p] == TokenKind::Vision && rows[p].first < 0)
      throw DomainError("vision slot at " + std::to_string(p) + " has no vision tokens");
  return rows;
}

const Mat& head_of(const DecoderParams& p, Mat& scratch) {
  if (!p.config.tied) return p.head;
  scratch = p.embed.transpose();
  return scratch;
}

}  // namespace

DecoderParams DecoderParams::init(const DecoderConfig& cfg) {
  validate(cfg);
  std::mt19937_64 rng(derive_seed(cfg.seed, "decoder"));
  const double s = 1.0 / std::sqrt(static_cast<double>(cfg.d));
  DecoderParams p;
  p.config = cfg;
  p.embed = gaussian_matrix(cfg.vocab, cfg.d, s, rng);
  p.pos = gaussian_matrix(cfg.max_context, cfg.d, 0.1 * s, rng);
  p.vis_proj = gaussian_matrix(cfg.vision_dim, cfg.d, 1.0 / std::sqrt(static_cast<double>(cfg.vision_dim)), rng);
  p.wq = gaussian_matrix(cfg.d, cfg.d, s, rng);
  p.wk = gaussian_matrix(cfg.d, cfg.d, s, rng);
  p.wv = gaussian_matrix(cfg.d, cfg.d, s, rng);
  p.wo = gaussian_matrix(cfg.d, cfg.d, s, rng);
  p.head = cfg.tied ? Mat() : gaussian_matrix(cfg.d, cfg.vocab, s, rng);
  p.head_bias = Mat::Zero(1, cfg.vocab);
  return p;
}

DecoderParams DecoderParams::zeros(const DecoderConfig& cfg) {
  validate(cfg);
  DecoderParams p;
  p.config = cfg;
  p.embed = Mat::Zero(cfg.vocab, cfg.d);
  p.pos = Mat::Zero(cfg.max_context, cfg.d);
  p.vis_proj = Mat::Zero(cfg.vision_dim, cfg.d);
  p.wq = p.wk = p.wv = p.wo = Mat::Zero(cfg.d, cfg.d);
  p.head = cfg.tied ? Mat() : Mat::Zero(cfg.d, cfg.vocab);
  p.head_bias = Mat::Zero(1, cfg.vocab);
  return p;
}

void DecoderParams::for_each_tensor(const std::function<void(const std::string&, Mat&)>& fn) {
  fn("embed", embed);
  fn("pos", pos);
  fn("vis_proj", vis_proj);
  fn("wq", wq);
  fn("wk", wk);
  fn("wv", wv);
  fn("wo", wo);
  if (!config.tied) fn("head", head);
  fn("head_bias", head_bias);
}

void DecoderParams::for_each_tensor(const std::function<void(const std::string&, const Mat&)>& fn) const {
  const_cast<DecoderParams*>(this)->for_each_tensor([&](const std::string& name, Mat& t) { fn(name, t); });
}

void DecoderParams::add_scaled(const DecoderParams& other, double scale) {
  std::vector<const Mat*> flat;
  other.for_each_tensor([&](const std::string&, const Mat& t) { flat.push_back(&t); });
  std::size_t i = 0;
  for_each_tensor([&](const std::string& name, Mat& t) {
    if (i >= flat.size() || flat[i]->rows() != t.rows() || flat[i]->cols() != t.cols())
      throw DomainError("add_scaled shape mismatch at " + name);
    t += scale * *flat[i++];
  });
}

std::uint64_t DecoderParams::hash() const {
  std::uint64_t h = kFnvOffset;
  for_each_tensor([&](const std::string&, const Mat& t) { h = hash_matrix(t, h); });
  return h;
}

Mat forward_logprobs(const TokenSequence& seq, std::span<const Mat> vision, const DecoderParams& params,
                     DecoderCache* cache) {
  const auto& cfg = params.config;
  const auto n = static_cast<Eigen::Index>(seq.size());
  if (n == 0) throw DomainError("cannot run the decoder on an empty sequence");
  if (n > cfg.max_context)
    throw DomainError("sequence of " + std::to_string(n) + " exceeds decoder context " + std::to_string(cfg.max_context));
  const auto rows = vision_rows(seq, vision, cfg);

  DecoderCache local;
  DecoderCache& c = cache ? *cache : local;
  c.h0.resize(n, cfg.d);
  for (Eigen::Index p = 0; p < n; ++p) {
    const auto [block, r] = rows[static_cast<std::size_t>(p)];
    if (block >= 0) {
      c.h0.row(p) = vision[static_cast<std::size_t>(block)].row(r) * params.vis_proj;
    } else {
      const std::int32_t id = seq.ids[static_cast<std::size_t>(p)];
      if (id < 0 || id >= cfg.vocab) throw DomainError("token id " + std::to_string(id) + " outside decoder vocabulary");
      c.h0.row(p) = params.embed.row(id);
    }
  }
  c.h0 += params.pos.topRows(n);
  c.q = c.h0 * params.wq;
  c.k = c.h0 * params.wk;
  c.v = c.h0 * params.wv;
  c.probs = (c.q * c.k.transpose()) / std::sqrt(static_cast<double>(cfg.d));
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) c.probs(i, j) = -std::numeric_limits<double>::infinity();
  softmax_rows(c.probs);
  c.attn = c.probs * c.v;
  c.h1 = c.h0 + c.attn * params.wo;
  Mat scratch;
  c.logprobs = c.h1 * head_of(params, scratch);
  c.logprobs.rowwise() += params.head_bias.row(0);
  for (Eigen::Index r = 0; r < n; ++r) {
    const double mx = c.logprobs.row(r).maxCoeff();
    const double lse = mx + std::log((c.logprobs.row(r).array() - mx).exp().sum());
    c.logprobs.row(r).array() -= lse;
  }
  return c.logprobs;
}

namespace {

bool is_target(const TokenSequence& seq, std::size_t p, int vocab) {
  return p >= 1 && seq.loss_mask[p] && seq.ids[p] >= 0 && seq.ids[p] < vocab;
}

}  // namespace

NllResult masked_nll(const Mat& logprobs, const TokenSequence& seq) {
  if (static_cast<std::size_t>(logprobs.rows()) != seq.size()) throw DomainError("logprob rows do not match sequence");
  NllResult r;
  double sum = 0.0;
  for (std::size_t p = 1; p < seq.size(); ++p) {
    if (!is_target(seq, p, static_cast<int>(logprobs.cols()))) continue;
    sum -= logprobs(static_cast<Eigen::Index>(p - 1), seq.ids[p]);
    ++r.count;
  }
  r.empty_mask = r.count == 0;
  r.loss = r.count ? sum / static_cast<double>(r.count) : 0.0;
  return r;
}

double masked_logprob_sum(const Mat& logprobs, const TokenSequence& seq) {
  if (static_cast<std::size_t>(logprobs.rows()) != seq.size()) throw DomainError("logprob rows do not match sequence");
  double sum = 0.0;
  for (std::size_t p = 1; p < seq.size(); ++p)
    if (is_target(seq, p, static_cast<int>(logprobs.cols()))) sum += logprobs(static_cast<Eigen::Index>(p - 1), seq.ids[p]);
  return sum;
}

std::vector<double> nll_weights(const TokenSequence& seq, int vocab) {
  std::vector<double> w(seq.size(), 0.0);
  std::size_t count = 0;
  for (std::size_t p = 1; p < seq.size(); ++p)
    if (is_target(seq, p, vocab)) ++count;
  if (!count) return w;
  for (std::size_t p = 1; p < seq.size(); ++p)
    if (is_target(seq, p, vocab)) w[p] = 1.0 / static_cast<double>(count);
  return w;
}

void decoder_backward(const TokenSequence& seq, std::span<const Mat> vision, const DecoderParams& params,
                      const DecoderCache& c, std::span<const double> weights, DecoderParams& g,
                      std::vector<Mat>* d_vision) {
  const auto& cfg = params.config;
  const auto n = static_cast<Eigen::Index>(seq.size());
  if (weights.size() != seq.size()) throw DomainError("need one loss weight per position");
  if (c.logprobs.rows() != n) throw DomainError("decoder cache does not match sequence");
  const auto rows = vision_rows(seq, vision, cfg);

  // d logits: row p-1 predicts token p.
  Mat d_logits = Mat::Zero(n, cfg.vocab);
  for (Eigen::Index p = 1; p < n; ++p) {
    const double w = weights[static_cast<std::size_t>(p)];
    const std::int32_t id = seq.ids[static_cast<std::size_t>(p)];
    if (w == 0.0 || id < 0 || id >= cfg.vocab) continue;
    d_logits.row(p - 1) = w * c.logprobs.row(p - 1).array().exp().matrix();
    d_logits(p - 1, id) -= w;
  }

  g.head_bias += d_logits.colwise().sum();
  Mat d_h1;
  if (cfg.tied) {
    g.embed.noalias() += d_logits.transpose() * c.h1;
    d_h1 = d_logits * params.embed;
  } else {
    g.head.noalias() += c.h1.transpose() * d_logits;
    d_h1 = d_logits * params.head.transpose();
  }

  Mat d_h0 = d_h1;
  g.wo.noalias() += c.attn.transpose() * d_h1;
  const Mat d_attn = d_h1 * params.wo.transpose();
  const Mat d_probs = d_attn * c.v.transpose();
  g.wv.noalias() += c.h0.transpose() * (c.probs.transpose() * d_attn);
  d_h0.noalias() += (c.probs.transpose() * d_attn) * params.wv.transpose();
  const Vec row_dot = d_probs.cwiseProduct(c.probs).rowwise().sum();
  const Mat d_scores = c.probs.cwiseProduct(d_probs.colwise() - row_dot) / std::sqrt(static_cast<double>(cfg.d));
  const Mat d_q = d_scores * c.k;
  const Mat d_k = d_scores.transpose() * c.q;
  g.wq.noalias() += c.h0.transpose() * d_q;
  g.wk.noalias() += c.h0.transpose() * d_k;
  d_h0.noalias() += d_q * params.wq.transpose() + d_k * params.wk.transpose();

  g.pos.topRows(n) += d_h0;
  if (d_vision) {
    d_vision->clear();
    for (const auto& v : vision) d_vision->push_back(Mat::Zero(v.rows(), v.cols()));
  }
  for (Eigen::Index p = 0; p < n; ++p) {
    const auto [block, r] = rows[static_cast<std::size_t>(p)];
    if (block >= 0) {
      g.vis_proj.noalias() += vision[static_cast<std::size_t>(block)].row(r).transpose() * d_h0.row(p);
      if (d_vision) (*d_vision)[static_cast<std::size_t>(block)].row(r) += d_h0.row(p) * params.vis_proj.transpose();
    } else {
      g.embed.row(seq.ids[static_cast<std::size_t>(p)]) += d_h0.row(p);
    }
  }
}

}  // namespace forge
