// SPDX-License-Identifier: Apache-2.0
#include "forge/resampler.hpp"

#include <cmath>
#include <random>

#include "forge/error.hpp"
#include "forge/parallel.hpp"
#include "forge/rng.hpp"
#include "forge/tensor_file.hpp"

namespace forge {
namespace {

void validate(const ResamplerConfig& cfg) {
  if (cfg.d < 1 || cfg.m < 1 || cfg.layers < 0 || cfg.heads < 1)
    throw DomainError("resampler config needs d, m, heads >= 1 and layers >= 0");
  if (cfg.d % cfg.heads != 0) throw DomainError("resampler width must be divisible by the head count");
}

struct LayerCache {
  Mat latents;  // layer input, m x d
  Mat kv;       // (n + m + t) x d
  Mat q, k, v;
  std::vector<Mat> probs;  // per head, m x (n + m + t)
  Mat attn;                // concatenated head outputs, m x d
  Mat mid;                 // latents after attention residual
  Mat xhat;                // normalized mid
  Vec rstd;
  Mat normed;
  Mat pre;  // m x 4d
  Mat act;
};

struct BlockCache {
  Eigen::Index n_inputs = 0;
  Eigen::Index n_instr = 0;
  std::vector<LayerCache> layers;
};

Mat stack_rows(const Mat& a, const Mat& b, const Mat* c) {
  const Eigen::Index extra = c ? c->rows() : 0;
  Mat out(a.rows() + b.rows() + extra, a.cols());
  out.topRows(a.rows()) = a;
  out.middleRows(a.rows(), b.rows()) = b;
  if (extra) out.bottomRows(extra) = *c;
  return out;
}

Mat forward_block(const Mat& inputs, const Mat* instruction, const ResamplerParams& p, BlockCache* cache) {
  const auto& cfg = p.config;
  const int hd = cfg.d / cfg.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  Mat lat = p.queries;
  if (cache) {
    cache->n_inputs = inputs.rows();
    cache->n_instr = instruction ? instruction->rows() : 0;
    cache->layers.clear();
    cache->layers.reserve(p.layers.size());
  }
  for (const auto& layer : p.layers) {
    LayerCache lc;
    lc.latents = lat;
    lc.kv = stack_rows(inputs, lat, instruction);
    lc.q = lat * layer.wq;
    lc.k = lc.kv * layer.wk;
    lc.v = lc.kv * layer.wv;
    lc.attn.resize(lat.rows(), cfg.d);
    lc.probs.resize(cfg.heads);
    for (int h = 0; h < cfg.heads; ++h) {
      Mat s = (lc.q.middleCols(h * hd, hd) * lc.k.middleCols(h * hd, hd).transpose()) * scale;
      softmax_rows(s);
      lc.attn.middleCols(h * hd, hd) = s * lc.v.middleCols(h * hd, hd);
      lc.probs[h] = std::move(s);
    }
    lc.mid = lat + lc.attn * layer.wo;

    const Eigen::Index rows = lc.mid.rows();
    lc.xhat.resize(rows, cfg.d);
    lc.rstd.resize(rows);
    for (Eigen::Index r = 0; r < rows; ++r) {
      const double mean = lc.mid.row(r).mean();
      const double var = (lc.mid.row(r).array() - mean).square().mean();
      lc.rstd(r) = 1.0 / std::sqrt(var + cfg.ln_eps);
      lc.xhat.row(r) = (lc.mid.row(r).array() - mean) * lc.rstd(r);
    }
    lc.normed = (lc.xhat.array().rowwise() * layer.ln_scale.row(0).array()).rowwise() + layer.ln_shift.row(0).array();
    lc.pre = lc.normed * layer.ff_in;
    lc.act = lc.pre.unaryExpr([](double x) { return gelu(x); });
    lat = lc.mid + lc.act * layer.ff_out;
    if (cache) cache->layers.push_back(std::move(lc));
  }
  return lat;
}

// Accumulates parameter gradients into `g`; writes input / instruction grads.
void backward_block(const BlockCache& cache, const Mat& upstream, const ResamplerParams& p, ResamplerParams& g,
                    Mat& d_inputs, Mat* d_instruction) {
  const auto& cfg = p.config;
  const int hd = cfg.d / cfg.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  const Eigen::Index n = cache.n_inputs;
  const Eigen::Index m = cfg.m;
  d_inputs = Mat::Zero(n, cfg.d);
  if (d_instruction) *d_instruction = Mat::Zero(cache.n_instr, cfg.d);

  Mat d_lat = upstream;
  for (std::size_t li = p.layers.size(); li-- > 0;) {
    const auto& layer = p.layers[li];
    const auto& lc = cache.layers[li];
    auto& gl = g.layers[li];

    // Feed-forward residual.
    Mat d_mid = d_lat;
    gl.ff_out.noalias() += lc.act.transpose() * d_lat;
    Mat d_pre = (d_lat * layer.ff_out.transpose()).cwiseProduct(lc.pre.unaryExpr([](double x) { return gelu_grad(x); }));
    gl.ff_in.noalias() += lc.normed.transpose() * d_pre;
    const Mat d_normed = d_pre * layer.ff_in.transpose();
    gl.ln_scale += d_normed.cwiseProduct(lc.xhat).colwise().sum();
    gl.ln_shift += d_normed.colwise().sum();
    const Mat d_xhat = d_normed.array().rowwise() * layer.ln_scale.row(0).array();
    for (Eigen::Index r = 0; r < d_xhat.rows(); ++r) {
      const double mean_d = d_xhat.row(r).mean();
      const double mean_dx = d_xhat.row(r).dot(lc.xhat.row(r)) / cfg.d;
      d_mid.row(r) += lc.rstd(r) * (d_xhat.row(r).array() - mean_d - lc.xhat.row(r).array() * mean_dx).matrix();
    }

    // Attention residual.
    Mat d_prev = d_mid;
    gl.wo.noalias() += lc.attn.transpose() * d_mid;
    const Mat d_attn = d_mid * layer.wo.transpose();
    Mat d_q(m, cfg.d), d_k(lc.kv.rows(), cfg.d), d_v(lc.kv.rows(), cfg.d);
    for (int h = 0; h < cfg.heads; ++h) {
      const Mat& prob = lc.probs[h];
      const auto d_head = d_attn.middleCols(h * hd, hd);
      const Mat d_prob = d_head * lc.v.middleCols(h * hd, hd).transpose();
      d_v.middleCols(h * hd, hd) = prob.transpose() * d_head;
      const Vec row_dot = d_prob.cwiseProduct(prob).rowwise().sum();
      const Mat d_s = prob.cwiseProduct(d_prob.colwise() - row_dot) * scale;
      d_q.middleCols(h * hd, hd) = d_s * lc.k.middleCols(h * hd, hd);
      d_k.middleCols(h * hd, hd) = d_s.transpose() * lc.q.middleCols(h * hd, hd);
    }
    gl.wq.noalias() += lc.latents.transpose() * d_q;
    gl.wk.noalias() += lc.kv.transpose() * d_k;
    gl.wv.noalias() += lc.kv.transpose() * d_v;
    d_prev.noalias() += d_q * layer.wq.transpose();
    const Mat d_kv = d_k * layer.wk.transpose() + d_v * layer.wv.transpose();
    d_inputs += d_kv.topRows(n);
    d_prev += d_kv.middleRows(n, m);
    if (d_instruction && cache.n_instr) *d_instruction += d_kv.bottomRows(cache.n_instr);
    d_lat = std::move(d_prev);
  }
  g.queries += d_lat;
}

void check_inputs(std::span<const Mat> patches, const ResamplerParams& params, const SamplingMode& mode) {
  if (patches.empty()) throw DomainError("resample needs at least one patch");
  for (const auto& p : patches)
    if (p.cols() != params.config.d)
      throw DomainError("patch embedding width " + std::to_string(p.cols()) + " does not match resampler width " +
                        std::to_string(params.config.d));
  if (params.queries.rows() != params.config.m || params.queries.cols() != params.config.d)
    throw DomainError("resampler queries do not match config");
  if (mode.kind == SamplingKind::InstructionAware) {
    if (mode.instruction.rows() > 0 && mode.instruction.cols() != params.config.d)
      throw DomainError("instruction embedding width does not match resampler width");
    if (!mode.instruction.allFinite()) throw DomainError("instruction embeddings must be finite");
  }
}

Mat concat_patches(std::span<const Mat> patches) {
  Eigen::Index rows = 0;
  for (const auto& p : patches) rows += p.rows();
  Mat all(rows, patches.front().cols());
  Eigen::Index at = 0;
  for (const auto& p : patches) {
    all.middleRows(at, p.rows()) = p;
    at += p.rows();
  }
  return all;
}

const Mat* instruction_of(const SamplingMode& mode) {
  return mode.kind == SamplingKind::InstructionAware && mode.instruction.rows() > 0 ? &mode.instruction : nullptr;
}

}  // namespace

const char* to_string(SamplingKind kind) {
  switch (kind) {
    case SamplingKind::PerPatch: return "per-patch";
    case SamplingKind::FixedSampling: return "fixed";
    case SamplingKind::InstructionAware: return "instruction";
  }
  return "?";
}

SamplingKind sampling_kind_from_string(const std::string& s) {
  if (s == "per-patch") return SamplingKind::PerPatch;
  if (s == "fixed") return SamplingKind::FixedSampling;
  if (s == "instruction") return SamplingKind::InstructionAware;
  throw DomainError("unknown sampling mode '" + s + "' (expected per-patch, fixed, instruction)");
}

ResamplerParams ResamplerParams::init(const ResamplerConfig& cfg) {
  validate(cfg);
  std::mt19937_64 rng(derive_seed(cfg.seed, "resampler"));
  const double s = 1.0 / std::sqrt(static_cast<double>(cfg.d));
  const double s_out = 1.0 / std::sqrt(4.0 * cfg.d);
  ResamplerParams p;
  p.config = cfg;
  p.queries = gaussian_matrix(cfg.m, cfg.d, 1.0, rng);
  for (int l = 0; l < cfg.layers; ++l) {
    ResamplerLayer layer;
    layer.wq = gaussian_matrix(cfg.d, cfg.d, s, rng);
    layer.wk = gaussian_matrix(cfg.d, cfg.d, s, rng);
    layer.wv = gaussian_matrix(cfg.d, cfg.d, s, rng);
    layer.wo = gaussian_matrix(cfg.d, cfg.d, s, rng);
    layer.ff_in = gaussian_matrix(cfg.d, 4 * cfg.d, s, rng);
    layer.ff_out = gaussian_matrix(4 * cfg.d, cfg.d, s_out, rng);
    layer.ln_scale = Mat::Ones(1, cfg.d);
    layer.ln_shift = Mat::Zero(1, cfg.d);
    p.layers.push_back(std::move(layer));
  }
  return p;
}

ResamplerParams ResamplerParams::zeros(const ResamplerConfig& cfg) {
  validate(cfg);
  ResamplerParams p;
  p.config = cfg;
  p.queries = Mat::Zero(cfg.m, cfg.d);
  for (int l = 0; l < cfg.layers; ++l) {
    ResamplerLayer layer;
    layer.wq = layer.wk = layer.wv = layer.wo = Mat::Zero(cfg.d, cfg.d);
    layer.ff_in = Mat::Zero(cfg.d, 4 * cfg.d);
    layer.ff_out = Mat::Zero(4 * cfg.d, cfg.d);
    layer.ln_scale = layer.ln_shift = Mat::Zero(1, cfg.d);
    p.layers.push_back(std::move(layer));
  }
  return p;
}

void ResamplerParams::for_each_tensor(const std::function<void(const std::string&, Mat&)>& fn) {
  fn("queries", queries);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string pre = "layers." + std::to_string(l) + ".";
    auto& L = layers[l];
    fn(pre + "wq", L.wq);
    fn(pre + "wk", L.wk);
    fn(pre + "wv", L.wv);
    fn(pre + "wo", L.wo);
    fn(pre + "ff_in", L.ff_in);
    fn(pre + "ff_out", L.ff_out);
    fn(pre + "ln_scale", L.ln_scale);
    fn(pre + "ln_shift", L.ln_shift);
  }
}

void ResamplerParams::for_each_tensor(const std::function<void(const std::string&, const Mat&)>& fn) const {
  const_cast<ResamplerParams*>(this)->for_each_tensor([&](const std::string& name, Mat& t) { fn(name, t); });
}

void ResamplerParams::add_scaled(const ResamplerParams& other, double scale) {
  std::vector<const Mat*> flat;
  other.for_each_tensor([&](const std::string&, const Mat& t) { flat.push_back(&t); });
  std::size_t i = 0;
  for_each_tensor([&](const std::string& name, Mat& t) {
    if (i >= flat.size() || flat[i]->rows() != t.rows() || flat[i]->cols() != t.cols())
      throw DomainError("add_scaled shape mismatch at " + name);
    t += scale * *flat[i++];
  });
}

std::uint64_t ResamplerParams::hash() const {
  std::uint64_t h = kFnvOffset;
  for_each_tensor([&](const std::string&, const Mat& t) { h = hash_matrix(t, h); });
  return h;
}

void ResamplerParams::save(const std::filesystem::path& path) const {
  std::vector<NamedTensor> tensors;
  for_each_tensor([&](const std::string& name, const Mat& t) { tensors.push_back({name, t}); });
  const nlohmann::json meta = {{"kind", "resampler"}, {"m", config.m},         {"layers", config.layers},
                               {"heads", config.heads}, {"d", config.d},       {"seed", config.seed},
                               {"ln_eps", config.ln_eps}};
  write_tensor_file(path, meta, tensors);
}

ResamplerParams ResamplerParams::load(const std::filesystem::path& path) {
  const TensorFile file = read_tensor_file(path);
  if (file.meta.value("kind", "") != "resampler") throw DomainError(path.string() + " is not a resampler file");
  ResamplerConfig cfg;
  cfg.m = file.meta.at("m").get<int>();
  cfg.layers = file.meta.at("layers").get<int>();
  cfg.heads = file.meta.at("heads").get<int>();
  cfg.d = file.meta.at("d").get<int>();
  cfg.seed = file.meta.at("seed").get<std::uint64_t>();
  cfg.ln_eps = file.meta.value("ln_eps", 1e-5);
  ResamplerParams p = zeros(cfg);
  p.for_each_tensor([&](const std::string& name, Mat& t) {
    const Mat& stored = file.at(name);
    if (stored.rows() != t.rows() || stored.cols() != t.cols()) throw DomainError("shape mismatch for " + name);
    t = stored;
  });
  return p;
}

Mat resample(std::span<const Mat> patches, const ResamplerParams& params, const SamplingMode& mode) {
  check_inputs(patches, params, mode);
  const int m = params.config.m;
  if (mode.kind == SamplingKind::FixedSampling) return forward_block(concat_patches(patches), nullptr, params, nullptr);

  const Mat* instr = instruction_of(mode);
  Mat out(static_cast<Eigen::Index>(m) * static_cast<Eigen::Index>(patches.size()), params.config.d);
  std::vector<Mat> blocks(patches.size());
  parallel_for(patches.size(), [&](std::size_t i) { blocks[i] = forward_block(patches[i], instr, params, nullptr); });
  for (std::size_t i = 0; i < blocks.size(); ++i) out.middleRows(static_cast<Eigen::Index>(i) * m, m) = blocks[i];
  return out;
}

ResamplerGrad resample_grad(std::span<const Mat> patches, const ResamplerParams& params, const SamplingMode& mode,
                            const Mat& upstream) {
  check_inputs(patches, params, mode);
  const int m = params.config.m;
  const Eigen::Index blocks = mode.kind == SamplingKind::FixedSampling ? 1 : static_cast<Eigen::Index>(patches.size());
  if (upstream.rows() != m * blocks || upstream.cols() != params.config.d)
    throw DomainError("upstream gradient shape does not match resample output");

  ResamplerGrad grad{ResamplerParams::zeros(params.config), {}, {}};
  const Mat* instr = instruction_of(mode);
  if (mode.kind == SamplingKind::InstructionAware) grad.instruction = Mat::Zero(mode.instruction.rows(), params.config.d);

  if (mode.kind == SamplingKind::FixedSampling) {
    BlockCache cache;
    forward_block(concat_patches(patches), nullptr, params, &cache);
    Mat d_all;
    backward_block(cache, upstream, params, grad.params, d_all, nullptr);
    Eigen::Index at = 0;
    for (const auto& p : patches) {
      grad.inputs.push_back(d_all.middleRows(at, p.rows()));
      at += p.rows();
    }
    return grad;
  }

  grad.inputs.resize(patches.size());
  for (std::size_t i = 0; i < patches.size(); ++i) {
    BlockCache cache;
    forward_block(patches[i], instr, params, &cache);
    Mat d_instr;
    backward_block(cache, upstream.middleRows(static_cast<Eigen::Index>(i) * m, m), params, grad.params,
                   grad.inputs[i], instr ? &d_instr : nullptr);
    if (instr) grad.instruction += d_instr;
  }
  return grad;
}

}  // namespace forge
