// SPDX-License-Identifier: Apache-2.0
#include "forge/training.hpp"

#include <cmath>
#include <limits>
#include <utility>

#include "forge/error.hpp"
#include "forge/tensor_file.hpp"

namespace forge {

std::uint64_t Model::hash() const { return hash_bytes(&sampling, sizeof(sampling), resampler.hash() ^ decoder.hash()); }

void Model::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  resampler.save(dir / "resampler.bin");
  std::vector<NamedTensor> tensors;
  decoder.for_each_tensor([&](const std::string& name, const Mat& t) { tensors.push_back({name, t}); });
  const auto& c = decoder.config;
  const nlohmann::json meta = {{"kind", "decoder"},          {"vocab", c.vocab},
                               {"d", c.d},                   {"vision_dim", c.vision_dim},
                               {"max_context", c.max_context}, {"tied", c.tied},
                               {"seed", c.seed},             {"sampling", to_string(sampling)}};
  write_tensor_file(dir / "decoder.bin", meta, tensors);
}

Model Model::load(const std::filesystem::path& dir) {
  Model model;
  model.resampler = ResamplerParams::load(dir / "resampler.bin");
  const TensorFile file = read_tensor_file(dir / "decoder.bin");
  if (file.meta.value("kind", "") != "decoder") throw DomainError("decoder.bin is not a decoder checkpoint");
  DecoderConfig c;
  c.vocab = file.meta.at("vocab").get<int>();
  c.d = file.meta.at("d").get<int>();
  c.vision_dim = file.meta.at("vision_dim").get<int>();
  c.max_context = file.meta.at("max_context").get<int>();
  c.tied = file.meta.at("tied").get<bool>();
  c.seed = file.meta.at("seed").get<std::uint64_t>();
  model.sampling = sampling_kind_from_string(file.meta.value("sampling", "per-patch"));
  model.decoder = DecoderParams::zeros(c);
  model.decoder.for_each_tensor([&](const std::string& name, Mat& t) {
    const Mat& stored = file.at(name);
    if (stored.rows() != t.rows() || stored.cols() != t.cols()) throw DomainError("shape mismatch for decoder " + name);
    t = stored;
  });
  return model;
}

std::vector<Mat> encode_image(const Image& image, const VisionStub& stub, int max_patches) {
  const PatchPlan plan = plan_patches(image.dims(), stub.config().base, max_patches);
  std::vector<Mat> out;
  for (const auto& buf : extract_patches(image, plan).buffers()) out.push_back(stub.encode(buf));
  return out;
}

TrainBatch build_batch(const std::vector<InterleavedDoc>& docs, const ImageStore& store, const VisionStub& stub,
                       const PipelineConfig& cfg, PackStats* stats) {
  if (cfg.base != stub.config().base) throw DomainError("pipeline base resolution differs from the vision stub's");
  TrainBatch batch;
  std::map<std::string, PatchPlan> plans;
  std::vector<TokenSequence> seqs;
  for (const auto& doc : docs) {
    for (const auto& block : doc.blocks) {
      const auto* img = std::get_if<ImageBlock>(&block);
      if (!img || plans.count(img->image_id)) continue;
      plans.emplace(img->image_id, plan_patches(img->dims, cfg.base, cfg.max_patches));
      batch.images.emplace(img->image_id, encode_image(store.load(img->image_id, img->dims), stub, cfg.max_patches));
    }
    seqs.push_back(tokenize_doc(doc, plans, cfg.m, cfg.tokenize));
  }
  batch.sequences = pack(seqs, cfg.context, stats);
  return batch;
}

bool FrozenSet::frozen(const std::string& name) const {
  for (const auto& p : prefixes)
    if (name.compare(0, p.size(), p) == 0) return true;
  return false;
}

namespace {

SamplingMode mode_of(const Model& model) {
  if (model.sampling == SamplingKind::InstructionAware)
    throw DomainError("the toy trainer runs per-patch or fixed sampling only");
  return {model.sampling, {}};
}

const std::vector<Mat>& patches_of(const PatchEmbeddings& images, const std::string& id) {
  const auto it = images.find(id);
  if (it == images.end()) throw DomainError("no encoder output for image '" + id + "'");
  return it->second;
}

}  // namespace

std::vector<Mat> vision_tokens_for(const TokenSequence& seq, const PatchEmbeddings& images, const Model& model) {
  const SamplingMode mode = mode_of(model);
  std::vector<Mat> out;
  for (const auto& span : seq.vision_spans) {
    out.push_back(resample(patches_of(images, span.image_id), model.resampler, mode));
    if (static_cast<std::size_t>(out.back().rows()) != span.length)
      throw DomainError("image '" + span.image_id + "' resamples to " + std::to_string(out.back().rows()) +
                        " tokens but its span holds " + std::to_string(span.length));
  }
  return out;
}

LossAndGrad loss_and_grad(const TrainBatch& batch, const Model& model) {
  const SamplingMode mode = mode_of(model);
  LossAndGrad out{0.0, 0, ResamplerParams::zeros(model.resampler.config), DecoderParams::zeros(model.decoder.config)};
  const int vocab = model.decoder.config.vocab;
  for (const auto& seq : batch.sequences) out.targets += masked_nll(Mat::Zero(static_cast<Eigen::Index>(seq.size()), vocab), seq).count;
  if (out.targets == 0) return out;
  const double scale = 1.0 / static_cast<double>(out.targets);

  for (const auto& seq : batch.sequences) {
    const auto vision = vision_tokens_for(seq, batch.images, model);
    DecoderCache cache;
    const Mat lp = forward_logprobs(seq, vision, model.decoder, &cache);
    const NllResult nll = masked_nll(lp, seq);
    if (nll.count == 0) continue;
    out.loss += nll.loss * static_cast<double>(nll.count) * scale;
    std::vector<double> w = nll_weights(seq, vocab);
    for (auto& x : w) x *= static_cast<double>(nll.count) * scale;
    std::vector<Mat> d_vision;
    decoder_backward(seq, vision, model.decoder, cache, w, out.decoder, &d_vision);
    for (std::size_t s = 0; s < seq.vision_spans.size(); ++s) {
      const auto g = resample_grad(patches_of(batch.images, seq.vision_spans[s].image_id), model.resampler, mode, d_vision[s]);
      out.resampler.add_scaled(g.params, 1.0);
    }
  }
  return out;
}

double batch_loss(const TrainBatch& batch, const Model& model) {
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& seq : batch.sequences) {
    const NllResult r = masked_nll(forward_logprobs(seq, vision_tokens_for(seq, batch.images, model), model.decoder), seq);
    sum += r.loss * static_cast<double>(r.count);
    count += r.count;
  }
  return count ? sum / static_cast<double>(count) : 0.0;
}

StepResult train_step(const TrainBatch& batch, Model& model, double lr, const FrozenSet& frozen) {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw DomainError("learning rate must be finite and non-negative");
  LossAndGrad g = loss_and_grad(batch, model);
  if (!std::isfinite(g.loss))
    throw TrainingError("non-finite loss " + std::to_string(g.loss) + " over " + std::to_string(g.targets) + " targets");
  StepResult result{g.loss, g.targets, 0.0};
  double sq = 0.0;
  auto update = [&](const std::string& prefix, auto& params, auto& grads) {
    std::vector<const Mat*> flat;
    grads.for_each_tensor([&](const std::string&, const Mat& t) { flat.push_back(&t); });
    std::size_t i = 0;
    params.for_each_tensor([&](const std::string& name, Mat& param) {
      const Mat& grad = *flat[i++];
      if (!grad.allFinite()) throw TrainingError("non-finite gradient for " + prefix + name);
      sq += grad.squaredNorm();
      if (lr > 0.0 && !frozen.frozen(prefix + name)) param -= lr * grad;
    });
  };
  update("resampler.", model.resampler, std::as_const(g.resampler));
  update("decoder.", model.decoder, std::as_const(g.decoder));
  result.grad_norm = std::sqrt(sq);
  return result;
}

std::vector<std::int32_t> greedy_decode(const Model& model, const TokenSequence& prefix, const PatchEmbeddings& images,
                                        std::size_t max_new) {
  TokenSequence seq = prefix;
  const auto vision = vision_tokens_for(seq, images, model);
  std::vector<std::int32_t> out;
  while (out.size() < max_new && seq.size() < static_cast<std::size_t>(model.decoder.config.max_context)) {
    const Mat lp = forward_logprobs(seq, vision, model.decoder);
    Eigen::Index best = 0;
    // Only bytes and Eos are valid continuations.
    double best_lp = -std::numeric_limits<double>::infinity();
    for (Eigen::Index id = 0; id < lp.cols(); ++id) {
      if (id >= 256 && id != token::kEos) continue;
      if (lp(lp.rows() - 1, id) > best_lp) {
        best_lp = lp(lp.rows() - 1, id);
        best = id;
      }
    }
    if (best == token::kEos) break;
    out.push_back(static_cast<std::int32_t>(best));
    seq.push(static_cast<std::int32_t>(best), TokenKind::Text, true);
  }
  return out;
}

}  // namespace forge
