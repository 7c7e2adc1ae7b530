// SPDX-License-Identifier: Apache-2.0
#include "commands.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "forge/config.hpp"
#include "forge/corpus.hpp"
#include "forge/curation.hpp"
#include "forge/error.hpp"
#include "forge/mixer.hpp"
#include "forge/preference.hpp"
#include "forge/resampler.hpp"
#include "forge/rng.hpp"
#include "forge/sequencer.hpp"
#include "forge/shard.hpp"
#include "forge/tensor_file.hpp"
#include "forge/training.hpp"
#include "forge/vision_stub.hpp"
#include "forge_io/imageio.hpp"

namespace forge::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

template <typename T>
T get(const json& cfg, const char* key) {
  return cfg.at(key).get<T>();
}

fs::path require_input(const json& cfg, const char* key) {
  const auto s = get<std::string>(cfg, key);
  if (s.empty()) throw UsageError(std::string("--") + key + " is required");
  const fs::path p(s);
  if (!fs::exists(p)) throw UsageError(std::string("--") + key + ": no such file or directory: " + s);
  return p;
}

fs::path out_path(const json& cfg) { return get<std::string>(cfg, "out"); }

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  out << j.dump(2) << "\n";
  if (!out) throw DomainError("cannot write " + path.string());
}

std::string hex(std::uint64_t h) {
  std::ostringstream s;
  s << std::hex;
  s.width(16);
  s.fill('0');
  s << h;
  return s.str();
}

SamplingKind sampling_arg(const json& cfg) {
  try {
    return sampling_kind_from_string(get<std::string>(cfg, "sampling"));
  } catch (const DomainError& e) {
    throw UsageError(e.what());
  }
}

MaskMode mask_arg(const json& cfg) {
  const auto s = get<std::string>(cfg, "mask");
  if (s == "pretrain") return MaskMode::PreTraining;
  if (s == "sft") return MaskMode::Sft;
  throw UsageError("--mask must be pretrain or sft");
}

// ---- shared parameter groups ------------------------------------------------

void declare_image(ParamSet& p) {
  p.add<std::string>("image", "", "PNG or raw .rgb image (raw needs --width/--height)");
  p.add<int>("width", 0, "image width; alone with --height selects a synthetic image");
  p.add<int>("height", 0, "image height");
}

void declare_tiling(ParamSet& p, int base, int max_patches) {
  p.add<int>("base", base, "base resolution of a patch");
  p.add<int>("max_patches", max_patches, "largest admissible grid cell count");
}

void declare_pipeline(ParamSet& p) {
  declare_tiling(p, 28, 4);
  p.add<int>("vit_patch", 7, "vision stub cell size");
  p.add<int>("d", 16, "vision embedding width");
  p.add<int>("decoder_d", 16, "decoder width");
  p.add<int>("m", 4, "resampler query count");
  p.add<int>("layers", 2, "resampler layers");
  p.add<int>("heads", 4, "resampler heads");
  p.add<std::size_t>("context", 96, "context length C");
  p.add<std::string>("sampling", "per-patch", "per-patch or fixed");
  p.add<std::string>("mask", "pretrain", "pretrain or sft");
  p.add<bool>("tied", false, "tie the decoder output head to the embedding");
}

Image image_arg(const json& cfg) {
  const auto path = get<std::string>(cfg, "image");
  const ImageDims dims{get<int>(cfg, "width"), get<int>(cfg, "height")};
  if (!path.empty()) {
    if (!fs::exists(path)) throw UsageError("--image: no such file: " + path);
    return io::read_image(path, dims);
  }
  if (!dims.valid()) throw UsageError("give --image or a positive --width and --height");
  return SyntheticImageStore().load("cli", dims);
}

PipelineConfig pipeline_arg(const json& cfg) {
  PipelineConfig pc;
  pc.base = get<int>(cfg, "base");
  pc.max_patches = get<int>(cfg, "max_patches");
  pc.stub = StubConfig{pc.base, get<int>(cfg, "vit_patch"), get<int>(cfg, "d"),
                       derive_seed(get<std::uint64_t>(cfg, "seed"), "vision_stub")};
  pc.m = get<int>(cfg, "m");
  pc.context = get<std::size_t>(cfg, "context");
  pc.tokenize = {sampling_arg(cfg), mask_arg(cfg)};
  return pc;
}

Model model_arg(const json& cfg, const PipelineConfig& pc) {
  const auto seed = get<std::uint64_t>(cfg, "seed");
  Model model;
  model.sampling = pc.tokenize.sampling;
  if (model.sampling == SamplingKind::InstructionAware) throw UsageError("training runs per-patch or fixed sampling");
  model.resampler = ResamplerParams::init(
      {pc.stub.d_model, pc.m, get<int>(cfg, "layers"), get<int>(cfg, "heads"), 1e-5, derive_seed(seed, "resampler")});
  model.decoder = DecoderParams::init({token::kVocabSize, get<int>(cfg, "decoder_d"), pc.stub.d_model,
                                       static_cast<int>(pc.context), get<bool>(cfg, "tied"), derive_seed(seed, "decoder")});
  return model;
}

struct CorpusPaths {
  fs::path docs;
  fs::path images;
};

// A directory holds docs.jsonl and images/; a file is the docs JSONL itself.
CorpusPaths corpus_arg(const json& cfg, const char* key) {
  const fs::path p = require_input(cfg, key);
  if (fs::is_directory(p)) return {p / "docs.jsonl", p / "images"};
  return {p, p.parent_path() / "images"};
}

std::unique_ptr<ImageStore> store_for(const fs::path& images, Report& report) {
  if (fs::is_directory(images)) {
    report["image_source"] = images.string();
    return std::make_unique<io::DirectoryImageStore>(images);
  }
  report["image_source"] = "synthetic";
  return std::make_unique<SyntheticImageStore>();
}

// ---- plan -------------------------------------------------------------------

void run_plan(const json& cfg, Report& report) {
  ImageDims dims{get<int>(cfg, "width"), get<int>(cfg, "height")};
  if (!get<std::string>(cfg, "image").empty()) dims = image_arg(cfg).dims();
  if (!dims.valid()) throw UsageError("give --image or a positive --width and --height");
  const PatchPlan plan = plan_patches(dims, get<int>(cfg, "base"), get<int>(cfg, "max_patches"));
  report.lap("plan");

  const StubConfig stub{plan.base_resolution, get<int>(cfg, "vit_patch"), 1, 0};
  const int m = get<int>(cfg, "m");
  report["plan"] = to_json(plan);
  report["buffers"] = plan.buffer_count();
  report["encoder_tokens_per_buffer"] = stub.token_count();
  report["resampled_tokens_per_buffer"] = m;
  report["reduction_per_patch"] = static_cast<double>(stub.token_count()) / m;
  report["vision_tokens"] = m * plan.buffer_count();
  report["score"] = {{"padding", score_grid(dims, plan.grid, plan.base_resolution).padding},
                     {"lost", score_grid(dims, plan.grid, plan.base_resolution).lost}};

  long long area = 0;
  bool square = true;
  for (const auto& b : plan.patch_boxes) {
    area += b.area();
    square = square && b.width() == plan.base_resolution && b.height() == plan.base_resolution && b.x0 >= 0 && b.y0 >= 0 &&
             b.x1 <= plan.canvas.width && b.y1 <= plan.canvas.height;
  }
  report.check("patches_tile_canvas", square && static_cast<int>(plan.patch_boxes.size()) == plan.grid.count() &&
                                          area == static_cast<long long>(plan.canvas.width) * plan.canvas.height);
  report.check("content_fits_canvas", plan.content.x0 >= 0 && plan.content.y0 >= 0 &&
                                          plan.content.x1 <= plan.canvas.width && plan.content.y1 <= plan.canvas.height &&
                                          ImageDims{plan.content.width(), plan.content.height()} ==
                                              fit_dims(dims, plan.canvas));
  report.check("global_iff_multi_patch", plan.include_global == (plan.grid.count() > 1));
  if (!out_path(cfg).empty()) write_json(out_path(cfg), to_json(plan));
}

// ---- resample ---------------------------------------------------------------

void run_resample(const json& cfg, Report& report) {
  const auto seed = get<std::uint64_t>(cfg, "seed");
  const Image img = image_arg(cfg);
  const PatchPlan plan = plan_patches(img.dims(), get<int>(cfg, "base"), get<int>(cfg, "max_patches"));

  const auto stub_path = get<std::string>(cfg, "stub");
  const VisionStub stub = stub_path.empty()
                              ? VisionStub(StubConfig{plan.base_resolution, get<int>(cfg, "vit_patch"), get<int>(cfg, "d"),
                                                      derive_seed(seed, "vision_stub")})
                              : VisionStub::load(stub_path);
  if (stub.config().base != plan.base_resolution) throw DomainError("vision stub base differs from --base");
  std::vector<Mat> embeddings;
  for (const auto& buf : extract_patches(img, plan).buffers()) embeddings.push_back(stub.encode(buf));
  report.lap("encode");

  const auto params_path = get<std::string>(cfg, "params");
  const ResamplerParams params =
      params_path.empty() ? ResamplerParams::init({stub.config().d_model, get<int>(cfg, "m"), get<int>(cfg, "layers"),
                                                   get<int>(cfg, "heads"), 1e-5, derive_seed(seed, "resampler")})
                          : ResamplerParams::load(params_path);
  if (params.config.d != stub.config().d_model) throw DomainError("resampler width differs from the vision stub's");

  SamplingMode mode{sampling_arg(cfg), {}};
  const auto instruction = get<std::string>(cfg, "instruction");
  if (mode.kind == SamplingKind::InstructionAware && !instruction.empty()) {
    // Fixed byte embedding table standing in for the language model's.
    std::mt19937_64 rng(derive_seed(seed, "instruction_embedding"));
    const Mat table = gaussian_matrix(256, params.config.d, 1.0 / std::sqrt(params.config.d), rng);
    mode.instruction.resize(static_cast<Eigen::Index>(instruction.size()), params.config.d);
    for (std::size_t i = 0; i < instruction.size(); ++i)
      mode.instruction.row(static_cast<Eigen::Index>(i)) = table.row(static_cast<unsigned char>(instruction[i]));
  }
  const Mat tokens = resample(embeddings, params, mode);
  report.lap("resample");

  long long in_tokens = 0;
  for (const auto& e : embeddings) in_tokens += e.rows();
  const int buffers = static_cast<int>(embeddings.size());
  report["grid"] = {plan.grid.cols, plan.grid.rows};
  report["buffers"] = buffers;
  report["sampling"] = to_string(mode.kind);
  report["input_tokens"] = in_tokens;
  report["output_tokens"] = tokens.rows();
  report["reduction"] = static_cast<double>(in_tokens) / static_cast<double>(tokens.rows());
  report["vision_stub_hash"] = hex(stub.weights_hash());
  report["resampler_hash"] = hex(params.hash());
  report["output_hash"] = hex(hash_matrix(tokens));
  report.check("output_count", tokens.rows() == resampled_count(mode.kind, params.config.m, buffers) &&
                                   tokens.cols() == params.config.d);
  report.check("finite", tokens.allFinite());
  if (!out_path(cfg).empty())
    write_tensor_file(out_path(cfg), {{"kind", "resampled_tokens"}, {"sampling", to_string(mode.kind)}},
                      {{"tokens", tokens}});
}

// ---- pack -------------------------------------------------------------------

void run_pack(const json& cfg, Report& report) {
  const CorpusPaths corpus = corpus_arg(cfg, "corpus");
  const auto docs = read_docs_jsonl(corpus.docs);
  report.lap("read");
  const int m = get<int>(cfg, "m");
  const int base = get<int>(cfg, "base");
  const int max_patches = get<int>(cfg, "max_patches");
  const TokenizeOptions opts{sampling_arg(cfg), mask_arg(cfg)};
  if (opts.sampling == SamplingKind::InstructionAware) throw UsageError("pack takes per-patch or fixed sampling");

  Packer packer(get<std::size_t>(cfg, "context"));
  std::vector<TokenSequence> out;
  std::map<std::string, PatchPlan> plans;
  std::size_t mask_violations = 0;
  for (const auto& doc : docs) {
    for (const auto& b : doc.blocks)
      if (const auto* img = std::get_if<ImageBlock>(&b))
        if (!plans.count(img->image_id)) plans.emplace(img->image_id, plan_patches(img->dims, base, max_patches));
    const TokenSequence seq = tokenize_doc(doc, plans, m, opts);
    for (std::size_t i = 0; i < seq.size(); ++i)
      if (seq.loss_mask[i] && seq.kinds[i] != TokenKind::Text) ++mask_violations;
    for (auto& s : packer.push(seq)) out.push_back(std::move(s));
  }
  for (auto& s : packer.finish()) out.push_back(std::move(s));
  report.lap("pack");

  const PackStats& st = packer.stats();
  json rejected = json::array();
  for (const auto& r : st.rejected) rejected.push_back({{"doc_id", r.doc_id}, {"span_length", r.span_length}});
  report["docs_in"] = st.docs_in;
  report["docs_rejected"] = st.docs_rejected;
  report["rejected"] = rejected;
  report["sequences"] = st.sequences_out;
  report["tokens_in"] = st.tokens_in;
  report["tokens_out"] = st.tokens_out;
  report["pad_tokens"] = st.pad_tokens;

  json violations = json::array();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const std::string v = check_sequence(out[i]);
    if (!v.empty() && violations.size() < 10) violations.push_back({{"sequence", i}, {"violation", v}});
    report.check("sequences_well_formed", v.empty());
    report.check("context_length", out[i].size() == packer.context());
  }
  if (!violations.empty()) report["violations"] = violations;
  report.check("mask_on_text_only", mask_violations == 0);
  report.check("token_conservation", st.tokens_out == st.tokens_in - st.tokens_rejected);

  if (!out_path(cfg).empty()) {
    const json index = write_shards(out_path(cfg), out, get<std::size_t>(cfg, "per_shard"), st);
    report["shards"] = index.at("shards").size();
    report.lap("write");
  }
}

// ---- mix --------------------------------------------------------------------

void run_mix(const json& cfg, Report& report) {
  const fs::path spec_path = require_input(cfg, "spec");
  MixtureSpec spec = load_mixture_spec(spec_path);
  const auto policy = get<std::string>(cfg, "on_exhaust");
  if (!policy.empty()) {
    if (policy != "wrap" && policy != "drop") throw UsageError("--on-exhaust must be wrap or drop");
    spec.on_exhaust = policy == "wrap" ? ExhaustPolicy::Wrap : ExhaustPolicy::Drop;
  }
  const bool wrap = spec.on_exhaust == ExhaustPolicy::Wrap;
  const auto n = get<std::size_t>(cfg, "n");

  Mixer mixer(std::move(spec));
  std::int64_t total = 0;
  for (std::size_t i = 0; i < mixer.names().size(); ++i) total += mixer.scaled_weight(i);

  const bool write = !out_path(cfg).empty();
  std::ofstream out;
  if (write) {
    if (out_path(cfg).has_parent_path()) fs::create_directories(out_path(cfg).parent_path());
    out.open(out_path(cfg));
  }
  // Bounded deviation in integer form: |count_i * W - t * w_i| < W.
  double worst = 0.0;
  std::size_t drawn = 0;
  while (drawn < n) {
    const auto item = mixer.next();
    if (!item) break;
    ++drawn;
    for (std::size_t i = 0; i < mixer.names().size(); ++i) {
      const double dev = std::abs(static_cast<double>(mixer.counts()[i]) * static_cast<double>(total) -
                                  static_cast<double>(drawn) * static_cast<double>(mixer.scaled_weight(i))) /
                         static_cast<double>(total);
      worst = std::max(worst, dev);
    }
    if (write) {
      json row = {{"step", item->step}, {"source", item->name}, {"epoch", item->epoch}};
      json parsed = json::parse(item->item, nullptr, false);
      row["item"] = parsed.is_discarded() ? json(item->item) : parsed;
      out << row.dump() << "\n";
    }
  }
  report.lap("mix");

  json counts = json::object(), epochs = json::object(), weights = json::object();
  for (std::size_t i = 0; i < mixer.names().size(); ++i) {
    counts[mixer.names()[i]] = mixer.counts()[i];
    epochs[mixer.names()[i]] = mixer.epochs()[i];
    weights[mixer.names()[i]] = mixer.scaled_weight(i);
  }
  report["spec"] = spec_path.string();
  report["draws"] = drawn;
  report["counts"] = counts;
  report["wraps"] = epochs;
  report["scaled_weights"] = weights;
  report["max_prefix_deviation"] = worst;
  report["on_exhaust"] = wrap ? "wrap" : "drop";
  if (wrap) {
    report.check("bounded_deviation", worst < 1.0);
    report.check("draw_count", drawn == n);
  }
}

// ---- ocr / ground -----------------------------------------------------------

void run_ocr(const json& cfg, Report& report) {
  const fs::path in = require_input(cfg, "in");
  const int level = get<int>(cfg, "level");
  if (level < 0 || level > 5) throw UsageError("--level must lie in 0..5");
  const bool with_bbox = ocr_level(level).with_bbox;
  const auto rows = read_json_lines(in);
  std::vector<json> out;
  std::size_t annotations = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const OcrRecord rec = ocr_record_from_json(rows[i]);
    const std::string caption = ocr_caption(rec, level);
    const auto parsed = parse_augmented(caption);
    annotations += parsed.size();
    bool ok = with_bbox || parsed.empty();
    for (const auto& a : parsed) ok = ok && a.kind == InfoKind::BboxTag && a.bbox && bbox_in_bounds(*a.bbox, rec.dims);
    report.check("annotations_parse_back", ok);
    out.push_back({{"image_id", rec.image_id}, {"level", level}, {"caption", caption}});
  }
  report.lap("ocr");
  report["records"] = rows.size();
  report["annotations"] = annotations;
  if (!out_path(cfg).empty()) write_json_lines(out_path(cfg), out);
}

void run_ground(const json& cfg, Report& report) {
  const fs::path in = require_input(cfg, "in");
  const int fmt_i = get<int>(cfg, "fmt");
  GroundFormat fmt;
  try {
    fmt = ground_format_from_int(fmt_i);
  } catch (const DomainError& e) {
    throw UsageError(e.what());
  }
  const auto rows = read_json_lines(in);
  std::vector<json> out;
  std::size_t grounded = 0, skipped = 0;
  for (const auto& row : rows) {
    const GroundRecord rec = ground_record_from_json(row);
    const GroundResult res = ground_caption(rec, fmt);
    const auto parsed = parse_augmented(res.caption);
    grounded += parsed.size();
    skipped += res.skipped.size();
    report.check("strip_restores_caption", strip_annotations(res.caption) == rec.caption);
    report.check("annotation_count", parsed.size() + res.skipped.size() == rec.objects.size());
    out.push_back({{"image_id", rec.image_id}, {"fmt", fmt_i}, {"caption", res.caption}, {"skipped", res.skipped}});
  }
  report.lap("ground");
  report["records"] = rows.size();
  report["grounded"] = grounded;
  report["skipped"] = skipped;
  if (!out_path(cfg).empty()) write_json_lines(out_path(cfg), out);
}

// ---- pairs ------------------------------------------------------------------

void run_pairs(const json& cfg, Report& report) {
  const fs::path in = require_input(cfg, "in");
  std::vector<ScoredResponseSet> sets;
  for (const auto& row : read_json_lines(in)) sets.push_back(scored_set_from_json(row));
  PairStats st;
  const auto pairs = build_pairs(sets, get<double>(cfg, "threshold"), &st);
  report.lap("pairs");
  report["sets_in"] = st.sets_in;
  report["pairs"] = st.emitted;
  report["filtered_low_score"] = st.filtered_low_score;
  report["skipped"] = st.skipped;
  bool ordered = true;
  for (const auto& p : pairs) ordered = ordered && p.preferred_mean >= p.dispreferred_mean;
  report.check("preferred_not_below_dispreferred", ordered);
  report.check("counts_add_up", st.emitted + st.filtered_low_score + st.skipped.size() == st.sets_in);
  if (!out_path(cfg).empty()) {
    std::vector<json> rows;
    for (const auto& p : pairs) rows.push_back(to_json(p));
    write_json_lines(out_path(cfg), rows);
  }
}

// ---- train ------------------------------------------------------------------

void run_train(const json& cfg, Report& report) {
  const CorpusPaths corpus = corpus_arg(cfg, "corpus");
  const PipelineConfig pc = pipeline_arg(cfg);
  const auto docs = read_docs_jsonl(corpus.docs);
  const auto store = store_for(corpus.images, report);
  const VisionStub stub(pc.stub);
  const std::uint64_t stub_hash = stub.weights_hash();
  PackStats stats;
  const TrainBatch batch = build_batch(docs, *store, stub, pc, &stats);
  Model model = model_arg(cfg, pc);
  const std::uint64_t hash_resampler = model.resampler.hash();
  const std::uint64_t hash_decoder = model.decoder.hash();
  report.lap("prepare");

  const int steps = get<int>(cfg, "steps");
  if (steps < 0) throw UsageError("--steps must be non-negative");
  const double lr = get<double>(cfg, "lr");
  FrozenSet frozen;
  for (const auto& f : get<std::vector<std::string>>(cfg, "freeze")) frozen.prefixes.push_back(f);
  std::vector<json> log;
  for (int s = 0; s < steps; ++s) {
    const StepResult r = train_step(batch, model, lr, frozen);
    log.push_back({{"step", s}, {"loss", r.loss}, {"grad_norm", r.grad_norm}});
  }
  const double final_loss = batch_loss(batch, model);
  report.lap("train");

  report["docs"] = docs.size();
  report["sequences"] = batch.sequences.size();
  report["docs_rejected"] = stats.docs_rejected;
  report["steps"] = steps;
  report["initial_loss"] = log.empty() ? final_loss : log.front().at("loss").get<double>();
  report["final_loss"] = final_loss;
  report["vision_stub_hash"] = hex(stub_hash);
  report["resampler_changed"] = model.resampler.hash() != hash_resampler;
  report["decoder_changed"] = model.decoder.hash() != hash_decoder;
  report["model_hash"] = hex(model.hash());
  report.check("vision_stub_frozen", stub.weights_hash() == stub_hash);
  report.check("loss_finite", std::isfinite(final_loss));

  if (!out_path(cfg).empty()) {
    const fs::path dir = out_path(cfg);
    model.save(dir);
    stub.save(dir / "vision_stub.bin");
    write_json_lines(dir / "train_log.jsonl", log);
    report.lap("save");
  }
}

// ---- dpo --------------------------------------------------------------------

void run_dpo_cmd(const json& cfg, Report& report) {
  const fs::path pairs_path = require_input(cfg, "pairs");
  std::vector<PreferencePair> pairs;
  for (const auto& row : read_json_lines(pairs_path)) pairs.push_back(preference_pair_from_json(row));
  const PipelineConfig pc = pipeline_arg(cfg);

  const auto checkpoint = get<std::string>(cfg, "checkpoint");
  Model policy;
  std::optional<VisionStub> stub;
  if (checkpoint.empty()) {
    policy = model_arg(cfg, pc);
    stub.emplace(pc.stub);
  } else {
    if (!fs::is_directory(checkpoint)) throw UsageError("--checkpoint: no such directory: " + checkpoint);
    policy = Model::load(checkpoint);
    const fs::path stub_file = fs::path(checkpoint) / "vision_stub.bin";
    if (fs::exists(stub_file))
      stub.emplace(VisionStub::load(stub_file));
    else
      stub.emplace(pc.stub);
  }
  const Model reference = policy;
  const auto images = get<std::string>(cfg, "images");
  const auto store = store_for(images.empty() ? pairs_path.parent_path() / "images" : fs::path(images), report);

  PipelineConfig run_pc = pc;
  run_pc.base = stub->config().base;
  run_pc.m = policy.resampler.config.m;
  run_pc.tokenize.sampling = policy.sampling;
  DpoConfig dpo;
  dpo.beta = get<double>(cfg, "beta");
  dpo.lr = get<double>(cfg, "lr");
  dpo.epochs = get<int>(cfg, "epochs");
  dpo.noise_sigma = get<double>(cfg, "noise_sigma");
  dpo.noised_step = get<bool>(cfg, "noised_step");
  dpo.max_new_tokens = get<std::size_t>(cfg, "max_new_tokens");
  dpo.seed = get<std::uint64_t>(cfg, "seed");
  report.lap("prepare");

  const DpoReport r = run_dpo(pairs, policy, reference, *store, *stub, run_pc, dpo);
  report.lap("dpo");

  std::vector<json> log;
  bool finite = true;
  for (const auto& s : r.steps) {
    finite = finite && std::isfinite(s.loss) && std::isfinite(s.margin);
    log.push_back({{"instruction_id", s.instruction_id}, {"epoch", s.epoch}, {"stage", s.stage}, {"loss", s.loss},
                   {"margin", s.margin}});
  }
  report["pairs"] = pairs.size();
  report["steps"] = r.steps.size();
  report["mean_margin_before"] = r.mean_margin_before;
  report["mean_margin_after"] = r.mean_margin_after;
  report["reference_hash"] = hex(reference.hash());
  report["policy_hash"] = hex(policy.hash());
  report.check("losses_finite", finite);
  report.check("resampler_frozen", policy.resampler.hash() == reference.resampler.hash());

  if (!out_path(cfg).empty()) {
    const fs::path dir = out_path(cfg);
    policy.save(dir);
    stub->save(dir / "vision_stub.bin");
    write_json_lines(dir / "dpo_log.jsonl", log);
    std::vector<json> rows;
    for (const auto& p : pairs) rows.push_back(to_json(p));
    write_json_lines(dir / "pairs.jsonl", rows);
  }
}

// ---- report -----------------------------------------------------------------

void run_report(const json& cfg, Report& report) {
  fs::path index_path = require_input(cfg, "shards");
  if (fs::is_directory(index_path)) index_path /= "index.json";
  std::ifstream in(index_path);
  const json index = json::parse(in);
  const auto seqs = read_indexed_shards(index_path);
  report.lap("read");

  const std::size_t context = index.at("context").get<std::size_t>();
  std::size_t text = 0, vision = 0, pad = 0, loss = 0, spans = 0;
  json violations = json::array();
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    const auto& s = seqs[i];
    for (std::size_t p = 0; p < s.size(); ++p) {
      text += s.kinds[p] == TokenKind::Text;
      vision += s.kinds[p] == TokenKind::Vision;
      pad += s.kinds[p] == TokenKind::Pad;
      loss += s.loss_mask[p] != 0;
    }
    spans += s.vision_spans.size();
    const std::string v = check_sequence(s);
    if (!v.empty() && violations.size() < 10) violations.push_back({{"sequence", i}, {"violation", v}});
    report.check("sequences_well_formed", v.empty());
    report.check("context_length", s.size() == context);
  }
  report.lap("validate");
  report["index"] = index_path.string();
  report["sequences"] = seqs.size();
  report["text_tokens"] = text;
  report["vision_tokens"] = vision;
  report["vision_spans"] = spans;
  report["pad_tokens"] = pad;
  report["loss_tokens"] = loss;
  if (!violations.empty()) report["violations"] = violations;
  report.check("sequence_count_matches_index", seqs.size() == index.at("counts").at("sequences").get<std::size_t>());
}

// ---- lora -------------------------------------------------------------------

std::vector<MatrixShape> parse_shapes(const std::string& text) {
  std::vector<MatrixShape> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    MatrixShape s;
    const auto a = item.find(':');
    const auto b = item.find(':', a == std::string::npos ? a : a + 1);
    if (a == std::string::npos || b == std::string::npos) throw UsageError("--shapes entries look like name:d_in:d_out");
    try {
      s.name = item.substr(0, a);
      s.d_in = std::stoll(item.substr(a + 1, b - a - 1));
      s.d_out = std::stoll(item.substr(b + 1));
    } catch (const std::logic_error&) {
      throw UsageError("bad --shapes entry '" + item + "'");
    }
    out.push_back(s);
  }
  return out;
}

void run_lora(const json& cfg, Report& report) {
  const auto shapes = parse_shapes(get<std::string>(cfg, "shapes"));
  const LoraPlan plan = plan_lora(shapes, get<double>(cfg, "fraction"));
  report.lap("plan");
  report["plan"] = to_json(plan);
  std::int64_t brute = 0;
  for (const auto& s : shapes) brute += plan.rank * s.d_in + s.d_out * plan.rank;
  report.check("trainable_count", brute == plan.trainable_params);
  if (!out_path(cfg).empty()) write_json(out_path(cfg), to_json(plan));
}

// ---- safety -----------------------------------------------------------------

void run_safety(const json& cfg, Report& report) {
  std::vector<SafetyRecord> unsafe_pool;
  for (const auto& row : read_json_lines(require_input(cfg, "unsafe"))) unsafe_pool.push_back(safety_record_from_json(row));
  std::vector<SftExample> sft_pool;
  const auto sft = get<std::string>(cfg, "sft");
  if (!sft.empty())
    for (const auto& row : read_json_lines(require_input(cfg, "sft"))) sft_pool.push_back(sft_example_from_json(row));
  const auto unsafe_n = get<std::size_t>(cfg, "unsafe_n");
  const auto helpful_n = get<std::size_t>(cfg, "helpful_n");
  const auto seed = get<std::uint64_t>(cfg, "seed");
  const SafetyMixture mix = build_safety_mixture(unsafe_pool, sft_pool, unsafe_n, helpful_n, seed, get<int>(cfg, "epochs"));
  report.lap("mix");

  std::size_t objectionable = 0;
  for (const auto& u : mix.unsafe) objectionable += u.kind == UnsafeKind::ObjectionableImage;
  report["unsafe"] = mix.unsafe.size();
  report["objectionable_image"] = objectionable;
  report["safe_image"] = mix.unsafe.size() - objectionable;
  report["helpful"] = mix.helpful.size();
  report["epochs"] = mix.epochs;
  if (mix.helpful_missing) report["warning"] = "no helpful examples mixed in; expect over-refusal";
  std::set<std::string> ids;
  for (const auto& u : mix.unsafe) ids.insert("u:" + u.id);
  for (const auto& h : mix.helpful) ids.insert("h:" + h.id);
  report.check("composition", mix.unsafe.size() == unsafe_n && mix.helpful.size() == helpful_n);
  report.check("no_duplicates", ids.size() == unsafe_n + helpful_n);

  if (!out_path(cfg).empty()) {
    std::vector<json> rows;
    for (int e = 0; e < mix.epochs; ++e) rows.push_back({{"epoch", e}, {"order", mix.epoch_order(e, seed)}});
    write_json_lines(out_path(cfg), rows);
  }
}

}  // namespace

const std::vector<Command>& commands() {
  static const std::vector<Command> all = {
      {"plan", "choose the any-resolution patch grid for an image",
       [](ParamSet& p) {
         declare_image(p);
         declare_tiling(p, 384, 9);
         p.add<int>("vit_patch", 14, "vision encoder cell size");
         p.add<int>("m", 128, "resampler query count");
       },
       run_plan},
      {"resample", "encode an image with the vision stub and run the resampler",
       [](ParamSet& p) {
         declare_image(p);
         declare_tiling(p, 384, 9);
         p.add<int>("vit_patch", 14, "vision stub cell size");
         p.add<int>("d", 16, "embedding width");
         p.add<int>("m", 128, "query count");
         p.add<int>("layers", 2, "resampler layers");
         p.add<int>("heads", 4, "attention heads");
         p.add<std::string>("sampling", "per-patch", "per-patch, fixed or instruction");
         p.add<std::string>("instruction", "", "instruction text for instruction-aware sampling");
         p.add<std::string>("stub", "", "vision stub weights file");
         p.add<std::string>("params", "", "resampler weights file");
       },
       run_resample},
      {"pack", "tokenize an interleaved corpus and pack it into shards",
       [](ParamSet& p) {
         p.add<std::string>("corpus", "", "docs JSONL or a directory holding docs.jsonl");
         declare_tiling(p, 384, 9);
         p.add<int>("m", 128, "resampler query count");
         p.add<std::size_t>("context", 2048, "context length C");
         p.add<std::string>("sampling", "per-patch", "per-patch or fixed");
         p.add<std::string>("mask", "pretrain", "pretrain or sft");
         p.add<std::size_t>("per_shard", 256, "sequences per shard file");
       },
       run_pack},
      {"mix", "interleave sources at configured weights",
       [](ParamSet& p) {
         p.add<std::string>("spec", "", "mixture spec (TOML or JSON)");
         p.add<std::size_t>("n", 1000, "number of draws");
         p.add<std::string>("on_exhaust", "", "wrap or drop; overrides the spec");
       },
       run_mix},
      {"ocr", "render OCR captions at one granularity level",
       [](ParamSet& p) {
         p.add<std::string>("in", "", "OCR records JSONL");
         p.add<int>("level", 0, "0 word, 1 word+bbox, 2 line, 3 line+bbox, 4 full, 5 full+bbox");
       },
       run_ocr},
      {"ground", "attach grounding info to object mentions",
       [](ParamSet& p) {
         p.add<std::string>("in", "", "grounding records JSONL");
         p.add<int>("fmt", 1, "1 bbox tag, 2 starts/extends, 3 region name");
       },
       run_ground},
      {"pairs", "build preference pairs from scored responses",
       [](ParamSet& p) {
         p.add<std::string>("in", "", "scored response sets JSONL");
         p.add<double>("threshold", kDefaultPairThreshold, "minimum preferred mean score");
       },
       run_pairs},
      {"train", "train resampler and decoder on a toy corpus with a frozen vision stub",
       [](ParamSet& p) {
         p.add<std::string>("corpus", "", "corpus directory (docs.jsonl + images/) or docs JSONL");
         declare_pipeline(p);
         p.add<int>("steps", 50, "full-batch SGD steps");
         p.add<double>("lr", 0.1, "learning rate");
         p.add<std::vector<std::string>>("freeze", {}, "tensor-name prefixes to keep fixed");
       },
       run_train},
      {"dpo", "preference-tune a checkpoint against a frozen reference",
       [](ParamSet& p) {
         p.add<std::string>("pairs", "", "preference pairs JSONL");
         p.add<std::string>("images", "", "image directory (default: images/ next to the pairs)");
         p.add<std::string>("checkpoint", "", "model directory from train; fresh weights when empty");
         declare_pipeline(p);
         p.add<double>("beta", 0.1, "DPO temperature");
         p.add<double>("lr", 0.05, "learning rate");
         p.add<int>("epochs", 1, "passes over the pairs");
         p.add<double>("noise_sigma", 0.5, "noise std on [0,1] pixels for the noised-image step");
         p.add<bool>("noised_step", true, "add the noised-image dispreferred step");
         p.add<std::size_t>("max_new_tokens", 24, "greedy decode budget for the noised-image answer");
       },
       run_dpo_cmd},
      {"report", "validate packed shards",
       [](ParamSet& p) { p.add<std::string>("shards", "", "index.json or its directory"); },
       run_report},
      {"lora", "plan a uniform LoRA rank for a trainable fraction",
       [](ParamSet& p) {
         p.add<std::string>("shapes", "wq:256:256,wk:256:256,wv:256:256,wo:256:256,ff_in:256:1024,ff_out:1024:256",
                            "target matrices as name:d_in:d_out, comma separated");
         p.add<double>("fraction", 0.025, "target trainable fraction");
       },
       run_lora},
      {"safety", "compose a safety fine-tuning mixture",
       [](ParamSet& p) {
         p.add<std::string>("unsafe", "", "safety records JSONL");
         p.add<std::string>("sft", "", "helpful SFT examples JSONL");
         p.add<std::size_t>("unsafe_n", 2000, "unsafe records to sample");
         p.add<std::size_t>("helpful_n", 5000, "helpful examples to sample");
         p.add<int>("epochs", 3, "fine-tuning epochs");
       },
       run_safety},
  };
  return all;
}

}  // namespace forge::cli
