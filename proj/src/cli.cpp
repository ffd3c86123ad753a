#include "zerolight/cli.hpp"

#include "zerolight/config.hpp"
#include "zerolight/data_pipeline.hpp"
#include "zerolight/encoder.hpp"
#include "zerolight/enhance.hpp"
#include "zerolight/errors.hpp"
#include "zerolight/image_io.hpp"
#include "zerolight/model_io.hpp"
#include "zerolight/plot.hpp"
#include "zerolight/prompt_prior.hpp"
#include "zerolight/tensor_archive.hpp"
#include "zerolight/training.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#ifndef ZEROLIGHT_VERSION
#define ZEROLIGHT_VERSION "unknown"
#endif

namespace zerolight {

namespace fs = std::filesystem;

namespace {

struct EncoderArgs {
  std::string kind = "stub";
  std::string clip_weights;
  std::string clip_vocab;
  int clip_vision_heads = 0;
  int clip_text_heads = 0;
  int stub_resolution = 32;
  int stub_dim = 64;
  int stub_token_width = 64;

  void add_to(CLI::App* app) {
    app->add_option("--encoder", kind, "Encoder: stub or clip")->check(CLI::IsMember({"stub", "clip"}));
    app->add_option("--clip-weights", clip_weights, "CLIP checkpoint (safetensors, CLIPModel names)");
    app->add_option("--clip-vocab", clip_vocab, "BPE vocabulary (bpe_simple_vocab_16e6.txt[.gz])");
    app->add_option("--clip-vision-heads", clip_vision_heads, "Vision attention heads (0: width / 64)");
    app->add_option("--clip-text-heads", clip_text_heads, "Text attention heads (0: width / 64)");
    app->add_option("--stub-resolution", stub_resolution, "Stub encoder input side");
    app->add_option("--stub-dim", stub_dim, "Stub embedding size");
    app->add_option("--stub-token-width", stub_token_width, "Stub prompt token width");
  }

  EncoderConfig config() const {
    EncoderConfig c;
    c.kind = kind;
    c.clip_weights = clip_weights;
    c.clip_vocab = clip_vocab;
    c.clip_vision_heads = clip_vision_heads;
    c.clip_text_heads = clip_text_heads;
    c.stub_resolution = stub_resolution;
    c.stub_dim = stub_dim;
    c.stub_token_width = stub_token_width;
    return c;
  }

  nlohmann::json to_json() const {
    nlohmann::json j = {{"kind", kind}};
    if (kind == "clip") {
      j["clip_weights"] = clip_weights;
      j["clip_vocab"] = clip_vocab;
      j["clip_vision_heads"] = clip_vision_heads;
      j["clip_text_heads"] = clip_text_heads;
    } else {
      j["stub_resolution"] = stub_resolution;
      j["stub_dim"] = stub_dim;
      j["stub_token_width"] = stub_token_width;
    }
    return j;
  }
};

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Refuses to clobber existing outputs unless forced.
void guard_outputs(const std::vector<fs::path>& outputs, bool force) {
  if (force) return;
  for (const auto& p : outputs) {
    if (fs::exists(p)) throw ConfigError("output exists: " + p.string() + " (use --force to overwrite)");
  }
}

void write_run_manifest(const fs::path& path, const std::string& command, const std::vector<std::string>& args,
                        const nlohmann::json& config, std::uint64_t seed, const std::vector<fs::path>& outputs) {
  nlohmann::json outs = nlohmann::json::array();
  for (const auto& o : outputs) outs.push_back(o.string());
  const nlohmann::json manifest = {{"command", command},     {"arguments", args},
                                   {"config", config},       {"seed", seed},
                                   {"code_version", ZEROLIGHT_VERSION}, {"outputs", outs},
                                   {"started_at", utc_now()}};
  write_json_atomic(path, manifest);
}

std::vector<fs::path> collect_inputs(const fs::path& in, fs::path& base) {
  if (fs::is_directory(in)) {
    base = in;
    return list_images(in);
  }
  if (fs::is_regular_file(in)) {
    base = in.parent_path();
    return {in};
  }
  throw ConfigError("input not found: " + in.string());
}

/// Applies `fn` to every input image with a worker pool. Output paths mirror
/// the input layout under out_dir. Returns per-image summaries in input order.
struct ImageJobResult {
  fs::path input;
  fs::path output;
  bool ok = false;
  std::string error;
  double mean_before = 0;
  double mean_after = 0;
};

std::vector<ImageJobResult> process_images(const std::vector<fs::path>& inputs, const fs::path& base,
                                           const fs::path& out_dir, int workers,
                                           const std::function<Imagef(const Imagef&)>& fn) {
  std::vector<ImageJobResult> results(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    results[i].input = inputs[i];
    results[i].output = out_dir / fs::relative(inputs[i], base);
  }
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < inputs.size(); i = next++) {
      auto& r = results[i];
      try {
        const Imagef img = load_image(r.input);
        const Imagef out = fn(img);
        save_image(r.output, out);
        r.mean_before = img.planes().cast<double>().mean();
        r.mean_after = out.planes().cast<double>().mean();
        r.ok = true;
      } catch (const std::exception& e) {
        r.error = e.what();
      }
    }
  };
  const int n = std::max(1, std::min<int>(workers, static_cast<int>(inputs.size())));
  std::vector<std::thread> threads;
  for (int t = 1; t < n; ++t) threads.emplace_back(work);
  work();
  for (auto& t : threads) t.join();
  return results;
}

nlohmann::json summarize(const std::vector<ImageJobResult>& results, std::size_t& failed) {
  nlohmann::json images = nlohmann::json::array();
  failed = 0;
  for (const auto& r : results) {
    if (r.ok) {
      images.push_back({{"input", r.input.string()},
                        {"output", r.output.string()},
                        {"mean_brightness_before", r.mean_before},
                        {"mean_brightness_after", r.mean_after}});
    } else {
      ++failed;
      images.push_back({{"input", r.input.string()}, {"error", r.error}});
    }
  }
  return {{"processed", results.size() - failed}, {"failed", failed}, {"images", images}};
}

std::vector<fs::path> planned_outputs(const std::vector<fs::path>& inputs, const fs::path& base,
                                      const fs::path& out_dir) {
  std::vector<fs::path> outs;
  for (const auto& in : inputs) outs.push_back(out_dir / fs::relative(in, base));
  return outs;
}

// ---------------------------------------------------------------------------

struct TrainPromptsArgs {
  std::string data;
  std::string out;
  long long steps = 5000;
  double lr = 1e-3;
  int batch = 8;
  int prompt_length = 16;
  int crop = 0;
  int factor = 4;
  std::uint64_t seed = 0;
  std::vector<double> brightness{0.3, 1.5};
  std::vector<double> contrast{0.5, 1.5};
  std::vector<double> hue{-0.1, 0.1};
  bool force = false;
  EncoderArgs encoder;
};

int cmd_train_prompts(const TrainPromptsArgs& a, const std::vector<std::string>& argv, std::ostream& out) {
  if (!fs::is_directory(a.data)) throw ConfigError("--data is not a directory: " + a.data);
  PromptTrainConfig cfg;
  cfg.steps = a.steps;
  cfg.lr = a.lr;
  cfg.batch_size = a.batch;
  cfg.prompt_length = a.prompt_length;
  cfg.crop_size = a.crop;
  cfg.factor = a.factor;
  cfg.seed = a.seed;
  cfg.augmentation.brightness = {a.brightness.at(0), a.brightness.at(1)};
  cfg.augmentation.contrast = {a.contrast.at(0), a.contrast.at(1)};
  cfg.augmentation.hue = {a.hue.at(0), a.hue.at(1)};
  cfg.augmentation.seed = a.seed;
  cfg.validate();

  const fs::path ckpt = a.out;
  const fs::path csv = fs::path(a.out + ".loss.csv");
  const fs::path manifest = fs::path(a.out + ".run.json");
  const std::vector<fs::path> outputs{ckpt, sidecar_path(ckpt), csv, manifest};
  guard_outputs(outputs, a.force);

  const auto enc = make_encoder<float>(a.encoder.config());
  const nlohmann::json config = {{"data", a.data},
                                 {"steps", cfg.steps},
                                 {"lr", cfg.lr},
                                 {"batch_size", cfg.batch_size},
                                 {"prompt_length", cfg.prompt_length},
                                 {"crop_size", cfg.crop_size > 0 ? cfg.crop_size : cfg.factor * enc->input_resolution()},
                                 {"factor", cfg.factor},
                                 {"augmentation",
                                  {{"brightness", a.brightness}, {"contrast", a.contrast}, {"hue", a.hue}}},
                                 {"encoder", a.encoder.to_json()},
                                 {"encoder_variant", enc->variant()},
                                 {"encoder_checksum", enc->weights_checksum()}};
  write_run_manifest(manifest, "train-prompts", argv, config, a.seed, outputs);

  std::vector<Imagef> corpus;
  std::size_t unreadable = 0;
  for (const auto& p : list_images(a.data)) {
    try {
      corpus.push_back(load_image(p));
    } catch (const std::exception&) {
      ++unreadable;
    }
  }
  if (corpus.empty()) throw ConfigError("no readable images under " + a.data);
  if (unreadable) out << "skipped " << unreadable << " unreadable images\n";

  std::ostringstream log;
  log << "step,loss\n";
  const auto result = train_prompts(corpus, *enc, cfg, [&](const PromptTrainStep& s) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%lld,%.9g\n", s.step, s.loss);
    log << buf;
  });
  save_prompts(ckpt, result.prompts);
  write_text_atomic(csv, log.str());
  if (!result.history.empty()) {
    out << "trained prompts for " << cfg.steps << " steps, final loss " << result.history.back().loss << "\n";
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::vector<std::string> data;
  std::vector<double> data_weights;
  std::string out_dir;
  std::string prompts;
  std::string resume;
  std::string ablation;
  double min_score = 0.3;
  int min_context = 64;
  bool force = false;
  EncoderArgs encoder;
  // Overrides; unset ones keep the config-file value.
  std::optional<long long> steps;
  std::optional<int> batch;
  std::optional<int> patch_size;
  std::optional<double> lr;
  std::optional<double> weight_decay;
  std::optional<double> grad_clip;
  std::optional<long long> checkpoint_every;
  std::optional<int> workers;
  std::optional<std::uint64_t> seed;
  std::optional<double> lambda_exp, lambda_spa, lambda_rgb, lambda_tv, lambda_cls, lambda_prompt;
};

int cmd_train(const TrainArgs& a, const std::vector<std::string>& argv, std::ostream& out) {
  TrainConfig cfg;
  if (!a.config.empty()) cfg = train_config_from_json(read_toml_file(a.config));
  if (!a.ablation.empty()) cfg.weights = apply_ablation(cfg.weights, a.ablation);
  if (a.steps) cfg.steps = *a.steps;
  if (a.batch) cfg.batch_size = *a.batch;
  if (a.patch_size) cfg.patch_size = *a.patch_size;
  if (a.lr) cfg.lr = *a.lr;
  if (a.weight_decay) cfg.weight_decay = *a.weight_decay;
  if (a.grad_clip) cfg.grad_clip = *a.grad_clip;
  if (a.checkpoint_every) cfg.checkpoint_every = *a.checkpoint_every;
  if (a.workers) cfg.workers = *a.workers;
  if (a.seed) cfg.seed = *a.seed;
  if (a.lambda_exp) cfg.weights.lambda_exp = *a.lambda_exp;
  if (a.lambda_spa) cfg.weights.lambda_spa = *a.lambda_spa;
  if (a.lambda_rgb) cfg.weights.lambda_rgb = *a.lambda_rgb;
  if (a.lambda_tv) cfg.weights.lambda_tv = *a.lambda_tv;
  if (a.lambda_cls) cfg.weights.lambda_cls = *a.lambda_cls;
  if (a.lambda_prompt) cfg.weights.lambda_prompt = *a.lambda_prompt;
  cfg.validate();

  if (!a.data_weights.empty() && a.data_weights.size() != a.data.size()) {
    throw ConfigError("--data-weight must be given once per --data or not at all");
  }
  if (cfg.weights.lambda_prompt > 0) {
    if (a.prompts.empty()) throw ConfigError("lambda_prompt > 0 requires --prompts");
    if (!fs::exists(a.prompts)) throw ConfigError("prompt checkpoint not found: " + a.prompts);
  }
  if (!a.resume.empty() && !fs::exists(a.resume)) throw ConfigError("checkpoint not found: " + a.resume);

  const fs::path out_dir = a.out_dir;
  const fs::path manifest = out_dir / "run.json";
  const std::vector<fs::path> outputs{manifest, out_dir / "loss.csv", out_dir / "model.safetensors",
                                      out_dir / "checkpoints"};
  // A resumed run keeps the original manifest and writes its own.
  if (a.resume.empty()) guard_outputs(outputs, a.force);

  std::vector<DatasetSpec> datasets;
  AnnotationOptions aopts;
  aopts.min_score = a.min_score;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    DatasetSpec d;
    d.id = fs::path(a.data[i]).stem().string();
    d.records = load_annotations(a.data[i], aopts);
    d.weight = a.data_weights.empty() ? 0.0 : a.data_weights[i];
    datasets.push_back(std::move(d));
  }

  std::shared_ptr<const Encoder<float>> enc;
  if (cfg.weights.uses_encoder()) enc = make_encoder<float>(a.encoder.config());
  std::optional<LearnedPromptPair<float>> prompts;
  if (cfg.weights.lambda_prompt > 0) {
    prompts = load_prompts(a.prompts);
    if (prompts->metadata.encoder_variant != enc->variant()) {
      throw ConfigError("prompt checkpoint was trained with encoder " + prompts->metadata.encoder_variant +
                        ", not " + enc->variant());
    }
  }

  nlohmann::json config = to_json(cfg);
  config["data"] = a.data;
  config["data_weights"] = a.data_weights;
  config["min_score"] = a.min_score;
  config["min_context"] = a.min_context;
  config["prompts"] = a.prompts;
  config["resume"] = a.resume;
  if (enc) {
    config["encoder"] = a.encoder.to_json();
    config["encoder_variant"] = enc->variant();
    config["encoder_checksum"] = enc->weights_checksum();
  }
  const fs::path manifest_path =
      a.resume.empty() ? manifest : out_dir / ("run.resume_" + fs::path(a.resume).stem().string() + ".json");
  guard_outputs({manifest_path}, a.force);
  write_run_manifest(manifest_path, "train", argv, config, cfg.seed, outputs);

  PatchOptions popts;
  popts.out_size = cfg.patch_size;
  popts.min_context = a.min_context;
  popts.workers = cfg.workers;
  MixtureStream stream(std::move(datasets), cfg.seed, popts);
  Trainer trainer(cfg, stream, out_dir, enc, prompts);
  if (!a.resume.empty()) trainer.resume(a.resume);
  const long long every = std::max<long long>(1, cfg.steps / 20);
  trainer.run([&](const StepRecord& r) {
    if (r.step % every == 0 || r.step == cfg.steps) out << loss_csv_row(r) << "\n";
  });
  out << "wrote " << trainer.model_path().string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct EnhanceArgs {
  std::uint64_t seed = 0;
  std::string model;
  std::string in;
  std::string out;
  int workers = 1;
  bool force = false;
};

int cmd_enhance(const EnhanceArgs& a, const std::vector<std::string>& argv, std::ostream& out) {
  if (!fs::exists(a.model)) throw ConfigError("model not found: " + a.model);
  if (a.workers < 1) throw ConfigError("--workers must be positive");
  fs::path base;
  const auto inputs = collect_inputs(a.in, base);
  if (inputs.empty()) throw ConfigError("no images under " + a.in);
  const fs::path out_dir = a.out;
  auto outputs = planned_outputs(inputs, base, out_dir);
  outputs.push_back(out_dir / "summary.json");
  outputs.push_back(out_dir / "run.json");
  guard_outputs(outputs, a.force);
  const CurveNetworkf net = load_curve_network(a.model);
  write_run_manifest(out_dir / "run.json", "enhance", argv,
                     {{"model", a.model}, {"in", a.in}, {"workers", a.workers}}, a.seed, outputs);
  const auto results =
      process_images(inputs, base, out_dir, a.workers, [&](const Imagef& img) { return enhance_image(img, net); });
  std::size_t failed = 0;
  const auto summary = summarize(results, failed);
  write_json_atomic(out_dir / "summary.json", summary);
  out << "enhanced " << results.size() - failed << " of " << results.size() << " images\n";
  return failed == results.size() ? kExitRuntime : kExitOk;
}

struct HisteqArgs {
  std::uint64_t seed = 0;
  std::string in;
  std::string out;
  int workers = 1;
  bool force = false;
};

int cmd_histeq(const HisteqArgs& a, const std::vector<std::string>& argv, std::ostream& out) {
  if (a.workers < 1) throw ConfigError("--workers must be positive");
  fs::path base;
  const auto inputs = collect_inputs(a.in, base);
  if (inputs.empty()) throw ConfigError("no images under " + a.in);
  const fs::path out_dir = a.out;
  auto outputs = planned_outputs(inputs, base, out_dir);
  outputs.push_back(out_dir / "summary.json");
  outputs.push_back(out_dir / "run.json");
  guard_outputs(outputs, a.force);
  write_run_manifest(out_dir / "run.json", "histeq", argv, {{"in", a.in}, {"workers", a.workers}}, a.seed, outputs);
  const auto results = process_images(inputs, base, out_dir, a.workers, histogram_equalization);
  std::size_t failed = 0;
  write_json_atomic(out_dir / "summary.json", summarize(results, failed));
  out << "equalized " << results.size() - failed << " of " << results.size() << " images\n";
  return failed == results.size() ? kExitRuntime : kExitOk;
}

struct StatsArgs {
  std::uint64_t seed = 0;
  std::vector<std::string> data;
  std::string out_json;
  std::string out_plot;
  double min_score = 0.3;
  bool force = false;
};

int cmd_stats(const StatsArgs& a, const std::vector<std::string>& argv, std::ostream& out) {
  const fs::path json_path = a.out_json;
  const fs::path plot_path = a.out_plot;
  const fs::path manifest = fs::path(a.out_json + ".run.json");
  const std::vector<fs::path> outputs{json_path, plot_path, manifest};
  guard_outputs(outputs, a.force);
  for (const auto& d : a.data) {
    if (!fs::exists(d)) throw ConfigError("dataset not found: " + d);
  }
  write_run_manifest(manifest, "stats", argv, {{"data", a.data}, {"min_score", a.min_score}}, a.seed, outputs);
  AnnotationOptions opts;
  opts.min_score = a.min_score;
  std::vector<StatsInput> inputs;
  for (const auto& d : a.data) inputs.push_back(stats_input_from_path(d, opts));
  const DatasetStats stats = compute_stats(inputs);
  write_json_atomic(json_path, stats_to_json(stats));
  render_brightness_histogram(stats, plot_path);
  for (const auto& e : stats.datasets) {
    out << e.id << ": " << e.samples << " samples (" << e.proportion * 100 << "%), " << e.images << " images";
    if (e.unreadable) out << ", " << e.unreadable << " unreadable";
    out << "\n";
  }
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Zero-reference low-light enhancement with vision-language guidance", "zerolight"};
  app.require_subcommand(1);

  TrainPromptsArgs tp;
  auto* sub_tp = app.add_subcommand("train-prompts", "Learn the positive/negative prompt pair (stage 1)");
  sub_tp->add_option("--data", tp.data, "Directory of low-light images")->required();
  sub_tp->add_option("--out", tp.out, "Prompt checkpoint path")->required();
  sub_tp->add_option("--steps", tp.steps, "Optimization steps")->capture_default_str();
  sub_tp->add_option("--lr", tp.lr, "Adam learning rate")->capture_default_str();
  sub_tp->add_option("--batch", tp.batch, "Crops per step")->capture_default_str();
  sub_tp->add_option("--prompt-length", tp.prompt_length, "Tokens per prompt")->capture_default_str();
  sub_tp->add_option("--crop", tp.crop, "Crop side (0: factor x encoder resolution)")->capture_default_str();
  sub_tp->add_option("--factor", tp.factor, "Pooling / subsampling factor")->capture_default_str();
  sub_tp->add_option("--brightness", tp.brightness, "Brightness factor range")->expected(2);
  sub_tp->add_option("--contrast", tp.contrast, "Contrast factor range")->expected(2);
  sub_tp->add_option("--hue", tp.hue, "Hue shift range (fraction of the circle)")->expected(2);
  sub_tp->add_option("--seed", tp.seed, "Random seed")->capture_default_str();
  sub_tp->add_flag("--force", tp.force, "Overwrite existing outputs");
  tp.encoder.add_to(sub_tp);

  TrainArgs tr;
  auto* sub_tr = app.add_subcommand("train", "Train the curve estimator (stage 2)");
  sub_tr->add_option("--data", tr.data, "Annotation manifest (repeatable)")->required();
  sub_tr->add_option("--data-weight", tr.data_weights, "Sampling weight per --data (default: instance counts)");
  sub_tr->add_option("--out-dir", tr.out_dir, "Output directory")->required();
  sub_tr->add_option("--config", tr.config, "TOML training config");
  sub_tr->add_option("--prompts", tr.prompts, "Prompt checkpoint from train-prompts");
  sub_tr->add_option("--resume", tr.resume, "Training checkpoint to resume from");
  sub_tr->add_option("--ablation", tr.ablation, "Semantic terms: baseline, cls, prompt or full")
      ->check(CLI::IsMember({"baseline", "cls", "prompt", "full"}));
  sub_tr->add_option("--steps", tr.steps, "Training steps");
  sub_tr->add_option("--batch", tr.batch, "Batch size");
  sub_tr->add_option("--patch-size", tr.patch_size, "Patch side");
  sub_tr->add_option("--lr", tr.lr, "Learning rate");
  sub_tr->add_option("--weight-decay", tr.weight_decay, "Adam weight decay");
  sub_tr->add_option("--grad-clip", tr.grad_clip, "Global gradient norm limit");
  sub_tr->add_option("--checkpoint-every", tr.checkpoint_every, "Checkpoint cadence in steps");
  sub_tr->add_option("--workers", tr.workers, "Worker threads");
  sub_tr->add_option("--seed", tr.seed, "Random seed");
  sub_tr->add_option("--lambda-exp", tr.lambda_exp, "Exposure weight");
  sub_tr->add_option("--lambda-spa", tr.lambda_spa, "Spatial consistency weight");
  sub_tr->add_option("--lambda-rgb", tr.lambda_rgb, "Colour constancy weight");
  sub_tr->add_option("--lambda-tv", tr.lambda_tv, "Illumination smoothness weight");
  sub_tr->add_option("--lambda-cls", tr.lambda_cls, "Semantic (class) weight");
  sub_tr->add_option("--lambda-prompt", tr.lambda_prompt, "Learned-prior weight");
  sub_tr->add_option("--min-score", tr.min_score, "Minimum detection score")->capture_default_str();
  sub_tr->add_option("--min-context", tr.min_context, "Minimum crop side around small boxes")->capture_default_str();
  sub_tr->add_flag("--force", tr.force, "Overwrite existing outputs");
  tr.encoder.add_to(sub_tr);

  EnhanceArgs en;
  auto* sub_en = app.add_subcommand("enhance", "Enhance images with a trained model");
  sub_en->add_option("--model", en.model, "Model checkpoint")->required();
  sub_en->add_option("--in", en.in, "Input image or directory")->required();
  sub_en->add_option("--out", en.out, "Output directory")->required();
  sub_en->add_option("--workers", en.workers, "Worker threads")->capture_default_str();
  sub_en->add_option("--seed", en.seed, "Recorded in the run manifest (the command is deterministic)");
  sub_en->add_flag("--force", en.force, "Overwrite existing outputs");

  StatsArgs st;
  auto* sub_st = app.add_subcommand("stats", "Dataset proportions and brightness histograms");
  sub_st->add_option("--data", st.data, "Manifest or image directory (repeatable)")->required();
  sub_st->add_option("--out-json", st.out_json, "Statistics JSON")->required();
  sub_st->add_option("--out-plot", st.out_plot, "Histogram image (PNG)")->required();
  sub_st->add_option("--min-score", st.min_score, "Minimum detection score")->capture_default_str();
  sub_st->add_option("--seed", st.seed, "Recorded in the run manifest (the command is deterministic)");
  sub_st->add_flag("--force", st.force, "Overwrite existing outputs");

  HisteqArgs he;
  auto* sub_he = app.add_subcommand("histeq", "Histogram-equalization baseline");
  sub_he->add_option("--in", he.in, "Input image or directory")->required();
  sub_he->add_option("--out", he.out, "Output directory")->required();
  sub_he->add_option("--workers", he.workers, "Worker threads")->capture_default_str();
  sub_he->add_option("--seed", he.seed, "Recorded in the run manifest (the command is deterministic)");
  sub_he->add_flag("--force", he.force, "Overwrite existing outputs");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    const auto parsed = app.get_subcommands();
    out << (parsed.empty() ? app.help() : parsed.front()->help());
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    const auto parsed = app.get_subcommands();
    err << (parsed.empty() ? app.help() : parsed.front()->help());
    return kExitConfig;
  }

  try {
    if (*sub_tp) return cmd_train_prompts(tp, args, out);
    if (*sub_tr) return cmd_train(tr, args, out);
    if (*sub_en) return cmd_enhance(en, args, out);
    if (*sub_st) return cmd_stats(st, args, out);
    if (*sub_he) return cmd_histeq(he, args, out);
  } catch (const ConfigError& e) {
    err << "configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ParseError& e) {
    err << "configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NonFiniteLoss& e) {
    err << "error: " << e.what() << "\nbatch:";
    for (const auto& id : e.batch_ids()) err << " " << id;
    err << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitConfig;
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace zerolight
