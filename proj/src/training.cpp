#include "zerolight/training.hpp"

#include "zerolight/errors.hpp"
#include "zerolight/model_io.hpp"
#include "zerolight/tensor_archive.hpp"

#include <nlohmann/json.hpp>

#include <cstdio>
#include <fstream>
#include <regex>
#include <set>
#include <sstream>
#include <thread>

namespace zerolight {

void LossWeights::validate() const {
  for (double w : {lambda_exp, lambda_spa, lambda_rgb, lambda_tv, lambda_cls, lambda_prompt}) {
    if (!(w >= 0) || !std::isfinite(w)) throw ConfigError("loss weights must be finite and non-negative");
  }
}

LossWeights apply_ablation(LossWeights w, const std::string& preset) {
  if (preset == "baseline") {
    w.lambda_cls = 0;
    w.lambda_prompt = 0;
  } else if (preset == "cls") {
    w.lambda_cls = 1;
    w.lambda_prompt = 0;
  } else if (preset == "prompt") {
    w.lambda_cls = 0;
    w.lambda_prompt = 1;
  } else if (preset == "full") {
    w.lambda_cls = 1;
    w.lambda_prompt = 1;
  } else {
    throw ConfigError("unknown ablation '" + preset + "' (expected baseline, cls, prompt or full)");
  }
  return w;
}

double LossBreakdown::weighted_total(const LossWeights& w) const {
  double t = w.lambda_exp * exp + w.lambda_spa * spa + w.lambda_rgb * rgb + w.lambda_tv * tv;
  if (cls) t += w.lambda_cls * *cls;
  if (prompt) t += w.lambda_prompt * *prompt;
  return t;
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  if (patch_size < 1) throw ConfigError("patch_size must be positive");
  if (steps < 0) throw ConfigError("steps must be non-negative");
  if (!(lr > 0) || !std::isfinite(lr)) throw ConfigError("lr must be positive");
  if (!(weight_decay >= 0) || !std::isfinite(weight_decay)) throw ConfigError("weight_decay must be non-negative");
  if (!(grad_clip > 0) || !std::isfinite(grad_clip)) throw ConfigError("grad_clip must be positive");
  if (checkpoint_every < 1) throw ConfigError("checkpoint_every must be positive");
  if (keep_last < 1) throw ConfigError("keep_last must be positive");
  if (workers < 1) throw ConfigError("workers must be positive");
  if (n_iterations < 1 || channel_width < 1) throw ConfigError("network shape must be positive");
  weights.validate();
  try {
    exposure.validate();
    spatial.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (patch_size < exposure.patch_size || patch_size < spatial.region_size) {
    throw ConfigError("patch_size is smaller than the exposure patch or spatial region");
  }
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"batch_size", c.batch_size},
          {"patch_size", c.patch_size},
          {"steps", c.steps},
          {"lr", c.lr},
          {"weight_decay", c.weight_decay},
          {"grad_clip", c.grad_clip},
          {"seed", c.seed},
          {"checkpoint_every", c.checkpoint_every},
          {"keep_last", c.keep_last},
          {"workers", c.workers},
          {"n_iterations", c.n_iterations},
          {"channel_width", c.channel_width},
          {"weights",
           {{"lambda_exp", c.weights.lambda_exp},
            {"lambda_spa", c.weights.lambda_spa},
            {"lambda_rgb", c.weights.lambda_rgb},
            {"lambda_tv", c.weights.lambda_tv},
            {"lambda_cls", c.weights.lambda_cls},
            {"lambda_prompt", c.weights.lambda_prompt}}},
          {"exposure", {{"patch_size", c.exposure.patch_size}, {"target", c.exposure.target}}},
          {"spatial", {{"region_size", c.spatial.region_size}}}};
}

namespace {

template <typename T>
void read_field(const nlohmann::json& j, const char* key, T& out, std::set<std::string>& seen) {
  if (!j.contains(key)) return;
  seen.insert(key);
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(std::string("config: wrong type for '") + key + "'");
  }
}

void reject_unknown(const nlohmann::json& j, const std::set<std::string>& seen, const std::string& where) {
  for (const auto& [k, v] : j.items()) {
    if (!seen.count(k)) throw ConfigError("config: unknown key '" + where + k + "'");
  }
}

}  // namespace

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c) {
  if (!j.is_object()) throw ConfigError("config: expected a table");
  std::set<std::string> seen;
  read_field(j, "batch_size", c.batch_size, seen);
  read_field(j, "patch_size", c.patch_size, seen);
  read_field(j, "steps", c.steps, seen);
  read_field(j, "lr", c.lr, seen);
  read_field(j, "weight_decay", c.weight_decay, seen);
  read_field(j, "grad_clip", c.grad_clip, seen);
  read_field(j, "seed", c.seed, seen);
  read_field(j, "checkpoint_every", c.checkpoint_every, seen);
  read_field(j, "keep_last", c.keep_last, seen);
  read_field(j, "workers", c.workers, seen);
  read_field(j, "n_iterations", c.n_iterations, seen);
  read_field(j, "channel_width", c.channel_width, seen);
  if (j.contains("weights")) {
    seen.insert("weights");
    const auto& w = j.at("weights");
    if (!w.is_object()) throw ConfigError("config: [weights] must be a table");
    std::set<std::string> ws;
    read_field(w, "lambda_exp", c.weights.lambda_exp, ws);
    read_field(w, "lambda_spa", c.weights.lambda_spa, ws);
    read_field(w, "lambda_rgb", c.weights.lambda_rgb, ws);
    read_field(w, "lambda_tv", c.weights.lambda_tv, ws);
    read_field(w, "lambda_cls", c.weights.lambda_cls, ws);
    read_field(w, "lambda_prompt", c.weights.lambda_prompt, ws);
    reject_unknown(w, ws, "weights.");
  }
  if (j.contains("exposure")) {
    seen.insert("exposure");
    const auto& e = j.at("exposure");
    if (!e.is_object()) throw ConfigError("config: [exposure] must be a table");
    std::set<std::string> es;
    read_field(e, "patch_size", c.exposure.patch_size, es);
    read_field(e, "target", c.exposure.target, es);
    reject_unknown(e, es, "exposure.");
  }
  if (j.contains("spatial")) {
    seen.insert("spatial");
    const auto& s = j.at("spatial");
    if (!s.is_object()) throw ConfigError("config: [spatial] must be a table");
    std::set<std::string> ss;
    read_field(s, "region_size", c.spatial.region_size, ss);
    reject_unknown(s, ss, "spatial.");
  }
  reject_unknown(j, seen, "");
  return c;
}

// ---------------------------------------------------------------------------

namespace {

struct SampleResult {
  double exp = 0, spa = 0, rgb = 0, tv = 0, cls = 0, prompt = 0;
  Eigen::VectorXf grad;
};

SampleResult sample_loss(const PatchSample& sample, const CurveNetworkf& net, const LossWeights& w,
                         const LossContext& ctx, float scale, bool with_grad) {
  const Imagef& input = sample.patch;
  validate_image(input, "training patch");
  CurveNetworkCache<float> cache;
  const auto out = enhance(input, net, with_grad ? &cache : nullptr);
  SampleResult r;

  const auto le = exposure_loss_grad(out.enhanced, ctx.exposure);
  const auto ls = spatial_consistency_loss_grad(out.enhanced, input, ctx.spatial);
  const auto lr = color_constancy_loss_grad(out.enhanced);
  const auto lt = illumination_smoothness_loss_grad(out.maps);
  r.exp = le.value;
  r.spa = ls.value;
  r.rgb = lr.value;
  r.tv = lt.value;

  Imagef grad_enh(input.height(), input.width());
  if (with_grad) {
    grad_enh.planes() = static_cast<float>(w.lambda_exp) * le.grad.planes() +
                        static_cast<float>(w.lambda_spa) * ls.grad.enhanced.planes() +
                        static_cast<float>(w.lambda_rgb) * lr.grad.planes();
  }

  if (w.uses_encoder()) {
    const auto img = ctx.encoder->encode_image(out.enhanced);
    Vector<float> g_emb = Vector<float>::Zero(img.embedding.size());
    if (w.lambda_cls > 0) {
      const auto bce =
          semantic_loss_on_embedding(img.embedding, label_embeddings(ClassLabel(sample.label), *ctx.encoder,
                                                                     *ctx.text_cache));
      r.cls = bce.value;
      g_emb += static_cast<float>(w.lambda_cls) * bce.grad_img;
    }
    if (w.lambda_prompt > 0) {
      const auto bce = prior_loss_on_embedding(img.embedding, *ctx.prompts);
      r.prompt = bce.value;
      g_emb += static_cast<float>(w.lambda_prompt) * bce.grad_img;
    }
    if (with_grad) grad_enh.planes() += img.backward(g_emb).planes();
  }

  if (with_grad) {
    grad_enh.planes() *= scale;
    CurveMaps<float> grad_maps = lt.grad;
    grad_maps.alpha() *= static_cast<float>(w.lambda_tv) * scale;
    r.grad = enhance_backward(net, cache, input, out.maps, grad_enh, &grad_maps);
  }
  return r;
}

}  // namespace

TotalLoss total_loss(const std::vector<PatchSample>& batch, const CurveNetworkf& net, const LossWeights& weights,
                     const LossContext& ctx, bool with_grad) {
  if (batch.empty()) throw std::invalid_argument("total_loss: empty batch");
  if (!net.initialized()) throw InvalidState("total_loss: network is not initialized");
  weights.validate();
  if (weights.uses_encoder() && !ctx.encoder) throw InvalidState("total_loss: semantic terms need an encoder");
  if (weights.lambda_cls > 0 && !ctx.text_cache) throw InvalidState("total_loss: class term needs a text cache");
  if (weights.lambda_prompt > 0 && !ctx.prompts) throw InvalidState("total_loss: prior term needs prompts");

  const std::size_t n = batch.size();
  const float scale = 1.0f / static_cast<float>(n);
  std::vector<SampleResult> results(n);
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(std::max(ctx.workers, 1)), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) results[i] = sample_loss(batch[i], net, weights, ctx, scale, with_grad);
  } else {
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> threads;
    for (std::size_t t = 0; t < workers; ++t) {
      threads.emplace_back([&, t] {
        try {
          for (std::size_t i = t; i < n; i += workers) {
            results[i] = sample_loss(batch[i], net, weights, ctx, scale, with_grad);
          }
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
    for (auto& th : threads) th.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  TotalLoss out;
  LossBreakdown& b = out.breakdown;
  double cls = 0, prompt = 0;
  if (with_grad) out.grad = Eigen::VectorXf::Zero(net.parameter_count());
  for (const auto& r : results) {
    b.exp += r.exp;
    b.spa += r.spa;
    b.rgb += r.rgb;
    b.tv += r.tv;
    cls += r.cls;
    prompt += r.prompt;
    if (with_grad) out.grad += r.grad;
  }
  const double inv = 1.0 / static_cast<double>(n);
  b.exp *= inv;
  b.spa *= inv;
  b.rgb *= inv;
  b.tv *= inv;
  if (weights.lambda_cls > 0) b.cls = cls * inv;
  if (weights.lambda_prompt > 0) b.prompt = prompt * inv;
  out.total = b.weighted_total(weights);
  return out;
}

// ---------------------------------------------------------------------------

std::string loss_csv_header() { return "step,total,exp,spa,rgb,tv,cls,prompt"; }

std::string loss_csv_row(const StepRecord& r) {
  auto num = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return std::string(buf);
  };
  const auto& b = r.breakdown;
  std::ostringstream os;
  os << r.step << ',' << num(r.total) << ',' << num(b.exp) << ',' << num(b.spa) << ',' << num(b.rgb) << ','
     << num(b.tv) << ',' << (b.cls ? num(*b.cls) : "") << ',' << (b.prompt ? num(*b.prompt) : "");
  return os.str();
}

namespace {

constexpr int kCheckpointFormatVersion = 1;

std::string step_name(long long step) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "step_%09lld.safetensors", step);
  return buf;
}

}  // namespace

Trainer::Trainer(TrainConfig cfg, PatchSource& source, std::filesystem::path out_dir,
                 std::shared_ptr<const Encoder<float>> encoder, std::optional<LearnedPromptPair<float>> prompts)
    : cfg_(std::move(cfg)), source_(source), out_dir_(std::move(out_dir)), encoder_(std::move(encoder)) {
  cfg_.validate();
  if (cfg_.weights.uses_encoder() && !encoder_) throw ConfigError("semantic loss terms need an encoder");
  if (cfg_.weights.lambda_prompt > 0) {
    if (!prompts) throw ConfigError("lambda_prompt > 0 needs a prompt checkpoint");
    if (prompts->positive.cols() != encoder_->token_width()) {
      throw ConfigError("prompt checkpoint token width does not match the encoder");
    }
    prompt_embeddings_ = embed_prompts(*prompts, *encoder_);
  }
  const CurveNetworkSpec spec{cfg_.n_iterations, cfg_.channel_width};
  net_ = CurveNetworkf::random(spec, cfg_.seed);
  AdamConfig adam;
  adam.lr = cfg_.lr;
  adam.weight_decay = cfg_.weight_decay;
  adam_ = Adam<float>(adam, net_.parameter_count());
  std::filesystem::create_directories(out_dir_);
}

StepRecord Trainer::step() {
  const auto batch = source_.next_batch(static_cast<std::size_t>(cfg_.batch_size));
  LossContext ctx;
  ctx.encoder = encoder_.get();
  ctx.prompts = prompt_embeddings_ ? &*prompt_embeddings_ : nullptr;
  ctx.text_cache = &text_cache_;
  ctx.exposure = cfg_.exposure;
  ctx.spatial = cfg_.spatial;
  ctx.workers = cfg_.workers;
  TotalLoss loss = total_loss(batch, net_, cfg_.weights, ctx, true);
  const long long next = step_ + 1;

  if (!std::isfinite(loss.total) || !loss.grad.allFinite()) {
    std::vector<std::string> ids;
    for (const auto& s : batch) ids.push_back(s.sample_id);
    StepRecord bad{next, loss.total, loss.breakdown, 0};
    nlohmann::json dump = {{"step", next}, {"batch_ids", ids}, {"row", loss_csv_row(bad)}};
    const auto path = out_dir_ / ("nonfinite_step_" + std::to_string(next) + ".json");
    try {
      write_json_atomic(path, dump);
    } catch (const std::exception&) {
    }
    throw NonFiniteLoss("non-finite loss at step " + std::to_string(next) + " (diagnostics: " + path.string() + ")",
                        ids);
  }
  const double norm = clip_gradients(loss.grad, cfg_.grad_clip);
  adam_.step(net_.parameters(), std::move(loss.grad));
  step_ = next;
  StepRecord rec{step_, loss.total, loss.breakdown, norm};
  append_csv(rec);
  window_sum_ += loss.total;
  ++window_count_;
  return rec;
}

void Trainer::append_csv(const StepRecord& r) {
  if (!csv_ready_) {
    write_text_atomic(loss_csv_path(), loss_csv_header() + "\n");
    csv_ready_ = true;
  }
  std::ofstream csv(loss_csv_path(), std::ios::app);
  csv << loss_csv_row(r) << '\n';
  if (!csv) throw std::runtime_error("cannot append to " + loss_csv_path().string());
}

void Trainer::run(const StepCallback& on_step) {
  while (step_ < cfg_.steps) {
    const StepRecord rec = step();
    if (on_step) on_step(rec);
    if (step_ % cfg_.checkpoint_every == 0 || step_ == cfg_.steps) periodic_checkpoint();
  }
  nlohmann::json extra = {{"training_steps", step_}, {"seed", cfg_.seed}};
  save_curve_network(model_path(), net_, extra);
}

void Trainer::periodic_checkpoint() {
  const auto dir = checkpoint_dir();
  std::filesystem::create_directories(dir);
  const double window_mean = window_count_ > 0 ? window_sum_ / static_cast<double>(window_count_) : best_;
  const bool is_best = window_mean < best_;
  if (is_best) best_ = window_mean;
  window_sum_ = 0;
  window_count_ = 0;
  save_checkpoint(dir / step_name(step_));
  if (is_best) save_checkpoint(dir / "best.safetensors");

  std::vector<std::filesystem::path> steps;
  static const std::regex pattern(R"(step_\d{9}\.safetensors)");
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (std::regex_match(e.path().filename().string(), pattern)) steps.push_back(e.path());
  }
  std::sort(steps.begin(), steps.end());
  while (steps.size() > static_cast<std::size_t>(cfg_.keep_last)) {
    std::filesystem::remove(steps.front());
    std::filesystem::remove(sidecar_path(steps.front()));
    steps.erase(steps.begin());
  }
}

void Trainer::save_checkpoint(const std::filesystem::path& path) const {
  TensorArchive archive;
  put_curve_network(archive, net_);
  const auto& m = adam_.first_moment();
  const auto& v = adam_.second_moment();
  archive.put("optim.adam_m", {m.size()}, std::span<const float>(m.data(), static_cast<std::size_t>(m.size())));
  archive.put("optim.adam_v", {v.size()}, std::span<const float>(v.data(), static_cast<std::size_t>(v.size())));
  nlohmann::json meta = curve_network_metadata(net_.spec());
  meta["training"] = {{"format_version", kCheckpointFormatVersion},
                      {"step", step_},
                      {"adam_steps", adam_.steps()},
                      {"source_state", source_.state()},
                      {"best_window_mean", std::isfinite(best_) ? nlohmann::json(best_) : nlohmann::json()},
                      {"window_sum", window_sum_},
                      {"window_count", window_count_},
                      {"encoder_checksum", encoder_ ? nlohmann::json(encoder_->weights_checksum()) : nlohmann::json()},
                      {"config", to_json(cfg_)}};
  write_tensor_archive(path, archive);
  write_json_atomic(sidecar_path(path), meta);
}

void Trainer::resume(const std::filesystem::path& checkpoint) {
  const nlohmann::json meta = read_json_file(sidecar_path(checkpoint));
  const TensorArchive archive = read_tensor_archive(checkpoint);
  try {
    const auto& t = meta.at("training");
    if (t.at("format_version").get<int>() != kCheckpointFormatVersion) {
      throw ParseError("unsupported checkpoint format version");
    }
    const CurveNetworkSpec spec = curve_network_spec_from_json(meta);
    if (spec.n_iterations != cfg_.n_iterations || spec.width != cfg_.channel_width) {
      throw ConfigError("checkpoint network shape differs from the configuration");
    }
    if (encoder_ && !t.at("encoder_checksum").is_null() &&
        t.at("encoder_checksum").get<std::uint64_t>() != encoder_->weights_checksum()) {
      throw ConfigError("checkpoint was trained with a different encoder");
    }
    CurveNetworkf net = get_curve_network(archive, spec);
    auto vec = [&](const std::string& name) {
      const Tensor& tensor = archive.at(name);
      return Eigen::VectorXf(Eigen::Map<const Eigen::VectorXf>(tensor.data.data(),
                                                                 static_cast<Eigen::Index>(tensor.data.size())));
    };
    adam_.restore(t.at("adam_steps").get<long long>(), vec("optim.adam_m"), vec("optim.adam_v"));
    source_.restore(t.at("source_state"));
    net_ = std::move(net);
    step_ = t.at("step").get<long long>();
    best_ = t.at("best_window_mean").is_null() ? std::numeric_limits<double>::infinity()
                                               : t.at("best_window_mean").get<double>();
    window_sum_ = t.at("window_sum").get<double>();
    window_count_ = t.at("window_count").get<long long>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(sidecar_path(checkpoint).string() + ": " + e.what());
  }

  // Keep only the log rows the checkpoint has seen.
  std::ifstream in(loss_csv_path());
  std::ostringstream kept;
  kept << loss_csv_header() << '\n';
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (std::stoll(line.substr(0, line.find(','))) > step_) break;
    kept << line << '\n';
  }
  in.close();
  write_text_atomic(loss_csv_path(), kept.str());
  csv_ready_ = true;
}

}  // namespace zerolight
