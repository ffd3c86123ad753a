#include "zerolight/prompt_prior.hpp"

#include "zerolight/optim.hpp"
#include "zerolight/resize.hpp"
#include "zerolight/rng.hpp"
#include "zerolight/tensor_archive.hpp"

#include <nlohmann/json.hpp>

namespace zerolight {

void PromptTrainConfig::validate() const {
  if (steps < 0) throw ConfigError("train_prompts: steps must be non-negative");
  if (!(lr > 0) || !std::isfinite(lr)) throw ConfigError("train_prompts: lr must be positive");
  if (batch_size < 1) throw ConfigError("train_prompts: batch_size must be positive");
  if (prompt_length < 1) throw ConfigError("train_prompts: prompt_length must be positive");
  if (!(init_stddev > 0)) throw ConfigError("train_prompts: init_stddev must be positive");
  if (factor < 1) throw ConfigError("train_prompts: factor must be positive");
  if (crop_size < 0 || (crop_size > 0 && crop_size % factor != 0)) {
    throw ConfigError("train_prompts: crop_size must be a positive multiple of the factor");
  }
  augmentation.validate();
}

Imagef random_crop(const Imagef& image, int crop, std::mt19937_64& rng) {
  if (image.empty()) throw std::invalid_argument("random_crop: empty image");
  if (crop < 1) throw std::invalid_argument("random_crop: crop must be positive");
  const Imagef* src = &image;
  Imagef resized;
  const int short_side = std::min(image.height(), image.width());
  if (short_side < crop) {
    const double s = static_cast<double>(crop) / short_side;
    const int h = std::max(crop, static_cast<int>(std::ceil(image.height() * s)));
    const int w = std::max(crop, static_cast<int>(std::ceil(image.width() * s)));
    resized = resize_bilinear(image, h, w);
    src = &resized;
  }
  const int y0 = std::uniform_int_distribution<int>(0, src->height() - crop)(rng);
  const int x0 = std::uniform_int_distribution<int>(0, src->width() - crop)(rng);
  Imagef out(crop, crop);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < crop; ++y)
      for (int x = 0; x < crop; ++x) out(c, y, x) = (*src)(c, y0 + y, x0 + x);
  return out;
}

std::vector<SamplePair<float>> draw_prompt_batch(const std::vector<Imagef>& corpus, const PromptTrainConfig& cfg,
                                                 int crop, long long step) {
  if (corpus.empty()) throw ConfigError("train_prompts: empty corpus");
  std::vector<SamplePair<float>> batch;
  batch.reserve(static_cast<std::size_t>(cfg.batch_size));
  for (int i = 0; i < cfg.batch_size; ++i) {
    std::mt19937_64 rng(derive_seed({cfg.seed, static_cast<std::uint64_t>(step), static_cast<std::uint64_t>(i)}));
    const std::size_t idx = std::uniform_int_distribution<std::size_t>(0, corpus.size() - 1)(rng);
    Imagef view = photometric_augment(random_crop(corpus[idx], crop, rng), cfg.augmentation, rng);
    batch.push_back(make_sample_pair(view, cfg.factor, "image" + std::to_string(idx)));
  }
  return batch;
}

namespace {

Eigen::VectorXf flatten(const LearnedPromptPair<float>& p) {
  Eigen::VectorXf v(p.positive.size() + p.negative.size());
  v.head(p.positive.size()) = Eigen::Map<const Eigen::VectorXf>(p.positive.data(), p.positive.size());
  v.tail(p.negative.size()) = Eigen::Map<const Eigen::VectorXf>(p.negative.data(), p.negative.size());
  return v;
}

void unflatten(const Eigen::VectorXf& v, LearnedPromptPair<float>& p) {
  Eigen::Map<Eigen::VectorXf>(p.positive.data(), p.positive.size()) = v.head(p.positive.size());
  Eigen::Map<Eigen::VectorXf>(p.negative.data(), p.negative.size()) = v.tail(p.negative.size());
}

}  // namespace

PromptTrainResult train_prompts(const std::vector<Imagef>& corpus, const Encoder<float>& enc,
                                const PromptTrainConfig& cfg, const PromptStepCallback& on_step) {
  cfg.validate();
  if (corpus.empty()) throw ConfigError("train_prompts: empty corpus");
  if (cfg.prompt_length > enc.max_prompt_tokens()) {
    throw ConfigError("train_prompts: prompt_length exceeds the encoder's prompt budget");
  }
  const int crop = cfg.crop_size > 0 ? cfg.crop_size : cfg.factor * enc.input_resolution();

  PromptTrainResult result;
  result.prompts = init_prompts<float>(cfg.prompt_length, enc.token_width(), cfg.seed, cfg.init_stddev);
  result.prompts.metadata.encoder_variant = enc.variant();
  Eigen::VectorXf params = flatten(result.prompts);
  AdamConfig adam_cfg;
  adam_cfg.lr = cfg.lr;
  Adam<float> adam(adam_cfg, params.size());

  result.history.reserve(static_cast<std::size_t>(cfg.steps));
  for (long long step = 1; step <= cfg.steps; ++step) {
    const auto batch = draw_prompt_batch(corpus, cfg, crop, step);
    const auto loss = prompt_init_loss_grad(batch, result.prompts, enc);
    if (!std::isfinite(loss.value)) throw InvalidState("train_prompts: non-finite loss at step " + std::to_string(step));
    LearnedPromptPair<float> grad{loss.grad_positive, loss.grad_negative, {}};
    adam.step(params, flatten(grad));
    unflatten(params, result.prompts);
    const PromptTrainStep record{step, static_cast<double>(loss.value)};
    result.history.push_back(record);
    if (on_step) on_step(record);
  }
  result.prompts.metadata.steps = cfg.steps;
  return result;
}

void save_prompts(const std::filesystem::path& path, const LearnedPromptPair<float>& prompts) {
  prompts.validate();
  TensorArchive archive;
  const std::vector<std::int64_t> shape{prompts.positive.rows(), prompts.positive.cols()};
  archive.put("prompt.positive", shape,
              std::span<const float>(prompts.positive.data(), static_cast<std::size_t>(prompts.positive.size())));
  archive.put("prompt.negative", shape,
              std::span<const float>(prompts.negative.data(), static_cast<std::size_t>(prompts.negative.size())));
  const auto& m = prompts.metadata;
  nlohmann::json meta = {{"format_version", m.format_version},
                         {"kind", "prompt_pair"},
                         {"prompt_length", prompts.positive.rows()},
                         {"token_width", prompts.positive.cols()},
                         {"encoder_variant", m.encoder_variant},
                         {"steps", m.steps},
                         {"seed", m.seed}};
  write_tensor_archive(path, archive);
  write_json_atomic(sidecar_path(path), meta);
}

LearnedPromptPair<float> load_prompts(const std::filesystem::path& path) {
  const TensorArchive archive = read_tensor_archive(path);
  const nlohmann::json meta = read_json_file(sidecar_path(path));
  LearnedPromptPair<float> p;
  try {
    if (meta.at("kind").get<std::string>() != "prompt_pair") throw ParseError("not a prompt checkpoint");
    p.metadata.format_version = meta.at("format_version").get<int>();
    if (p.metadata.format_version != kPromptFormatVersion) {
      throw ParseError("unsupported prompt format version " + std::to_string(p.metadata.format_version));
    }
    p.metadata.prompt_length = meta.at("prompt_length").get<int>();
    p.metadata.encoder_variant = meta.at("encoder_variant").get<std::string>();
    p.metadata.steps = meta.at("steps").get<long long>();
    p.metadata.seed = meta.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(sidecar_path(path).string() + ": " + e.what());
  }
  auto read = [&](const std::string& name) {
    const Tensor& t = archive.at(name);
    if (t.shape.size() != 2) throw ParseError(path.string() + ": " + name + " is not a matrix");
    return TokenMatrix<float>(Eigen::Map<const TokenMatrix<float>>(t.data.data(), t.shape[0], t.shape[1]));
  };
  p.positive = read("prompt.positive");
  p.negative = read("prompt.negative");
  if (p.positive.rows() != p.metadata.prompt_length) throw ParseError(path.string() + ": prompt length mismatch");
  p.validate();
  return p;
}

}  // namespace zerolight
