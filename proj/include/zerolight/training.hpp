#pragma once

#include "zerolight/curve_net.hpp"
#include "zerolight/data_pipeline.hpp"
#include "zerolight/encoder.hpp"
#include "zerolight/losses.hpp"
#include "zerolight/optim.hpp"
#include "zerolight/prompt_prior.hpp"
#include "zerolight/semantic_guidance.hpp"

#include <nlohmann/json_fwd.hpp>

#include <array>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace zerolight {

struct LossWeights {
  double lambda_exp = 10;
  double lambda_spa = 1;
  double lambda_rgb = 5;
  double lambda_tv = 200;
  double lambda_cls = 1;
  double lambda_prompt = 1;

  void validate() const;
  bool uses_encoder() const { return lambda_cls > 0 || lambda_prompt > 0; }
};

/// Named presets for the semantic terms: baseline (both off), cls, prompt,
/// full (both on at 1). The four zero-reference weights are untouched.
LossWeights apply_ablation(LossWeights weights, const std::string& preset);

/// Per-term batch means. The four zero-reference terms are always
/// evaluated; the semantic terms only when their weight is positive.
struct LossBreakdown {
  double exp = 0;
  double spa = 0;
  double rgb = 0;
  double tv = 0;
  std::optional<double> cls;
  std::optional<double> prompt;

  double weighted_total(const LossWeights& w) const;
};

struct TrainConfig {
  int batch_size = 8;
  int patch_size = 224;
  long long steps = 105000;
  double lr = 1e-4;
  double weight_decay = 1e-4;
  double grad_clip = 0.1;
  std::uint64_t seed = 0;
  long long checkpoint_every = 5000;
  int keep_last = 3;
  /// Threads evaluating the per-sample losses of a batch. Results are
  /// reduced in sample order, so the value never depends on it.
  int workers = 1;
  int n_iterations = 8;
  int channel_width = 32;
  LossWeights weights;
  ExposureConfig exposure;
  SpatialConfig spatial;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& cfg);
/// Unknown keys raise ConfigError. Missing keys keep their defaults.
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

/// Everything besides the network that total_loss may need.
struct LossContext {
  const Encoder<float>* encoder = nullptr;
  const PromptEmbeddings<float>* prompts = nullptr;
  TextEmbeddingCache<float>* text_cache = nullptr;
  ExposureConfig exposure;
  SpatialConfig spatial;
  int workers = 1;
};

struct TotalLoss {
  double total = 0;
  LossBreakdown breakdown;
  /// Gradient of `total` with respect to the network parameters (empty when
  /// not requested).
  Eigen::VectorXf grad;
};

/// Weighted sum of the batch-averaged terms, optionally with its parameter
/// gradient. One image encoding per sample serves both semantic heads.
TotalLoss total_loss(const std::vector<PatchSample>& batch, const CurveNetworkf& net, const LossWeights& weights,
                     const LossContext& ctx, bool with_grad = true);

struct StepRecord {
  long long step = 0;
  double total = 0;
  LossBreakdown breakdown;
  double grad_norm = 0;
};

/// CSV header: step,total,exp,spa,rgb,tv,cls,prompt. Disabled semantic
/// terms are left blank.
std::string loss_csv_header();
std::string loss_csv_row(const StepRecord& r);

/// Stage-2 loop: sample batch, total loss, backprop, clip, Adam. Writes
/// <out_dir>/loss.csv, checkpoints under <out_dir>/checkpoints and the final
/// model at <out_dir>/model.safetensors.
class Trainer {
 public:
  Trainer(TrainConfig cfg, PatchSource& source, std::filesystem::path out_dir,
          std::shared_ptr<const Encoder<float>> encoder = nullptr,
          std::optional<LearnedPromptPair<float>> prompts = std::nullopt);

  /// Restores the network, optimizer, data stream and step from a
  /// checkpoint written by this class, and truncates loss.csv to match.
  void resume(const std::filesystem::path& checkpoint);

  using StepCallback = std::function<void(const StepRecord&)>;
  /// Runs until cfg.steps. Throws NonFiniteLoss (after writing a diagnostic
  /// JSON next to the log) when the loss stops being finite.
  void run(const StepCallback& on_step = {});

  /// One optimization step; returns the record logged for it.
  StepRecord step();

  void save_checkpoint(const std::filesystem::path& path) const;

  const CurveNetworkf& network() const { return net_; }
  long long current_step() const { return step_; }
  const TrainConfig& config() const { return cfg_; }
  std::filesystem::path loss_csv_path() const { return out_dir_ / "loss.csv"; }
  std::filesystem::path checkpoint_dir() const { return out_dir_ / "checkpoints"; }
  std::filesystem::path model_path() const { return out_dir_ / "model.safetensors"; }

 private:
  void append_csv(const StepRecord& r);
  void periodic_checkpoint();

  TrainConfig cfg_;
  PatchSource& source_;
  std::filesystem::path out_dir_;
  std::shared_ptr<const Encoder<float>> encoder_;
  std::optional<PromptEmbeddings<float>> prompt_embeddings_;
  TextEmbeddingCache<float> text_cache_;
  CurveNetworkf net_;
  Adam<float> adam_;
  long long step_ = 0;
  bool csv_ready_ = false;
  double window_sum_ = 0;
  long long window_count_ = 0;
  double best_ = std::numeric_limits<double>::infinity();
};

}  // namespace zerolight
