#pragma once

#include "zerolight/encoder.hpp"
#include "zerolight/errors.hpp"
#include "zerolight/image.hpp"
#include "zerolight/losses.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace zerolight {

// ---------------------------------------------------------------------------
// Photometric augmentation

struct FactorRange {
  double lo = 1.0;
  double hi = 1.0;
};

struct AugmentationConfig {
  FactorRange brightness{0.3, 1.5};
  FactorRange contrast{0.5, 1.5};
  /// Shift as a fraction of the hue circle.
  FactorRange hue{-0.1, 0.1};
  std::uint64_t seed = 0;

  /// Every factor fixed at 1 and hue shift fixed at 0.
  static AugmentationConfig identity() { return {{1, 1}, {1, 1}, {0, 0}, 0}; }

  void validate() const {
    auto check = [](const FactorRange& r, const char* name, bool positive) {
      if (!std::isfinite(r.lo) || !std::isfinite(r.hi) || r.lo > r.hi || (positive && !(r.lo > 0))) {
        throw ConfigError(std::string("augmentation: invalid ") + name + " range");
      }
    };
    check(brightness, "brightness", true);
    check(contrast, "contrast", true);
    check(hue, "hue", false);
    if (hue.lo < -0.5 || hue.hi > 0.5) throw ConfigError("augmentation: hue shift must lie in [-0.5, 0.5]");
  }
};

enum class AugmentOp { Brightness, Contrast, Hue };

struct AugmentationParams {
  double brightness = 1.0;
  double contrast = 1.0;
  double hue = 0.0;
  std::array<AugmentOp, 3> order{AugmentOp::Brightness, AugmentOp::Contrast, AugmentOp::Hue};
};

inline double sample_range(const FactorRange& r, std::mt19937_64& rng) {
  if (r.lo == r.hi) return r.lo;
  return std::uniform_real_distribution<double>(r.lo, r.hi)(rng);
}

inline AugmentationParams sample_augmentation(const AugmentationConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  AugmentationParams p;
  p.brightness = sample_range(cfg.brightness, rng);
  p.contrast = sample_range(cfg.contrast, rng);
  p.hue = sample_range(cfg.hue, rng);
  std::shuffle(p.order.begin(), p.order.end(), rng);
  return p;
}

namespace detail {

template <typename Scalar>
void rotate_hue(Image<Scalar>& img, double shift) {
  auto& p = img.planes();
  for (Eigen::Index i = 0; i < img.pixel_count(); ++i) {
    const double r = p(0, i), g = p(1, i), b = p(2, i);
    const double mx = std::max({r, g, b});
    const double mn = std::min({r, g, b});
    const double delta = mx - mn;
    if (delta <= 0) continue;  // achromatic: hue undefined, pixel unchanged
    double h;
    if (mx == r) {
      h = std::fmod((g - b) / delta, 6.0);
    } else if (mx == g) {
      h = (b - r) / delta + 2.0;
    } else {
      h = (r - g) / delta + 4.0;
    }
    h = h / 6.0 + shift;
    h -= std::floor(h);
    const double s = delta / mx;
    const double v = mx;
    const double h6 = h * 6.0;
    const int sector = static_cast<int>(std::floor(h6)) % 6;
    const double f = h6 - std::floor(h6);
    const double pp = v * (1 - s);
    const double q = v * (1 - s * f);
    const double t = v * (1 - s * (1 - f));
    double rgb[3];
    switch (sector) {
      case 0: rgb[0] = v, rgb[1] = t, rgb[2] = pp; break;
      case 1: rgb[0] = q, rgb[1] = v, rgb[2] = pp; break;
      case 2: rgb[0] = pp, rgb[1] = v, rgb[2] = t; break;
      case 3: rgb[0] = pp, rgb[1] = q, rgb[2] = v; break;
      case 4: rgb[0] = t, rgb[1] = pp, rgb[2] = v; break;
      default: rgb[0] = v, rgb[1] = pp, rgb[2] = q; break;
    }
    for (int c = 0; c < 3; ++c) p(c, i) = static_cast<Scalar>(rgb[c]);
  }
}

}  // namespace detail

/// Applies the sampled ops in the sampled order. Each op clamps to [0, 1];
/// an op whose factor is exactly the identity is skipped. Contrast blends
/// towards the mean luma of the current image.
template <typename Scalar>
Image<Scalar> apply_augmentation(const Image<Scalar>& image, const AugmentationParams& params) {
  validate_image(image, "photometric_augment");
  Image<Scalar> out = image;
  for (AugmentOp op : params.order) {
    auto& p = out.planes();
    switch (op) {
      case AugmentOp::Brightness:
        if (params.brightness == 1.0) break;
        p = (p * static_cast<Scalar>(params.brightness)).cwiseMax(Scalar(0)).cwiseMin(Scalar(1));
        break;
      case AugmentOp::Contrast: {
        if (params.contrast == 1.0) break;
        const Scalar mean = luma(out).mean();
        const Scalar c = static_cast<Scalar>(params.contrast);
        p = (c * p + (Scalar(1) - c) * mean).cwiseMax(Scalar(0)).cwiseMin(Scalar(1));
        break;
      }
      case AugmentOp::Hue:
        if (params.hue == 0.0) break;
        detail::rotate_hue(out, params.hue);
        p = p.cwiseMax(Scalar(0)).cwiseMin(Scalar(1));
        break;
    }
  }
  return out;
}

template <typename Scalar>
Image<Scalar> photometric_augment(const Image<Scalar>& image, const AugmentationConfig& cfg, std::mt19937_64& rng) {
  return apply_augmentation(image, sample_augmentation(cfg, rng));
}

/// Seeded from cfg.seed alone: the same call always gives the same output.
template <typename Scalar>
Image<Scalar> photometric_augment(const Image<Scalar>& image, const AugmentationConfig& cfg) {
  std::mt19937_64 rng(cfg.seed);
  return photometric_augment(image, cfg, rng);
}

// ---------------------------------------------------------------------------
// Positive / negative sample pairs

template <typename Scalar>
struct SamplePair {
  Image<Scalar> positive;  // m x m average pooled
  Image<Scalar> negative;  // every m-th pixel, offset 0
  std::string source_id;
};

template <typename Scalar>
SamplePair<Scalar> make_sample_pair(const Image<Scalar>& image, int m = 4, std::string source_id = {}) {
  if (m < 1) throw std::invalid_argument("make_sample_pair: factor must be positive");
  if (image.empty() || image.height() % m != 0 || image.width() % m != 0) {
    throw std::invalid_argument("make_sample_pair: image side not divisible by the factor");
  }
  const int h = image.height() / m;
  const int w = image.width() / m;
  SamplePair<Scalar> pair{Image<Scalar>(h, w), Image<Scalar>(h, w), std::move(source_id)};
  const Scalar inv = Scalar(1) / static_cast<Scalar>(m * m);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        Scalar acc = 0;
        for (int dy = 0; dy < m; ++dy)
          for (int dx = 0; dx < m; ++dx) acc += image(c, y * m + dy, x * m + dx);
        pair.positive(c, y, x) = acc * inv;
        pair.negative(c, y, x) = image(c, y * m, x * m);
      }
    }
  }
  return pair;
}

// ---------------------------------------------------------------------------
// Learned prompts

inline constexpr int kPromptFormatVersion = 1;

struct PromptMetadata {
  int prompt_length = 16;
  std::string encoder_variant;
  long long steps = 0;
  std::uint64_t seed = 0;
  int format_version = kPromptFormatVersion;
};

template <typename Scalar>
struct LearnedPromptPair {
  TokenMatrix<Scalar> positive;
  TokenMatrix<Scalar> negative;
  PromptMetadata metadata;

  void validate() const {
    if (positive.rows() < 1 || positive.rows() != negative.rows() || positive.cols() != negative.cols()) {
      throw std::invalid_argument("prompts: positive and negative must share a non-empty shape");
    }
    if (!positive.allFinite() || !negative.allFinite()) throw std::invalid_argument("prompts: non-finite entries");
  }

  template <typename Other>
  LearnedPromptPair<Other> cast() const {
    return {positive.template cast<Other>(), negative.template cast<Other>(), metadata};
  }
};

/// i.i.d. N(0, stddev) entries; positive drawn first.
template <typename Scalar>
LearnedPromptPair<Scalar> init_prompts(int length, int token_width, std::uint64_t seed, double stddev = 0.02) {
  if (length < 1 || token_width < 1) throw std::invalid_argument("init_prompts: empty prompt shape");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, stddev);
  LearnedPromptPair<Scalar> p;
  p.positive.resize(length, token_width);
  p.negative.resize(length, token_width);
  for (Eigen::Index i = 0; i < p.positive.size(); ++i) p.positive.data()[i] = static_cast<Scalar>(normal(rng));
  for (Eigen::Index i = 0; i < p.negative.size(); ++i) p.negative.data()[i] = static_cast<Scalar>(normal(rng));
  p.metadata.prompt_length = length;
  p.metadata.seed = seed;
  return p;
}

template <typename Scalar>
struct PromptEmbeddings {
  Vector<Scalar> positive;
  Vector<Scalar> negative;
};

template <typename Scalar>
PromptEmbeddings<Scalar> embed_prompts(const LearnedPromptPair<Scalar>& prompts, const Encoder<Scalar>& enc) {
  prompts.validate();
  return {enc.encode_prompt(prompts.positive).embedding, enc.encode_prompt(prompts.negative).embedding};
}

// ---------------------------------------------------------------------------
// Stage-1 objective

/// Probability that an image embedding is "negative" (label 1): the two-way
/// softmax with the negative prompt in the numerator.
template <typename Scalar>
Scalar negative_probability(const Vector<Scalar>& image, const PromptEmbeddings<Scalar>& prompts) {
  return binary_similarity(image, prompts.negative, prompts.positive);
}

template <typename Scalar>
struct PromptInitLoss {
  Scalar value{};
  Scalar p_negative_on_positive{};  // should approach 0
  Scalar p_negative_on_negative{};  // should approach 1
  TokenMatrix<Scalar> grad_positive;
  TokenMatrix<Scalar> grad_negative;
};

namespace detail {

/// BCE of one image embedding with label 1 (negative) or 0 (positive),
/// against prompt embeddings (ep, en). Accumulates embedding gradients.
template <typename Scalar>
Scalar labelled_bce(const Vector<Scalar>& img, const Vector<Scalar>& ep, const Vector<Scalar>& en, bool negative,
                    Vector<Scalar>& gp, Vector<Scalar>& gn, Scalar& p_neg) {
  if (negative) {
    const auto b = binary_cross_entropy(img, en, ep);
    gn += b.grad_pos;
    gp += b.grad_neg;
    p_neg = b.probability;
    return b.value;
  }
  const auto b = binary_cross_entropy(img, ep, en);
  gp += b.grad_pos;
  gn += b.grad_neg;
  p_neg = Scalar(1) - b.probability;
  return b.value;
}

}  // namespace detail

/// Mean over pairs of the summed BCE of the pooled image (label 0) and the
/// subsampled image (label 1), with gradients for both prompt matrices.
template <typename Scalar>
PromptInitLoss<Scalar> prompt_init_loss_grad(const std::vector<SamplePair<Scalar>>& pairs,
                                             const LearnedPromptPair<Scalar>& prompts, const Encoder<Scalar>& enc) {
  if (pairs.empty()) throw std::invalid_argument("prompt_init_loss: empty batch");
  prompts.validate();
  const auto pos = enc.encode_prompt(prompts.positive);
  const auto neg = enc.encode_prompt(prompts.negative);
  Vector<Scalar> gp = Vector<Scalar>::Zero(pos.embedding.size());
  Vector<Scalar> gn = Vector<Scalar>::Zero(neg.embedding.size());
  PromptInitLoss<Scalar> out;
  Scalar total = 0;
  for (const auto& pair : pairs) {
    Scalar p0{}, p1{};
    total += detail::labelled_bce(enc.encode_image(pair.positive).embedding, pos.embedding, neg.embedding, false, gp,
                                  gn, p0);
    total += detail::labelled_bce(enc.encode_image(pair.negative).embedding, pos.embedding, neg.embedding, true, gp,
                                  gn, p1);
    out.p_negative_on_positive += p0;
    out.p_negative_on_negative += p1;
  }
  const Scalar inv = Scalar(1) / static_cast<Scalar>(pairs.size());
  out.value = total * inv;
  out.p_negative_on_positive *= inv;
  out.p_negative_on_negative *= inv;
  out.grad_positive = pos.backward(gp * inv);
  out.grad_negative = neg.backward(gn * inv);
  return out;
}

template <typename Scalar>
Scalar prompt_init_loss(const SamplePair<Scalar>& pair, const LearnedPromptPair<Scalar>& prompts,
                        const Encoder<Scalar>& enc) {
  return prompt_init_loss_grad(std::vector<SamplePair<Scalar>>{pair}, prompts, enc).value;
}

/// Fraction of images classified correctly by p_negative >< 0.5 (pooled
/// images should fall below, subsampled ones above).
template <typename Scalar>
double discrimination_accuracy(const std::vector<SamplePair<Scalar>>& pairs, const LearnedPromptPair<Scalar>& prompts,
                               const Encoder<Scalar>& enc) {
  if (pairs.empty()) throw std::invalid_argument("discrimination_accuracy: no pairs");
  const auto emb = embed_prompts(prompts, enc);
  std::size_t correct = 0;
  for (const auto& pair : pairs) {
    if (negative_probability(enc.encode_image(pair.positive).embedding, emb) < Scalar(0.5)) ++correct;
    if (negative_probability(enc.encode_image(pair.negative).embedding, emb) > Scalar(0.5)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(2 * pairs.size());
}

// ---------------------------------------------------------------------------
// Stage-2 prior loss: the enhanced image should match the positive prompt.

/// -ln P(positive) on a precomputed image embedding; grad_img is the
/// embedding gradient.
template <typename Scalar>
BinaryCrossEntropy<Scalar> prior_loss_on_embedding(const Vector<Scalar>& image, const PromptEmbeddings<Scalar>& p) {
  return binary_cross_entropy(image, p.positive, p.negative);
}

template <typename Scalar>
LossWithGrad<Scalar, Image<Scalar>> prior_loss_grad(const Image<Scalar>& enhanced,
                                                    const LearnedPromptPair<Scalar>& prompts,
                                                    const Encoder<Scalar>& enc) {
  validate_image(enhanced, "prior_loss");
  const auto img = enc.encode_image(enhanced);
  const auto bce = prior_loss_on_embedding(img.embedding, embed_prompts(prompts, enc));
  return {bce.value, img.backward(bce.grad_img)};
}

template <typename Scalar>
Scalar prior_loss(const Image<Scalar>& enhanced, const LearnedPromptPair<Scalar>& prompts,
                  const Encoder<Scalar>& enc) {
  validate_image(enhanced, "prior_loss");
  return prior_loss_on_embedding(enc.encode_image(enhanced).embedding, embed_prompts(prompts, enc)).value;
}

// ---------------------------------------------------------------------------
// Stage-1 training (float)

struct PromptTrainConfig {
  long long steps = 5000;
  double lr = 1e-3;
  int batch_size = 8;
  int prompt_length = 16;
  double init_stddev = 0.02;
  /// Pooling / subsampling factor.
  int factor = 4;
  /// Crop side; 0 selects factor * encoder resolution.
  int crop_size = 0;
  std::uint64_t seed = 0;
  AugmentationConfig augmentation;

  void validate() const;
};

struct PromptTrainStep {
  long long step = 0;
  double loss = 0;
};

struct PromptTrainResult {
  LearnedPromptPair<float> prompts;
  std::vector<PromptTrainStep> history;
};

/// Random square crop of side `crop`; sources smaller than the crop are
/// first resized up (bilinear, aspect preserved) so the short side fits.
Imagef random_crop(const Imagef& image, int crop, std::mt19937_64& rng);

/// Draws a training batch for the given step. Depends only on (seed, step),
/// never on earlier draws.
std::vector<SamplePair<float>> draw_prompt_batch(const std::vector<Imagef>& corpus, const PromptTrainConfig& cfg,
                                                 int crop, long long step);

using PromptStepCallback = std::function<void(const PromptTrainStep&)>;

/// Optimizes a freshly initialized prompt pair with Adam on the stage-1
/// objective. Throws ConfigError on an empty corpus.
PromptTrainResult train_prompts(const std::vector<Imagef>& corpus, const Encoder<float>& enc,
                                const PromptTrainConfig& cfg, const PromptStepCallback& on_step = {});

/// Tensor archive with "prompt.positive" / "prompt.negative" plus a JSON
/// sidecar holding the metadata.
void save_prompts(const std::filesystem::path& path, const LearnedPromptPair<float>& prompts);
LearnedPromptPair<float> load_prompts(const std::filesystem::path& path);

}  // namespace zerolight
