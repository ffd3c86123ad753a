#pragma once

#include "zerolight/encoder.hpp"

#include <random>
#include <sstream>

namespace zerolight {

struct StubEncoderConfig {
  int dim = 64;
  int token_width = 64;
  int resolution = 32;
  int max_prompt_tokens = 75;
  std::uint64_t seed = 0x5eed;
  /// Weight of the local-contrast features relative to raw pixels.
  double texture_gain = 4.0;
};

/// Deterministic stand-in for a pretrained encoder.
///
/// Images: bilinear resize to resolution^2 and channel normalization, then a
/// fixed Gaussian projection of [pixels, texture_gain * squared neighbour
/// differences]. The squared differences make pixel-level noise visible in
/// the embedding, so pooled and subsampled crops are separable.
/// Text: the string hash seeds a Gaussian draw.
/// Prompts: b + W * sum_k(s_k .* p_k) with fixed sign vectors s_k.
/// Every output is L2-normalized and every path is differentiable.
template <typename Scalar>
class StubEncoder final : public Encoder<Scalar> {
 public:
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

  explicit StubEncoder(const StubEncoderConfig& cfg = {}) : cfg_(cfg) {
    if (cfg.dim < 1 || cfg.token_width < 1 || cfg.resolution < 2 || cfg.max_prompt_tokens < 1) {
      throw std::invalid_argument("StubEncoder: invalid configuration");
    }
    const int r = cfg.resolution;
    pixel_features_ = 3 * r * r;
    texture_features_ = 2 * 3 * r * (r - 1);
    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const Eigen::Index features = pixel_features_ + texture_features_;
    image_proj_ = Mat(cfg.dim, features);
    const double img_scale = 1.0 / std::sqrt(static_cast<double>(features));
    for (Eigen::Index i = 0; i < image_proj_.size(); ++i) image_proj_.data()[i] = Scalar(normal(rng) * img_scale);
    prompt_proj_ = Mat(cfg.dim, cfg.token_width);
    const double tok_scale = 1.0 / std::sqrt(static_cast<double>(cfg.token_width));
    for (Eigen::Index i = 0; i < prompt_proj_.size(); ++i) prompt_proj_.data()[i] = Scalar(normal(rng) * tok_scale);
    prompt_bias_ = Vector<Scalar>(cfg.dim);
    const double bias_scale = 1.0 / std::sqrt(static_cast<double>(cfg.dim));
    for (Eigen::Index i = 0; i < prompt_bias_.size(); ++i) prompt_bias_[i] = Scalar(normal(rng) * bias_scale);
    position_signs_ = Mat(cfg.token_width, cfg.max_prompt_tokens);
    std::bernoulli_distribution coin(0.5);
    for (Eigen::Index i = 0; i < position_signs_.size(); ++i) position_signs_.data()[i] = coin(rng) ? 1 : -1;
  }

  std::string variant() const override {
    std::ostringstream os;
    os << "stub-d" << cfg_.dim << "-w" << cfg_.token_width << "-r" << cfg_.resolution << "-s" << cfg_.seed;
    return os.str();
  }
  int embedding_dim() const override { return cfg_.dim; }
  int token_width() const override { return cfg_.token_width; }
  int max_prompt_tokens() const override { return cfg_.max_prompt_tokens; }
  int input_resolution() const override { return cfg_.resolution; }

  ImageEncoding<Scalar> encode_image(const Image<Scalar>& image) const override {
    const int r = cfg_.resolution;
    const int h = image.height();
    const int w = image.width();
    const Planar<Scalar> x = preprocess(image, r);
    const Vector<Scalar> f = features(x);
    const auto normalized = l2_normalize<Scalar>(image_proj_ * f);
    ImageEncoding<Scalar> enc;
    enc.embedding = normalized.value;
    // Copies keep the pullback independent of this object's lifetime.
    enc.backward = [normalized, x, proj = image_proj_, h, w, r, gain = cfg_.texture_gain,
                    npix = pixel_features_](const Vector<Scalar>& grad) {
      const Vector<Scalar> gf = proj.transpose() * l2_normalize_backward(normalized, grad);
      Planar<Scalar> gx(3, static_cast<Eigen::Index>(r) * r);
      for (int c = 0; c < 3; ++c) gx.row(c) = gf.segment(static_cast<Eigen::Index>(c) * r * r, r * r).transpose();
      Eigen::Index k = npix;
      const Scalar s = static_cast<Scalar>(gain);
      for (int c = 0; c < 3; ++c) {
        for (int y = 0; y < r; ++y) {
          for (int xx = 0; xx + 1 < r; ++xx) {
            const Eigen::Index a = static_cast<Eigen::Index>(y) * r + xx;
            const Scalar d = x(c, a + 1) - x(c, a);
            const Scalar gd = s * Scalar(2) * d * gf[k++];
            gx(c, a + 1) += gd;
            gx(c, a) -= gd;
          }
        }
        for (int y = 0; y + 1 < r; ++y) {
          for (int xx = 0; xx < r; ++xx) {
            const Eigen::Index a = static_cast<Eigen::Index>(y) * r + xx;
            const Scalar d = x(c, a + r) - x(c, a);
            const Scalar gd = s * Scalar(2) * d * gf[k++];
            gx(c, a + r) += gd;
            gx(c, a) -= gd;
          }
        }
      }
      return preprocess_backward<Scalar>(gx, h, w, r);
    };
    return enc;
  }

  Vector<Scalar> encode_text(std::string_view text) const override {
    if (text.empty()) throw std::invalid_argument("encode_text: empty string");
    if (count_words(text) > cfg_.max_prompt_tokens) {
      throw std::invalid_argument("encode_text: text exceeds the token budget");
    }
    std::mt19937_64 rng(fnv1a(text.data(), text.size()) ^ cfg_.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Vector<Scalar> v(cfg_.dim);
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = Scalar(normal(rng));
    return l2_normalize(v).value;
  }

  PromptEncoding<Scalar> encode_prompt(const TokenMatrix<Scalar>& prompt) const override {
    if (prompt.cols() != cfg_.token_width) throw std::invalid_argument("encode_prompt: token width mismatch");
    if (prompt.rows() < 1 || prompt.rows() > cfg_.max_prompt_tokens) {
      throw std::invalid_argument("encode_prompt: prompt length out of range");
    }
    if (!prompt.allFinite()) throw std::invalid_argument("encode_prompt: non-finite prompt");
    const Eigen::Index n = prompt.rows();
    const Mat signs = position_signs_.leftCols(n);
    // sum_k s_k .* p_k == rowwise sum of (P^T .* S)
    const Vector<Scalar> pooled = (prompt.transpose().array() * signs.array()).rowwise().sum().matrix();
    const auto normalized = l2_normalize<Scalar>(prompt_bias_ + prompt_proj_ * pooled);
    PromptEncoding<Scalar> enc;
    enc.embedding = normalized.value;
    enc.backward = [normalized, signs, proj = prompt_proj_](const Vector<Scalar>& grad) {
      const Vector<Scalar> gp = proj.transpose() * l2_normalize_backward(normalized, grad);
      TokenMatrix<Scalar> out = (signs.array().colwise() * gp.array()).matrix().transpose();
      return out;
    };
    return enc;
  }

  std::uint64_t weights_checksum() const override {
    std::uint64_t h = fnv1a(image_proj_.data(), sizeof(Scalar) * image_proj_.size());
    h = fnv1a(prompt_proj_.data(), sizeof(Scalar) * prompt_proj_.size(), h);
    h = fnv1a(prompt_bias_.data(), sizeof(Scalar) * prompt_bias_.size(), h);
    return fnv1a(position_signs_.data(), sizeof(Scalar) * position_signs_.size(), h);
  }

  const StubEncoderConfig& config() const { return cfg_; }

 private:
  static int count_words(std::string_view text) {
    int words = 0;
    bool in_word = false;
    for (char ch : text) {
      const bool space = ch == ' ' || ch == '\t' || ch == '\n' || ch == '\r';
      if (!space && !in_word) ++words;
      in_word = !space;
    }
    return words;
  }

  Vector<Scalar> features(const Planar<Scalar>& x) const {
    const int r = cfg_.resolution;
    Vector<Scalar> f(pixel_features_ + texture_features_);
    for (int c = 0; c < 3; ++c) f.segment(static_cast<Eigen::Index>(c) * r * r, r * r) = x.row(c).transpose().matrix();
    Eigen::Index k = pixel_features_;
    const Scalar s = static_cast<Scalar>(cfg_.texture_gain);
    for (int c = 0; c < 3; ++c) {
      for (int y = 0; y < r; ++y) {
        for (int xx = 0; xx + 1 < r; ++xx) {
          const Eigen::Index a = static_cast<Eigen::Index>(y) * r + xx;
          const Scalar d = x(c, a + 1) - x(c, a);
          f[k++] = s * d * d;
        }
      }
      for (int y = 0; y + 1 < r; ++y) {
        for (int xx = 0; xx < r; ++xx) {
          const Eigen::Index a = static_cast<Eigen::Index>(y) * r + xx;
          const Scalar d = x(c, a + r) - x(c, a);
          f[k++] = s * d * d;
        }
      }
    }
    return f;
  }

  StubEncoderConfig cfg_;
  Eigen::Index pixel_features_ = 0;
  Eigen::Index texture_features_ = 0;
  Mat image_proj_;
  Mat prompt_proj_;
  Vector<Scalar> prompt_bias_;
  Mat position_signs_;
};

}  // namespace zerolight
