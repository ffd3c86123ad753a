#pragma once

#include "zerolight/image.hpp"
#include "zerolight/resize.hpp"

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace zerolight {

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Continuous prompt tokens, one token embedding per row.
template <typename Scalar>
using TokenMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Unit-norm image embedding plus its vector-Jacobian product back to the
/// input pixels. The pullback owns everything it needs; it stays valid after
/// the encoder call returns.
template <typename Scalar>
struct ImageEncoding {
  Vector<Scalar> embedding;
  std::function<Image<Scalar>(const Vector<Scalar>&)> backward;
};

/// Unit-norm embedding of a continuous prompt plus its pullback to the
/// token matrix.
template <typename Scalar>
struct PromptEncoding {
  Vector<Scalar> embedding;
  std::function<TokenMatrix<Scalar>(const Vector<Scalar>&)> backward;
};

/// Frozen contrastive vision-language encoder.
///
/// Implementations are immutable after construction and safe to share
/// across threads. Weights are never updated by any toolkit operation;
/// weights_checksum() lets callers verify that.
template <typename Scalar>
class Encoder {
 public:
  virtual ~Encoder() = default;

  virtual std::string variant() const = 0;
  virtual int embedding_dim() const = 0;
  /// Width of one prompt token (row length of a TokenMatrix).
  virtual int token_width() const = 0;
  /// Longest continuous prompt accepted by encode_prompt().
  virtual int max_prompt_tokens() const = 0;
  /// Square side the image is resized to before encoding.
  virtual int input_resolution() const = 0;

  virtual ImageEncoding<Scalar> encode_image(const Image<Scalar>& image) const = 0;
  virtual Vector<Scalar> encode_text(std::string_view text) const = 0;
  virtual PromptEncoding<Scalar> encode_prompt(const TokenMatrix<Scalar>& prompt) const = 0;

  virtual std::uint64_t weights_checksum() const = 0;

  /// Batch path; results are in input order.
  virtual std::vector<ImageEncoding<Scalar>> encode_images(std::span<const Image<Scalar>> images) const {
    std::vector<ImageEncoding<Scalar>> out;
    out.reserve(images.size());
    for (const auto& img : images) out.push_back(encode_image(img));
    return out;
  }
};

template <typename Scalar>
using EncoderPtr = std::shared_ptr<const Encoder<Scalar>>;

struct EncoderConfig {
  /// "stub" or "clip".
  std::string kind = "stub";

  // stub encoder
  int stub_dim = 64;
  int stub_token_width = 64;
  int stub_resolution = 32;
  std::uint64_t stub_seed = 0x5eed;

  // clip encoder
  std::filesystem::path clip_weights;
  std::filesystem::path clip_vocab;
  int clip_vision_heads = 0;  // 0: width / 64
  int clip_text_heads = 0;
};

/// Builds the encoder selected by cfg.kind. Defined for float and double.
template <typename Scalar>
EncoderPtr<Scalar> make_encoder(const EncoderConfig& cfg);

// ---------------------------------------------------------------------------
// Embedding-space operations shared by every head.

template <typename Scalar>
struct NormalizedVector {
  Vector<Scalar> value;
  Scalar norm{};
};

template <typename Scalar>
NormalizedVector<Scalar> l2_normalize(const Vector<Scalar>& v) {
  const Scalar n = v.norm();
  if (!(n > Scalar(0)) || !std::isfinite(static_cast<double>(n))) {
    throw std::invalid_argument("l2_normalize: zero or non-finite vector");
  }
  return {v / n, n};
}

/// Pullback of u = v / |v|: (g - u (u . g)) / |v|.
template <typename Scalar>
Vector<Scalar> l2_normalize_backward(const NormalizedVector<Scalar>& fwd, const Vector<Scalar>& grad) {
  const auto& u = fwd.value;
  return (grad - u * u.dot(grad)) / fwd.norm;
}

template <typename Scalar>
Scalar cosine_similarity(const Vector<Scalar>& a, const Vector<Scalar>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("cosine_similarity: dimension mismatch");
  return a.dot(b) / (a.norm() * b.norm());
}

template <typename Scalar>
struct CosineGradient {
  Vector<Scalar> a;
  Vector<Scalar> b;
};

template <typename Scalar>
CosineGradient<Scalar> cosine_similarity_backward(const Vector<Scalar>& a, const Vector<Scalar>& b, Scalar grad) {
  const Scalar na = a.norm();
  const Scalar nb = b.norm();
  const Scalar c = a.dot(b) / (na * nb);
  return {grad * (b / (na * nb) - c * a / (na * na)), grad * (a / (na * nb) - c * b / (nb * nb))};
}

/// Two-way softmax over raw cosine similarities (no temperature):
/// exp(cos(img, pos)) / (exp(cos(img, pos)) + exp(cos(img, neg))).
template <typename Scalar>
Scalar binary_similarity(const Vector<Scalar>& img, const Vector<Scalar>& pos, const Vector<Scalar>& neg) {
  if (img.size() != pos.size() || img.size() != neg.size()) {
    throw std::invalid_argument("binary_similarity: dimension mismatch");
  }
  const Scalar d = cosine_similarity(img, pos) - cosine_similarity(img, neg);
  return Scalar(1) / (Scalar(1) + std::exp(-d));
}

/// -ln(binary_similarity) with gradients, the binary cross-entropy against
/// the "pos" class. Computed as softplus(cos_neg - cos_pos) for stability.
template <typename Scalar>
struct BinaryCrossEntropy {
  Scalar value{};
  Scalar probability{};
  Vector<Scalar> grad_img;
  Vector<Scalar> grad_pos;
  Vector<Scalar> grad_neg;
};

template <typename Scalar>
Scalar softplus(Scalar x) {
  return x > Scalar(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

template <typename Scalar>
BinaryCrossEntropy<Scalar> binary_cross_entropy(const Vector<Scalar>& img, const Vector<Scalar>& pos,
                                                const Vector<Scalar>& neg) {
  if (img.size() != pos.size() || img.size() != neg.size()) {
    throw std::invalid_argument("binary_cross_entropy: dimension mismatch");
  }
  const Scalar d = cosine_similarity(img, pos) - cosine_similarity(img, neg);
  BinaryCrossEntropy<Scalar> out;
  out.value = softplus(-d);
  out.probability = Scalar(1) / (Scalar(1) + std::exp(-d));
  const Scalar dd = out.probability - Scalar(1);  // d(-ln sigmoid(d))/dd
  const auto gp = cosine_similarity_backward(img, pos, dd);
  const auto gn = cosine_similarity_backward(img, neg, -dd);
  out.grad_img = gp.a + gn.a;
  out.grad_pos = gp.b;
  out.grad_neg = gn.b;
  return out;
}

// ---------------------------------------------------------------------------
// Differentiable preprocessing: bilinear resize to the encoder resolution,
// then per-channel (x - mean) / std.

struct ChannelNormalization {
  std::array<double, 3> mean{0.48145466, 0.4578275, 0.40821073};
  std::array<double, 3> stddev{0.26862954, 0.26130258, 0.27577711};
};

template <typename Scalar>
Planar<Scalar> preprocess(const Image<Scalar>& image, int resolution, const ChannelNormalization& norm = {}) {
  if (image.empty()) throw std::invalid_argument("encoder: degenerate (zero-area) image");
  Planar<Scalar> x = resize_bilinear(image.planes(), image.height(), image.width(), resolution, resolution);
  for (int c = 0; c < 3; ++c) {
    x.row(c) = (x.row(c) - static_cast<Scalar>(norm.mean[c])) / static_cast<Scalar>(norm.stddev[c]);
  }
  return x;
}

template <typename Scalar>
Image<Scalar> preprocess_backward(const Planar<Scalar>& grad, int height, int width, int resolution,
                                  const ChannelNormalization& norm = {}) {
  Planar<Scalar> g = grad;
  for (int c = 0; c < 3; ++c) g.row(c) /= static_cast<Scalar>(norm.stddev[c]);
  return Image<Scalar>(height, width, resize_bilinear_backward(g, height, width, resolution, resolution));
}

/// FNV-1a over raw bytes; used for weight checksums and text hashing.
inline std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t h = 1469598103934665603ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace zerolight
