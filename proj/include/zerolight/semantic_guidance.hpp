#pragma once

#include "zerolight/encoder.hpp"
#include "zerolight/image.hpp"
#include "zerolight/losses.hpp"

#include <mutex>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace zerolight {

/// Lowercases ASCII, trims, collapses internal whitespace to one space.
/// Throws std::invalid_argument when nothing is left.
std::string normalize_label(std::string_view raw);

/// Open-vocabulary class name, always stored normalized.
class ClassLabel {
 public:
  explicit ClassLabel(std::string_view raw) : name_(normalize_label(raw)) {}
  const std::string& name() const { return name_; }
  bool operator==(const ClassLabel&) const = default;

 private:
  std::string name_;
};

struct AntonymPromptPair {
  std::string positive;  // "a photo of a {cls}"
  std::string negative;  // "not a photo of a {cls}"
  std::string label;
  bool operator==(const AntonymPromptPair&) const = default;
};

AntonymPromptPair build_antonym_pair(const ClassLabel& label);

/// Text embeddings keyed by the exact prompt string. Reads take a shared
/// lock; misses encode outside the lock and insert under an exclusive one,
/// so the first inserted value wins and every reader sees the same vector.
template <typename Scalar>
class TextEmbeddingCache {
 public:
  Vector<Scalar> get(const Encoder<Scalar>& enc, const std::string& text) {
    {
      std::shared_lock lock(mutex_);
      auto it = map_.find(text);
      if (it != map_.end()) return it->second;
    }
    Vector<Scalar> fresh = enc.encode_text(text);
    std::unique_lock lock(mutex_);
    return map_.try_emplace(text, std::move(fresh)).first->second;
  }

  std::size_t size() const {
    std::shared_lock lock(mutex_);
    return map_.size();
  }

  void clear() {
    std::unique_lock lock(mutex_);
    map_.clear();
  }

 private:
  mutable std::shared_mutex mutex_;
  std::unordered_map<std::string, Vector<Scalar>> map_;
};

template <typename Scalar>
struct LabelEmbeddings {
  Vector<Scalar> positive;
  Vector<Scalar> negative;
};

template <typename Scalar>
LabelEmbeddings<Scalar> label_embeddings(const ClassLabel& label, const Encoder<Scalar>& enc,
                                         TextEmbeddingCache<Scalar>& cache) {
  const auto pair = build_antonym_pair(label);
  return {cache.get(enc, pair.positive), cache.get(enc, pair.negative)};
}

/// -ln P(positive text) on a precomputed image embedding.
template <typename Scalar>
BinaryCrossEntropy<Scalar> semantic_loss_on_embedding(const Vector<Scalar>& image, const LabelEmbeddings<Scalar>& t) {
  return binary_cross_entropy(image, t.positive, t.negative);
}

template <typename Scalar>
LossWithGrad<Scalar, Image<Scalar>> semantic_loss_grad(const Image<Scalar>& patch, const ClassLabel& label,
                                                       const Encoder<Scalar>& enc,
                                                       TextEmbeddingCache<Scalar>& cache) {
  validate_image(patch, "semantic_loss");
  const auto img = enc.encode_image(patch);
  const auto bce = semantic_loss_on_embedding(img.embedding, label_embeddings(label, enc, cache));
  return {bce.value, img.backward(bce.grad_img)};
}

template <typename Scalar>
Scalar semantic_loss(const Image<Scalar>& patch, const ClassLabel& label, const Encoder<Scalar>& enc,
                     TextEmbeddingCache<Scalar>& cache) {
  validate_image(patch, "semantic_loss");
  return semantic_loss_on_embedding(enc.encode_image(patch).embedding, label_embeddings(label, enc, cache)).value;
}

template <typename Scalar>
using LabelledPatch = std::pair<Image<Scalar>, ClassLabel>;

/// Batch mean of semantic_loss plus per-patch gradients (already divided by
/// the batch size).
template <typename Scalar>
LossWithGrad<Scalar, std::vector<Image<Scalar>>> batch_semantic_loss_grad(
    std::span<const LabelledPatch<Scalar>> batch, const Encoder<Scalar>& enc, TextEmbeddingCache<Scalar>& cache) {
  if (batch.empty()) throw std::invalid_argument("batch_semantic_loss: empty batch");
  const Scalar inv = Scalar(1) / static_cast<Scalar>(batch.size());
  LossWithGrad<Scalar, std::vector<Image<Scalar>>> out{Scalar(0), {}};
  out.grad.reserve(batch.size());
  for (const auto& [patch, label] : batch) {
    auto l = semantic_loss_grad(patch, label, enc, cache);
    out.value += l.value;
    l.grad.planes() *= inv;
    out.grad.push_back(std::move(l.grad));
  }
  out.value *= inv;
  return out;
}

template <typename Scalar>
Scalar batch_semantic_loss(std::span<const LabelledPatch<Scalar>> batch, const Encoder<Scalar>& enc,
                           TextEmbeddingCache<Scalar>& cache) {
  if (batch.empty()) throw std::invalid_argument("batch_semantic_loss: empty batch");
  Scalar total = 0;
  for (const auto& [patch, label] : batch) total += semantic_loss(patch, label, enc, cache);
  return total / static_cast<Scalar>(batch.size());
}

}  // namespace zerolight
