#pragma once

#include "zerolight/clip_tokenizer.hpp"
#include "zerolight/conv2d.hpp"
#include "zerolight/encoder.hpp"
#include "zerolight/errors.hpp"
#include "zerolight/tensor_archive.hpp"

#include <cmath>
#include <limits>
#include <memory>
#include <sstream>
#include <vector>

// CLIP-architecture dual encoder (ViT image tower + causal text transformer)
// loaded from a safetensors checkpoint with Hugging Face CLIPModel tensor
// names. Weights are frozen: only input gradients are computed.

namespace zerolight {

namespace clip {

template <typename Scalar>
struct Linear {
  RowMatrix<Scalar> weight;  // out x in
  Vector<Scalar> bias;       // empty when the layer has no bias

  RowMatrix<Scalar> forward(const RowMatrix<Scalar>& x) const {
    RowMatrix<Scalar> y = x * weight.transpose();
    if (bias.size() > 0) y.rowwise() += bias.transpose();
    return y;
  }
  RowMatrix<Scalar> backward_input(const RowMatrix<Scalar>& dy) const { return dy * weight; }
};

template <typename Scalar>
struct LayerNorm {
  Vector<Scalar> gamma;
  Vector<Scalar> beta;
  double eps = 1e-5;

  struct Cache {
    RowMatrix<Scalar> xhat;
    Vector<Scalar> rstd;
  };

  RowMatrix<Scalar> forward(const RowMatrix<Scalar>& x, Cache* cache) const {
    const Eigen::Index n = x.cols();
    RowMatrix<Scalar> xhat(x.rows(), n);
    Vector<Scalar> rstd(x.rows());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      const Scalar mu = x.row(r).mean();
      const auto centered = (x.row(r).array() - mu).matrix();
      const Scalar var = centered.squaredNorm() / static_cast<Scalar>(n);
      rstd[r] = Scalar(1) / std::sqrt(var + static_cast<Scalar>(eps));
      xhat.row(r) = centered * rstd[r];
    }
    RowMatrix<Scalar> y = (xhat.array().rowwise() * gamma.transpose().array()).matrix();
    y.rowwise() += beta.transpose();
    if (cache) *cache = {std::move(xhat), std::move(rstd)};
    return y;
  }

  RowMatrix<Scalar> backward(const RowMatrix<Scalar>& dy, const Cache& cache) const {
    const Scalar n = static_cast<Scalar>(dy.cols());
    RowMatrix<Scalar> dxhat = (dy.array().rowwise() * gamma.transpose().array()).matrix();
    RowMatrix<Scalar> dx(dy.rows(), dy.cols());
    for (Eigen::Index r = 0; r < dy.rows(); ++r) {
      const Scalar mean_d = dxhat.row(r).sum() / n;
      const Scalar mean_dx = dxhat.row(r).dot(cache.xhat.row(r)) / n;
      dx.row(r) = cache.rstd[r] * (dxhat.row(r).array() - mean_d - cache.xhat.row(r).array() * mean_dx).matrix();
    }
    return dx;
  }
};

template <typename Scalar>
struct Attention {
  Linear<Scalar> q, k, v, out;
  int heads = 1;

  struct Cache {
    RowMatrix<Scalar> x;
    RowMatrix<Scalar> q, k, v;  // q already scaled
    std::vector<RowMatrix<Scalar>> probs;
    RowMatrix<Scalar> context;
  };

  RowMatrix<Scalar> forward(const RowMatrix<Scalar>& x, bool causal, Cache* cache) const {
    const Eigen::Index len = x.rows();
    const Eigen::Index width = q.weight.rows();
    const Eigen::Index hd = width / heads;
    const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(hd));
    RowMatrix<Scalar> qm = q.forward(x) * scale;
    RowMatrix<Scalar> km = k.forward(x);
    RowMatrix<Scalar> vm = v.forward(x);
    RowMatrix<Scalar> context(len, width);
    std::vector<RowMatrix<Scalar>> probs(heads);
    for (int h = 0; h < heads; ++h) {
      RowMatrix<Scalar> s = qm.middleCols(h * hd, hd) * km.middleCols(h * hd, hd).transpose();
      for (Eigen::Index i = 0; i < len; ++i) {
        const Eigen::Index valid = causal ? i + 1 : len;
        const Scalar mx = s.row(i).head(valid).maxCoeff();
        s.row(i).head(valid) = (s.row(i).head(valid).array() - mx).exp().matrix();
        s.row(i).head(valid) /= s.row(i).head(valid).sum();
        if (valid < len) s.row(i).tail(len - valid).setZero();
      }
      context.middleCols(h * hd, hd) = s * vm.middleCols(h * hd, hd);
      probs[h] = std::move(s);
    }
    RowMatrix<Scalar> y = out.forward(context);
    if (cache) *cache = {x, std::move(qm), std::move(km), std::move(vm), std::move(probs), std::move(context)};
    return y;
  }

  RowMatrix<Scalar> backward(const RowMatrix<Scalar>& dy, const Cache& c) const {
    const Eigen::Index width = q.weight.rows();
    const Eigen::Index hd = width / heads;
    const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(hd));
    const RowMatrix<Scalar> dctx = out.backward_input(dy);
    RowMatrix<Scalar> dq(c.q.rows(), width), dk(c.k.rows(), width), dv(c.v.rows(), width);
    for (int h = 0; h < heads; ++h) {
      const auto& a = c.probs[h];
      const RowMatrix<Scalar> dout_h = dctx.middleCols(h * hd, hd);
      const RowMatrix<Scalar> da = dout_h * c.v.middleCols(h * hd, hd).transpose();
      dv.middleCols(h * hd, hd) = a.transpose() * dout_h;
      const Vector<Scalar> rowdot = (da.array() * a.array()).rowwise().sum();
      const RowMatrix<Scalar> ds = (a.array() * (da.array().colwise() - rowdot.array())).matrix();
      dq.middleCols(h * hd, hd) = ds * c.k.middleCols(h * hd, hd);
      dk.middleCols(h * hd, hd) = ds.transpose() * c.q.middleCols(h * hd, hd);
    }
    return q.backward_input(dq * scale) + k.backward_input(dk) + v.backward_input(dv);
  }
};

template <typename Scalar>
struct Block {
  LayerNorm<Scalar> ln1, ln2;
  Attention<Scalar> attn;
  Linear<Scalar> fc1, fc2;

  struct Cache {
    typename LayerNorm<Scalar>::Cache ln1, ln2;
    typename Attention<Scalar>::Cache attn;
    RowMatrix<Scalar> hidden;  // fc1 output (pre-activation)
  };

  static Scalar quick_gelu(Scalar x) { return x / (Scalar(1) + std::exp(Scalar(-1.702) * x)); }
  static Scalar quick_gelu_grad(Scalar x) {
    const Scalar s = Scalar(1) / (Scalar(1) + std::exp(Scalar(-1.702) * x));
    return s + Scalar(1.702) * x * s * (Scalar(1) - s);
  }

  RowMatrix<Scalar> forward(const RowMatrix<Scalar>& x, bool causal, Cache* cache) const {
    typename LayerNorm<Scalar>::Cache c1, c2;
    typename Attention<Scalar>::Cache ca;
    RowMatrix<Scalar> x1 = x + attn.forward(ln1.forward(x, &c1), causal, &ca);
    RowMatrix<Scalar> hidden = fc1.forward(ln2.forward(x1, &c2));
    RowMatrix<Scalar> y = x1 + fc2.forward(hidden.unaryExpr([](Scalar v) { return quick_gelu(v); }));
    if (cache) *cache = {std::move(c1), std::move(c2), std::move(ca), std::move(hidden)};
    return y;
  }

  RowMatrix<Scalar> backward(const RowMatrix<Scalar>& dy, const Cache& c) const {
    const RowMatrix<Scalar> dact = fc2.backward_input(dy);
    const RowMatrix<Scalar> dhidden =
        (dact.array() * c.hidden.unaryExpr([](Scalar v) { return quick_gelu_grad(v); }).array()).matrix();
    RowMatrix<Scalar> dx1 = dy + ln2.backward(fc1.backward_input(dhidden), c.ln2);
    return dx1 + ln1.backward(attn.backward(dx1, c.attn), c.ln1);
  }
};

template <typename Scalar>
struct Weights {
  // vision tower
  int patch_size = 0;
  int image_size = 0;
  RowMatrix<Scalar> patch_embedding;  // width x (3 * P * P)
  Vector<Scalar> class_embedding;
  RowMatrix<Scalar> vision_positions;
  LayerNorm<Scalar> pre_ln, post_ln;
  std::vector<Block<Scalar>> vision_blocks;
  RowMatrix<Scalar> visual_projection;  // D x width
  // text tower
  RowMatrix<Scalar> token_embedding;  // vocab x width
  RowMatrix<Scalar> text_positions;   // context x width
  std::vector<Block<Scalar>> text_blocks;
  LayerNorm<Scalar> final_ln;
  RowMatrix<Scalar> text_projection;  // D x width
};

template <typename Scalar>
RowMatrix<Scalar> to_matrix(const Tensor& t, Eigen::Index rows, Eigen::Index cols, const std::string& name) {
  if (t.element_count() != rows * cols) throw ParseError("clip checkpoint: unexpected shape for " + name);
  return Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(t.data.data(), rows,
                                                                                                  cols)
      .template cast<Scalar>();
}

template <typename Scalar>
Vector<Scalar> to_vector(const Tensor& t) {
  return Eigen::Map<const Eigen::VectorXf>(t.data.data(), static_cast<Eigen::Index>(t.data.size()))
      .template cast<Scalar>();
}

template <typename Scalar>
Linear<Scalar> load_linear(const TensorArchive& a, const std::string& prefix, bool bias = true) {
  const auto& w = a.at(prefix + ".weight");
  if (w.shape.size() != 2) throw ParseError("clip checkpoint: " + prefix + ".weight is not 2-D");
  Linear<Scalar> l;
  l.weight = to_matrix<Scalar>(w, w.shape[0], w.shape[1], prefix);
  if (bias) l.bias = to_vector<Scalar>(a.at(prefix + ".bias"));
  return l;
}

template <typename Scalar>
LayerNorm<Scalar> load_layer_norm(const TensorArchive& a, const std::string& prefix) {
  return {to_vector<Scalar>(a.at(prefix + ".weight")), to_vector<Scalar>(a.at(prefix + ".bias"))};
}

template <typename Scalar>
std::vector<Block<Scalar>> load_blocks(const TensorArchive& a, const std::string& prefix, int heads_override) {
  std::vector<Block<Scalar>> blocks;
  for (int i = 0;; ++i) {
    const std::string p = prefix + ".encoder.layers." + std::to_string(i);
    if (!a.contains(p + ".layer_norm1.weight")) break;
    Block<Scalar> b;
    b.ln1 = load_layer_norm<Scalar>(a, p + ".layer_norm1");
    b.ln2 = load_layer_norm<Scalar>(a, p + ".layer_norm2");
    b.attn.q = load_linear<Scalar>(a, p + ".self_attn.q_proj");
    b.attn.k = load_linear<Scalar>(a, p + ".self_attn.k_proj");
    b.attn.v = load_linear<Scalar>(a, p + ".self_attn.v_proj");
    b.attn.out = load_linear<Scalar>(a, p + ".self_attn.out_proj");
    const int width = static_cast<int>(b.attn.q.weight.rows());
    b.attn.heads = heads_override > 0 ? heads_override : std::max(1, width / 64);
    if (width % b.attn.heads != 0) throw ParseError("clip checkpoint: width not divisible by head count");
    b.fc1 = load_linear<Scalar>(a, p + ".mlp.fc1");
    b.fc2 = load_linear<Scalar>(a, p + ".mlp.fc2");
    blocks.push_back(std::move(b));
  }
  if (blocks.empty()) throw ParseError("clip checkpoint: no transformer layers under " + prefix);
  return blocks;
}

template <typename Scalar>
Weights<Scalar> load_weights(const TensorArchive& a, int vision_heads, int text_heads) {
  Weights<Scalar> w;
  const auto& patch = a.at("vision_model.embeddings.patch_embedding.weight");
  if (patch.shape.size() != 4 || patch.shape[1] != 3 || patch.shape[2] != patch.shape[3]) {
    throw ParseError("clip checkpoint: unexpected patch embedding shape");
  }
  const Eigen::Index width = patch.shape[0];
  w.patch_size = static_cast<int>(patch.shape[2]);
  w.patch_embedding = to_matrix<Scalar>(patch, width, 3 * patch.shape[2] * patch.shape[3], "patch_embedding");
  w.class_embedding = to_vector<Scalar>(a.at("vision_model.embeddings.class_embedding"));
  const auto& vpos = a.at("vision_model.embeddings.position_embedding.weight");
  w.vision_positions = to_matrix<Scalar>(vpos, vpos.shape.at(0), width, "vision position_embedding");
  const auto grid = static_cast<int>(std::lround(std::sqrt(static_cast<double>(vpos.shape[0] - 1))));
  if (grid * grid + 1 != vpos.shape[0]) throw ParseError("clip checkpoint: vision positions are not a square grid");
  w.image_size = grid * w.patch_size;
  w.pre_ln = load_layer_norm<Scalar>(a, "vision_model.pre_layrnorm");
  w.post_ln = load_layer_norm<Scalar>(a, "vision_model.post_layernorm");
  w.vision_blocks = load_blocks<Scalar>(a, "vision_model", vision_heads);
  w.visual_projection = load_linear<Scalar>(a, "visual_projection", false).weight;

  const auto& tok = a.at("text_model.embeddings.token_embedding.weight");
  w.token_embedding = to_matrix<Scalar>(tok, tok.shape.at(0), tok.shape.at(1), "token_embedding");
  const auto& tpos = a.at("text_model.embeddings.position_embedding.weight");
  w.text_positions = to_matrix<Scalar>(tpos, tpos.shape.at(0), tpos.shape.at(1), "text position_embedding");
  w.text_blocks = load_blocks<Scalar>(a, "text_model", text_heads);
  w.final_ln = load_layer_norm<Scalar>(a, "text_model.final_layer_norm");
  w.text_projection = load_linear<Scalar>(a, "text_projection", false).weight;
  if (w.visual_projection.rows() != w.text_projection.rows()) {
    throw ParseError("clip checkpoint: image and text projections disagree on embedding size");
  }
  return w;
}

template <typename Scalar>
struct TowerCache {
  std::vector<typename Block<Scalar>::Cache> blocks;
  typename LayerNorm<Scalar>::Cache pre_ln;
  typename LayerNorm<Scalar>::Cache pooled_ln;
};

template <typename Scalar>
RowMatrix<Scalar> run_blocks(const std::vector<Block<Scalar>>& blocks, RowMatrix<Scalar> x, bool causal,
                             TowerCache<Scalar>& cache) {
  cache.blocks.resize(blocks.size());
  for (std::size_t i = 0; i < blocks.size(); ++i) x = blocks[i].forward(x, causal, &cache.blocks[i]);
  return x;
}

template <typename Scalar>
RowMatrix<Scalar> run_blocks_backward(const std::vector<Block<Scalar>>& blocks, RowMatrix<Scalar> dx,
                                      const TowerCache<Scalar>& cache) {
  for (std::size_t i = blocks.size(); i-- > 0;) dx = blocks[i].backward(dx, cache.blocks[i]);
  return dx;
}

}  // namespace clip

/// Frozen CLIP dual encoder.
template <typename Scalar>
class ClipEncoder final : public Encoder<Scalar> {
 public:
  ClipEncoder(const TensorArchive& checkpoint, std::shared_ptr<const ClipTokenizer> tokenizer, int vision_heads = 0,
              int text_heads = 0)
      : weights_(std::make_shared<const clip::Weights<Scalar>>(
            clip::load_weights<Scalar>(checkpoint, vision_heads, text_heads))),
        tokenizer_(std::move(tokenizer)) {
    if (!tokenizer_) throw std::invalid_argument("ClipEncoder: tokenizer required");
  }

  std::string variant() const override {
    std::ostringstream os;
    os << "clip-vit-p" << weights_->patch_size << "-r" << weights_->image_size << "-w"
       << weights_->patch_embedding.rows() << "-l" << weights_->vision_blocks.size() << "-d" << embedding_dim();
    return os.str();
  }
  int embedding_dim() const override { return static_cast<int>(weights_->visual_projection.rows()); }
  int token_width() const override { return static_cast<int>(weights_->token_embedding.cols()); }
  int max_prompt_tokens() const override { return static_cast<int>(weights_->text_positions.rows()) - 2; }
  int input_resolution() const override { return weights_->image_size; }

  ImageEncoding<Scalar> encode_image(const Image<Scalar>& image) const override {
    const auto& w = *weights_;
    const int res = w.image_size;
    const int p = w.patch_size;
    const int grid = res / p;
    const int h = image.height();
    const int wd = image.width();
    const Planar<Scalar> x = preprocess(image, res);

    RowMatrix<Scalar> patches(static_cast<Eigen::Index>(grid) * grid, 3 * p * p);
    for (int gy = 0; gy < grid; ++gy)
      for (int gx = 0; gx < grid; ++gx)
        for (int c = 0; c < 3; ++c)
          for (int ky = 0; ky < p; ++ky)
            for (int kx = 0; kx < p; ++kx)
              patches(gy * grid + gx, (c * p + ky) * p + kx) = x(c, (gy * p + ky) * res + gx * p + kx);

    RowMatrix<Scalar> seq(patches.rows() + 1, w.patch_embedding.rows());
    seq.row(0) = w.class_embedding.transpose();
    seq.bottomRows(patches.rows()) = patches * w.patch_embedding.transpose();
    seq += w.vision_positions;

    auto cache = std::make_shared<clip::TowerCache<Scalar>>();
    RowMatrix<Scalar> hidden = clip::run_blocks(w.vision_blocks, w.pre_ln.forward(seq, &cache->pre_ln), false, *cache);
    const RowMatrix<Scalar> pooled = w.post_ln.forward(hidden.topRows(1), &cache->pooled_ln);
    const auto normalized = l2_normalize<Scalar>(w.visual_projection * pooled.row(0).transpose());

    ImageEncoding<Scalar> enc;
    enc.embedding = normalized.value;
    enc.backward = [weights = weights_, cache, normalized, h, wd, res, p, grid,
                    len = hidden.rows()](const Vector<Scalar>& grad) {
      const auto& w = *weights;
      const Vector<Scalar> dpooled = w.visual_projection.transpose() * l2_normalize_backward(normalized, grad);
      RowMatrix<Scalar> dhidden = RowMatrix<Scalar>::Zero(len, w.patch_embedding.rows());
      dhidden.row(0) = w.post_ln.backward(dpooled.transpose(), cache->pooled_ln);
      const RowMatrix<Scalar> dseq = w.pre_ln.backward(clip::run_blocks_backward(w.vision_blocks, dhidden, *cache),
                                                       cache->pre_ln);
      const RowMatrix<Scalar> dpatches = dseq.bottomRows(len - 1) * w.patch_embedding;
      Planar<Scalar> dx = Planar<Scalar>::Zero(3, static_cast<Eigen::Index>(res) * res);
      for (int gy = 0; gy < grid; ++gy)
        for (int gx = 0; gx < grid; ++gx)
          for (int c = 0; c < 3; ++c)
            for (int ky = 0; ky < p; ++ky)
              for (int kx = 0; kx < p; ++kx)
                dx(c, (gy * p + ky) * res + gx * p + kx) = dpatches(gy * grid + gx, (c * p + ky) * p + kx);
      return preprocess_backward<Scalar>(dx, h, wd, res);
    };
    return enc;
  }

  Vector<Scalar> encode_text(std::string_view text) const override {
    const std::vector<int> ids = tokenizer_->encode_with_sentinels(text);
    const auto& w = *weights_;
    if (ids.size() > static_cast<std::size_t>(w.text_positions.rows())) {
      throw std::invalid_argument("encode_text: text exceeds the encoder context");
    }
    RowMatrix<Scalar> seq(static_cast<Eigen::Index>(ids.size()), token_width());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] >= w.token_embedding.rows()) throw std::invalid_argument("encode_text: token id outside vocabulary");
      seq.row(static_cast<Eigen::Index>(i)) = w.token_embedding.row(ids[i]);
    }
    clip::TowerCache<Scalar> cache;
    return encode_sequence(std::move(seq), cache).value;
  }

  PromptEncoding<Scalar> encode_prompt(const TokenMatrix<Scalar>& prompt) const override {
    if (prompt.cols() != token_width()) throw std::invalid_argument("encode_prompt: token width mismatch");
    if (prompt.rows() < 1 || prompt.rows() > max_prompt_tokens()) {
      throw std::invalid_argument("encode_prompt: prompt length out of range");
    }
    const auto& w = *weights_;
    const Eigen::Index n = prompt.rows();
    RowMatrix<Scalar> seq(n + 2, token_width());
    seq.row(0) = w.token_embedding.row(tokenizer_->start_token());
    seq.middleRows(1, n) = prompt;
    seq.row(n + 1) = w.token_embedding.row(tokenizer_->end_token());
    auto cache = std::make_shared<clip::TowerCache<Scalar>>();
    const auto normalized = encode_sequence(std::move(seq), *cache);
    PromptEncoding<Scalar> enc;
    enc.embedding = normalized.value;
    enc.backward = [weights = weights_, cache, normalized, n](const Vector<Scalar>& grad) {
      const auto& w = *weights;
      const Vector<Scalar> dpooled = w.text_projection.transpose() * l2_normalize_backward(normalized, grad);
      RowMatrix<Scalar> dhidden = RowMatrix<Scalar>::Zero(n + 2, w.token_embedding.cols());
      dhidden.row(n + 1) = w.final_ln.backward(dpooled.transpose(), cache->pooled_ln);
      const RowMatrix<Scalar> dseq = clip::run_blocks_backward(w.text_blocks, dhidden, *cache);
      TokenMatrix<Scalar> out = dseq.middleRows(1, n);
      return out;
    };
    return enc;
  }

  std::uint64_t weights_checksum() const override {
    const auto& w = *weights_;
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](const auto& m) { h = fnv1a(m.data(), sizeof(Scalar) * static_cast<std::size_t>(m.size()), h); };
    auto mix_blocks = [&](const std::vector<clip::Block<Scalar>>& blocks) {
      for (const auto& b : blocks) {
        for (const auto* l : {&b.attn.q, &b.attn.k, &b.attn.v, &b.attn.out, &b.fc1, &b.fc2}) {
          mix(l->weight);
          mix(l->bias);
        }
        mix(b.ln1.gamma);
        mix(b.ln1.beta);
        mix(b.ln2.gamma);
        mix(b.ln2.beta);
      }
    };
    mix(w.patch_embedding);
    mix(w.class_embedding);
    mix(w.vision_positions);
    mix(w.pre_ln.gamma);
    mix(w.pre_ln.beta);
    mix(w.post_ln.gamma);
    mix(w.post_ln.beta);
    mix_blocks(w.vision_blocks);
    mix(w.visual_projection);
    mix(w.token_embedding);
    mix(w.text_positions);
    mix_blocks(w.text_blocks);
    mix(w.final_ln.gamma);
    mix(w.final_ln.beta);
    mix(w.text_projection);
    return h;
  }

  const ClipTokenizer& tokenizer() const { return *tokenizer_; }
  const clip::Weights<Scalar>& weights() const { return *weights_; }

 private:
  /// Text tower on an embedded sequence [start, tokens..., end]; pools the
  /// final (end-sentinel) position.
  NormalizedVector<Scalar> encode_sequence(RowMatrix<Scalar> seq, clip::TowerCache<Scalar>& cache) const {
    const auto& w = *weights_;
    if (seq.rows() > w.text_positions.rows()) throw std::invalid_argument("text encoder: sequence too long");
    seq += w.text_positions.topRows(seq.rows());
    const RowMatrix<Scalar> hidden = clip::run_blocks(w.text_blocks, std::move(seq), true, cache);
    const RowMatrix<Scalar> pooled = w.final_ln.forward(hidden.bottomRows(1), &cache.pooled_ln);
    return l2_normalize<Scalar>(w.text_projection * pooled.row(0).transpose());
  }

  std::shared_ptr<const clip::Weights<Scalar>> weights_;
  std::shared_ptr<const ClipTokenizer> tokenizer_;
};

}  // namespace zerolight
