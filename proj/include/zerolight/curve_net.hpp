#pragma once

#include "zerolight/conv2d.hpp"
#include "zerolight/curve.hpp"
#include "zerolight/errors.hpp"
#include "zerolight/image.hpp"

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace zerolight {

struct CurveNetworkSpec {
  int n_iterations = 8;
  int width = 32;

  friend bool operator==(const CurveNetworkSpec&, const CurveNetworkSpec&) = default;
};

struct ConvLayerInfo {
  std::string name;
  int in_channels = 0;
  int out_channels = 0;
  Eigen::Index weight_offset = 0;
  Eigen::Index bias_offset = 0;

  Eigen::Index weight_size() const { return static_cast<Eigen::Index>(out_channels) * in_channels * 9; }
};

/// Layer table of the seven-layer curve estimator. Layers 5-7 consume the
/// concatenations (x3, x4), (x2, x5) and (x1, x6).
inline std::vector<ConvLayerInfo> curve_network_layers(const CurveNetworkSpec& spec) {
  const int w = spec.width;
  const std::array<std::pair<int, int>, 7> io = {{{3, w},
                                                  {w, w},
                                                  {w, w},
                                                  {w, w},
                                                  {2 * w, w},
                                                  {2 * w, w},
                                                  {2 * w, 3 * spec.n_iterations}}};
  std::vector<ConvLayerInfo> layers;
  Eigen::Index offset = 0;
  for (std::size_t i = 0; i < io.size(); ++i) {
    ConvLayerInfo info;
    info.name = "e_conv" + std::to_string(i + 1);
    info.in_channels = io[i].first;
    info.out_channels = io[i].second;
    info.weight_offset = offset;
    offset += info.weight_size();
    info.bias_offset = offset;
    offset += info.out_channels;
    layers.push_back(std::move(info));
  }
  return layers;
}

inline Eigen::Index curve_network_parameter_count(const CurveNetworkSpec& spec) {
  const auto layers = curve_network_layers(spec);
  return layers.back().bias_offset + layers.back().out_channels;
}

/// Lightweight fully convolutional estimator that predicts curve maps.
///
/// All weights live in one flat vector; per-layer weights and biases are
/// views into it. This keeps optimizer state, gradient clipping and
/// checksumming trivial.
template <typename Scalar>
class CurveNetwork {
 public:
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using WeightMap = Eigen::Map<const RowMatrix<Scalar>>;
  using BiasMap = Eigen::Map<const Vector>;

  /// Uninitialized; estimate_curves() rejects it.
  CurveNetwork() = default;

  explicit CurveNetwork(const CurveNetworkSpec& spec)
      : spec_(spec), layers_(curve_network_layers(spec)), params_(Vector::Zero(curve_network_parameter_count(spec))) {
    if (spec.n_iterations < 1 || spec.width < 1) throw std::invalid_argument("CurveNetwork: invalid spec");
  }

  CurveNetwork(const CurveNetworkSpec& spec, Vector params) : CurveNetwork(spec) {
    if (params.size() != params_.size()) throw std::invalid_argument("CurveNetwork: parameter count mismatch");
    params_ = std::move(params);
  }

  /// Conv weights ~ N(0, stddev); biases ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
  /// Values are drawn in double so float and double networks built from the
  /// same seed agree up to rounding.
  static CurveNetwork random(const CurveNetworkSpec& spec, std::uint64_t seed, double stddev = 0.02) {
    CurveNetwork net(spec);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, stddev);
    for (const auto& layer : net.layers_) {
      for (Eigen::Index i = 0; i < layer.weight_size(); ++i) {
        net.params_[layer.weight_offset + i] = static_cast<Scalar>(normal(rng));
      }
      const double bound = 1.0 / std::sqrt(layer.in_channels * 9.0);
      std::uniform_real_distribution<double> uniform(-bound, bound);
      for (int i = 0; i < layer.out_channels; ++i) {
        net.params_[layer.bias_offset + i] = static_cast<Scalar>(uniform(rng));
      }
    }
    return net;
  }

  bool initialized() const { return !layers_.empty() && params_.size() > 0; }
  const CurveNetworkSpec& spec() const { return spec_; }
  const std::vector<ConvLayerInfo>& layers() const { return layers_; }
  int n_iterations() const { return spec_.n_iterations; }

  Vector& parameters() { return params_; }
  const Vector& parameters() const { return params_; }
  Eigen::Index parameter_count() const { return params_.size(); }

  WeightMap weight(std::size_t layer) const {
    const auto& l = layers_.at(layer);
    return WeightMap(params_.data() + l.weight_offset, l.out_channels, static_cast<Eigen::Index>(l.in_channels) * 9);
  }
  BiasMap bias(std::size_t layer) const {
    const auto& l = layers_.at(layer);
    return BiasMap(params_.data() + l.bias_offset, l.out_channels);
  }

  /// Zeroes the head so every predicted alpha is exactly 0.
  void zero_head() {
    const auto& l = layers_.back();
    params_.segment(l.weight_offset, l.weight_size() + l.out_channels).setZero();
  }

  template <typename Other>
  CurveNetwork<Other> cast() const {
    return CurveNetwork<Other>(spec_, params_.template cast<Other>());
  }

 private:
  CurveNetworkSpec spec_;
  std::vector<ConvLayerInfo> layers_;
  Vector params_;
};

using CurveNetworkf = CurveNetwork<float>;
using CurveNetworkd = CurveNetwork<double>;

/// Intermediate activations kept for the backward pass.
template <typename Scalar>
struct CurveNetworkCache {
  int height = 0;
  int width = 0;
  Planar<Scalar> input;
  std::array<Planar<Scalar>, 6> hidden;  // post-ReLU x1..x6
  Planar<Scalar> output;                 // post-tanh maps
};

namespace detail {

template <typename Scalar>
Planar<Scalar> concat_rows(const Planar<Scalar>& a, const Planar<Scalar>& b) {
  Planar<Scalar> out(a.rows() + b.rows(), a.cols());
  out.topRows(a.rows()) = a;
  out.bottomRows(b.rows()) = b;
  return out;
}

}  // namespace detail

template <typename Scalar>
CurveMaps<Scalar> estimate_curves(const Image<Scalar>& image, const CurveNetwork<Scalar>& net,
                                  CurveNetworkCache<Scalar>* cache = nullptr) {
  if (!net.initialized()) throw InvalidState("estimate_curves: network parameters are not initialized");
  validate_image(image, "estimate_curves");
  const int h = image.height();
  const int w = image.width();
  auto layer = [&](std::size_t i, const Planar<Scalar>& in) {
    return conv3x3(in, h, w, net.weight(i), net.bias(i));
  };
  auto relu = [](const Planar<Scalar>& x) -> Planar<Scalar> { return x.cwiseMax(Scalar(0)); };

  const Planar<Scalar>& x0 = image.planes();
  Planar<Scalar> x1 = relu(layer(0, x0));
  Planar<Scalar> x2 = relu(layer(1, x1));
  Planar<Scalar> x3 = relu(layer(2, x2));
  Planar<Scalar> x4 = relu(layer(3, x3));
  Planar<Scalar> x5 = relu(layer(4, detail::concat_rows(x3, x4)));
  Planar<Scalar> x6 = relu(layer(5, detail::concat_rows(x2, x5)));
  Planar<Scalar> out = layer(6, detail::concat_rows(x1, x6)).tanh();

  CurveMaps<Scalar> maps(net.n_iterations(), h, w, out);
  if (cache) {
    cache->height = h;
    cache->width = w;
    cache->input = x0;
    cache->hidden = {std::move(x1), std::move(x2), std::move(x3), std::move(x4), std::move(x5), std::move(x6)};
    cache->output = std::move(out);
  }
  return maps;
}

/// Gradient of a scalar objective w.r.t. the flat parameter vector, given
/// its gradient w.r.t. the predicted maps.
template <typename Scalar>
typename CurveNetwork<Scalar>::Vector estimate_curves_backward(const CurveNetwork<Scalar>& net,
                                                               const CurveNetworkCache<Scalar>& cache,
                                                               const CurveMaps<Scalar>& grad_maps) {
  const int h = cache.height;
  const int w = cache.width;
  const auto& x = cache.hidden;
  const auto& layers = net.layers();
  typename CurveNetwork<Scalar>::Vector grad = CurveNetwork<Scalar>::Vector::Zero(net.parameter_count());

  auto store = [&](std::size_t i, const Conv3x3Gradients<Scalar>& g) {
    const auto& l = layers[i];
    Eigen::Map<RowMatrix<Scalar>>(grad.data() + l.weight_offset, l.out_channels,
                                  static_cast<Eigen::Index>(l.in_channels) * 9) = g.weight;
    grad.segment(l.bias_offset, l.out_channels) = g.bias;
  };
  auto relu_mask = [](const Planar<Scalar>& g, const Planar<Scalar>& act) -> Planar<Scalar> {
    return (act > Scalar(0)).select(g, Scalar(0));
  };
  const Eigen::Index wd = net.spec().width;

  Planar<Scalar> d_pre = grad_maps.alpha() * (Scalar(1) - cache.output.square());
  auto g7 = conv3x3_backward(detail::concat_rows(x[0], x[5]), h, w, net.weight(6), d_pre, true);
  store(6, g7);
  Planar<Scalar> dx1 = g7.input.topRows(wd);
  Planar<Scalar> dx6 = g7.input.bottomRows(wd);

  auto g6 = conv3x3_backward(detail::concat_rows(x[1], x[4]), h, w, net.weight(5), relu_mask(dx6, x[5]), true);
  store(5, g6);
  Planar<Scalar> dx2 = g6.input.topRows(wd);
  Planar<Scalar> dx5 = g6.input.bottomRows(wd);

  auto g5 = conv3x3_backward(detail::concat_rows(x[2], x[3]), h, w, net.weight(4), relu_mask(dx5, x[4]), true);
  store(4, g5);
  Planar<Scalar> dx3 = g5.input.topRows(wd);
  Planar<Scalar> dx4 = g5.input.bottomRows(wd);

  auto g4 = conv3x3_backward(x[2], h, w, net.weight(3), relu_mask(dx4, x[3]), true);
  store(3, g4);
  dx3 += g4.input;

  auto g3 = conv3x3_backward(x[1], h, w, net.weight(2), relu_mask(dx3, x[2]), true);
  store(2, g3);
  dx2 += g3.input;

  auto g2 = conv3x3_backward(x[0], h, w, net.weight(1), relu_mask(dx2, x[1]), true);
  store(1, g2);
  dx1 += g2.input;

  auto g1 = conv3x3_backward(cache.input, h, w, net.weight(0), relu_mask(dx1, x[0]), false);
  store(0, g1);
  return grad;
}

template <typename Scalar>
struct Enhancement {
  Image<Scalar> enhanced;
  CurveMaps<Scalar> maps;
};

/// Predicts curve maps and applies them. Both are returned because the
/// smoothness loss is defined on the maps.
template <typename Scalar>
Enhancement<Scalar> enhance(const Image<Scalar>& image, const CurveNetwork<Scalar>& net,
                            CurveNetworkCache<Scalar>* cache = nullptr) {
  CurveMaps<Scalar> maps = estimate_curves(image, net, cache);
  Image<Scalar> out = apply_curve(image, maps);
  return {std::move(out), std::move(maps)};
}

/// Parameter gradient of an objective that depends on both the enhanced
/// image and the maps returned by enhance().
template <typename Scalar>
typename CurveNetwork<Scalar>::Vector enhance_backward(const CurveNetwork<Scalar>& net,
                                                       const CurveNetworkCache<Scalar>& cache,
                                                       const Image<Scalar>& input, const CurveMaps<Scalar>& maps,
                                                       const Image<Scalar>& grad_enhanced,
                                                       const CurveMaps<Scalar>* grad_maps) {
  CurveGradients<Scalar> through_curve = apply_curve_backward(input, maps, grad_enhanced);
  if (grad_maps) through_curve.maps.alpha() += grad_maps->alpha();
  return estimate_curves_backward(net, cache, through_curve.maps);
}

}  // namespace zerolight
