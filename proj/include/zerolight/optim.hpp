#pragma once

#include "zerolight/errors.hpp"

#include <Eigen/Core>

#include <cmath>
#include <stdexcept>

namespace zerolight {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// L2 penalty folded into the gradient (coupled, as in torch.optim.Adam).
  double weight_decay = 0.0;

  void validate() const {
    if (!(lr > 0) || !std::isfinite(lr)) throw std::invalid_argument("adam: lr must be positive");
    if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) {
      throw std::invalid_argument("adam: betas must lie in [0, 1)");
    }
    if (!(eps > 0)) throw std::invalid_argument("adam: eps must be positive");
    if (!(weight_decay >= 0) || !std::isfinite(weight_decay)) {
      throw std::invalid_argument("adam: weight_decay must be non-negative");
    }
  }
};

/// Adam over one flat parameter vector. Moments are kept in Scalar; the
/// bias corrections are computed in double.
template <typename Scalar>
class Adam {
 public:
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  Adam() = default;
  Adam(const AdamConfig& cfg, Eigen::Index size)
      : cfg_(cfg), m_(Vector::Zero(size)), v_(Vector::Zero(size)) {
    cfg_.validate();
  }

  void step(Vector& params, Vector grad) {
    if (params.size() != m_.size() || grad.size() != m_.size()) {
      throw std::invalid_argument("adam: parameter/gradient size mismatch");
    }
    if (cfg_.weight_decay != 0) grad += static_cast<Scalar>(cfg_.weight_decay) * params;
    ++t_;
    const Scalar b1 = static_cast<Scalar>(cfg_.beta1);
    const Scalar b2 = static_cast<Scalar>(cfg_.beta2);
    m_ = b1 * m_ + (Scalar(1) - b1) * grad;
    v_ = b2 * v_ + (Scalar(1) - b2) * grad.cwiseAbs2();
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const Scalar step_size = static_cast<Scalar>(cfg_.lr / bc1);
    const Scalar bc2_sqrt = static_cast<Scalar>(std::sqrt(bc2));
    params.array() -= step_size * m_.array() / (v_.array().sqrt() / bc2_sqrt + static_cast<Scalar>(cfg_.eps));
  }

  const AdamConfig& config() const { return cfg_; }
  long long steps() const { return t_; }
  const Vector& first_moment() const { return m_; }
  const Vector& second_moment() const { return v_; }

  void restore(long long steps, Vector m, Vector v) {
    if (steps < 0 || m.size() != m_.size() || v.size() != v_.size()) {
      throw std::invalid_argument("adam: incompatible optimizer state");
    }
    t_ = steps;
    m_ = std::move(m);
    v_ = std::move(v);
  }

 private:
  AdamConfig cfg_;
  Vector m_;
  Vector v_;
  long long t_ = 0;
};

/// Rescales grad in place to global L2 norm max_norm when it exceeds it.
/// Returns the norm before clipping.
template <typename Derived>
double clip_gradients(Eigen::MatrixBase<Derived>& grad, double max_norm = 0.1) {
  if (!(max_norm > 0)) throw std::invalid_argument("clip_gradients: max_norm must be positive");
  const double norm = grad.template cast<double>().norm();
  if (!std::isfinite(norm)) throw InvalidState("clip_gradients: non-finite gradient");
  if (norm > max_norm) grad *= static_cast<typename Derived::Scalar>(max_norm / norm);
  return norm;
}

}  // namespace zerolight
