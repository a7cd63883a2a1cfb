#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "tcd/tensor.hpp"

namespace tcd {

// ---------------------------------------------------------------------------
// Differentiable primitives. Every forward has a matching backward that
// accumulates into caller-owned gradient tensors.
// ---------------------------------------------------------------------------

/// y = x·W + b over the last axis of `x`; leading axes are broadcast.
Tensor linear_forward(const Tensor& x, const Tensor& W, const Tensor& b);

/// Vector-Jacobian product of `linear_forward`. `dW` and `db` are
/// accumulated; `dx` (if non-null) is overwritten.
void linear_backward(const Tensor& x, const Tensor& W, const Tensor& dy, Tensor* dx, Tensor& dW,
                     Tensor& db);

inline double leaky_relu(double x, double slope) noexcept { return x > 0.0 ? x : slope * x; }
inline double leaky_relu_derivative(double x, double slope) noexcept {
  return x > 0.0 ? 1.0 : slope;
}

Tensor leaky_relu(const Tensor& x, double slope);
Tensor leaky_relu_backward(const Tensor& x, const Tensor& dy, double slope);

/// Max-stabilized softmax along `axis`. Any temperature must already be
/// folded into `x`.
Tensor softmax(const Tensor& x, std::size_t axis);

/// Given y = softmax(x) and dL/dy, returns dL/dx.
Tensor softmax_backward(const Tensor& y, const Tensor& dy, std::size_t axis);

/// Row softmax of a contiguous `width`-long slice, in place.
void softmax_inplace(std::span<double> row);

/// Normal(0, sqrt(2 / fan_in)) samples, deterministic in `seed`.
Tensor he_init(const Shape& shape, std::size_t fan_in, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  std::int64_t step = 0;

  AdamState() = default;
  /// Zero moments shaped like `params`.
  AdamState(std::span<const Tensor* const> params, AdamConfig config);
};

/// One bias-corrected Adam update of `params` in place. Shapes of `params`,
/// `grads` and the state's moments must agree pairwise.
void adam_step(std::span<Tensor* const> params, std::span<const Tensor* const> grads,
               AdamState& state);

// ---------------------------------------------------------------------------
// Finite-difference oracle
// ---------------------------------------------------------------------------

using ScalarFunction = std::function<double(const Tensor&)>;

/// Central differences (f(x + eps e_i) - f(x - eps e_i)) / (2 eps) per element.
Tensor finite_diff_grad(const ScalarFunction& f, const Tensor& x, double eps);

/// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor); the floor keeps
/// near-zero entries from dominating.
double max_relative_error(const Tensor& analytic, const Tensor& numeric, double floor = 1e-6);

}  // namespace tcd
