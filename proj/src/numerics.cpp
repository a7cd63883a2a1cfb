#include "tcd/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace tcd {

namespace {

void check_linear(const Tensor& x, const Tensor& W, const Tensor& b) {
  if (x.rank() < 1 || W.rank() != 2 || b.rank() != 1) {
    throw DimensionError("linear: expected x[...,in], W[in,out], b[out]");
  }
  if (x.shape().back() != W.dim(0) || W.dim(1) != b.dim(0)) {
    throw DimensionError("linear: x " + shape_string(x.shape()) + ", W " +
                         shape_string(W.shape()) + ", b " + shape_string(b.shape()));
  }
}

// Splits a tensor of shape [..., n] into (rows, n) around `axis`:
// outer * axis_len * inner.
struct AxisView {
  std::size_t outer = 1;
  std::size_t len = 1;
  std::size_t inner = 1;
};

AxisView axis_view(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) throw DimensionError("softmax: axis out of range");
  AxisView v;
  for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
  v.len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
  return v;
}

}  // namespace

Tensor linear_forward(const Tensor& x, const Tensor& W, const Tensor& b) {
  check_linear(x, W, b);
  const std::size_t in = W.dim(0);
  const std::size_t out = W.dim(1);
  const std::size_t rows = x.size() / in;
  Shape shape = x.shape();
  shape.back() = out;
  Tensor y(shape);
  for (std::size_t r = 0; r < rows; ++r) {
    double* yr = y.data() + r * out;
    const double* xr = x.data() + r * in;
    for (std::size_t o = 0; o < out; ++o) yr[o] = b[o];
    for (std::size_t i = 0; i < in; ++i) {
      const double xi = xr[i];
      const double* wi = W.data() + i * out;
      for (std::size_t o = 0; o < out; ++o) yr[o] += xi * wi[o];
    }
  }
  return y;
}

void linear_backward(const Tensor& x, const Tensor& W, const Tensor& dy, Tensor* dx, Tensor& dW,
                     Tensor& db) {
  check_linear(x, W, db);
  check_shape(dW, W.shape(), "linear_backward dW");
  const std::size_t in = W.dim(0);
  const std::size_t out = W.dim(1);
  const std::size_t rows = x.size() / in;
  if (dy.size() != rows * out) throw DimensionError("linear_backward: dy extent");
  if (dx) *dx = Tensor(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * in;
    const double* dyr = dy.data() + r * out;
    for (std::size_t o = 0; o < out; ++o) db[o] += dyr[o];
    for (std::size_t i = 0; i < in; ++i) {
      double* dwi = dW.data() + i * out;
      const double* wi = W.data() + i * out;
      double acc = 0.0;
      for (std::size_t o = 0; o < out; ++o) {
        dwi[o] += xr[i] * dyr[o];
        acc += wi[o] * dyr[o];
      }
      if (dx) (*dx)[r * in + i] = acc;
    }
  }
}

Tensor leaky_relu(const Tensor& x, double slope) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = leaky_relu(x[i], slope);
  return y;
}

Tensor leaky_relu_backward(const Tensor& x, const Tensor& dy, double slope) {
  check_shape(dy, x.shape(), "leaky_relu_backward");
  Tensor dx(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) dx[i] = dy[i] * leaky_relu_derivative(x[i], slope);
  return dx;
}

void softmax_inplace(std::span<double> row) {
  if (row.empty()) return;
  const double peak = *std::max_element(row.begin(), row.end());
  double total = 0.0;
  for (auto& v : row) {
    v = std::exp(v - peak);
    total += v;
  }
  for (auto& v : row) v /= total;
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  const AxisView v = axis_view(x.shape(), axis);
  Tensor y(x.shape());
  std::vector<double> buf(v.len);
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t in = 0; in < v.inner; ++in) {
      const std::size_t base = o * v.len * v.inner + in;
      for (std::size_t k = 0; k < v.len; ++k) buf[k] = x[base + k * v.inner];
      softmax_inplace(buf);
      for (std::size_t k = 0; k < v.len; ++k) y[base + k * v.inner] = buf[k];
    }
  }
  return y;
}

Tensor softmax_backward(const Tensor& y, const Tensor& dy, std::size_t axis) {
  check_shape(dy, y.shape(), "softmax_backward");
  const AxisView v = axis_view(y.shape(), axis);
  Tensor dx(y.shape());
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t in = 0; in < v.inner; ++in) {
      const std::size_t base = o * v.len * v.inner + in;
      double dot = 0.0;
      for (std::size_t k = 0; k < v.len; ++k) {
        const std::size_t idx = base + k * v.inner;
        dot += y[idx] * dy[idx];
      }
      for (std::size_t k = 0; k < v.len; ++k) {
        const std::size_t idx = base + k * v.inner;
        dx[idx] = y[idx] * (dy[idx] - dot);
      }
    }
  }
  return dx;
}

Tensor he_init(const Shape& shape, std::size_t fan_in, std::uint64_t seed) {
  if (fan_in == 0) throw std::invalid_argument("he_init: fan_in must be >= 1");
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  Tensor t(shape);
  for (auto& v : t.values()) v = normal(rng);
  return t;
}

AdamState::AdamState(std::span<const Tensor* const> params, AdamConfig cfg) : config(cfg) {
  first_moment.reserve(params.size());
  second_moment.reserve(params.size());
  for (const Tensor* p : params) {
    first_moment.emplace_back(p->shape());
    second_moment.emplace_back(p->shape());
  }
}

void adam_step(std::span<Tensor* const> params, std::span<const Tensor* const> grads,
               AdamState& state) {
  if (params.size() != grads.size() || params.size() != state.first_moment.size()) {
    throw DimensionError("adam_step: parameter, gradient and state counts differ");
  }
  for (std::size_t p = 0; p < params.size(); ++p) {
    check_shape(*grads[p], params[p]->shape(), "adam_step gradient");
    check_shape(state.first_moment[p], params[p]->shape(), "adam_step first moment");
  }
  state.step += 1;
  const AdamConfig& c = state.config;
  const double t = static_cast<double>(state.step);
  const double bias1 = 1.0 - std::pow(c.beta1, t);
  const double bias2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& theta = *params[p];
    const Tensor& g = *grads[p];
    Tensor& m = state.first_moment[p];
    Tensor& v = state.second_moment[p];
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
      const double m_hat = m[i] / bias1;
      const double v_hat = v[i] / bias2;
      theta[i] -= c.learning_rate * m_hat / (std::sqrt(v_hat) + c.epsilon);
    }
  }
}

Tensor finite_diff_grad(const ScalarFunction& f, const Tensor& x, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("finite_diff_grad: eps must be > 0");
  Tensor g(x.shape());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + eps;
    const double up = f(probe);
    probe[i] = orig - eps;
    const double down = f(probe);
    probe[i] = orig;
    g[i] = (up - down) / (2.0 * eps);
  }
  return g;
}

double max_relative_error(const Tensor& analytic, const Tensor& numeric, double floor) {
  check_shape(numeric, analytic.shape(), "max_relative_error");
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double scale = std::max({std::abs(analytic[i]), std::abs(numeric[i]), floor});
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / scale);
  }
  return worst;
}

}  // namespace tcd
