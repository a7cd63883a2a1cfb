#include "tcd/model.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "tcd/numerics.hpp"

namespace tcd {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

double sign(double v) { return (v > 0.0) - (v < 0.0); }

// First hidden unit whose slot is >= s; units are sorted by slot.
std::size_t first_unit_at_or_after(std::size_t slot, const ModelConfig& c) {
  // slot(u) = floor(u*T/F) >= s  <=>  u >= ceil(s*F/T)
  return (slot * c.ffn_dim + c.window - 1) / c.window;
}

// Q/K attention over already-projected per-slot queries and keys.
void attend(AttentionResult& r, const Tensor& mask, const Tensor& value, double temperature) {
  const std::size_t T = r.q.dim(0);
  const std::size_t N = r.q.dim(1);
  const std::size_t dk = r.q.dim(2);
  const double scale = 1.0 / (temperature * std::sqrt(static_cast<double>(dk)));
  r.logits = Tensor({T, N, N});
  r.scores = Tensor({T, N, N});
  r.weights = Tensor({T, N, N});
  r.out = Tensor({N, T});
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t i = 0; i < N; ++i) {
      const double* qi = r.q.data() + (t * N + i) * dk;
      double* logit_row = r.logits.data() + (t * N + i) * N;
      double* score_row = r.scores.data() + (t * N + i) * N;
      double* weight_row = r.weights.data() + (t * N + i) * N;
      for (std::size_t j = 0; j < N; ++j) {
        const double* kj = r.k.data() + (t * N + j) * dk;
        double dot = 0.0;
        for (std::size_t e = 0; e < dk; ++e) dot += qi[e] * kj[e];
        logit_row[j] = dot * scale;
        score_row[j] = logit_row[j] * mask(i, j);
        weight_row[j] = score_row[j];
      }
      softmax_inplace(std::span<double>(weight_row, N));
      double acc = 0.0;
      for (std::size_t j = 0; j < N; ++j) acc += weight_row[j] * value(j, i, t);
      r.out(i, t) = acc;
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Config and parameters
// ---------------------------------------------------------------------------

std::vector<std::string> ModelConfig::violations() const {
  std::vector<std::string> out;
  if (series < 2) out.push_back("model.series (N) must be >= 2");
  if (window < 2) out.push_back("model.window (T) must be >= 2");
  if (embed_dim <= window) out.push_back("model.embed_dim (d) must exceed model.window (T)");
  if (qk_dim < 1) out.push_back("model.qk_dim must be >= 1");
  if (heads < 1) out.push_back("model.heads must be >= 1");
  if (ffn_dim < 1) out.push_back("model.ffn_dim must be >= 1");
  if (!(temperature > 0.0) || !std::isfinite(temperature))
    out.push_back("model.temperature must be finite and > 0");
  if (!(kernel_l1 >= 0.0)) out.push_back("model.kernel_l1 must be >= 0");
  if (!(mask_l1 >= 0.0)) out.push_back("model.mask_l1 must be >= 0");
  if (!(leaky_slope > 0.0 && leaky_slope < 1.0))
    out.push_back("model.leaky_slope must lie in (0, 1)");
  if (time_local && ffn_dim < window)
    out.push_back("model.ffn_dim must be >= model.window when model.time_local is set");
  return out;
}

void ModelConfig::validate() const {
  const auto v = violations();
  if (v.empty()) return;
  std::ostringstream msg;
  msg << "invalid model config:";
  for (const auto& m : v) msg << "\n  " << m;
  throw std::invalid_argument(msg.str());
}

std::vector<Tensor*> ModelParams::tensors() {
  std::vector<Tensor*> out{&W_emb, &b_emb};
  for (auto& h : heads) {
    for (Tensor* t : {&h.W_Q, &h.b_Q, &h.W_K, &h.b_K, &h.kernel, &h.mask}) out.push_back(t);
  }
  for (Tensor* t : {&W_O, &W_ffn1, &b_ffn1, &W_ffn2, &b_ffn2, &W_out, &b_out}) out.push_back(t);
  return out;
}

std::vector<const Tensor*> ModelParams::tensors() const {
  auto mut = const_cast<ModelParams*>(this)->tensors();
  return {mut.begin(), mut.end()};
}

std::vector<std::string> ModelParams::names() const {
  std::vector<std::string> out{"W_emb", "b_emb"};
  for (std::size_t k = 0; k < heads.size(); ++k) {
    const std::string p = "heads." + std::to_string(k) + ".";
    for (const char* n : {"W_Q", "b_Q", "W_K", "b_K", "kernel", "mask"}) out.push_back(p + n);
  }
  for (const char* n : {"W_O", "W_ffn1", "b_ffn1", "W_ffn2", "b_ffn2", "W_out", "b_out"})
    out.emplace_back(n);
  return out;
}

bool ModelParams::all_finite() const {
  for (const Tensor* t : tensors())
    if (!t->all_finite()) return false;
  return true;
}

ModelParams zero_params(const ModelConfig& c) {
  const std::size_t N = c.series, T = c.window, d = c.embed_dim, dk = c.qk_dim, F = c.ffn_dim;
  ModelParams p;
  p.W_emb = Tensor({T, d});
  p.b_emb = Tensor({d});
  p.heads.resize(c.heads);
  for (auto& h : p.heads) {
    h.W_Q = Tensor({d, dk});
    h.b_Q = Tensor({dk});
    h.W_K = Tensor({d, dk});
    h.b_K = Tensor({dk});
    h.kernel = Tensor({N, N, T});
    h.mask = Tensor({N, N});
  }
  p.W_O = Tensor({c.heads});
  p.W_ffn1 = Tensor({T, F});
  p.b_ffn1 = Tensor({F});
  p.W_ffn2 = Tensor({F, T});
  p.b_ffn2 = Tensor({T});
  p.W_out = Tensor({T, T});
  p.b_out = Tensor({T});
  return p;
}

void check_params(const ModelParams& params, const ModelConfig& config) {
  const ModelParams ref = zero_params(config);
  if (params.heads.size() != ref.heads.size()) {
    throw DimensionError("parameter set has " + std::to_string(params.heads.size()) +
                         " heads, config expects " + std::to_string(ref.heads.size()));
  }
  const auto got = params.tensors();
  const auto want = ref.tensors();
  const auto names = ref.names();
  for (std::size_t i = 0; i < got.size(); ++i) check_shape(*got[i], want[i]->shape(), names[i].c_str());
}

ModelParams init_params(const ModelConfig& c, std::uint64_t seed) {
  c.validate();
  ModelParams p = zero_params(c);
  std::uint64_t stream = splitmix64(seed);
  auto next_seed = [&] { return stream = splitmix64(stream); };

  p.W_emb = he_init(p.W_emb.shape(), c.window, next_seed());
  for (auto& h : p.heads) {
    h.W_Q = he_init(h.W_Q.shape(), c.embed_dim, next_seed());
    h.W_K = he_init(h.W_K.shape(), c.embed_dim, next_seed());
    h.kernel = he_init(h.kernel.shape(), c.window, next_seed());
    h.mask.fill(1.0);
  }
  p.W_O = he_init(p.W_O.shape(), c.heads, next_seed());
  p.W_ffn1 = he_init(p.W_ffn1.shape(), c.window, next_seed());
  p.W_ffn2 = he_init(p.W_ffn2.shape(), c.ffn_dim, next_seed());
  p.W_out = he_init(p.W_out.shape(), c.window, next_seed());

  for (std::size_t s = 0; s < c.window; ++s) {
    for (std::size_t u = 0; u < c.ffn_dim; ++u) {
      if (!ffn_in_connected(s, u, c)) p.W_ffn1(s, u) = 0.0;
      if (!ffn_out_connected(u, s, c)) p.W_ffn2(u, s) = 0.0;
    }
    for (std::size_t t = 0; t < c.window; ++t)
      if (!output_connected(s, t, c)) p.W_out(s, t) = 0.0;
  }
  return p;
}

std::size_t ffn_unit_slot(std::size_t unit, const ModelConfig& c) {
  return unit * c.window / c.ffn_dim;
}

SlotRange ffn_units_of_slot(std::size_t slot, const ModelConfig& c) {
  const std::size_t first = first_unit_at_or_after(slot, c);
  return {first, c.time_local ? first_unit_at_or_after(slot + 1, c) : c.ffn_dim};
}

SlotRange ffn_slots_of_unit(std::size_t unit, const ModelConfig& c) {
  const std::size_t s = ffn_unit_slot(unit, c);
  return {s, c.time_local ? s + 1 : c.window};
}

SlotRange output_slots_of(std::size_t slot, const ModelConfig& c) {
  return {slot, c.time_local ? slot + 1 : c.window};
}

bool ffn_in_connected(std::size_t slot, std::size_t unit, const ModelConfig& c) {
  return ffn_units_of_slot(slot, c).contains(unit);
}

bool ffn_out_connected(std::size_t unit, std::size_t slot, const ModelConfig& c) {
  return ffn_slots_of_unit(unit, c).contains(slot);
}

bool output_connected(std::size_t from, std::size_t to, const ModelConfig& c) {
  return output_slots_of(from, c).contains(to);
}

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

Tensor embed(const Tensor& X, const ModelParams& params) {
  if (X.rank() != 2) throw DimensionError("embed: X must be [N, T]");
  return linear_forward(X, params.W_emb, params.b_emb);
}

Tensor prefix_embeddings(const Tensor& X, const ModelParams& params) {
  if (X.rank() != 2 || X.dim(1) != params.W_emb.dim(0))
    throw DimensionError("prefix_embeddings: X " + shape_string(X.shape()) + " vs W_emb " +
                         shape_string(params.W_emb.shape()));
  const std::size_t N = X.dim(0), T = X.dim(1), d = params.W_emb.dim(1);
  Tensor out({T, N, d});
  for (std::size_t n = 0; n < N; ++n) {
    double* slot0 = out.data() + n * d;
    for (std::size_t e = 0; e < d; ++e) slot0[e] = params.b_emb[e];
  }
  for (std::size_t t = 1; t < T; ++t) {
    for (std::size_t n = 0; n < N; ++n) {
      const double* prev = out.data() + ((t - 1) * N + n) * d;
      double* cur = out.data() + (t * N + n) * d;
      const double x = X(n, t - 1);
      const double* w = params.W_emb.data() + (t - 1) * d;
      for (std::size_t e = 0; e < d; ++e) cur[e] = prev[e] + x * w[e];
    }
  }
  return out;
}

Tensor causal_convolve(const Tensor& X, const Tensor& kernel) {
  if (X.rank() != 2) throw DimensionError("causal_convolve: X must be [N, T]");
  const std::size_t N = X.dim(0), T = X.dim(1);
  check_shape(kernel, {N, N, T}, "causal_convolve kernel");
  Tensor out({N, N, T});
  for (std::size_t j = 0; j < N; ++j) {
    const double* x = X.data() + j * T;
    for (std::size_t i = 0; i < N; ++i) {
      const double* k = kernel.data() + (j * N + i) * T;
      double* o = out.data() + (j * N + i) * T;
      for (std::size_t t = 0; t < T; ++t) {
        const double* kt = k + (T - 1 - t);
        double acc = 0.0;
        for (std::size_t s = 0; s <= t; ++s) acc += kt[s] * x[s];
        o[t] = acc / static_cast<double>(t + 1);
      }
    }
  }
  return out;
}

Tensor shift_self(const Tensor& conv) {
  if (conv.rank() != 3 || conv.dim(0) != conv.dim(1))
    throw DimensionError("shift_self: expected [N, N, T]");
  const std::size_t N = conv.dim(0), T = conv.dim(2);
  Tensor out = conv;
  for (std::size_t i = 0; i < N; ++i) {
    double* o = out.data() + (i * N + i) * T;
    const double* c = conv.data() + (i * N + i) * T;
    o[0] = 0.0;
    for (std::size_t t = 1; t < T; ++t) o[t] = c[t - 1];
  }
  return out;
}

AttentionResult attention_head(const Tensor& slot_embeddings, const Tensor& value,
                               const HeadParams& head, double temperature) {
  if (slot_embeddings.rank() != 3) throw DimensionError("attention_head: embeddings must be [T, N, d]");
  const std::size_t T = slot_embeddings.dim(0), N = slot_embeddings.dim(1);
  check_shape(value, {N, N, T}, "attention_head value");
  check_shape(head.mask, {N, N}, "attention_head mask");
  AttentionResult r;
  r.q = linear_forward(slot_embeddings, head.W_Q, head.b_Q);
  r.k = linear_forward(slot_embeddings, head.W_K, head.b_K);
  attend(r, head.mask, value, temperature);
  return r;
}

Tensor multi_head(std::span<const Tensor> heads, const Tensor& W_O) {
  if (heads.empty()) throw DimensionError("multi_head: need at least one head");
  check_shape(W_O, {heads.size()}, "multi_head W_O");
  Tensor out(heads[0].shape());
  for (std::size_t k = 0; k < heads.size(); ++k) {
    check_shape(heads[k], out.shape(), "multi_head head output");
    out.add_scaled(heads[k], W_O[k]);
  }
  return out;
}

namespace {

// Masked feed-forward pieces shared by forward and the standalone op.
void ffn_forward(const Tensor& att, const ModelParams& p, const ModelConfig& c, Tensor& pre,
                 Tensor& hidden, Tensor& out) {
  const std::size_t N = att.dim(0), T = c.window, F = c.ffn_dim;
  pre = Tensor({N, F});
  hidden = Tensor({N, F});
  out = Tensor({N, T});
  for (std::size_t n = 0; n < N; ++n) {
    double* h = pre.data() + n * F;
    for (std::size_t u = 0; u < F; ++u) h[u] = p.b_ffn1[u];
    for (std::size_t s = 0; s < T; ++s) {
      const double a = att(n, s);
      const double* w = p.W_ffn1.data() + s * F;
      const SlotRange units = ffn_units_of_slot(s, c);
      for (std::size_t u = units.begin; u < units.end; ++u) h[u] += a * w[u];
    }
    double* act = hidden.data() + n * F;
    for (std::size_t u = 0; u < F; ++u) act[u] = leaky_relu(h[u], c.leaky_slope);
    double* o = out.data() + n * T;
    for (std::size_t t = 0; t < T; ++t) o[t] = p.b_ffn2[t];
    for (std::size_t u = 0; u < F; ++u) {
      const double a = act[u];
      const double* w = p.W_ffn2.data() + u * T;
      const SlotRange slots = ffn_slots_of_unit(u, c);
      for (std::size_t t = slots.begin; t < slots.end; ++t) o[t] += a * w[t];
    }
  }
}

}  // namespace

Tensor ffn(const Tensor& att, const ModelParams& params, const ModelConfig& config) {
  if (att.rank() != 2 || att.dim(1) != config.window)
    throw DimensionError("ffn: expected [N, T], got " + shape_string(att.shape()));
  Tensor pre, hidden, out;
  ffn_forward(att, params, config, pre, hidden, out);
  return out;
}

Tensor output_layer(const Tensor& x, const ModelParams& params, const ModelConfig& c) {
  const std::size_t T = c.window;
  if (x.rank() != 2 || x.dim(1) != T) throw DimensionError("output_layer: expected [N, T]");
  const std::size_t N = x.dim(0);
  Tensor out({N, T});
  for (std::size_t n = 0; n < N; ++n) {
    double* o = out.data() + n * T;
    for (std::size_t t = 0; t < T; ++t) o[t] = params.b_out[t];
    for (std::size_t s = 0; s < T; ++s) {
      const double a = x(n, s);
      const double* w = params.W_out.data() + s * T;
      const SlotRange to = output_slots_of(s, c);
      for (std::size_t t = to.begin; t < to.end; ++t) o[t] += a * w[t];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------

QKFold zero_fold(const ModelConfig& c) {
  QKFold f;
  for (std::size_t k = 0; k < c.heads; ++k) {
    f.P_Q.emplace_back(Shape{c.window, c.qk_dim});
    f.c_Q.emplace_back(Shape{c.qk_dim});
    f.P_K.emplace_back(Shape{c.window, c.qk_dim});
    f.c_K.emplace_back(Shape{c.qk_dim});
  }
  return f;
}

QKFold fold_qk(const ModelParams& p, const ModelConfig& c) {
  QKFold f;
  for (const auto& h : p.heads) {
    Tensor zero_q({c.qk_dim});
    // P = W_emb·W, c = b_emb·W + b
    f.P_Q.push_back(linear_forward(p.W_emb, h.W_Q, zero_q));
    f.c_Q.push_back(linear_forward(p.b_emb, h.W_Q, h.b_Q));
    f.P_K.push_back(linear_forward(p.W_emb, h.W_K, zero_q));
    f.c_K.push_back(linear_forward(p.b_emb, h.W_K, h.b_K));
  }
  return f;
}

namespace {

Tensor folded_projection(const Tensor& X, const Tensor& P, const Tensor& bias) {
  const std::size_t N = X.dim(0), T = X.dim(1), dk = P.dim(1);
  Tensor out({T, N, dk});
  for (std::size_t n = 0; n < N; ++n) {
    double* slot0 = out.data() + n * dk;
    for (std::size_t e = 0; e < dk; ++e) slot0[e] = bias[e];
  }
  for (std::size_t t = 1; t < T; ++t) {
    const double* p = P.data() + (t - 1) * dk;
    for (std::size_t n = 0; n < N; ++n) {
      const double* prev = out.data() + ((t - 1) * N + n) * dk;
      double* cur = out.data() + (t * N + n) * dk;
      const double x = X(n, t - 1);
      for (std::size_t e = 0; e < dk; ++e) cur[e] = prev[e] + x * p[e];
    }
  }
  return out;
}

}  // namespace

ForwardTrace forward(const Tensor& X, const ModelParams& params, const ModelConfig& config) {
  return forward(X, params, config, fold_qk(params, config));
}

ForwardTrace forward(const Tensor& X, const ModelParams& params, const ModelConfig& config,
                     const QKFold& fold) {
  check_shape(X, {config.series, config.window}, "forward input");
  ForwardTrace tr;
  tr.input = X;
  tr.embeddings = prefix_embeddings(X, params);
  tr.heads.resize(config.heads);
  std::vector<Tensor> head_outputs;
  head_outputs.reserve(config.heads);
  for (std::size_t k = 0; k < config.heads; ++k) {
    const HeadParams& hp = params.heads[k];
    HeadTrace& ht = tr.heads[k];
    ht.conv = causal_convolve(X, hp.kernel);
    ht.value = shift_self(ht.conv);
    ht.attention.q = folded_projection(X, fold.P_Q[k], fold.c_Q[k]);
    ht.attention.k = folded_projection(X, fold.P_K[k], fold.c_K[k]);
    attend(ht.attention, hp.mask, ht.value, config.temperature);
    head_outputs.push_back(ht.attention.out);
  }
  tr.att = multi_head(head_outputs, params.W_O);
  ffn_forward(tr.att, params, config, tr.ffn_pre, tr.ffn_hidden, tr.ffn_out);
  tr.prediction = output_layer(tr.ffn_out, params, config);
  return tr;
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

double prediction_error(const Tensor& prediction, const Tensor& X) {
  check_shape(prediction, X.shape(), "prediction_error");
  const std::size_t N = X.dim(0), T = X.dim(1);
  double acc = 0.0;
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t t = 1; t < T; ++t) {
      const double e = prediction(n, t) - X(n, t);
      acc += e * e;
    }
  }
  return acc / static_cast<double>(N * T);
}

double regularization(const ModelParams& params, const ModelConfig& config) {
  double kernels = 0.0, masks = 0.0;
  for (const auto& h : params.heads) {
    kernels += h.kernel.abs_sum();
    masks += h.mask.abs_sum();
  }
  return config.kernel_l1 * kernels + config.mask_l1 * masks;
}

double loss(const Tensor& prediction, const Tensor& X, const ModelParams& params,
            const ModelConfig& config) {
  return prediction_error(prediction, X) + regularization(params, config);
}

Tensor prediction_error_grad(const Tensor& prediction, const Tensor& X) {
  check_shape(prediction, X.shape(), "prediction_error_grad");
  const std::size_t N = X.dim(0), T = X.dim(1);
  const double scale = 2.0 / static_cast<double>(N * T);
  Tensor g(X.shape());
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t t = 1; t < T; ++t) g(n, t) = scale * (prediction(n, t) - X(n, t));
  return g;
}

// ---------------------------------------------------------------------------
// Backward
// ---------------------------------------------------------------------------

std::vector<Tensor> backward_to_heads(const ForwardTrace& tr, const ModelParams& p,
                                      const ModelConfig& c, const Tensor& d_pred,
                                      Gradients* grads) {
  const std::size_t N = c.series, T = c.window, F = c.ffn_dim;
  check_shape(d_pred, {N, T}, "backward d_prediction");

  // Output layer.
  Tensor d_ffn_out({N, T});
  for (std::size_t n = 0; n < N; ++n) {
    const double* dy = d_pred.data() + n * T;
    for (std::size_t s = 0; s < T; ++s) {
      const double* w = p.W_out.data() + s * T;
      const SlotRange to = output_slots_of(s, c);
      double acc = 0.0;
      for (std::size_t t = to.begin; t < to.end; ++t) acc += dy[t] * w[t];
      d_ffn_out(n, s) = acc;
      if (grads) {
        const double a = tr.ffn_out(n, s);
        double* dw = grads->W_out.data() + s * T;
        for (std::size_t t = to.begin; t < to.end; ++t) dw[t] += a * dy[t];
      }
    }
    if (grads)
      for (std::size_t t = 0; t < T; ++t) grads->b_out[t] += dy[t];
  }

  // Second feed-forward linear and activation.
  Tensor d_pre({N, F});
  for (std::size_t n = 0; n < N; ++n) {
    const double* dy = d_ffn_out.data() + n * T;
    for (std::size_t u = 0; u < F; ++u) {
      const double* w = p.W_ffn2.data() + u * T;
      const SlotRange slots = ffn_slots_of_unit(u, c);
      double acc = 0.0;
      for (std::size_t t = slots.begin; t < slots.end; ++t) acc += dy[t] * w[t];
      d_pre(n, u) = acc * leaky_relu_derivative(tr.ffn_pre(n, u), c.leaky_slope);
      if (grads) {
        const double a = tr.ffn_hidden(n, u);
        double* dw = grads->W_ffn2.data() + u * T;
        for (std::size_t t = slots.begin; t < slots.end; ++t) dw[t] += a * dy[t];
      }
    }
    if (grads)
      for (std::size_t t = 0; t < T; ++t) grads->b_ffn2[t] += dy[t];
  }

  // First feed-forward linear.
  Tensor d_att({N, T});
  for (std::size_t n = 0; n < N; ++n) {
    const double* dh = d_pre.data() + n * F;
    for (std::size_t s = 0; s < T; ++s) {
      const double* w = p.W_ffn1.data() + s * F;
      const SlotRange units = ffn_units_of_slot(s, c);
      double acc = 0.0;
      for (std::size_t u = units.begin; u < units.end; ++u) acc += dh[u] * w[u];
      d_att(n, s) = acc;
      if (grads) {
        const double a = tr.att(n, s);
        double* dw = grads->W_ffn1.data() + s * F;
        for (std::size_t u = units.begin; u < units.end; ++u) dw[u] += a * dh[u];
      }
    }
    if (grads)
      for (std::size_t u = 0; u < F; ++u) grads->b_ffn1[u] += dh[u];
  }

  // Head combination.
  std::vector<Tensor> d_heads;
  d_heads.reserve(c.heads);
  for (std::size_t k = 0; k < c.heads; ++k) {
    Tensor dA = d_att;
    dA.scale(p.W_O[k]);
    d_heads.push_back(std::move(dA));
    if (grads) {
      const Tensor& A = tr.heads[k].attention.out;
      double acc = 0.0;
      for (std::size_t i = 0; i < A.size(); ++i) acc += A[i] * d_att[i];
      grads->W_O[k] += acc;
    }
  }
  return d_heads;
}

void backward(const ForwardTrace& tr, const ModelParams& p, const ModelConfig& c,
              const Tensor& d_pred, Gradients& grads, QKFold& fold_grads) {
  const std::size_t N = c.series, T = c.window, dk = c.qk_dim;
  const std::vector<Tensor> d_heads = backward_to_heads(tr, p, c, d_pred, &grads);
  const double scale = 1.0 / (c.temperature * std::sqrt(static_cast<double>(dk)));
  const Tensor& X = tr.input;

  std::vector<double> d_weight(N), d_row(N);
  Tensor dq({T, N, dk}), dkey({T, N, dk}), d_value({N, N, T});
  for (std::size_t k = 0; k < c.heads; ++k) {
    const HeadTrace& ht = tr.heads[k];
    const AttentionResult& at = ht.attention;
    const HeadParams& hp = p.heads[k];
    HeadParams& hg = grads.heads[k];
    const Tensor& dA = d_heads[k];
    dq.fill(0.0);
    dkey.fill(0.0);

    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t i = 0; i < N; ++i) {
        const double g = dA(i, t);
        const double* w = at.weights.data() + (t * N + i) * N;
        double dot = 0.0;
        for (std::size_t j = 0; j < N; ++j) {
          d_weight[j] = g * ht.value(j, i, t);
          d_value(j, i, t) = g * w[j];
          dot += w[j] * d_weight[j];
        }
        const double* logit = at.logits.data() + (t * N + i) * N;
        const double* qi = at.q.data() + (t * N + i) * dk;
        double* dqi = dq.data() + (t * N + i) * dk;
        for (std::size_t j = 0; j < N; ++j) {
          const double d_score = w[j] * (d_weight[j] - dot);
          hg.mask(i, j) += d_score * logit[j];
          const double d_logit = d_score * hp.mask(i, j) * scale;
          if (d_logit == 0.0) continue;
          const double* kj = at.k.data() + (t * N + j) * dk;
          double* dkj = dkey.data() + (t * N + j) * dk;
          for (std::size_t e = 0; e < dk; ++e) {
            dqi[e] += d_logit * kj[e];
            dkj[e] += d_logit * qi[e];
          }
        }
      }
    }

    // Folded query/key path: Q[t] = c + sum_{s<t} X[:,s] P[s].
    for (auto [dproj, dP, dc] : {std::tuple{&dq, &fold_grads.P_Q[k], &fold_grads.c_Q[k]},
                                 std::tuple{&dkey, &fold_grads.P_K[k], &fold_grads.c_K[k]}}) {
      Tensor suffix({N, dk});
      for (std::size_t t = T; t-- > 0;) {
        // suffix holds sum_{t' > t} dproj[t'] when slot t is visited.
        for (std::size_t n = 0; n < N; ++n) {
          const double x = X(n, t);
          double* dp = dP->data() + t * dk;
          const double* sn = suffix.data() + n * dk;
          for (std::size_t e = 0; e < dk; ++e) dp[e] += x * sn[e];
        }
        for (std::size_t n = 0; n < N; ++n) {
          const double* src = dproj->data() + (t * N + n) * dk;
          double* sn = suffix.data() + n * dk;
          for (std::size_t e = 0; e < dk; ++e) {
            sn[e] += src[e];
            (*dc)[e] += src[e];
          }
        }
      }
    }

    // Self shift and convolution kernels.
    for (std::size_t j = 0; j < N; ++j) {
      const double* x = X.data() + j * T;
      for (std::size_t i = 0; i < N; ++i) {
        double* dker = hg.kernel.data() + (j * N + i) * T;
        for (std::size_t t = 0; t < T; ++t) {
          double d_conv;
          if (i == j) {
            d_conv = t + 1 < T ? d_value(j, i, t + 1) : 0.0;
          } else {
            d_conv = d_value(j, i, t);
          }
          if (d_conv == 0.0) continue;
          const double g = d_conv / static_cast<double>(t + 1);
          double* dkt = dker + (T - 1 - t);
          for (std::size_t s = 0; s <= t; ++s) dkt[s] += g * x[s];
        }
      }
    }
  }
}

void unfold_qk_grad(const ModelParams& p, const ModelConfig& c, const QKFold& fg,
                    Gradients& grads) {
  const std::size_t T = c.window, d = c.embed_dim, dk = c.qk_dim;
  for (std::size_t k = 0; k < c.heads; ++k) {
    const HeadParams& hp = p.heads[k];
    HeadParams& hg = grads.heads[k];
    for (auto [W, dW, db, dP, dc] :
         {std::tuple{&hp.W_Q, &hg.W_Q, &hg.b_Q, &fg.P_Q[k], &fg.c_Q[k]},
          std::tuple{&hp.W_K, &hg.W_K, &hg.b_K, &fg.P_K[k], &fg.c_K[k]}}) {
      for (std::size_t e = 0; e < dk; ++e) (*db)[e] += (*dc)[e];
      for (std::size_t r = 0; r < d; ++r) {
        const double* wr = W->data() + r * dk;
        double* dwr = dW->data() + r * dk;
        // dW += W_emb^T dP + b_emb^T dc
        const double be = p.b_emb[r];
        double db_emb = 0.0;
        for (std::size_t e = 0; e < dk; ++e) {
          dwr[e] += be * (*dc)[e];
          db_emb += wr[e] * (*dc)[e];
        }
        grads.b_emb[r] += db_emb;
        for (std::size_t t = 0; t < T; ++t) {
          const double we = p.W_emb(t, r);
          const double* dpt = dP->data() + t * dk;
          double dw_emb = 0.0;
          for (std::size_t e = 0; e < dk; ++e) {
            dwr[e] += we * dpt[e];
            dw_emb += dpt[e] * wr[e];
          }
          grads.W_emb(t, r) += dw_emb;
        }
      }
    }
  }
}

void add_regularization_grad(const ModelParams& p, const ModelConfig& c, Gradients& grads) {
  for (std::size_t k = 0; k < p.heads.size(); ++k) {
    const HeadParams& hp = p.heads[k];
    HeadParams& hg = grads.heads[k];
    for (std::size_t i = 0; i < hp.kernel.size(); ++i) hg.kernel[i] += c.kernel_l1 * sign(hp.kernel[i]);
    for (std::size_t i = 0; i < hp.mask.size(); ++i) hg.mask[i] += c.mask_l1 * sign(hp.mask[i]);
  }
}

LossAndGradient loss_and_gradient(const Tensor& X, const ModelParams& params,
                                  const ModelConfig& config) {
  const QKFold fold = fold_qk(params, config);
  const ForwardTrace tr = forward(X, params, config, fold);
  LossAndGradient out;
  out.loss = loss(tr.prediction, X, params, config);
  out.grads = zero_params(config);
  QKFold fold_grads = zero_fold(config);
  backward(tr, params, config, prediction_error_grad(tr.prediction, X), out.grads, fold_grads);
  unfold_qk_grad(params, config, fold_grads, out.grads);
  add_regularization_grad(params, config, out.grads);
  return out;
}

}  // namespace tcd
