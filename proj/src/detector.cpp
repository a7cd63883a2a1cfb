#include "tcd/detector.hpp"
#include "tcd/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

namespace tcd {

std::vector<std::string> DetectorConfig::violations() const {
  std::vector<std::string> out;
  if (classes < 1) out.push_back("detector.classes (n) must be >= 1");
  if (top_classes < 1 || top_classes > classes)
    out.push_back("detector.top_classes (m) must satisfy 1 <= m <= n");
  if (!(theta > 0.0)) out.push_back("detector.theta must be > 0");
  if (kmeans_restarts < 1) out.push_back("detector.kmeans_restarts must be >= 1");
  if (kmeans_max_iter < 1) out.push_back("detector.kmeans_max_iter must be >= 1");
  if (!(stabilizer > 0.0)) out.push_back("detector.stabilizer must be > 0");
  if (!(zoom >= 0.0) || !std::isfinite(zoom)) out.push_back("detector.zoom must be >= 0");
  return out;
}

void DetectorConfig::validate() const {
  const auto v = violations();
  if (v.empty()) return;
  std::ostringstream msg;
  msg << "invalid detector config:";
  for (const auto& m : v) msg << "\n  " << m;
  throw std::invalid_argument(msg.str());
}

Tensor init_relevance(std::size_t target, std::size_t series) {
  if (target >= series) {
    throw std::out_of_range("relevance target " + std::to_string(target + 1) +
                            " outside 1.." + std::to_string(series));
  }
  Tensor r({series});
  r[target] = 1.0;
  return r;
}

double stabilized(double f, double stabilizer) noexcept {
  if (std::abs(f) >= stabilizer) return f;
  return f + (f < 0.0 ? -stabilizer : stabilizer);
}

namespace {

// Guarded denominator that records how often the guard fired on a
// non-zero upper relevance.
struct Denominator {
  double stabilizer;
  std::size_t events = 0;

  double operator()(double f, double r_upper) {
    if (std::abs(f) < stabilizer && r_upper != 0.0) ++events;
    return stabilized(f, stabilizer);
  }
};

}  // namespace

LayerRelevance rrp_layer(const Tensor& x, const Tensor& f, const Tensor& jacobian,
                         const Tensor& r_upper, double stabilizer) {
  if (x.rank() != 1 || f.rank() != 1) throw DimensionError("rrp_layer: x and f must be vectors");
  const std::size_t in = x.size(), out = f.size();
  check_shape(jacobian, {out, in}, "rrp_layer jacobian");
  check_shape(r_upper, {out}, "rrp_layer upper relevance");
  Denominator den{stabilizer};
  LayerRelevance r;
  r.lower = Tensor({in});
  for (std::size_t j = 0; j < out; ++j) {
    if (r_upper[j] == 0.0) continue;
    const double ratio = r_upper[j] / den(f[j], r_upper[j]);
    double linear = 0.0;
    for (std::size_t i = 0; i < in; ++i) {
      const double z = x[i] * jacobian(j, i);
      r.lower[i] += z * ratio;
      linear += z;
    }
    r.bias += (f[j] - linear) * ratio;
  }
  r.stabilized = den.events;
  return r;
}

LayerRelevance rrp_affine(const Tensor& x, const Tensor& W, const Tensor& b,
                          const Tensor& r_upper, double stabilizer) {
  if (x.rank() != 1 || W.rank() != 2 || W.dim(0) != x.size())
    throw DimensionError("rrp_affine: expected x[in], W[in,out], b[out]");
  const std::size_t in = W.dim(0), out = W.dim(1);
  check_shape(b, {out}, "rrp_affine bias");
  check_shape(r_upper, {out}, "rrp_affine upper relevance");
  Denominator den{stabilizer};
  LayerRelevance r;
  r.lower = Tensor({in});
  for (std::size_t j = 0; j < out; ++j) {
    if (r_upper[j] == 0.0) continue;
    double f = b[j];
    for (std::size_t i = 0; i < in; ++i) f += x[i] * W(i, j);
    const double ratio = r_upper[j] / den(f, r_upper[j]);
    for (std::size_t i = 0; i < in; ++i) r.lower[i] += x[i] * W(i, j) * ratio;
    r.bias += b[j] * ratio;
  }
  r.stabilized = den.events;
  return r;
}

ProductRelevance rrp_matmul(const Tensor& A, const Tensor& B, const Tensor& r_product,
                            double stabilizer) {
  if (A.rank() != 2 || B.rank() != 2 || A.dim(1) != B.dim(0))
    throw DimensionError("rrp_matmul: expected A[N,K], B[K,M]");
  const std::size_t N = A.dim(0), K = A.dim(1), M = B.dim(1);
  check_shape(r_product, {N, M}, "rrp_matmul relevance");
  Denominator den{stabilizer};
  ProductRelevance r{Tensor({N, K}), Tensor({K, M}), 0};
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t m = 0; m < M; ++m) {
      const double rel = r_product(n, m);
      if (rel == 0.0) continue;
      double prod = 0.0;
      for (std::size_t k = 0; k < K; ++k) prod += A(n, k) * B(k, m);
      const double ratio = rel / den(prod, rel);
      for (std::size_t k = 0; k < K; ++k) {
        const double share = A(n, k) * B(k, m) * ratio;
        r.a(n, k) += share;
        r.b(k, m) += share;
      }
    }
  }
  r.stabilized = den.events;
  return r;
}

RelevanceMap propagate(const ForwardTrace& tr, const ModelParams& p, const ModelConfig& c,
                       std::size_t target, double stabilizer, double zoom) {
  const std::size_t N = c.series, T = c.window, F = c.ffn_dim;
  const Tensor one_hot = init_relevance(target, N);
  const std::size_t i = target;
  Denominator den{stabilizer};
  RelevanceMap rm;
  rm.target = target;

  // Series-level mass spread evenly over the predicted slots whose
  // magnitude reaches the zoom threshold.
  std::vector<double> r_pred(T, 0.0);
  std::size_t kept = 0;
  for (std::size_t t = 0; t < T; ++t) kept += std::abs(tr.prediction(i, t)) >= zoom ? 1 : 0;
  for (std::size_t t = 0; t < T; ++t)
    if (std::abs(tr.prediction(i, t)) >= zoom) r_pred[t] = one_hot[i] / static_cast<double>(kept);
  rm.slots_kept = kept;

  // Output layer: prediction[i,t] = b_out[t] + sum_s ffn_out[i,s] W_out[s,t].
  std::vector<double> r_ffn_out(T, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    const double ratio = r_pred[t] / den(tr.prediction(i, t), r_pred[t]);
    for (std::size_t s = 0; s <= t; ++s)
      if (output_connected(s, t, c)) r_ffn_out[s] += tr.ffn_out(i, s) * p.W_out(s, t) * ratio;
    rm.bias_output += p.b_out[t] * ratio;
  }

  // Second feed-forward linear.
  std::vector<double> r_hidden(F, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    if (r_ffn_out[t] == 0.0) continue;
    const double ratio = r_ffn_out[t] / den(tr.ffn_out(i, t), r_ffn_out[t]);
    for (std::size_t u = 0; u < F; ++u) {
      if (!ffn_out_connected(u, t, c)) continue;
      r_hidden[u] += tr.ffn_hidden(i, u) * p.W_ffn2(u, t) * ratio;
    }
    rm.bias_ffn2 += p.b_ffn2[t] * ratio;
  }

  // Activation: pointwise, x * f'(x) / f(x).
  std::vector<double> r_pre(F, 0.0);
  for (std::size_t u = 0; u < F; ++u) {
    if (r_hidden[u] == 0.0) continue;
    const double x = tr.ffn_pre(i, u);
    r_pre[u] = x * leaky_relu_derivative(x, c.leaky_slope) * r_hidden[u] /
               den(tr.ffn_hidden(i, u), r_hidden[u]);
  }

  // First feed-forward linear.
  std::vector<double> r_att(T, 0.0);
  for (std::size_t u = 0; u < F; ++u) {
    if (r_pre[u] == 0.0) continue;
    const double ratio = r_pre[u] / den(tr.ffn_pre(i, u), r_pre[u]);
    for (std::size_t s = 0; s < T; ++s) {
      if (!ffn_in_connected(s, u, c)) continue;
      r_att[s] += tr.att(i, s) * p.W_ffn1(s, u) * ratio;
    }
    rm.bias_ffn1 += p.b_ffn1[u] * ratio;
  }

  // Head combination and, per head, value aggregation and convolution.
  rm.heads.resize(c.heads);
  for (std::size_t k = 0; k < c.heads; ++k) {
    const HeadTrace& ht = tr.heads[k];
    const HeadParams& hp = p.heads[k];
    HeadRelevance& hr = rm.heads[k];
    hr.attn_slots = Tensor({T, N, N});
    hr.attn = Tensor({N, N});
    hr.kernel = Tensor({N, N, T});

    Tensor r_value({N, N, T});
    for (std::size_t t = 0; t < T; ++t) {
      if (r_att[t] == 0.0) continue;
      const double r_head =
          ht.attention.out(i, t) * p.W_O[k] * r_att[t] / den(tr.att(i, t), r_att[t]);
      if (r_head == 0.0) continue;
      // out[i,t] = sum_j weights[t,i,j] * value[j,i,t], one row of a product.
      const double ratio = r_head / den(ht.attention.out(i, t), r_head);
      for (std::size_t j = 0; j < N; ++j) {
        const double share = ht.attention.weights(t, i, j) * ht.value(j, i, t) * ratio;
        hr.attn_slots(t, i, j) += share;
        hr.attn(i, j) += share;
        r_value(j, i, t) += share;
      }
    }

    // Undo the self shift, then split each convolution output between the
    // kernel and the scaled input it multiplies.
    for (std::size_t j = 0; j < N; ++j) {
      const double* x = tr.input.data() + j * T;
      for (std::size_t t = 0; t < T; ++t) {
        const double r_conv =
            (j == i) ? (t + 1 < T ? r_value(j, i, t + 1) : 0.0) : r_value(j, i, t);
        if (r_conv == 0.0) continue;
        const double ratio = r_conv / den(ht.conv(j, i, t), r_conv);
        const double inv = 1.0 / static_cast<double>(t + 1);
        for (std::size_t s = 0; s <= t; ++s) {
          const std::size_t slot = T - 1 - t + s;
          hr.kernel(j, i, slot) += hp.kernel(j, i, slot) * x[s] * inv * ratio;
        }
      }
    }
  }
  rm.stabilized = den.events;
  return rm;
}

std::vector<HeadGradients> target_gradients(const ForwardTrace& tr, const ModelParams& p,
                                            const ModelConfig& c, std::size_t target) {
  const std::size_t N = c.series, T = c.window;
  if (target >= N) throw std::out_of_range("gradient target out of range");
  Tensor seed({N, T});
  for (std::size_t t = 0; t < T; ++t) seed(target, t) = 1.0;
  const std::vector<Tensor> d_heads = backward_to_heads(tr, p, c, seed, nullptr);

  const std::size_t i = target;
  std::vector<HeadGradients> out(c.heads);
  for (std::size_t k = 0; k < c.heads; ++k) {
    const HeadTrace& ht = tr.heads[k];
    HeadGradients& g = out[k];
    g.attn_slots = Tensor({T, N, N});
    g.kernel = Tensor({N, N, T});
    Tensor d_value({N, N, T});
    for (std::size_t t = 0; t < T; ++t) {
      const double dA = d_heads[k](i, t);
      for (std::size_t j = 0; j < N; ++j) {
        g.attn_slots(t, i, j) = dA * ht.value(j, i, t);
        d_value(j, i, t) = dA * ht.attention.weights(t, i, j);
      }
    }
    for (std::size_t j = 0; j < N; ++j) {
      const double* x = tr.input.data() + j * T;
      for (std::size_t t = 0; t < T; ++t) {
        const double d_conv =
            (j == i) ? (t + 1 < T ? d_value(j, i, t + 1) : 0.0) : d_value(j, i, t);
        if (d_conv == 0.0) continue;
        const double scaled = d_conv / static_cast<double>(t + 1);
        for (std::size_t s = 0; s <= t; ++s) g.kernel(j, i, T - 1 - t + s) += scaled * x[s];
      }
    }
  }
  return out;
}

TargetScores gradient_modulate(const RelevanceMap& rel, std::span<const HeadGradients> grads) {
  if (grads.size() != rel.heads.size() || rel.heads.empty())
    throw DimensionError("gradient_modulate: head counts differ");
  const Tensor& slots0 = rel.heads[0].attn_slots;
  const std::size_t T = slots0.dim(0), N = slots0.dim(1);
  TargetScores s;
  s.target = rel.target;
  s.attn = Tensor({N, N});
  s.kernel = Tensor({N, N, T});
  const double inv_heads = 1.0 / static_cast<double>(grads.size());
  for (std::size_t k = 0; k < grads.size(); ++k) {
    const HeadRelevance& hr = rel.heads[k];
    const HeadGradients& hg = grads[k];
    check_shape(hg.attn_slots, hr.attn_slots.shape(), "gradient_modulate attention gradient");
    check_shape(hg.kernel, hr.kernel.shape(), "gradient_modulate kernel gradient");
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t r = 0; r < N; ++r) {
        for (std::size_t j = 0; j < N; ++j) {
          const double v = std::abs(hg.attn_slots(t, r, j)) * hr.attn_slots(t, r, j);
          if (v > 0.0) s.attn(r, j) += v * inv_heads;
        }
      }
    }
    for (std::size_t e = 0; e < hr.kernel.size(); ++e) {
      const double v = std::abs(hg.kernel[e]) * hr.kernel[e];
      if (v > 0.0) s.kernel[e] += v * inv_heads;
    }
  }
  return s;
}

TargetScores aggregate_scores(std::span<const TargetScores> scores) {
  if (scores.empty()) throw std::invalid_argument("aggregate_scores: no windows to aggregate");
  TargetScores mean = scores[0];
  for (std::size_t w = 1; w < scores.size(); ++w) {
    mean.attn.add_scaled(scores[w].attn);
    mean.kernel.add_scaled(scores[w].kernel);
  }
  const double inv = 1.0 / static_cast<double>(scores.size());
  mean.attn.scale(inv);
  mean.kernel.scale(inv);
  return mean;
}

// ---------------------------------------------------------------------------
// k-means edge selection
// ---------------------------------------------------------------------------

namespace {

std::size_t nearest(double v, const std::vector<double>& centroids) {
  std::size_t best = 0;
  double best_d = std::abs(v - centroids[0]);
  for (std::size_t c = 1; c < centroids.size(); ++c) {
    const double d = std::abs(v - centroids[c]);
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return best;
}

KMeansResult lloyd(std::span<const double> values, std::vector<double> centroids,
                   std::size_t max_iter) {
  const std::size_t k = centroids.size();
  std::vector<std::size_t> assign(values.size(), k);
  for (std::size_t iter = 0; iter < max_iter; ++iter) {
    bool changed = false;
    for (std::size_t v = 0; v < values.size(); ++v) {
      const std::size_t c = nearest(values[v], centroids);
      if (c != assign[v]) {
        assign[v] = c;
        changed = true;
      }
    }
    if (!changed) break;
    std::vector<double> sum(k, 0.0);
    std::vector<std::size_t> count(k, 0);
    for (std::size_t v = 0; v < values.size(); ++v) {
      sum[assign[v]] += values[v];
      ++count[assign[v]];
    }
    for (std::size_t c = 0; c < k; ++c)
      if (count[c]) centroids[c] = sum[c] / static_cast<double>(count[c]);
  }
  KMeansResult r;
  r.centroids = std::move(centroids);
  r.assignment = std::move(assign);
  for (std::size_t v = 0; v < values.size(); ++v) {
    const double d = values[v] - r.centroids[r.assignment[v]];
    r.inertia += d * d;
  }
  return r;
}

std::vector<double> distinct_values(std::span<const double> values) {
  std::vector<double> u(values.begin(), values.end());
  std::sort(u.begin(), u.end());
  u.erase(std::unique(u.begin(), u.end()), u.end());
  return u;
}

}  // namespace

KMeansResult kmeans_1d(std::span<const double> values, std::size_t k, std::uint64_t seed,
                       std::size_t restarts, std::size_t max_iter) {
  const std::vector<double> uniq = distinct_values(values);
  if (k < 1 || k > uniq.size())
    throw std::invalid_argument("kmeans_1d: k must lie in [1, distinct values]");
  const double lo = uniq.front(), hi = uniq.back();

  KMeansResult best;
  bool have_best = false;
  std::mt19937_64 rng(seed);
  for (std::size_t r = 0; r < std::max<std::size_t>(restarts, 1); ++r) {
    std::vector<double> init(k);
    if (r == 0) {
      for (std::size_t c = 0; c < k; ++c)
        init[c] = lo + (static_cast<double>(c) + 0.5) * (hi - lo) / static_cast<double>(k);
    } else {
      std::vector<double> pool = uniq;
      std::shuffle(pool.begin(), pool.end(), rng);
      std::copy_n(pool.begin(), k, init.begin());
    }
    KMeansResult cand = lloyd(values, std::move(init), max_iter);
    if (!have_best || cand.inertia < best.inertia) {
      best = std::move(cand);
      have_best = true;
    }
  }

  // Relabel so class 0 has the highest centroid.
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return best.centroids[a] > best.centroids[b]; });
  std::vector<std::size_t> rank(k);
  std::vector<double> sorted(k);
  for (std::size_t pos = 0; pos < k; ++pos) {
    rank[order[pos]] = pos;
    sorted[pos] = best.centroids[order[pos]];
  }
  for (auto& a : best.assignment) a = rank[a];
  best.centroids = std::move(sorted);
  return best;
}

EdgeSelection select_edges(std::span<const double> scores, std::size_t classes, std::size_t top,
                           std::uint64_t seed, std::size_t restarts, std::size_t max_iter) {
  if (classes < 1 || top < 1) throw std::invalid_argument("select_edges: need n >= 1 and m >= 1");
  EdgeSelection sel;
  const std::size_t distinct = distinct_values(scores).size();
  if (distinct <= 1) {
    sel.degenerate = true;
    sel.classes_used = 1;
    sel.reduced = classes > 1;
    for (std::size_t j = 0; j < scores.size(); ++j) sel.sources.push_back(j);
    return sel;
  }
  const std::size_t k = std::min(classes, distinct);
  sel.classes_used = k;
  sel.reduced = k < classes;
  const std::size_t keep = std::min(top, k);
  const KMeansResult km = kmeans_1d(scores, k, seed, restarts, max_iter);
  for (std::size_t j = 0; j < scores.size(); ++j)
    if (km.assignment[j] < keep) sel.sources.push_back(j);
  return sel;
}

int delay_of(std::span<const double> kernel_scores) {
  if (kernel_scores.empty()) throw std::invalid_argument("delay_of: empty slice");
  const std::size_t T = kernel_scores.size();
  std::size_t best = 0;
  for (std::size_t t = 1; t < T; ++t)
    if (kernel_scores[t] >= kernel_scores[best]) best = t;
  return static_cast<int>(T - 1 - best);
}

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

bool Discovery::degenerate() const {
  return std::any_of(targets.begin(), targets.end(),
                     [](const TargetReport& t) { return t.selection.degenerate; });
}

std::vector<std::size_t> sample_windows(std::size_t count, std::size_t samples) {
  std::vector<std::size_t> idx;
  if (samples == 0 || samples >= count) {
    idx.resize(count);
    std::iota(idx.begin(), idx.end(), 0);
    return idx;
  }
  for (std::size_t k = 0; k < samples; ++k) idx.push_back(k * count / samples);
  return idx;
}

Discovery discover(const ModelParams& params, const ModelConfig& config,
                   std::span<const Tensor> windows, const DetectorConfig& det) {
  config.validate();
  det.validate();
  check_params(params, config);
  if (windows.empty()) throw std::invalid_argument("discover: no windows");
  const std::size_t N = config.series, T = config.window;

  std::vector<TargetScores> sums(N);
  std::vector<std::size_t> used(N, 0);
  for (std::size_t i = 0; i < N; ++i) {
    sums[i].target = i;
    sums[i].attn = Tensor({N, N});
    sums[i].kernel = Tensor({N, N, T});
  }

  const QKFold fold = fold_qk(params, config);
  for (std::size_t w : sample_windows(windows.size(), det.samples)) {
    const Tensor& X = windows[w];
    const ForwardTrace tr = forward(X, params, config, fold);
    for (std::size_t i = 0; i < N; ++i) {
      double level = 0.0;
      for (std::size_t t = 0; t < T; ++t) level += std::abs(X(i, t));
      if (level / static_cast<double>(T) < det.theta) continue;
      const RelevanceMap rel = propagate(tr, params, config, i, det.stabilizer, det.zoom);
      if (rel.slots_kept == 0) continue;
      const auto grads = target_gradients(tr, params, config, i);
      const TargetScores s = gradient_modulate(rel, grads);
      sums[i].attn.add_scaled(s.attn);
      sums[i].kernel.add_scaled(s.kernel);
      ++used[i];
    }
  }

  Discovery out;
  out.graph = CausalGraph(N);
  out.scores.attn = Tensor({N, N, N});
  out.scores.kernel = Tensor({N, N, N, T});
  for (std::size_t i = 0; i < N; ++i) {
    TargetScores& s = sums[i];
    if (used[i] > 0) {
      s.attn.scale(1.0 / static_cast<double>(used[i]));
      s.kernel.scale(1.0 / static_cast<double>(used[i]));
    }
    std::copy(s.attn.values().begin(), s.attn.values().end(), out.scores.attn.data() + i * N * N);
    std::copy(s.kernel.values().begin(), s.kernel.values().end(),
              out.scores.kernel.data() + i * N * N * T);

    std::vector<double> row(N);
    for (std::size_t j = 0; j < N; ++j) row[j] = s.attn(i, j);
    TargetReport rep;
    rep.target = i;
    rep.windows_used = used[i];
    rep.selection = select_edges(row, det.classes, det.top_classes, det.kmeans_seed + i,
                                 det.kmeans_restarts, det.kmeans_max_iter);
    for (std::size_t j : rep.selection.sources) {
      std::vector<double> lags(T);
      for (std::size_t t = 0; t < T; ++t) lags[t] = s.kernel(j, i, t);
      out.graph.add_edge({j, i, delay_of(lags), row[j]});
    }
    out.targets.push_back(std::move(rep));
  }
  return out;
}

}  // namespace tcd
