#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tcd/graph.hpp"
#include "tcd/model.hpp"
#include "tcd/tensor.hpp"

namespace tcd {

struct DetectorConfig {
  std::size_t classes = 2;      // n, k-means class count
  std::size_t top_classes = 1;  // m, classes kept (highest centroids first)
  double theta = 1e-3;          // windows whose target mean |x| is below this are skipped
  std::size_t samples = 0;      // windows averaged over; 0 means all
  std::uint64_t kmeans_seed = 0;
  std::size_t kmeans_max_iter = 100;
  std::size_t kmeans_restarts = 10;
  double stabilizer = 1e-9;     // added (signed) to near-zero relevance denominators
  double zoom = 0.1;            // predicted slots with |value| below this start with no relevance

  std::vector<std::string> violations() const;
  void validate() const;

  bool operator==(const DetectorConfig&) const = default;
};

// ---------------------------------------------------------------------------
// Relevance rules
// ---------------------------------------------------------------------------

/// One-hot relevance over series with the mass on `target`.
Tensor init_relevance(std::size_t target, std::size_t series);

/// Denominator guard: values with |f| < stabilizer move away from zero by
/// stabilizer * sign(f), with sign(0) = +1.
double stabilized(double f, double stabilizer) noexcept;

struct LayerRelevance {
  Tensor lower;            // relevance of the layer inputs
  double bias = 0.0;       // relevance absorbed by the layer's own offset
  std::size_t stabilized = 0;
};

/// Relevance through an arbitrary differentiable layer:
///   R_lower[i] = sum_j x[i] * J[j,i] * R_upper[j] / f[j]
/// where J[j,i] = df_j/dx_i at x. The offset term sum_j (f_j - sum_i x_i J_ji)
/// R_upper_j / f_j is reported as `bias`; for an affine layer it equals
/// sum_j b_j R_upper_j / f_j.
LayerRelevance rrp_layer(const Tensor& x, const Tensor& f, const Tensor& jacobian,
                         const Tensor& r_upper, double stabilizer = 1e-9);

/// `rrp_layer` specialised to f = x·W + b.
LayerRelevance rrp_affine(const Tensor& x, const Tensor& W, const Tensor& b,
                          const Tensor& r_upper, double stabilizer = 1e-9);

struct ProductRelevance {
  Tensor a;  // [N, K]
  Tensor b;  // [K, M]
  std::size_t stabilized = 0;
};

/// Relevance of both operands of the matrix product A·B.
ProductRelevance rrp_matmul(const Tensor& A, const Tensor& B, const Tensor& r_product,
                            double stabilizer = 1e-9);

struct HeadRelevance {
  Tensor attn_slots;  // [T, N, N] relevance on each slot's attention weights
  Tensor attn;        // [N, N], attn_slots summed over slots
  Tensor kernel;      // [N, N, T] relevance on the convolution kernels
};

/// Relevance for one target series, decomposed down to the attention
/// weights and convolution kernels.
struct RelevanceMap {
  std::size_t target = 0;
  std::vector<HeadRelevance> heads;
  double bias_output = 0.0;  // absorbed by the output layer's bias
  double bias_ffn2 = 0.0;
  double bias_ffn1 = 0.0;
  std::size_t stabilized = 0;  // denominators that needed the guard
  std::size_t slots_kept = 0;  // predicted slots that received initial relevance

  double total_bias() const { return bias_output + bias_ffn2 + bias_ffn1; }
};

/// Starts from one-hot relevance on `target`, spread uniformly over the
/// predicted slots with |prediction| >= `zoom` (all T slots when zoom is 0),
/// and propagates it through the output layer, the
/// feed-forward layer, the head combination, the value aggregation and the
/// causal convolution. The embedding and query/key projections receive
/// nothing.
RelevanceMap propagate(const ForwardTrace& trace, const ModelParams& params,
                       const ModelConfig& config, std::size_t target, double stabilizer = 1e-9,
                       double zoom = 0.0);

struct HeadGradients {
  Tensor attn_slots;  // [T, N, N]
  Tensor kernel;      // [N, N, T]
};

/// Gradients of sum_t prediction[target, t] with respect to every head's
/// attention weights and kernels.
std::vector<HeadGradients> target_gradients(const ForwardTrace& trace, const ModelParams& params,
                                            const ModelConfig& config, std::size_t target);

// ---------------------------------------------------------------------------
// Scores and graph construction
// ---------------------------------------------------------------------------

/// Scores for a single target series i.
struct TargetScores {
  std::size_t target = 0;
  Tensor attn;    // [N, N]; row i holds the candidate causes of i
  Tensor kernel;  // [N, N, T]; [j, i, :] scores the lags of j -> i
};

/// Scores for every target: attn [N, N, N] indexed [target][row, source],
/// kernel [N, N, N, T] indexed [target][source, row, slot].
struct CausalScores {
  Tensor attn;
  Tensor kernel;
};

/// Mean over heads of the rectified |gradient| ⊙ relevance. Attention
/// scores are rectified per slot and then summed over slots.
TargetScores gradient_modulate(const RelevanceMap& relevance,
                               std::span<const HeadGradients> gradients);

/// Elementwise mean; throws std::invalid_argument on an empty list.
TargetScores aggregate_scores(std::span<const TargetScores> scores);

struct KMeansResult {
  std::vector<double> centroids;         // sorted descending
  std::vector<std::size_t> assignment;   // class index into `centroids`
  double inertia = 0.0;
};

/// 1-D k-means. The first restart places centroids at evenly spread
/// quantiles; later restarts draw distinct seeded samples. The lowest
/// inertia wins. `k` must not exceed the number of distinct values.
KMeansResult kmeans_1d(std::span<const double> values, std::size_t k, std::uint64_t seed,
                       std::size_t restarts = 10, std::size_t max_iter = 100);

struct EdgeSelection {
  std::vector<std::size_t> sources;  // ascending
  std::size_t classes_used = 0;      // n after any reduction
  bool reduced = false;              // fewer distinct scores than requested classes
  bool degenerate = false;           // every score equal: one class, all selected
};

/// Clusters one target's candidate scores and keeps the members of the
/// `top` highest-centroid classes out of `classes`.
EdgeSelection select_edges(std::span<const double> scores, std::size_t classes, std::size_t top,
                           std::uint64_t seed, std::size_t restarts = 10,
                           std::size_t max_iter = 100);

/// Delay T - argmax over a kernel-score slice (1-based argmax); ties go to
/// the largest slot, i.e. the smallest delay.
int delay_of(std::span<const double> kernel_scores);

struct TargetReport {
  std::size_t target = 0;
  std::size_t windows_used = 0;
  EdgeSelection selection;
};

struct Discovery {
  CausalGraph graph;
  CausalScores scores;
  std::vector<TargetReport> targets;

  /// True when any target's clustering degenerated to a single class.
  bool degenerate() const;
};

/// Indices of the windows `discover` samples, evenly spaced.
std::vector<std::size_t> sample_windows(std::size_t window_count, std::size_t samples);

Discovery discover(const ModelParams& params, const ModelConfig& config,
                   std::span<const Tensor> windows, const DetectorConfig& detector);

}  // namespace tcd
