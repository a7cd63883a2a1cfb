#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "tcd/tensor.hpp"

namespace tcd {

/// Hyperparameters of the causality-aware transformer.
struct ModelConfig {
  std::size_t series = 2;      // N
  std::size_t window = 16;     // T, time slots per window
  std::size_t embed_dim = 32;  // d, must exceed T
  std::size_t qk_dim = 16;     // d_QK
  std::size_t heads = 1;       // h
  std::size_t ffn_dim = 32;    // hidden width of the feed-forward layer
  double temperature = 1.0;    // softmax temperature tau
  double kernel_l1 = 0.0;      // L1 weight on convolution kernels
  double mask_l1 = 0.0;        // L1 weight on attention masks
  double leaky_slope = 0.01;
  bool time_local = true;      // feed-forward and output layers act slot by slot

  /// Every violated invariant, one message each; empty when valid.
  std::vector<std::string> violations() const;
  /// Throws std::invalid_argument listing all violations.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

struct HeadParams {
  Tensor W_Q, b_Q;  // [d, d_QK], [d_QK]
  Tensor W_K, b_K;  // [d, d_QK], [d_QK]
  Tensor kernel;    // [N, N, T]: source series, target series, kernel slot
  Tensor mask;      // [N, N]

  bool operator==(const HeadParams&) const = default;
};

/// All learnable parameters. The same layout doubles as the gradient
/// container, so every parameter has exactly one gradient entry.
struct ModelParams {
  Tensor W_emb, b_emb;  // [T, d], [d]
  std::vector<HeadParams> heads;
  Tensor W_O;                 // [h]
  Tensor W_ffn1, b_ffn1;      // [T, d_FFN], [d_FFN]
  Tensor W_ffn2, b_ffn2;      // [d_FFN, T], [T]
  Tensor W_out, b_out;        // [T, T], [T]

  /// Parameters in a fixed canonical order.
  std::vector<Tensor*> tensors();
  std::vector<const Tensor*> tensors() const;
  /// Names matching `tensors()` one-to-one, e.g. "heads.1.kernel".
  std::vector<std::string> names() const;

  bool all_finite() const;

  bool operator==(const ModelParams&) const = default;
};

using Gradients = ModelParams;

/// Zero-valued parameters with the shapes implied by `config`.
ModelParams zero_params(const ModelConfig& config);

/// He-initialized weights, zero biases, all-ones attention masks. Entries
/// outside the time-causal support of the feed-forward and output layers
/// are zero.
ModelParams init_params(const ModelConfig& config, std::uint64_t seed);

/// Throws DimensionError unless every tensor has the shape `config` implies.
void check_params(const ModelParams& params, const ModelConfig& config);

// ---------------------------------------------------------------------------
// Support of the layers that act along the time axis. Hidden feed-forward
// unit u belongs to slot floor(u * T / d_FFN). With `time_local` a unit
// reads and writes only its own slot and the output layer is diagonal, so
// every lag has to come from the convolution kernels. Without it the
// layers may still move information forward in time (slot s feeds units
// of slots >= s, unit u feeds slots >= slot(u), output slot s feeds
// t >= s). Either way a prediction at slot t sees nothing after t.
// ---------------------------------------------------------------------------

struct SlotRange {
  std::size_t begin = 0, end = 0;  // half-open
  bool contains(std::size_t v) const noexcept { return v >= begin && v < end; }
};

std::size_t ffn_unit_slot(std::size_t unit, const ModelConfig& config);
SlotRange ffn_units_of_slot(std::size_t slot, const ModelConfig& config);
SlotRange ffn_slots_of_unit(std::size_t unit, const ModelConfig& config);
SlotRange output_slots_of(std::size_t slot, const ModelConfig& config);
bool ffn_in_connected(std::size_t slot, std::size_t unit, const ModelConfig& config);
bool ffn_out_connected(std::size_t unit, std::size_t slot, const ModelConfig& config);
bool output_connected(std::size_t from, std::size_t to, const ModelConfig& config);

// ---------------------------------------------------------------------------
// Layer operations
// ---------------------------------------------------------------------------

/// X_emb = X·W_emb + b_emb, shape [N, d].
Tensor embed(const Tensor& X, const ModelParams& params);

/// Per-slot embeddings [T, N, d]: slot t embeds X with every column >= t
/// zeroed, so attention at slot t is computed from strictly earlier data.
Tensor prefix_embeddings(const Tensor& X, const ModelParams& params);

/// Multi-kernel causal convolution, output [N, N, T]:
///   out[j,i,t] = (sum_{s<=t} kernel[j,i,T-1-t+s] * X[j,s]) / (t+1)
/// Kernel slot T-1 carries lag 0, slot 0 carries lag T-1.
Tensor causal_convolve(const Tensor& X, const Tensor& kernel);

/// Right-shifts every self slice out[i,i,:] by one slot (slot 0 becomes 0).
Tensor shift_self(const Tensor& conv);

struct AttentionResult {
  Tensor q, k;     // [T, N, d_QK]
  Tensor logits;   // [T, N, N], Q·K^T / (tau * sqrt(d_QK))
  Tensor scores;   // [T, N, N], logits ⊙ mask
  Tensor weights;  // [T, N, N], row softmax of scores
  Tensor out;      // [N, T], out[i,t] = sum_j weights[t,i,j] * value[j,i,t]
};

/// One attention head over per-slot embeddings [T, N, d] and the shifted
/// convolution output [N, N, T].
AttentionResult attention_head(const Tensor& slot_embeddings, const Tensor& value,
                               const HeadParams& head, double temperature);

/// Att = sum_k W_O[k] * heads[k].
Tensor multi_head(std::span<const Tensor> heads, const Tensor& W_O);

/// Linear(leakyReLU(Linear(att))) along the time axis, time-causally masked.
Tensor ffn(const Tensor& att, const ModelParams& params, const ModelConfig& config);

/// Final linear map [N, T] -> [N, T] over the time axis.
Tensor output_layer(const Tensor& x, const ModelParams& params, const ModelConfig& config);

// ---------------------------------------------------------------------------
// Full pass
// ---------------------------------------------------------------------------

struct HeadTrace {
  Tensor conv;   // causal convolution before the self shift, [N, N, T]
  Tensor value;  // after the self shift, [N, N, T]
  AttentionResult attention;
};

/// Everything computed by one forward pass.
struct ForwardTrace {
  Tensor input;       // X, [N, T]
  Tensor embeddings;  // [T, N, d]
  std::vector<HeadTrace> heads;
  Tensor att;         // [N, T]
  Tensor ffn_pre;     // [N, d_FFN], before the activation
  Tensor ffn_hidden;  // [N, d_FFN]
  Tensor ffn_out;     // [N, T]
  Tensor prediction;  // [N, T]
};

/// The query/key path folded through the embedding:
///   Q at slot t = c_Q + sum_{s<t} X[:,s] ⊗ P_Q[s,:],  P_Q = W_emb·W_Q,
///   c_Q = b_emb·W_Q + b_Q  (same for keys).
/// Depends only on parameters, so a training batch computes it once.
struct QKFold {
  std::vector<Tensor> P_Q, c_Q, P_K, c_K;
};

QKFold fold_qk(const ModelParams& params, const ModelConfig& config);
QKFold zero_fold(const ModelConfig& config);

ForwardTrace forward(const Tensor& X, const ModelParams& params, const ModelConfig& config);
ForwardTrace forward(const Tensor& X, const ModelParams& params, const ModelConfig& config,
                     const QKFold& fold);

/// Squared prediction error over slots 2..T divided by N*T.
double prediction_error(const Tensor& prediction, const Tensor& X);

/// L1 penalty on kernels and masks, summed over heads.
double regularization(const ModelParams& params, const ModelConfig& config);

/// Training objective: prediction_error + regularization.
double loss(const Tensor& prediction, const Tensor& X, const ModelParams& params,
            const ModelConfig& config);

/// d prediction_error / d prediction.
Tensor prediction_error_grad(const Tensor& prediction, const Tensor& X);

/// Backpropagates `d_prediction` through the output, feed-forward and head
/// combination layers. Returns dL/dA for every head. Gradients of the
/// traversed parameters are accumulated into `grads` when non-null.
std::vector<Tensor> backward_to_heads(const ForwardTrace& trace, const ModelParams& params,
                                      const ModelConfig& config, const Tensor& d_prediction,
                                      Gradients* grads);

/// Full backward of the data term. Embedding and query/key gradients are
/// accumulated in folded form into `fold_grads`; call `unfold_qk_grad` once
/// per batch to move them into `grads`.
void backward(const ForwardTrace& trace, const ModelParams& params, const ModelConfig& config,
              const Tensor& d_prediction, Gradients& grads, QKFold& fold_grads);

void unfold_qk_grad(const ModelParams& params, const ModelConfig& config,
                    const QKFold& fold_grads, Gradients& grads);

/// Adds the L1 subgradient (sign(0) = 0) of the regularizer.
void add_regularization_grad(const ModelParams& params, const ModelConfig& config,
                             Gradients& grads);

struct LossAndGradient {
  double loss = 0.0;
  Gradients grads;
};

/// Objective and its full gradient for a single window.
LossAndGradient loss_and_gradient(const Tensor& X, const ModelParams& params,
                                  const ModelConfig& config);

}  // namespace tcd
