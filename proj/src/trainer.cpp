#include "tcd/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "tcd/numerics.hpp"
#include "tcd/serialize.hpp"

namespace tcd {

std::vector<std::string> TrainConfig::violations() const {
  std::vector<std::string> out;
  if (window < 2) out.push_back("train.window (T) must be >= 2");
  if (stride < 1) out.push_back("train.stride must be >= 1");
  if (max_epochs < 1) out.push_back("train.max_epochs must be >= 1");
  if (patience < 1) out.push_back("train.patience must be >= 1");
  if (!(min_delta >= 0.0)) out.push_back("train.min_delta must be >= 0");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
    out.push_back("train.learning_rate must be finite and > 0");
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0))
    out.push_back("train.validation_fraction must lie in (0, 1)");
  return out;
}

void TrainConfig::validate() const {
  const auto v = violations();
  if (v.empty()) return;
  std::ostringstream msg;
  msg << "invalid train config:";
  for (const auto& m : v) msg << "\n  " << m;
  throw std::invalid_argument(msg.str());
}

std::vector<Tensor> make_windows(const Tensor& series, std::size_t T, std::size_t stride) {
  if (series.rank() != 2) throw DimensionError("make_windows expects a [N, L] series");
  if (T < 1 || stride < 1) throw std::invalid_argument("make_windows: T and stride must be >= 1");
  const std::size_t N = series.dim(0), L = series.dim(1);
  if (L < T) {
    throw InputTooShortError("series of length " + std::to_string(L) +
                             " is shorter than the window " + std::to_string(T));
  }
  std::vector<Tensor> out;
  for (std::size_t start = 0; start + T <= L; start += stride) {
    Tensor w({N, T});
    for (std::size_t n = 0; n < N; ++n)
      std::copy_n(series.data() + n * L + start, T, w.data() + n * T);
    out.push_back(std::move(w));
  }
  return out;
}

Normalizer Normalizer::fit(const Tensor& series) {
  if (series.rank() != 2 || series.dim(1) == 0) throw DimensionError("Normalizer expects [N, L]");
  const std::size_t N = series.dim(0), L = series.dim(1);
  Normalizer z;
  for (std::size_t n = 0; n < N; ++n) {
    const double* x = series.data() + n * L;
    const double mean = std::accumulate(x, x + L, 0.0) / static_cast<double>(L);
    double var = 0.0;
    for (std::size_t t = 0; t < L; ++t) var += (x[t] - mean) * (x[t] - mean);
    const double sd = std::sqrt(var / static_cast<double>(L));
    z.mean.push_back(mean);
    z.scale.push_back(sd > 1e-12 * std::max(1.0, std::abs(mean)) ? sd : 1.0);
  }
  return z;
}

Tensor Normalizer::apply(const Tensor& series) const {
  if (series.rank() != 2 || series.dim(0) != mean.size())
    throw DimensionError("Normalizer fitted on " + std::to_string(mean.size()) +
                         " series, got " + shape_string(series.shape()));
  const std::size_t N = series.dim(0), L = series.dim(1);
  Tensor out({N, L});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t t = 0; t < L; ++t) out(n, t) = (series(n, t) - mean[n]) / scale[n];
  return out;
}

namespace {

// Fixed chunking makes the reduction order independent of thread count.
constexpr std::size_t kChunk = 8;

std::size_t resolve_threads(std::size_t requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("TCD_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v > 0) return static_cast<std::size_t>(v);
  }
  return 1;
}

struct Partial {
  Gradients grads;
  QKFold fold;
  double error = 0.0;
};

// Mean data-term gradient over `batch` plus the regularizer gradient.
double batch_gradient(std::span<const Tensor> windows, std::span<const std::size_t> batch,
                      const ModelParams& p, const ModelConfig& c, std::size_t threads,
                      Gradients& out) {
  const QKFold fold = fold_qk(p, c);
  const std::size_t chunks = (batch.size() + kChunk - 1) / kChunk;
  std::vector<Partial> parts(chunks);
  auto work = [&](std::size_t first_chunk, std::size_t step) {
    for (std::size_t ch = first_chunk; ch < chunks; ch += step) {
      Partial& part = parts[ch];
      part.grads = zero_params(c);
      part.fold = zero_fold(c);
      const std::size_t end = std::min(batch.size(), (ch + 1) * kChunk);
      for (std::size_t b = ch * kChunk; b < end; ++b) {
        const Tensor& X = windows[batch[b]];
        const ForwardTrace tr = forward(X, p, c, fold);
        part.error += prediction_error(tr.prediction, X);
        backward(tr, p, c, prediction_error_grad(tr.prediction, X), part.grads, part.fold);
      }
    }
  };
  const std::size_t n_threads = std::min(threads, chunks);
  if (n_threads <= 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(work, t, n_threads);
    for (auto& th : pool) th.join();
  }

  out = zero_params(c);
  QKFold fold_sum = zero_fold(c);
  double error = 0.0;
  for (const Partial& part : parts) {
    error += part.error;
    auto dst = out.tensors();
    const auto src = part.grads.tensors();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k]->add_scaled(*src[k]);
    for (std::size_t k = 0; k < c.heads; ++k) {
      fold_sum.P_Q[k].add_scaled(part.fold.P_Q[k]);
      fold_sum.c_Q[k].add_scaled(part.fold.c_Q[k]);
      fold_sum.P_K[k].add_scaled(part.fold.P_K[k]);
      fold_sum.c_K[k].add_scaled(part.fold.c_K[k]);
    }
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (Tensor* t : out.tensors()) t->scale(inv);
  for (std::size_t k = 0; k < c.heads; ++k) {
    fold_sum.P_Q[k].scale(inv);
    fold_sum.c_Q[k].scale(inv);
    fold_sum.P_K[k].scale(inv);
    fold_sum.c_K[k].scale(inv);
  }
  unfold_qk_grad(p, c, fold_sum, out);
  add_regularization_grad(p, c, out);
  return error * inv + regularization(p, c);
}

}  // namespace

double mean_loss(std::span<const Tensor> windows, const ModelParams& params,
                 const ModelConfig& config) {
  if (windows.empty()) throw std::invalid_argument("mean_loss: no windows");
  const QKFold fold = fold_qk(params, config);
  double error = 0.0;
  for (const Tensor& X : windows) error += prediction_error(forward(X, params, config, fold).prediction, X);
  return error / static_cast<double>(windows.size()) + regularization(params, config);
}

TrainResult train(std::span<const Tensor> windows, const ModelConfig& model,
                  const TrainConfig& config, const EpochCallback& on_epoch) {
  model.validate();
  config.validate();
  if (config.window != model.window) {
    throw std::invalid_argument("train.window (" + std::to_string(config.window) +
                                ") differs from model.window (" + std::to_string(model.window) + ")");
  }
  if (windows.size() < 2) throw std::invalid_argument("training needs at least 2 windows");
  for (const Tensor& w : windows) check_shape(w, {model.series, model.window}, "training window");

  const auto start = std::chrono::steady_clock::now();
  std::size_t n_val = static_cast<std::size_t>(
      std::llround(config.validation_fraction * static_cast<double>(windows.size())));
  n_val = std::clamp<std::size_t>(n_val, 1, windows.size() - 1);
  const std::size_t n_train = windows.size() - n_val;
  const auto train_set = windows.first(n_train);
  const auto val_set = windows.subspan(n_train);
  const std::size_t batch = config.batch_size == 0 ? n_train : std::min(config.batch_size, n_train);
  const std::size_t threads = resolve_threads(config.threads);

  ModelParams params = init_params(model, config.seed);
  AdamConfig adam_cfg;
  adam_cfg.learning_rate = config.learning_rate;
  AdamState adam(std::as_const(params).tensors(), adam_cfg);
  std::mt19937_64 rng(config.seed ^ 0x5eedf00dULL);
  std::vector<std::size_t> order(n_train);
  std::iota(order.begin(), order.end(), 0);

  TrainResult result;
  TrainReport& rep = result.report;
  ModelParams best = params;
  rep.best_validation = mean_loss(val_set, params, model);
  std::size_t since_best = 0;
  Gradients grads;

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    if (config.shuffle) std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t b0 = 0; b0 < n_train; b0 += batch) {
      const auto idx = std::span<const std::size_t>(order).subspan(b0, std::min(batch, n_train - b0));
      const double l = batch_gradient(train_set, idx, params, model, threads, grads);
      if (!std::isfinite(l)) throw DivergenceError(epoch, "non-finite training loss");
      epoch_loss += l * static_cast<double>(idx.size());
      adam_step(params.tensors(), std::as_const(grads).tensors(), adam);
    }
    if (!params.all_finite()) throw DivergenceError(epoch, "non-finite parameters");
    const double val = mean_loss(val_set, params, model);
    if (!std::isfinite(val)) throw DivergenceError(epoch, "non-finite validation loss");
    rep.train_loss.push_back(epoch_loss / static_cast<double>(n_train));
    rep.validation_loss.push_back(val);
    rep.stop_epoch = epoch;
    if (on_epoch) on_epoch(epoch, rep.train_loss.back(), val);

    if (val < rep.best_validation - config.min_delta) {
      rep.best_validation = val;
      rep.best_epoch = epoch;
      best = params;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      rep.early_stopped = true;
      break;
    }
  }
  result.params = std::move(best);
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  check_params(ck.params, ck.config);
  nlohmann::json params = nlohmann::json::object();
  const auto names = ck.params.names();
  const auto tensors = ck.params.tensors();
  for (std::size_t k = 0; k < names.size(); ++k) params[names[k]] = tensor_to_json(*tensors[k]);
  nlohmann::json mean = nlohmann::json::array(), scale = nlohmann::json::array();
  for (double v : ck.normalizer.mean) mean.push_back(double_to_hex(v));
  for (double v : ck.normalizer.scale) scale.push_back(double_to_hex(v));
  const nlohmann::json doc = {{"format", "tcd-checkpoint"},
                              {"version", 1},
                              {"model", model_config_to_json(ck.config)},
                              {"normalizer", {{"mean", mean}, {"scale", scale}}},
                              {"params", params}};
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out << doc.dump(1) << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read checkpoint " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("checkpoint " + path.string() + " is not valid JSON: " + e.what());
  }
  if (doc.value("format", "") != "tcd-checkpoint")
    throw std::runtime_error(path.string() + " is not a checkpoint");
  Checkpoint ck;
  ck.config = model_config_from_json(doc.at("model"));
  ck.config.validate();
  ck.params = zero_params(ck.config);
  const auto names = ck.params.names();
  auto tensors = ck.params.tensors();
  const auto& params = doc.at("params");
  for (std::size_t k = 0; k < names.size(); ++k) {
    if (!params.contains(names[k])) throw std::runtime_error("checkpoint lacks " + names[k]);
    *tensors[k] = tensor_from_json(params.at(names[k]));
  }
  check_params(ck.params, ck.config);
  for (const auto& v : doc.at("normalizer").at("mean")) ck.normalizer.mean.push_back(hex_to_double(v));
  for (const auto& v : doc.at("normalizer").at("scale")) ck.normalizer.scale.push_back(hex_to_double(v));
  if (ck.normalizer.mean.size() != ck.config.series || ck.normalizer.scale.size() != ck.config.series)
    throw std::runtime_error("checkpoint normalizer does not match the series count");
  return ck;
}

}  // namespace tcd
