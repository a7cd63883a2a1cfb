#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "tcd/model.hpp"
#include "tcd/tensor.hpp"

namespace tcd {

struct TrainConfig {
  std::size_t window = 16;  // T; must match the model window
  std::size_t stride = 1;
  std::size_t max_epochs = 2000;
  std::size_t patience = 20;
  double min_delta = 1e-5;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  double validation_fraction = 0.2;
  std::size_t batch_size = 0;  // windows per Adam step; 0 uses every training window
  bool shuffle = true;
  std::size_t threads = 0;     // 0 reads TCD_THREADS, falling back to 1

  std::vector<std::string> violations() const;
  void validate() const;

  bool operator==(const TrainConfig&) const = default;
};

struct TrainReport {
  std::vector<double> train_loss;       // mean objective per epoch
  std::vector<double> validation_loss;  // after each epoch's updates
  std::size_t stop_epoch = 0;           // 1-based count of epochs run
  std::size_t best_epoch = 0;           // 1-based epoch of the returned params
  double best_validation = 0.0;
  bool early_stopped = false;
  double seconds = 0.0;
};

class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(std::size_t epoch, const std::string& what)
      : std::runtime_error("training diverged at epoch " + std::to_string(epoch) + ": " + what),
        epoch_(epoch) {}
  std::size_t epoch() const noexcept { return epoch_; }

 private:
  std::size_t epoch_;
};

class InputTooShortError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Windows of `T` consecutive slots starting every `stride` slots.
std::vector<Tensor> make_windows(const Tensor& series, std::size_t T, std::size_t stride);

/// Per-series z-scoring. Series with (near) zero spread keep scale 1 so a
/// constant series maps to zeros.
struct Normalizer {
  std::vector<double> mean;
  std::vector<double> scale;

  static Normalizer fit(const Tensor& series);
  Tensor apply(const Tensor& series) const;

  bool operator==(const Normalizer&) const = default;
};

struct TrainResult {
  ModelParams params;
  TrainReport report;
};

using EpochCallback = std::function<void(std::size_t epoch, double train, double validation)>;

/// Adam on the L1-regularized prediction objective with a temporal holdout
/// (the last `validation_fraction` of windows) and early stopping. Returns
/// the parameters of the best validation epoch.
TrainResult train(std::span<const Tensor> windows, const ModelConfig& model,
                  const TrainConfig& config, const EpochCallback& on_epoch = {});

/// Mean objective over `windows`.
double mean_loss(std::span<const Tensor> windows, const ModelParams& params,
                 const ModelConfig& config);

struct Checkpoint {
  ModelConfig config;
  ModelParams params;
  Normalizer normalizer;
};

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace tcd
