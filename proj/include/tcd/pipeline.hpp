#pragma once

#include <functional>
#include <optional>
#include <string>

#include "tcd/config.hpp"
#include "tcd/eval.hpp"

namespace tcd {

/// Receives progress lines (stage timings, epoch losses). Never part of
/// any written artifact.
using LogFn = std::function<void(const std::string&)>;

struct StageTimes {
  double data = 0.0;
  double train = 0.0;
  double discover = 0.0;
  double evaluate = 0.0;
};

struct PipelineResult {
  DatasetBundle data;
  Normalizer normalizer;
  TrainResult training;
  Discovery discovery;
  std::optional<EvalResult> eval;  // when ground truth is available
  StageTimes times;
};

/// Generates or loads the series (and truth) named by `config.data`.
DatasetBundle load_data(const RunConfig& config);

/// Fitted on the raw series; identity when standardization is off.
Normalizer fit_normalizer(const Tensor& series, bool standardize);

/// data -> standardize -> windows -> train -> discover -> evaluate.
PipelineResult run_pipeline(const RunConfig& config, const LogFn& log = {});

/// Config for one bench cell: `dataset` replaces the generator structure
/// (empty keeps it) and `seed` drives generator, initialization and k-means.
RunConfig seeded_config(const RunConfig& config, const std::string& dataset, std::uint64_t seed);

/// One row per dataset (bench.structures, or the configured data), one run
/// per seed. Failed seeds are recorded and flag the row as partial.
BenchReport run_bench(const RunConfig& config, const LogFn& log = {});

}  // namespace tcd
