#include "tcd/pipeline.hpp"

#include <chrono>
#include <cstdio>

namespace tcd {

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

void emit(const LogFn& log, const std::string& line) {
  if (log) log(line);
}

std::string seconds_text(double s) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2fs", s);
  return buf;
}

}  // namespace

DatasetBundle load_data(const RunConfig& config) {
  if (config.data.csv.empty()) return generate(config.data.generator);
  DatasetBundle bundle = load_csv(config.data.csv);
  if (!config.data.truth.empty())
    bundle.truth = load_ground_truth(config.data.truth, bundle.series.dim(0));
  return bundle;
}

Normalizer fit_normalizer(const Tensor& series, bool standardize) {
  if (standardize) return Normalizer::fit(series);
  const std::size_t n = series.dim(0);
  return Normalizer{std::vector<double>(n, 0.0), std::vector<double>(n, 1.0)};
}

PipelineResult run_pipeline(const RunConfig& config, const LogFn& log) {
  PipelineResult out;
  auto start = Clock::now();
  out.data = load_data(config);
  out.times.data = since(start);
  emit(log, "data: " + seconds_text(out.times.data));

  ModelConfig model = config.model;
  model.series = out.data.series.dim(0);
  model.validate();
  out.normalizer = fit_normalizer(out.data.series, config.data.standardize);
  const auto windows =
      make_windows(out.normalizer.apply(out.data.series), config.train.window, config.train.stride);

  start = Clock::now();
  out.training = train(windows, model, config.train, [&](std::size_t epoch, double tr, double va) {
    if (!log) return;
    char buf[96];
    std::snprintf(buf, sizeof buf, "epoch %zu train %.6f validation %.6f", epoch, tr, va);
    log(buf);
  });
  out.times.train = since(start);
  emit(log, "train: " + seconds_text(out.times.train) + " (" +
                std::to_string(out.training.report.stop_epoch) + " epochs)");

  start = Clock::now();
  out.discovery = discover(out.training.params, model, windows, config.detector);
  out.times.discover = since(start);
  emit(log, "discover: " + seconds_text(out.times.discover));

  if (out.data.truth) {
    start = Clock::now();
    out.eval = evaluate(out.discovery.graph, *out.data.truth, config.eval.include_self_loops);
    out.times.evaluate = since(start);
    emit(log, "evaluate: " + seconds_text(out.times.evaluate));
  }
  return out;
}

RunConfig seeded_config(const RunConfig& config, const std::string& dataset, std::uint64_t seed) {
  RunConfig c = config;
  if (!dataset.empty() && dataset != c.data.generator.structure) {
    c.data.generator.structure = dataset;
    c.data.generator.edges.clear();
  }
  c.data.generator.seed = seed;
  c.train.seed = seed;
  c.detector.kmeans_seed = seed;
  return c;
}

BenchReport run_bench(const RunConfig& config, const LogFn& log) {
  BenchReport report;
  report.include_self_loops = config.eval.include_self_loops;
  std::vector<std::string> datasets = config.bench.structures;
  if (datasets.empty()) datasets.push_back(config.data.csv.empty() ? config.data.generator.structure : "");

  for (const auto& dataset : datasets) {
    BenchRow row;
    row.dataset = dataset.empty() ? config.data.csv : dataset;
    for (std::uint64_t seed : config.seeds) {
      SeedRun run;
      run.seed = seed;
      const auto start = Clock::now();
      try {
        const PipelineResult r = run_pipeline(seeded_config(config, dataset, seed), log);
        if (!r.eval) throw std::runtime_error("no ground truth to score against");
        run.result = *r.eval;
        run.result->seed = seed;
      } catch (const std::exception& e) {
        run.error = e.what();
        emit(log, row.dataset + " seed " + std::to_string(seed) + " failed: " + e.what());
      }
      emit(log, row.dataset + " seed " + std::to_string(seed) + ": " + seconds_text(since(start)));
      row.runs.push_back(std::move(run));
    }
    summarize_row(row);
    report.rows.push_back(std::move(row));
  }
  return report;
}

}  // namespace tcd
