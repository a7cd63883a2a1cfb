#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "tcd/graph.hpp"

namespace tcd {

struct EvalResult {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::optional<double> pod;  // absent when there is no true positive with a known delay
  std::size_t true_positives = 0;
  std::size_t false_positives = 0;
  std::size_t false_negatives = 0;
  std::size_t delay_matches = 0;
  std::size_t delay_checked = 0;  // true positives whose true delay is known
  std::uint64_t seed = 0;

  bool operator==(const EvalResult&) const = default;
};

/// Edges compared as ordered pairs, ignoring delay. Zero denominators give 0.
/// Throws std::invalid_argument when vertex counts differ.
EvalResult prf1(const CausalGraph& pred, const CausalGraph& truth, bool include_self_loops = true);

/// Fraction of true positives whose predicted delay equals the true one.
std::optional<double> pod(const CausalGraph& pred, const CausalGraph& truth,
                          bool include_self_loops = true);

/// prf1 plus PoD over the same true-positive set.
EvalResult evaluate(const CausalGraph& pred, const CausalGraph& truth,
                    bool include_self_loops = true);

struct EdgeDiff {
  std::vector<Edge> true_positives, false_positives, false_negatives;
};
EdgeDiff edge_diff(const CausalGraph& pred, const CausalGraph& truth, bool include_self_loops = true);

nlohmann::json eval_to_json(const EvalResult& r);
std::string eval_to_text(const EvalResult& r);
std::string diff_to_text(const EdgeDiff& diff);

struct MetricSummary {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation; 0 for a single value
  std::size_t count = 0;
};

/// Mean and sample standard deviation; throws on an empty list.
MetricSummary summarize(std::span<const double> values);

struct SeedRun {
  std::uint64_t seed = 0;
  std::optional<EvalResult> result;
  std::string error;  // set when the run failed
};

struct BenchRow {
  std::string dataset;
  std::vector<SeedRun> runs;
  std::optional<MetricSummary> precision, recall, f1, pod;
  bool partial = false;  // some seed failed
};

/// Fills the summaries of `row` from its successful runs.
void summarize_row(BenchRow& row);

struct BenchReport {
  std::vector<BenchRow> rows;
  bool include_self_loops = true;
};

nlohmann::json report_to_json(const BenchReport& report);
/// Aligned text table of mean ± std per metric.
std::string report_to_text(const BenchReport& report);

}  // namespace tcd
