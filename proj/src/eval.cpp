#include "tcd/eval.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace tcd {

namespace {

bool counted(const Edge& e, bool self) { return self || e.src != e.dst; }

void check_vertices(const CausalGraph& pred, const CausalGraph& truth) {
  if (pred.vertex_count() != truth.vertex_count())
    throw std::invalid_argument("predicted graph has " + std::to_string(pred.vertex_count()) +
                                " vertices, ground truth has " +
                                std::to_string(truth.vertex_count()));
}

std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

EdgeDiff edge_diff(const CausalGraph& pred, const CausalGraph& truth, bool self) {
  check_vertices(pred, truth);
  EdgeDiff d;
  for (const auto& e : pred.edges()) {
    if (!counted(e, self)) continue;
    (truth.has_edge(e.src, e.dst) ? d.true_positives : d.false_positives).push_back(e);
  }
  for (const auto& e : truth.edges())
    if (counted(e, self) && !pred.has_edge(e.src, e.dst)) d.false_negatives.push_back(e);
  return d;
}

EvalResult prf1(const CausalGraph& pred, const CausalGraph& truth, bool self) {
  const EdgeDiff d = edge_diff(pred, truth, self);
  EvalResult r;
  r.true_positives = d.true_positives.size();
  r.false_positives = d.false_positives.size();
  r.false_negatives = d.false_negatives.size();
  const double tp = static_cast<double>(r.true_positives);
  if (r.true_positives + r.false_positives > 0) r.precision = tp / (tp + r.false_positives);
  if (r.true_positives + r.false_negatives > 0) r.recall = tp / (tp + r.false_negatives);
  if (r.precision + r.recall > 0) r.f1 = 2 * r.precision * r.recall / (r.precision + r.recall);
  return r;
}

EvalResult evaluate(const CausalGraph& pred, const CausalGraph& truth, bool self) {
  EvalResult r = prf1(pred, truth, self);
  for (const auto& e : edge_diff(pred, truth, self).true_positives) {
    const Edge* t = truth.find(e.src, e.dst);
    if (!t->delay) continue;
    ++r.delay_checked;
    if (e.delay && *e.delay == *t->delay) ++r.delay_matches;
  }
  if (r.delay_checked > 0)
    r.pod = static_cast<double>(r.delay_matches) / static_cast<double>(r.delay_checked);
  return r;
}

std::optional<double> pod(const CausalGraph& pred, const CausalGraph& truth, bool self) {
  return evaluate(pred, truth, self).pod;
}

nlohmann::json eval_to_json(const EvalResult& r) {
  return {{"precision", r.precision},
          {"recall", r.recall},
          {"f1", r.f1},
          {"pod", r.pod ? nlohmann::json(*r.pod) : nlohmann::json(nullptr)},
          {"true_positives", r.true_positives},
          {"false_positives", r.false_positives},
          {"false_negatives", r.false_negatives},
          {"delay_matches", r.delay_matches},
          {"delay_checked", r.delay_checked},
          {"seed", r.seed}};
}

std::string eval_to_text(const EvalResult& r) {
  std::ostringstream out;
  out << "precision        " << fixed(r.precision) << '\n'
      << "recall           " << fixed(r.recall) << '\n'
      << "f1               " << fixed(r.f1) << '\n'
      << "pod              " << (r.pod ? fixed(*r.pod) : std::string("undefined")) << '\n'
      << "true_positives   " << r.true_positives << '\n'
      << "false_positives  " << r.false_positives << '\n'
      << "false_negatives  " << r.false_negatives << '\n'
      << "delay_matches    " << r.delay_matches << '\n'
      << "delay_checked    " << r.delay_checked << '\n'
      << "seed             " << r.seed << '\n';
  return out.str();
}

std::string diff_to_text(const EdgeDiff& d) {
  std::ostringstream out;
  auto list = [&](const char* tag, const std::vector<Edge>& edges) {
    for (const auto& e : edges) {
      out << tag << ' ' << e.src + 1 << " -> " << e.dst + 1 << " delay ";
      if (e.delay) {
        out << *e.delay;
      } else {
        out << '?';
      }
      out << '\n';
    }
  };
  list("TP", d.true_positives);
  list("FP", d.false_positives);
  list("FN", d.false_negatives);
  return out.str();
}

MetricSummary summarize(std::span<const double> v) {
  if (v.empty()) throw std::invalid_argument("summarize: no values");
  MetricSummary s;
  s.count = v.size();
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.stddev = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return s;
}

void summarize_row(BenchRow& row) {
  std::vector<double> p, r, f, d;
  row.partial = false;
  for (const auto& run : row.runs) {
    if (!run.result) {
      row.partial = true;
      continue;
    }
    p.push_back(run.result->precision);
    r.push_back(run.result->recall);
    f.push_back(run.result->f1);
    if (run.result->pod) d.push_back(*run.result->pod);
  }
  row.precision = row.recall = row.f1 = row.pod = std::nullopt;
  if (!f.empty()) {
    row.precision = summarize(p);
    row.recall = summarize(r);
    row.f1 = summarize(f);
  }
  if (!d.empty()) row.pod = summarize(d);
}

nlohmann::json report_to_json(const BenchReport& report) {
  auto summary = [](const std::optional<MetricSummary>& s) {
    if (!s) return nlohmann::json(nullptr);
    return nlohmann::json{{"mean", s->mean}, {"stddev", s->stddev}, {"count", s->count}};
  };
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : report.rows) {
    nlohmann::json runs = nlohmann::json::array();
    for (const auto& run : row.runs) {
      nlohmann::json j = {{"seed", run.seed}};
      if (run.result) {
        j["result"] = eval_to_json(*run.result);
      } else {
        j["error"] = run.error;
      }
      runs.push_back(std::move(j));
    }
    rows.push_back({{"dataset", row.dataset},
                    {"partial", row.partial},
                    {"precision", summary(row.precision)},
                    {"recall", summary(row.recall)},
                    {"f1", summary(row.f1)},
                    {"pod", summary(row.pod)},
                    {"runs", std::move(runs)}});
  }
  return {{"include_self_loops", report.include_self_loops}, {"rows", std::move(rows)}};
}

std::string report_to_text(const BenchReport& report) {
  auto cell = [](const std::optional<MetricSummary>& s) {
    return s ? fixed(s->mean, 3) + " ± " + fixed(s->stddev, 3) : std::string("undefined");
  };
  std::size_t width = 7;
  for (const auto& row : report.rows) width = std::max(width, row.dataset.size() + 2);
  std::ostringstream out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-*s %-15s %-15s %-15s %-15s %s\n", static_cast<int>(width),
                "dataset", "precision", "recall", "f1", "pod", "seeds");
  out << buf;
  for (const auto& row : report.rows) {
    std::size_t ok = 0;
    for (const auto& r : row.runs) ok += r.result.has_value();
    const std::string seeds = std::to_string(ok) + "/" + std::to_string(row.runs.size()) +
                              (row.partial ? " (partial)" : "");
    // "±" is two bytes, so pad the metric columns by one extra byte.
    std::snprintf(buf, sizeof buf, "%-*s %-16s %-16s %-16s %-16s %s\n", static_cast<int>(width),
                  row.dataset.c_str(), cell(row.precision).c_str(), cell(row.recall).c_str(),
                  cell(row.f1).c_str(), cell(row.pod).c_str(), seeds.c_str());
    out << buf;
  }
  for (const auto& row : report.rows)
    for (const auto& r : row.runs)
      if (!r.result) out << row.dataset << " seed " << r.seed << " failed: " << r.error << '\n';
  return out.str();
}

}  // namespace tcd
