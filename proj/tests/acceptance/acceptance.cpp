// Acceptance criteria runner. Each criterion prints one PASS/FAIL line with
// the measured value, its tolerance and the runtime.
//
//   acceptance            run everything
//   acceptance 1 5-fork   run the named criteria

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "../naive_model.hpp"
#include "../test_util.hpp"
#include "cli.hpp"
#include "tcd/detector.hpp"
#include "tcd/numerics.hpp"
#include "tcd/pipeline.hpp"

using namespace tcd;
namespace fs = std::filesystem;

namespace {

// Tolerances and limits.
constexpr double kGradRelTol = 1e-4;
constexpr double kGradEps = 1e-5;
constexpr double kGradFloor = 1e-6;  // relative-error denominator floor for near-zero gradients
constexpr double kOracleTol = 1e-10;
constexpr double kConservationTol = 1e-8;
constexpr double kSyntheticF1 = 0.55;
constexpr double kNoisyPod = 0.4;
constexpr double kLorenzF1 = 0.50;

constexpr double kGradSeconds = 30, kOracleSeconds = 10, kPrioritySeconds = 10;
constexpr double kSyntheticSeconds = 15 * 60;  // per structure
constexpr double kLorenzSeconds = 30 * 60;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// Reduced synthetic profile used for the quantitative criteria: the
// published dense/sparse split, at d = 64.
RunConfig synthetic_config(const std::string& structure) {
  const bool dense = structure == "diamond" || structure == "mediator";
  return build_config({}, {
      "--data.structure=\"" + structure + "\"",
      "--model.embed_dim=64", "--model.qk_dim=64", "--model.ffn_dim=64", "--model.heads=4",
      "--model.window=16",
      std::string("--model.temperature=") + (dense ? "1" : "100"),
      "--model.kernel_l1=1e-4", "--model.mask_l1=1e-4",
      "--train.batch_size=32", "--train.max_epochs=300", "--train.learning_rate=1e-3",
      "--train.patience=20",
      "--detector.classes=2", "--detector.top_classes=1",
      "--seeds=[0,1,2,3,4]"});
}

RunConfig lorenz_config() {
  return build_config({}, {"--data.length=1000", "--data.forcing=30", "--data.variables=10",
                           "--model.embed_dim=128", "--model.qk_dim=128", "--model.heads=4",
                           "--model.ffn_dim=128", "--model.window=16",
                           "--train.batch_size=32", "--train.max_epochs=300",
                           "--seeds=[0,1,2]"},
                      "lorenz");
}

std::string per_seed(const BenchRow& row, double EvalResult::*field) {
  std::string s;
  for (const auto& run : row.runs) {
    s += s.empty() ? "[" : " ";
    s += run.result ? fmt("%.2f", (*run.result).*field) : "failed";
  }
  return s + "]";
}

BenchRow bench_one(const RunConfig& c) {
  BenchReport report = run_bench(c);
  return report.rows.at(0);
}

Outcome gradient_correctness() {
  ModelConfig c;
  c.series = 2;
  c.window = 4;
  c.embed_dim = 8;
  c.qk_dim = 4;
  c.heads = 2;
  c.ffn_dim = 8;
  c.kernel_l1 = 1e-3;
  c.mask_l1 = 1e-3;
  double worst = 0;
  std::string where;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    ModelParams p = testutil::random_params(c, seed);
    std::mt19937_64 rng(seed + 500);
    const Tensor X = testutil::random_tensor({2, 4}, rng);
    const LossAndGradient lg = loss_and_gradient(X, p, c);
    const auto names = p.names();
    auto params = p.tensors();
    const auto grads = lg.grads.tensors();
    for (std::size_t k = 0; k < params.size(); ++k) {
      Tensor* target = params[k];
      const Tensor saved = *target;
      auto f = [&](const Tensor& v) {
        *target = v;
        const double l = loss(forward(X, p, c).prediction, X, p, c);
        *target = saved;
        return l;
      };
      const double e = max_relative_error(*grads[k], finite_diff_grad(f, saved, kGradEps), kGradFloor);
      if (e > worst) worst = e, where = names[k] + " seed " + std::to_string(seed);
    }
  }
  return {worst <= kGradRelTol, "max relative error " + fmt("%.2e", worst) + " (" + where +
                                    "), tol " + fmt("%.0e", kGradRelTol) + ", 10 seeds"};
}

Outcome oracle_equivalence() {
  std::mt19937_64 cfg_rng(2024);
  double worst = 0;
  for (int trial = 0; trial < 20; ++trial) {
    ModelConfig c;
    c.series = 2 + cfg_rng() % 4;
    c.window = 2 + cfg_rng() % 7;
    c.embed_dim = c.window + 1 + cfg_rng() % 6;
    c.qk_dim = 1 + cfg_rng() % 6;
    c.heads = 1 + cfg_rng() % 3;
    c.ffn_dim = c.window + cfg_rng() % 9;
    c.temperature = 0.5 + double(cfg_rng() % 10) / 4.0;
    const ModelParams p = testutil::random_params(c, 9000 + trial);
    std::mt19937_64 rng(trial);
    const Tensor X = testutil::random_tensor({c.series, c.window}, rng);
    const auto oracle = naive::forward(X, p, c);
    const Tensor got = forward(X, p, c).prediction;
    for (std::size_t n = 0; n < c.series; ++n)
      for (std::size_t t = 0; t < c.window; ++t) worst = std::max(worst, std::abs(got(n, t) - oracle[n][t]));
  }
  return {worst <= kOracleTol, "max |engine - oracle| " + fmt("%.2e", worst) + " over 20 random configs, tol " +
                                   fmt("%.0e", kOracleTol)};
}

Outcome temporal_priority() {
  std::mt19937_64 rng(31);
  std::size_t violations = 0, checked = 0;
  for (int trial = 0; trial < 100; ++trial) {
    ModelConfig c;
    c.series = 2 + rng() % 3;
    c.window = 3 + rng() % 6;
    c.embed_dim = c.window + 2;
    c.qk_dim = 4;
    c.heads = 2;
    c.ffn_dim = 2 * c.window;
    const ModelParams p = testutil::random_params(c, 700 + trial);
    Tensor X = testutil::random_tensor({c.series, c.window}, rng);
    const Tensor base = forward(X, p, c).prediction;
    const std::size_t i = rng() % c.series, s = rng() % c.window;
    X(i, s) += 0.5 + double(rng() % 100) / 10.0;
    const Tensor moved = forward(X, p, c).prediction;
    for (std::size_t j = 0; j < c.series; ++j)
      for (std::size_t t = 0; t < s; ++t, ++checked)
        if (base(j, t) != moved(j, t)) ++violations;
    ++checked;
    if (base(i, s) != moved(i, s)) ++violations;
  }
  return {violations == 0, std::to_string(violations) + " bitwise differences in " +
                               std::to_string(checked) + " guarded outputs, 100 perturbations"};
}

Outcome rrp_conservation() {
  double worst_free = 0, worst_bias = 0;
  std::size_t stabilized = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    ModelConfig c;
    c.series = 3;
    c.window = 5;
    c.embed_dim = 8;
    c.qk_dim = 4;
    c.heads = 1 + seed % 3;
    c.ffn_dim = 7;
    ModelParams p = testutil::random_params(c, seed + 300);
    std::mt19937_64 rng(seed);
    const Tensor X = testutil::random_tensor({3, 5}, rng);
    for (bool biases : {false, true}) {
      ModelParams q = p;
      if (!biases) {
        q.b_ffn1.fill(0);
        q.b_ffn2.fill(0);
        q.b_out.fill(0);
      }
      const ForwardTrace tr = forward(X, q, c);
      for (std::size_t i = 0; i < 3; ++i) {
        const RelevanceMap r = propagate(tr, q, c, i);
        double attn = 0, kernel = 0;
        for (const auto& h : r.heads) attn += h.attn.sum(), kernel += h.kernel.sum();
        const double bias = r.total_bias();
        const double err = std::max(std::abs(attn + bias - 1), std::abs(kernel + bias - 1));
        if (biases) {
          worst_bias = std::max(worst_bias, err);
        } else {
          stabilized += r.stabilized;
          worst_free = std::max(worst_free, err);
        }
      }
    }
  }
  return {stabilized == 0 && worst_free <= kConservationTol && worst_bias <= kConservationTol,
          "bias-free |sum - 1| " + fmt("%.2e", worst_free) + " (" + std::to_string(stabilized) +
              " stabilizer events), with biases |sum + bias - 1| " + fmt("%.2e", worst_bias) +
              ", tol " + fmt("%.0e", kConservationTol)};
}

Outcome synthetic(const std::string& structure) {
  const BenchRow row = bench_one(synthetic_config(structure));
  if (!row.f1) return {false, "every seed failed: " + row.runs.at(0).error};
  const double f1 = row.f1->mean;
  return {f1 >= kSyntheticF1 && !row.partial,
          "mean F1 " + fmt("%.3f", f1) + " ± " + fmt("%.3f", row.f1->stddev) + " " +
              per_seed(row, &EvalResult::f1) + ", threshold " + fmt("%.2f", kSyntheticF1)};
}

Outcome pod_zero_noise() {
  RunConfig c = synthetic_config("fork");
  c.data.generator.noise_std = 0.0;
  c.seeds = {0, 1, 2};
  const BenchRow row = bench_one(c);
  bool ok = !row.partial;
  std::string pods;
  for (const auto& run : row.runs) {
    const bool defined = run.result && run.result->pod;
    ok = ok && defined && *run.result->pod == 1.0;
    pods += (pods.empty() ? "" : " ") + (defined ? fmt("%.2f", *run.result->pod) : std::string("undefined"));
  }
  return {ok, "zero-noise fork PoD [" + pods + "], required 1.0 on each of 3 seeds"};
}

Outcome pod_noisy(const std::string& structure) {
  const BenchRow row = bench_one(synthetic_config(structure));
  if (!row.pod) return {false, "PoD undefined on every seed"};
  return {row.pod->mean >= kNoisyPod, structure + " mean PoD " + fmt("%.3f", row.pod->mean) + " over " +
                                          std::to_string(row.pod->count) + " seeds, threshold " +
                                          fmt("%.2f", kNoisyPod)};
}

Outcome lorenz() {
  const BenchRow row = bench_one(lorenz_config());
  if (!row.f1) return {false, "every seed failed: " + row.runs.at(0).error};
  return {row.f1->mean >= kLorenzF1 && !row.partial,
          "L=1000, mean F1 " + fmt("%.3f", row.f1->mean) + " ± " + fmt("%.3f", row.f1->stddev) + " " +
              per_seed(row, &EvalResult::f1) + ", threshold " + fmt("%.2f", kLorenzF1)};
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

int cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  if (code != 0) std::fprintf(stderr, "%s", err.str().c_str());
  return code;
}

Outcome determinism() {
  const fs::path dir = fs::temp_directory_path() / "tcd_acceptance_determinism";
  fs::remove_all(dir);
  const std::vector<std::string> common = {
      "bench", "-q", "--seeds=[0,1]", "--bench.structures=[\"fork\",\"mediator\"]",
      "--model.embed_dim=24", "--model.qk_dim=16", "--model.heads=2", "--model.ffn_dim=16",
      "--model.window=8", "--train.max_epochs=20", "--train.batch_size=32", "--data.length=400"};
  auto a = common, b = common;
  a.insert(a.end(), {"-o", (dir / "a").string()});
  b.insert(b.end(), {"-o", (dir / "b").string()});
  if (cli(a) != 0 || cli(b) != 0) return {false, "bench exited nonzero"};
  const std::string ra = slurp(dir / "a" / "report.json"), rb = slurp(dir / "b" / "report.json");
  return {!ra.empty() && ra == rb, "two bench runs (2 structures x 2 seeds): report.json " +
                                       std::string(ra == rb ? "byte-identical" : "differs") + ", " +
                                       std::to_string(ra.size()) + " bytes"};
}

Outcome degenerate_input() {
  const fs::path dir = fs::temp_directory_path() / "tcd_acceptance_degenerate";
  fs::remove_all(dir);
  fs::create_directories(dir);
  {
    std::ofstream csv(dir / "constant.csv");
    csv << "a,b,c\n";
    for (int t = 0; t < 300; ++t) csv << "2.5,-1,0\n";
  }
  const std::vector<std::string> model = {"--model.embed_dim=24", "--model.qk_dim=16", "--model.heads=2",
                                          "--model.ffn_dim=16", "--model.window=8"};
  std::vector<std::string> train = {"train", "-q", "--data", (dir / "constant.csv").string(),
                                    "--train.max_epochs=30", "-o", (dir / "model").string()};
  train.insert(train.end(), model.begin(), model.end());
  if (cli(train) != 0) return {false, "train on constant input failed"};
  if (cli({"discover", "-q", "-k", (dir / "model" / "checkpoint.json").string(), "--data",
           (dir / "constant.csv").string(), "-o", (dir / "graph").string()}) != 0)
    return {false, "discover on constant input failed"};
  const auto doc = nlohmann::json::parse(slurp(dir / "graph" / "discovery.json"));
  std::size_t flagged = 0;
  for (const auto& t : doc["targets"]) flagged += t["degenerate"].get<bool>() ? 1 : 0;
  return {doc["degenerate"].get<bool>() && flagged == 3,
          "trained without divergence; discovery flagged degenerate for " + std::to_string(flagged) +
              " of 3 targets"};
}

struct Criterion {
  std::string id;
  std::string title;
  double seconds_limit;  // 0: none
  std::function<Outcome()> run;
};

std::vector<Criterion> criteria() {
  std::vector<Criterion> all = {
      {"1", "gradient correctness", kGradSeconds, gradient_correctness},
      {"2", "forward oracle equivalence", kOracleSeconds, oracle_equivalence},
      {"3", "temporal priority", kPrioritySeconds, temporal_priority},
      {"4", "relevance conservation", 0, rrp_conservation},
  };
  for (const std::string s : {"diamond", "mediator", "v-structure", "fork"})
    all.push_back({"5-" + s, "synthetic reproduction " + s, kSyntheticSeconds, [s] { return synthetic(s); }});
  all.push_back({"6-zero-noise", "delay precision, zero-noise fork", 0, pod_zero_noise});
  for (const std::string s : {"diamond", "mediator", "v-structure", "fork"})
    all.push_back({"6-" + s, "delay precision " + s, kSyntheticSeconds, [s] { return pod_noisy(s); }});
  all.push_back({"7", "Lorenz 96", kLorenzSeconds, lorenz});
  all.push_back({"8", "bench determinism", 0, determinism});
  all.push_back({"9", "degenerate input", 0, degenerate_input});
  return all;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> wanted(argv + 1, argv + argc);
  int failures = 0, ran = 0;
  for (const auto& c : criteria()) {
    if (!wanted.empty() && std::find(wanted.begin(), wanted.end(), c.id) == wanted.end() &&
        std::find(wanted.begin(), wanted.end(), c.id.substr(0, c.id.find('-'))) == wanted.end())
      continue;
    ++ran;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::string timing = fmt("%.1fs", secs);
    if (c.seconds_limit > 0) {
      timing += " (limit " + fmt("%.0fs", c.seconds_limit) + ")";
      if (secs > c.seconds_limit) o.pass = false, timing += " over time";
    }
    std::printf("[%s] AC%s %s: %s; %s\n", o.pass ? "PASS" : "FAIL", c.id.c_str(), c.title.c_str(),
                o.detail.c_str(), timing.c_str());
    std::fflush(stdout);
    failures += o.pass ? 0 : 1;
  }
  if (ran == 0) {
    std::fprintf(stderr, "no criterion matches the arguments\n");
    return 2;
  }
  return failures == 0 ? 0 : 1;
}
