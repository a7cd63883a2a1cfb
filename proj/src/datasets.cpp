#include "tcd/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

namespace tcd {

namespace {

const std::vector<std::string> kLinear = {"diamond", "mediator", "v-structure", "fork"};

std::string join(const std::vector<std::string>& v) {
  std::string s;
  for (const auto& x : v) s += (s.empty() ? "" : ", ") + x;
  return s;
}

bool is_linear(const std::string& s) {
  return std::find(kLinear.begin(), kLinear.end(), s) != kLinear.end();
}

std::vector<std::string> default_labels(std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back("x" + std::to_string(i + 1));
  return out;
}

}  // namespace

const std::vector<std::string>& structure_names() {
  static const std::vector<std::string> names = {"diamond", "mediator", "v-structure", "fork",
                                                 "lorenz96"};
  return names;
}

std::vector<std::string> GeneratorSpec::violations() const {
  std::vector<std::string> out;
  const auto& names = structure_names();
  if (std::find(names.begin(), names.end(), structure) == names.end())
    out.push_back("data.structure '" + structure + "' is not one of: " + join(names));
  if (length < 2) out.push_back("data.length (L) must be >= 2");
  if (!(noise_std >= 0.0) || !std::isfinite(noise_std))
    out.push_back("data.noise_std must be finite and >= 0");
  if (is_linear(structure)) {
    const std::size_t n = structure_series(structure);
    for (const auto& e : edges) {
      if (e.src >= n || e.dst >= n)
        out.push_back("data.edges: " + std::to_string(e.src + 1) + "->" +
                      std::to_string(e.dst + 1) + " outside " + std::to_string(n) + " series");
      if (e.lag < 0) out.push_back("data.edges: lags must be >= 0");
      if (e.lag == 0 && e.src == e.dst) out.push_back("data.edges: a lag-0 self edge is circular");
      if (!std::isfinite(e.coefficient)) out.push_back("data.edges: coefficients must be finite");
    }
  }
  if (structure == "lorenz96") {
    if (variables < 4) out.push_back("data.variables must be >= 4");
    if (!std::isfinite(forcing)) out.push_back("data.forcing (F) must be finite");
    if (!(dt > 0.0) || !std::isfinite(dt)) out.push_back("data.dt must be finite and > 0");
    if (stride < 1) out.push_back("data.stride must be >= 1");
  }
  return out;
}

void GeneratorSpec::validate() const {
  const auto v = violations();
  if (v.empty()) return;
  std::ostringstream msg;
  msg << "invalid generator spec:";
  for (const auto& m : v) msg << "\n  " << m;
  throw std::invalid_argument(msg.str());
}

std::size_t structure_series(const std::string& structure) {
  if (structure == "diamond") return 4;
  if (is_linear(structure)) return 3;
  throw std::invalid_argument("unknown linear structure '" + structure +
                              "'; valid: " + join(kLinear));
}

std::vector<EdgeSpec> default_edges(const std::string& s) {
  if (s == "fork") return {{0, 1, 0.8, 1}, {0, 2, 0.8, 2}};
  if (s == "v-structure") return {{0, 2, 0.8, 1}, {1, 2, 0.8, 2}};
  if (s == "mediator") return {{0, 1, 0.8, 1}, {1, 2, 0.8, 1}, {0, 2, 0.8, 3}};
  if (s == "diamond") return {{0, 1, 0.8, 1}, {0, 2, 0.8, 2}, {1, 3, 0.8, 1}, {2, 3, 0.8, 3}};
  throw std::invalid_argument("unknown linear structure '" + s + "'; valid: " + join(kLinear));
}

nlohmann::json generator_spec_to_json(const GeneratorSpec& s) {
  nlohmann::json j = {{"structure", s.structure}, {"length", s.length}, {"seed", s.seed}};
  if (s.structure == "lorenz96") {
    j["variables"] = s.variables;
    j["forcing"] = s.forcing;
    j["dt"] = s.dt;
    j["stride"] = s.stride;
    j["burn_in"] = s.burn_in;
    j["initial_state"] = "forcing + N(0, 0.01) per variable";
    j["integrator"] = "rk4";
  } else {
    j["noise_std"] = s.noise_std;
    j["warmup"] = s.warmup;
    nlohmann::json edges = nlohmann::json::array();
    for (const auto& e : s.edges.empty() ? default_edges(s.structure) : s.edges)
      edges.push_back({{"src", e.src + 1}, {"dst", e.dst + 1}, {"coefficient", e.coefficient},
                       {"lag", e.lag}});
    j["edges"] = edges;
    j["equation"] = "x_j(t) = sum_i c_ij x_i(t - lag_ij) + noise_std e_j(t); roots x_j(t) = e_j(t)";
  }
  return j;
}

DatasetBundle gen_basic(const GeneratorSpec& spec) {
  spec.validate();
  if (!is_linear(spec.structure))
    throw std::invalid_argument("gen_basic: unknown structure '" + spec.structure +
                                "'; valid: " + join(kLinear));
  const std::size_t N = structure_series(spec.structure);
  const std::vector<EdgeSpec> edges = spec.edges.empty() ? default_edges(spec.structure) : spec.edges;

  // Evaluate series in an order where lag-0 parents come first.
  std::vector<bool> root(N, true);
  for (const auto& e : edges) root[e.dst] = false;
  std::vector<std::size_t> order;
  std::vector<bool> placed(N, false);
  while (order.size() < N) {
    bool progress = false;
    for (std::size_t j = 0; j < N; ++j) {
      if (placed[j]) continue;
      const bool ready = std::none_of(edges.begin(), edges.end(), [&](const EdgeSpec& e) {
        return e.dst == j && e.lag == 0 && !placed[e.src];
      });
      if (ready) {
        order.push_back(j);
        placed[j] = true;
        progress = true;
      }
    }
    if (!progress) throw std::invalid_argument("data.edges: lag-0 edges form a cycle");
  }

  const std::size_t total = spec.warmup + spec.length;
  std::vector<std::vector<double>> x(N, std::vector<double>(total, 0.0));
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> innovation(N);
  for (std::size_t t = 0; t < total; ++t) {
    for (std::size_t j = 0; j < N; ++j) innovation[j] = normal(rng);
    for (std::size_t j : order) {
      double v = root[j] ? innovation[j] : spec.noise_std * innovation[j];
      for (const auto& e : edges)
        if (e.dst == j && t >= static_cast<std::size_t>(e.lag)) v += e.coefficient * x[e.src][t - e.lag];
      x[j][t] = v;
    }
  }

  DatasetBundle b;
  b.series = Tensor({N, spec.length});
  for (std::size_t j = 0; j < N; ++j)
    std::copy_n(x[j].begin() + spec.warmup, spec.length, b.series.data() + j * spec.length);
  CausalGraph truth(N);
  for (const auto& e : edges)
    if (e.coefficient != 0.0) truth.add_edge({e.src, e.dst, e.lag, 1.0});
  b.truth = std::move(truth);
  b.labels = default_labels(N);
  b.provenance = generator_spec_to_json(spec);
  return b;
}

Tensor lorenz_deriv(const Tensor& x, double F) {
  if (x.rank() != 1 || x.size() < 4)
    throw std::invalid_argument("lorenz_deriv needs a vector of at least 4 variables");
  const std::size_t N = x.size();
  Tensor d({N});
  for (std::size_t i = 0; i < N; ++i) {
    const double xp1 = x[(i + 1) % N], xm1 = x[(i + N - 1) % N], xm2 = x[(i + N - 2) % N];
    d[i] = (xp1 - xm2) * xm1 - x[i] + F;
  }
  return d;
}

Tensor rk4_step(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double dt) {
  auto shifted = [&](const Tensor& k, double h) {
    Tensor y = x;
    y.add_scaled(k, h);
    return y;
  };
  const Tensor k1 = f(x);
  const Tensor k2 = f(shifted(k1, dt / 2));
  const Tensor k3 = f(shifted(k2, dt / 2));
  const Tensor k4 = f(shifted(k3, dt));
  Tensor y = x;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += dt / 6.0 * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i]);
  return y;
}

DatasetBundle gen_lorenz96(const GeneratorSpec& spec) {
  spec.validate();
  const std::size_t N = spec.variables;
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> perturb(0.0, 0.01);
  Tensor x({N});
  for (std::size_t i = 0; i < N; ++i) x[i] = spec.forcing + perturb(rng);
  const auto f = [&](const Tensor& s) { return lorenz_deriv(s, spec.forcing); };

  DatasetBundle b;
  b.series = Tensor({N, spec.length});
  std::size_t step = 0;
  auto advance = [&] {
    x = rk4_step(f, x, spec.dt);
    ++step;
    if (!x.all_finite()) throw IntegrationError(step, "non-finite state");
  };
  for (std::size_t k = 0; k < spec.burn_in; ++k) advance();
  for (std::size_t t = 0; t < spec.length; ++t) {
    if (t > 0)
      for (std::size_t k = 0; k < spec.stride; ++k) advance();
    for (std::size_t i = 0; i < N; ++i) b.series(i, t) = x[i];
  }

  CausalGraph truth(N);
  for (std::size_t i = 0; i < N; ++i) {
    std::set<std::size_t> parents = {i, (i + N - 2) % N, (i + N - 1) % N, (i + 1) % N};
    for (std::size_t j : parents) truth.add_edge({j, i, 1, 1.0});
  }
  b.truth = std::move(truth);
  b.labels = default_labels(N);
  b.provenance = generator_spec_to_json(spec);
  return b;
}

DatasetBundle generate(const GeneratorSpec& spec) {
  if (spec.structure == "lorenz96") return gen_lorenz96(spec);
  if (is_linear(spec.structure)) return gen_basic(spec);
  throw std::invalid_argument("unknown structure '" + spec.structure +
                              "'; valid: " + join(structure_names()));
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    const auto a = cell.find_first_not_of(" \t\r");
    const auto z = cell.find_last_not_of(" \t\r");
    cells.push_back(a == std::string::npos ? "" : cell.substr(a, z - a + 1));
  }
  if (!line.empty() && line.back() == ',') cells.push_back("");
  return cells;
}

bool parse_number(const std::string& s, double& out) {
  if (s.empty()) return false;
  char* end = nullptr;
  out = std::strtod(s.c_str(), &end);
  return end == s.c_str() + s.size();
}

std::vector<std::vector<std::string>> read_rows(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    rows.push_back(split_csv_line(line));
  }
  return rows;
}

bool is_header(const std::vector<std::string>& row) {
  double v;
  return std::any_of(row.begin(), row.end(), [&](const std::string& c) {
    return !c.empty() && !parse_number(c, v);
  });
}

}  // namespace

DatasetBundle load_csv(const std::filesystem::path& path) {
  auto rows = read_rows(path);
  if (rows.empty()) throw std::runtime_error(path.string() + " is empty");
  DatasetBundle b;
  std::size_t first = 0;
  if (is_header(rows[0])) {
    b.labels = rows[0];
    first = 1;
  }
  if (rows.size() <= first) throw std::runtime_error(path.string() + " has no data rows");
  const std::size_t N = rows[first].size();
  if (!b.labels.empty() && b.labels.size() != N)
    throw std::runtime_error(path.string() + ": header has " + std::to_string(b.labels.size()) +
                             " columns, data has " + std::to_string(N));
  const std::size_t L = rows.size() - first;
  b.series = Tensor({N, L});
  for (std::size_t r = first; r < rows.size(); ++r) {
    const std::size_t line = r + 1;
    if (rows[r].size() != N)
      throw std::runtime_error(path.string() + ": row " + std::to_string(line) + " has " +
                               std::to_string(rows[r].size()) + " cells, expected " +
                               std::to_string(N));
    for (std::size_t c = 0; c < N; ++c) {
      double v;
      if (!parse_number(rows[r][c], v) || !std::isfinite(v))
        throw std::runtime_error(path.string() + ": row " + std::to_string(line) + ", column " +
                                 std::to_string(c + 1) + " is not a finite number ('" +
                                 rows[r][c] + "')");
      b.series(c, r - first) = v;
    }
  }
  if (b.labels.empty()) b.labels = default_labels(N);
  b.provenance = {{"source", path.string()}};
  return b;
}

CausalGraph load_ground_truth(const std::filesystem::path& path, std::size_t n) {
  auto rows = read_rows(path);
  CausalGraph g(n);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (r == 0 && is_header(rows[r])) continue;
    const auto& row = rows[r];
    const std::string where = path.string() + ": row " + std::to_string(r + 1);
    if (row.size() < 2 || row.size() > 3) throw std::runtime_error(where + " needs src,dst[,delay]");
    double src, dst, delay = 0;
    if (!parse_number(row[0], src) || !parse_number(row[1], dst) || src != std::floor(src) ||
        dst != std::floor(dst))
      throw std::runtime_error(where + " has non-integer indices");
    if (src < 1 || dst < 1 || src > static_cast<double>(n) || dst > static_cast<double>(n))
      throw std::runtime_error(where + " index outside 1.." + std::to_string(n));
    Edge e;
    e.src = static_cast<std::size_t>(src) - 1;
    e.dst = static_cast<std::size_t>(dst) - 1;
    e.score = 1.0;
    if (row.size() == 3 && !row[2].empty()) {
      if (!parse_number(row[2], delay) || delay < 0 || delay != std::floor(delay))
        throw std::runtime_error(where + " delay must be a non-negative integer");
      e.delay = static_cast<int>(delay);
    }
    if (g.has_edge(e.src, e.dst))
      throw std::runtime_error(where + " duplicates edge " + row[0] + "->" + row[1]);
    g.add_edge(e);
  }
  return g;
}

void write_bundle(const DatasetBundle& b, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const std::size_t N = b.series.dim(0), L = b.series.dim(1);
  {
    std::ofstream out(dir / "data.csv");
    if (!out) throw std::runtime_error("cannot write " + (dir / "data.csv").string());
    const auto labels = b.labels.size() == N ? b.labels : default_labels(N);
    for (std::size_t i = 0; i < N; ++i) out << (i ? "," : "") << labels[i];
    out << '\n';
    char buf[32];
    for (std::size_t t = 0; t < L; ++t) {
      for (std::size_t i = 0; i < N; ++i) {
        std::snprintf(buf, sizeof buf, "%.17g", b.series(i, t));
        out << (i ? "," : "") << buf;
      }
      out << '\n';
    }
  }
  if (b.truth) {
    std::ofstream out(dir / "truth.csv");
    if (!out) throw std::runtime_error("cannot write " + (dir / "truth.csv").string());
    out << "src,dst,delay\n";
    for (const auto& e : b.truth->edges()) {
      out << e.src + 1 << ',' << e.dst + 1 << ',';
      if (e.delay) out << *e.delay;
      out << '\n';
    }
  }
  std::ofstream out(dir / "provenance.json");
  if (!out) throw std::runtime_error("cannot write " + (dir / "provenance.json").string());
  nlohmann::json p = b.provenance;
  p["series"] = N;
  p["slots"] = L;
  p["files"] = {{"data", "data.csv"}, {"truth", b.truth ? nlohmann::json("truth.csv") : nlohmann::json(nullptr)}};
  out << p.dump(2) << '\n';
}

}  // namespace tcd
