#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "tcd/datasets.hpp"

using namespace tcd;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name, const std::string& text) {
  const auto path = fs::temp_directory_path() / name;
  std::ofstream(path) << text;
  return path;
}

std::string read_file(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

double correlation(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = double(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) ma += a[i] / n, mb += b[i] / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

}  // namespace

TEST(GenBasic, ShapesAndTruth) {
  for (const std::string s : {"diamond", "mediator", "v-structure", "fork"}) {
    GeneratorSpec spec;
    spec.structure = s;
    const auto b = generate(spec);
    const std::size_t n = s == "diamond" ? 4 : 3;
    EXPECT_EQ(b.series.dim(0), n) << s;
    EXPECT_EQ(b.series.dim(1), 1000u) << s;
    ASSERT_TRUE(b.truth.has_value());
    EXPECT_EQ(b.truth->vertex_count(), n);
    EXPECT_EQ(b.truth->edge_count(), default_edges(s).size());
    for (const auto& e : b.truth->edges()) EXPECT_NE(e.src, e.dst) << "no synthetic self-loops";
  }
}

TEST(GenBasic, DefaultEdgeSets) {
  auto pairs = [](const std::string& s) {
    std::set<std::pair<std::size_t, std::size_t>> out;
    for (const auto& e : default_edges(s)) out.insert({e.src + 1, e.dst + 1});
    return out;
  };
  using P = std::set<std::pair<std::size_t, std::size_t>>;
  EXPECT_EQ(pairs("diamond"), (P{{1, 2}, {1, 3}, {2, 4}, {3, 4}}));
  EXPECT_EQ(pairs("mediator"), (P{{1, 2}, {2, 3}, {1, 3}}));
  EXPECT_EQ(pairs("v-structure"), (P{{1, 3}, {2, 3}}));
  EXPECT_EQ(pairs("fork"), (P{{1, 2}, {1, 3}}));
}

TEST(GenBasic, ZeroNoiseForkIsExactRecursion) {
  GeneratorSpec spec;
  spec.structure = "fork";
  spec.noise_std = 0.0;
  spec.edges = {{0, 1, 1.0, 1}, {0, 2, 1.0, 2}};
  const auto b = generate(spec);
  for (std::size_t t = 2; t < spec.length; ++t) {
    EXPECT_EQ(b.series(1, t), b.series(0, t - 1));
    EXPECT_EQ(b.series(2, t), b.series(0, t - 2));
  }
  EXPECT_EQ(b.truth->find(0, 2)->delay, 2);
}

TEST(GenBasic, SeedDeterminism) {
  GeneratorSpec spec;
  spec.structure = "diamond";
  spec.seed = 9;
  EXPECT_EQ(generate(spec).series, generate(spec).series);
  GeneratorSpec other = spec;
  other.seed = 10;
  EXPECT_NE(generate(spec).series, generate(other).series);
}

TEST(GenBasic, InnovationMoments) {
  // A root series is its unit innovation.
  GeneratorSpec spec;
  spec.structure = "v-structure";
  spec.length = 100000;
  spec.seed = 3;
  const auto b = generate(spec);
  double mean = 0, sq = 0;
  const std::size_t L = spec.length;
  for (std::size_t t = 0; t < L; ++t) mean += b.series(0, t) / double(L);
  for (std::size_t t = 0; t < L; ++t) sq += (b.series(0, t) - mean) * (b.series(0, t) - mean);
  EXPECT_NEAR(mean, 0.0, 0.02);
  EXPECT_NEAR(std::sqrt(sq / double(L - 1)), 1.0, 0.02);
}

TEST(GenBasic, ZeroCoefficientRemovesEdgeAndDependence) {
  GeneratorSpec spec;
  spec.structure = "fork";
  spec.length = 20000;
  spec.edges = {{0, 1, 0.8, 1}, {0, 2, 0.0, 2}};
  const auto b = generate(spec);
  EXPECT_TRUE(b.truth->has_edge(0, 1));
  EXPECT_FALSE(b.truth->has_edge(0, 2));
  std::vector<double> x1_lag, x2, x3;
  for (std::size_t t = 2; t < spec.length; ++t) {
    x1_lag.push_back(b.series(0, t - 2));
    x2.push_back(b.series(1, t - 1));
    x3.push_back(b.series(2, t));
  }
  EXPECT_LT(std::abs(correlation(x1_lag, x3)), 0.03);
  std::vector<double> x1_now, x2_now;
  for (std::size_t t = 1; t < spec.length; ++t) {
    x1_now.push_back(b.series(0, t - 1));
    x2_now.push_back(b.series(1, t));
  }
  EXPECT_GT(correlation(x1_now, x2_now), 0.5);
}

TEST(GenBasic, InvalidSpecs) {
  GeneratorSpec spec;
  spec.structure = "nope";
  try {
    generate(spec);
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("fork"), std::string::npos) << "names valid options";
  }
  GeneratorSpec shortspec;
  shortspec.length = 1;
  EXPECT_FALSE(shortspec.violations().empty());
  GeneratorSpec neg;
  neg.edges = {{0, 1, 0.8, -1}};
  EXPECT_FALSE(neg.violations().empty());
}

TEST(Lorenz, Derivative) {
  const Tensor zero({5});
  const Tensor d0 = lorenz_deriv(zero, 8.0);
  for (double v : d0.values()) EXPECT_EQ(v, 8.0);
  Tensor eq({6});
  for (auto& v : eq.values()) v = 8.0;
  const Tensor d1 = lorenz_deriv(eq, 8.0);
  for (double v : d1.values()) EXPECT_EQ(v, 0.0);
  Tensor x({5});
  for (std::size_t i = 0; i < 5; ++i) x(i) = double(i + 1);
  EXPECT_EQ(lorenz_deriv(x, 0.0)(0), -11.0);
  EXPECT_THROW(lorenz_deriv(Tensor({3}), 1.0), std::invalid_argument);
}

TEST(Lorenz, Rk4ExponentialDecay) {
  Tensor x({1});
  x(0) = 1.0;
  for (int i = 0; i < 10; ++i)
    x = rk4_step([](const Tensor& y) { Tensor d = y; d(0) = -y(0); return d; }, x, 0.1);
  EXPECT_NEAR(x(0), std::exp(-1.0), 1e-6);
}

TEST(Lorenz, FixedPointAndTruth) {
  GeneratorSpec spec;
  spec.structure = "lorenz96";
  spec.forcing = 0.0;
  spec.length = 50;
  // F=0 with a perturbed start decays towards zero; truth is fixed regardless.
  const auto b = generate(spec);
  EXPECT_EQ(b.series.dim(0), 10u);
  EXPECT_EQ(b.series.dim(1), 50u);
  ASSERT_TRUE(b.truth.has_value());
  EXPECT_EQ(b.truth->edge_count(), 40u);
  for (std::size_t i = 0; i < 10; ++i) {
    EXPECT_TRUE(b.truth->has_edge(i, i));
    EXPECT_TRUE(b.truth->has_edge((i + 8) % 10, i));
    EXPECT_TRUE(b.truth->has_edge((i + 9) % 10, i));
    EXPECT_TRUE(b.truth->has_edge((i + 1) % 10, i));
  }
}

TEST(Lorenz, ZeroStartStaysZero) {
  Tensor x({6});
  for (int i = 0; i < 100; ++i) x = rk4_step([](const Tensor& y) { return lorenz_deriv(y, 0.0); }, x, 0.01);
  for (double v : x.values()) EXPECT_EQ(v, 0.0);
}

TEST(Lorenz, FiniteOverLongRunAndDeterministic) {
  GeneratorSpec spec;
  spec.structure = "lorenz96";
  spec.forcing = 40.0;
  spec.length = 10000;  // 10^5 integration steps at stride 10
  const auto a = generate(spec);
  for (double v : a.series.values()) ASSERT_TRUE(std::isfinite(v));
  spec.length = 200;
  EXPECT_EQ(generate(spec).series, generate(spec).series);
}

TEST(Lorenz, BlowUpNamesStep) {
  GeneratorSpec spec;
  spec.structure = "lorenz96";
  spec.forcing = 1e6;
  spec.dt = 0.5;
  spec.length = 100;
  try {
    generate(spec);
    FAIL();
  } catch (const IntegrationError& e) {
    EXPECT_GT(e.step(), 0u);
    EXPECT_NE(std::string(e.what()).find("step"), std::string::npos);
  }
}

TEST(Csv, ShapeAndHeader) {
  std::string text = "a,b,c\n";
  for (int r = 0; r < 50; ++r) text += std::to_string(r) + ",1.5,-2e-3\n";
  const auto b = load_csv(temp_file("tcd_header.csv", text));
  EXPECT_EQ(b.series.dim(0), 3u);
  EXPECT_EQ(b.series.dim(1), 50u);
  EXPECT_EQ(b.labels, (std::vector<std::string>{"a", "b", "c"}));
  EXPECT_EQ(b.series(0, 49), 49.0);
  EXPECT_FALSE(b.truth.has_value());

  const auto plain = load_csv(temp_file("tcd_plain.csv", "1,2\n3,4\n"));
  EXPECT_EQ(plain.series.dim(1), 2u);
  EXPECT_EQ(plain.labels[1], "x2");
}

TEST(Csv, Rejections) {
  auto message = [](const std::string& name, const std::string& text) {
    try {
      load_csv(temp_file(name, text));
    } catch (const std::exception& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  const std::string nan = message("tcd_nan.csv", "1,2\n3,nan\n");
  EXPECT_NE(nan.find("row 2"), std::string::npos) << nan;
  EXPECT_NE(nan.find("column 2"), std::string::npos) << nan;
  EXPECT_NE(message("tcd_ragged.csv", "1,2\n3\n").find("row 2"), std::string::npos);
  EXPECT_NE(message("tcd_text.csv", "1,2\n3,x\n"), "no error");
  EXPECT_NE(message("tcd_empty.csv", ""), "no error");
  EXPECT_NE(message("tcd_missing_cell.csv", "1,2\n3,\n"), "no error");
  EXPECT_THROW(load_csv(fs::temp_directory_path() / "tcd_does_not_exist.csv"), std::exception);
}

TEST(GroundTruth, Examples) {
  const auto g = load_ground_truth(temp_file("tcd_truth.csv", "1,2,1\n1,3,2\n"), 3);
  EXPECT_EQ(g.edge_count(), 2u);
  EXPECT_EQ(g.find(0, 2)->delay, 2);
  EXPECT_EQ(load_ground_truth(temp_file("tcd_truth_empty.csv", ""), 3).edge_count(), 0u);
  const auto h = load_ground_truth(temp_file("tcd_truth_hdr.csv", "src,dst,delay\n2,1\n"), 2);
  EXPECT_FALSE(h.find(1, 0)->delay.has_value());
  EXPECT_THROW(load_ground_truth(temp_file("tcd_truth_dup.csv", "1,2,1\n1,2,3\n"), 3), std::runtime_error);
  EXPECT_THROW(load_ground_truth(temp_file("tcd_truth_range.csv", "1,4,1\n"), 3), std::runtime_error);
}

TEST(Bundle, WriteIsDeterministicAndReloads) {
  GeneratorSpec spec;
  spec.structure = "mediator";
  spec.seed = 7;
  spec.length = 200;
  const auto b = generate(spec);
  const auto d1 = fs::temp_directory_path() / "tcd_bundle1", d2 = fs::temp_directory_path() / "tcd_bundle2";
  write_bundle(b, d1);
  write_bundle(generate(spec), d2);
  for (const char* f : {"data.csv", "truth.csv", "provenance.json"})
    EXPECT_EQ(read_file(d1 / f), read_file(d2 / f)) << f;
  const auto back = load_csv(d1 / "data.csv");
  EXPECT_EQ(back.series, b.series) << "%.17g round-trips";
  EXPECT_EQ(load_ground_truth(d1 / "truth.csv", 3), *b.truth);
  const auto prov = nlohmann::json::parse(read_file(d1 / "provenance.json"));
  EXPECT_EQ(prov["edges"].size(), 3u);
}
