#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "tcd/config.hpp"

using namespace tcd;
namespace fs = std::filesystem;

namespace {

std::vector<std::string> problems_of(const nlohmann::json& doc, const std::vector<std::string>& overrides = {}) {
  try {
    build_config(doc, overrides);
  } catch (const ConfigError& e) {
    return e.problems();
  }
  return {};
}

bool mentions(const std::vector<std::string>& problems, const std::string& needle) {
  for (const auto& p : problems)
    if (p.find(needle) != std::string::npos) return true;
  return false;
}

}  // namespace

TEST(Profiles, MatchPublishedSettings) {
  const auto dense = build_config({}, {}, "synthetic-dense");
  EXPECT_EQ(dense.model.embed_dim, 256u);
  EXPECT_EQ(dense.model.qk_dim, 256u);
  EXPECT_EQ(dense.model.heads, 4u);
  EXPECT_EQ(dense.model.ffn_dim, 256u);
  EXPECT_EQ(dense.model.temperature, 1.0);
  EXPECT_EQ(dense.model.kernel_l1, 1e-4);
  EXPECT_EQ(dense.model.mask_l1, 1e-4);
  EXPECT_EQ(dense.model.window, 16u);
  EXPECT_EQ(dense.detector.top_classes, 1u);
  EXPECT_EQ(dense.detector.classes, 2u);

  const auto sparse = build_config({}, {}, "synthetic-sparse");
  EXPECT_EQ(sparse.model.temperature, 100.0);
  EXPECT_EQ(sparse.model.kernel_l1, 1e-10);

  const auto lorenz = build_config({}, {}, "lorenz");
  EXPECT_EQ(lorenz.model.embed_dim, 512u);
  EXPECT_EQ(lorenz.model.heads, 8u);
  EXPECT_EQ(lorenz.model.temperature, 10.0);
  EXPECT_EQ(lorenz.model.kernel_l1, 5e-4);
  EXPECT_EQ(lorenz.model.window, 32u);
  EXPECT_EQ(lorenz.detector.top_classes, 2u);
  EXPECT_EQ(lorenz.detector.classes, 3u);
  EXPECT_EQ(lorenz.model.series, 10u);

  const auto fmri = build_config({}, {}, "fmri");
  EXPECT_EQ(fmri.model.ffn_dim, 512u);
  EXPECT_EQ(fmri.model.kernel_l1, 0.0);
  EXPECT_EQ(fmri.model.temperature, 100.0);
  EXPECT_EQ(fmri.model.window, 32u);

  EXPECT_THROW(profile_json("nope"), ConfigError);
}

TEST(Overrides, Parse) {
  EXPECT_EQ(parse_override("--model.heads=3"), (nlohmann::json{{"model", {{"heads", 3}}}}));
  EXPECT_EQ(parse_override("data.structure=fork"), (nlohmann::json{{"data", {{"structure", "fork"}}}}));
  EXPECT_EQ(parse_override("seeds=[1,2]"), (nlohmann::json{{"seeds", {1, 2}}}));
  EXPECT_THROW(parse_override("--model.heads"), ConfigError);
  EXPECT_THROW(parse_override("--model..heads=1"), ConfigError);
}

TEST(Layering, ProfileThenFileThenOverrides) {
  const nlohmann::json doc = {{"profile", "synthetic-dense"}, {"model", {{"heads", 2}}}};
  const auto c = build_config(doc, {"--model.embed_dim=64", "--model.qk_dim=64"});
  EXPECT_EQ(c.profile, "synthetic-dense");
  EXPECT_EQ(c.model.heads, 2u);
  EXPECT_EQ(c.model.embed_dim, 64u);
  EXPECT_EQ(c.model.ffn_dim, 256u);
  EXPECT_EQ(build_config(doc, {"--profile=lorenz"}).model.embed_dim, 512u);
}

TEST(Derived, WindowAndSeries) {
  const auto c = build_config({{"model", {{"window", 12}, {"ffn_dim", 24}, {"embed_dim", 16}}},
                               {"data", {{"structure", "diamond"}}}});
  EXPECT_EQ(c.train.window, 12u);
  EXPECT_EQ(c.model.series, 4u);
  EXPECT_TRUE(mentions(problems_of({{"model", {{"window", 12}, {"ffn_dim", 24}, {"embed_dim", 16}}},
                                    {"train", {{"window", 8}}}}),
                       "train.window"));
}

TEST(Validation, ReportsEveryProblemAtOnce) {
  const nlohmann::json doc = {{"model", {{"heads", 0}, {"temperature", -1.0}, {"colour", "red"}}},
                              {"train", {{"learning_rate", "fast"}}},
                              {"data", {{"structure", "spiral"}}},
                              {"detector", {{"classes", 2}, {"top_classes", 3}}},
                              {"extra", 1}};
  const auto p = problems_of(doc);
  EXPECT_GE(p.size(), 6u);
  EXPECT_TRUE(mentions(p, "heads"));
  EXPECT_TRUE(mentions(p, "temperature"));
  EXPECT_TRUE(mentions(p, "model.colour"));
  EXPECT_TRUE(mentions(p, "train.learning_rate"));
  EXPECT_TRUE(mentions(p, "spiral"));
  EXPECT_TRUE(mentions(p, "extra"));
  EXPECT_TRUE(mentions(p, "top_classes"));
}

TEST(Validation, PathsMustExist) {
  const auto p = problems_of({{"data", {{"csv", "/nonexistent/x.csv"}, {"truth", "/nonexistent/t.csv"}}}});
  EXPECT_TRUE(mentions(p, "data.csv"));
  EXPECT_TRUE(mentions(p, "data.truth"));
}

TEST(Validation, CsvSetsSeriesCount) {
  const auto path = fs::temp_directory_path() / "tcd_cfg_series.csv";
  std::ofstream(path) << "a,b,c,d,e\n1,2,3,4,5\n";
  const auto c = build_config({{"data", {{"csv", path.string()}}}});
  EXPECT_EQ(c.model.series, 5u);
}

TEST(Validation, EdgesAreOneBased) {
  const auto c = build_config({{"data", {{"edges", {{{"src", 1}, {"dst", 2}, {"lag", 3}}}}}}});
  ASSERT_EQ(c.data.generator.edges.size(), 1u);
  EXPECT_EQ(c.data.generator.edges[0].src, 0u);
  EXPECT_EQ(c.data.generator.edges[0].lag, 3);
  EXPECT_EQ(c.data.generator.edges[0].coefficient, 0.8);
  EXPECT_TRUE(mentions(problems_of({{"data", {{"edges", {{{"src", 0}, {"dst", 2}}}}}}}), "1-based"));
}

TEST(Serialize, ConfigJsonRebuildsSameConfig) {
  const auto c = build_config({{"profile", "synthetic-sparse"}, {"seeds", {3, 4}}},
                              {"--bench.structures=[\"fork\",\"diamond\"]", "--data.edges=[{\"src\":1,\"dst\":2}]"});
  EXPECT_EQ(build_config(config_to_json(c)), c);
}

TEST(Files, LoadConfig) {
  const auto path = fs::temp_directory_path() / "tcd_cfg.json";
  std::ofstream(path) << R"({"profile": "synthetic-dense", "seeds": [1, 2]})";
  const auto c = load_config(path, {"--train.max_epochs=5"});
  EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{1, 2}));
  EXPECT_EQ(c.train.max_epochs, 5u);
  std::ofstream(path) << "{ broken";
  EXPECT_THROW(load_config(path), ConfigError);
  EXPECT_THROW(load_config(path.string() + ".missing"), ConfigError);
  EXPECT_EQ(load_config("").model.series, 3u);  // default fork data
}
