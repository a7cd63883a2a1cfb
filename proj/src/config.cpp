#include "tcd/config.hpp"

#include <fstream>
#include <sstream>

#include "tcd/serialize.hpp"

namespace tcd {

namespace {

std::string joined(const std::vector<std::string>& problems) {
  std::string s = "invalid configuration:";
  for (const auto& p : problems) s += "\n  " + p;
  return s;
}

// Reads typed fields out of one config section, collecting problems
// instead of stopping at the first.
class SectionReader {
 public:
  SectionReader(const nlohmann::json& doc, std::string name, std::vector<std::string>& problems)
      : name_(std::move(name)), problems_(problems) {
    if (!doc.contains(name_)) return;
    section_ = &doc.at(name_);
    if (!section_->is_object()) {
      problems_.push_back(name_ + ": expected an object");
      section_ = nullptr;
    }
  }

  bool has(const char* key) const { return section_ && section_->contains(key); }

  template <typename T>
  void read(const char* key, T& field) {
    if (!has(key)) return;
    seen_.push_back(key);
    const auto& v = section_->at(key);
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw std::invalid_argument("expected true or false");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) throw std::invalid_argument("expected an integer");
        if (std::is_unsigned_v<T> && v.is_number_integer() && v.get<long long>() < 0 &&
            !v.is_number_unsigned())
          throw std::invalid_argument("expected a non-negative integer");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw std::invalid_argument("expected a number");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw std::invalid_argument("expected a string");
      }
      field = v.get<T>();
    } catch (const std::exception& e) {
      problems_.push_back(name_ + "." + key + ": " + e.what() + " (got " + v.dump() + ")");
    }
  }

  const nlohmann::json* raw(const char* key) {
    if (!has(key)) return nullptr;
    seen_.push_back(key);
    return &section_->at(key);
  }

  void reject_unknown() {
    if (!section_) return;
    for (const auto& [key, _] : section_->items())
      if (std::find(seen_.begin(), seen_.end(), key) == seen_.end())
        problems_.push_back("unknown key " + name_ + "." + key);
  }

 private:
  std::string name_;
  std::vector<std::string>& problems_;
  const nlohmann::json* section_ = nullptr;
  std::vector<std::string> seen_;
};

std::size_t csv_columns(const std::string& path) {
  std::ifstream in(path);
  std::string line;
  if (!std::getline(in, line)) return 0;
  return static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1;
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> problems)
    : std::invalid_argument(joined(problems)), problems_(std::move(problems)) {}

const std::vector<std::string>& profile_names() {
  static const std::vector<std::string> names = {"synthetic-dense", "synthetic-sparse", "lorenz",
                                                 "fmri"};
  return names;
}

nlohmann::json profile_json(const std::string& name) {
  auto model = [](std::size_t d, std::size_t h, std::size_t ffn, double tau, double lambda,
                  std::size_t T) {
    return nlohmann::json{{"embed_dim", d},  {"qk_dim", d},         {"heads", h},
                          {"ffn_dim", ffn},  {"temperature", tau},  {"kernel_l1", lambda},
                          {"mask_l1", lambda}, {"window", T}};
  };
  auto detector = [](std::size_t m, std::size_t n) {
    return nlohmann::json{{"top_classes", m}, {"classes", n}};
  };
  nlohmann::json p;
  if (name == "synthetic-dense") {
    p = {{"model", model(256, 4, 256, 1.0, 1e-4, 16)}, {"detector", detector(1, 2)}};
  } else if (name == "synthetic-sparse") {
    p = {{"model", model(256, 4, 256, 100.0, 1e-10, 16)}, {"detector", detector(1, 2)}};
  } else if (name == "lorenz") {
    p = {{"model", model(512, 8, 512, 10.0, 5e-4, 32)},
         {"detector", detector(2, 3)},
         {"data", {{"structure", "lorenz96"}}}};
  } else if (name == "fmri") {
    p = {{"model", model(256, 4, 512, 100.0, 0.0, 32)}, {"detector", detector(1, 2)}};
  } else {
    std::string valid;
    for (const auto& n : profile_names()) valid += (valid.empty() ? "" : ", ") + n;
    throw ConfigError({"unknown profile '" + name + "'; valid: " + valid});
  }
  return p;
}

nlohmann::json parse_override(const std::string& text) {
  std::string s = text;
  if (s.rfind("--", 0) == 0) s = s.substr(2);
  const auto eq = s.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError({"override '" + text + "' must look like section.key=value"});
  const std::string path = s.substr(0, eq), raw = s.substr(eq + 1);
  nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  nlohmann::json patch = value;
  std::vector<std::string> parts;
  std::stringstream ss(path);
  for (std::string part; std::getline(ss, part, '.');) parts.push_back(part);
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) {
    if (it->empty()) throw ConfigError({"override '" + text + "' has an empty key"});
    patch = nlohmann::json{{*it, patch}};
  }
  return patch;
}

RunConfig build_config(const nlohmann::json& doc_in, const std::vector<std::string>& overrides,
                       const std::string& profile_arg) {
  std::vector<std::string> problems;
  if (!doc_in.is_null() && !doc_in.is_object()) throw ConfigError({"config must be a JSON object"});
  nlohmann::json doc = doc_in.is_null() ? nlohmann::json::object() : doc_in;

  nlohmann::json patches = nlohmann::json::object();
  for (const auto& o : overrides) {
    try {
      patches.merge_patch(parse_override(o));
    } catch (const ConfigError& e) {
      problems.insert(problems.end(), e.problems().begin(), e.problems().end());
    }
  }
  std::string profile = profile_arg;
  if (profile.empty() && patches.contains("profile") && patches["profile"].is_string())
    profile = patches["profile"];
  if (profile.empty() && doc.contains("profile") && doc["profile"].is_string()) profile = doc["profile"];

  nlohmann::json merged = nlohmann::json::object();
  if (!profile.empty()) {
    try {
      merged = profile_json(profile);
    } catch (const ConfigError& e) {
      problems.insert(problems.end(), e.problems().begin(), e.problems().end());
    }
  }
  merged.merge_patch(doc);
  merged.merge_patch(patches);
  merged["profile"] = profile;

  RunConfig c;
  c.profile = profile;
  for (const auto& [key, _] : merged.items()) {
    static const std::vector<std::string> known = {"profile", "data",  "model",  "train",
                                                   "detector", "eval", "bench", "output", "seeds"};
    if (std::find(known.begin(), known.end(), key) == known.end())
      problems.push_back("unknown section " + key);
  }

  {
    SectionReader r(merged, "data", problems);
    GeneratorSpec& g = c.data.generator;
    r.read("structure", g.structure);
    r.read("length", g.length);
    r.read("seed", g.seed);
    r.read("noise_std", g.noise_std);
    r.read("warmup", g.warmup);
    r.read("variables", g.variables);
    r.read("forcing", g.forcing);
    r.read("dt", g.dt);
    r.read("stride", g.stride);
    r.read("burn_in", g.burn_in);
    r.read("csv", c.data.csv);
    r.read("truth", c.data.truth);
    r.read("standardize", c.data.standardize);
    if (const auto* edges = r.raw("edges")) {
      if (!edges->is_array()) {
        problems.push_back("data.edges: expected an array");
      } else {
        for (const auto& e : *edges) {
          try {
            const long long src = e.at("src").get<long long>(), dst = e.at("dst").get<long long>();
            const long long lag = e.value("lag", 1LL);
            if (src < 1 || dst < 1) throw std::invalid_argument("indices are 1-based");
            g.edges.push_back({static_cast<std::size_t>(src - 1), static_cast<std::size_t>(dst - 1),
                               e.value("coefficient", 0.8), static_cast<int>(lag)});
          } catch (const std::exception& ex) {
            problems.push_back("data.edges entry " + e.dump() + ": " + ex.what());
          }
        }
      }
    }
    r.reject_unknown();
  }
  {
    SectionReader r(merged, "model", problems);
    ModelConfig& m = c.model;
    r.read("series", m.series);
    r.read("window", m.window);
    r.read("embed_dim", m.embed_dim);
    r.read("qk_dim", m.qk_dim);
    r.read("heads", m.heads);
    r.read("ffn_dim", m.ffn_dim);
    r.read("temperature", m.temperature);
    r.read("kernel_l1", m.kernel_l1);
    r.read("mask_l1", m.mask_l1);
    r.read("leaky_slope", m.leaky_slope);
    r.read("time_local", m.time_local);
    r.reject_unknown();
  }
  bool train_window_given = false;
  {
    SectionReader r(merged, "train", problems);
    TrainConfig& t = c.train;
    train_window_given = r.has("window");
    r.read("window", t.window);
    r.read("stride", t.stride);
    r.read("max_epochs", t.max_epochs);
    r.read("patience", t.patience);
    r.read("min_delta", t.min_delta);
    r.read("learning_rate", t.learning_rate);
    r.read("seed", t.seed);
    r.read("validation_fraction", t.validation_fraction);
    r.read("batch_size", t.batch_size);
    r.read("shuffle", t.shuffle);
    r.read("threads", t.threads);
    r.reject_unknown();
  }
  {
    SectionReader r(merged, "detector", problems);
    DetectorConfig& d = c.detector;
    r.read("classes", d.classes);
    r.read("top_classes", d.top_classes);
    r.read("theta", d.theta);
    r.read("samples", d.samples);
    r.read("kmeans_seed", d.kmeans_seed);
    r.read("kmeans_max_iter", d.kmeans_max_iter);
    r.read("kmeans_restarts", d.kmeans_restarts);
    r.read("stabilizer", d.stabilizer);
    r.read("zoom", d.zoom);
    r.reject_unknown();
  }
  {
    SectionReader r(merged, "eval", problems);
    r.read("include_self_loops", c.eval.include_self_loops);
    r.reject_unknown();
  }
  {
    SectionReader r(merged, "bench", problems);
    r.read("structures", c.bench.structures);
    r.reject_unknown();
  }
  if (merged.contains("output")) {
    if (merged["output"].is_string()) {
      c.output = merged["output"];
    } else {
      problems.push_back("output: expected a string");
    }
  }
  if (merged.contains("seeds")) {
    try {
      c.seeds = merged["seeds"].get<std::vector<std::uint64_t>>();
    } catch (const std::exception&) {
      problems.push_back("seeds: expected an array of non-negative integers");
    }
  }

  // Derived values.
  if (!train_window_given) c.train.window = c.model.window;
  if (c.data.csv.empty()) {
    if (c.data.generator.structure == "lorenz96") {
      c.model.series = c.data.generator.variables;
    } else if (c.data.generator.structure != "lorenz96") {
      try {
        c.model.series = structure_series(c.data.generator.structure);
      } catch (const std::exception&) {
        // reported by the generator check below
      }
    }
  } else if (std::filesystem::exists(c.data.csv)) {
    c.model.series = csv_columns(c.data.csv);
  }

  // Bounds and cross-checks.
  for (const auto& v : c.model.violations()) problems.push_back(v);
  for (const auto& v : c.train.violations()) problems.push_back(v);
  for (const auto& v : c.detector.violations()) problems.push_back(v);
  if (c.data.csv.empty()) {
    for (const auto& v : c.data.generator.violations()) problems.push_back(v);
  } else if (!std::filesystem::exists(c.data.csv)) {
    problems.push_back("data.csv: file '" + c.data.csv + "' does not exist");
  }
  if (!c.data.truth.empty() && !std::filesystem::exists(c.data.truth))
    problems.push_back("data.truth: file '" + c.data.truth + "' does not exist");
  if (c.train.window != c.model.window)
    problems.push_back("train.window (" + std::to_string(c.train.window) +
                       ") must equal model.window (" + std::to_string(c.model.window) + ")");
  if (c.seeds.empty()) problems.push_back("seeds: need at least one seed");
  const auto& names = structure_names();
  for (const auto& s : c.bench.structures)
    if (std::find(names.begin(), names.end(), s) == names.end())
      problems.push_back("bench.structures: unknown structure '" + s + "'");

  if (!problems.empty()) throw ConfigError(std::move(problems));
  return c;
}

RunConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides,
                      const std::string& profile) {
  nlohmann::json doc = nlohmann::json::object();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError({"cannot read config file '" + path.string() + "'"});
    try {
      doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError({"config file '" + path.string() + "' is not valid JSON: " + e.what()});
    }
  }
  return build_config(doc, overrides, profile);
}

nlohmann::json config_to_json(const RunConfig& c) {
  const GeneratorSpec& g = c.data.generator;
  nlohmann::json edges = nlohmann::json::array();
  for (const auto& e : g.edges)
    edges.push_back({{"src", e.src + 1}, {"dst", e.dst + 1}, {"coefficient", e.coefficient}, {"lag", e.lag}});
  const TrainConfig& t = c.train;
  const DetectorConfig& d = c.detector;
  return {
      {"profile", c.profile},
      {"data",
       {{"structure", g.structure}, {"length", g.length}, {"seed", g.seed},
        {"noise_std", g.noise_std}, {"warmup", g.warmup}, {"variables", g.variables},
        {"forcing", g.forcing}, {"dt", g.dt}, {"stride", g.stride}, {"burn_in", g.burn_in},
        {"edges", edges}, {"csv", c.data.csv}, {"truth", c.data.truth},
        {"standardize", c.data.standardize}}},
      {"model", model_config_to_json(c.model)},
      {"train",
       {{"window", t.window}, {"stride", t.stride}, {"max_epochs", t.max_epochs},
        {"patience", t.patience}, {"min_delta", t.min_delta},
        {"learning_rate", t.learning_rate}, {"seed", t.seed},
        {"validation_fraction", t.validation_fraction}, {"batch_size", t.batch_size},
        {"shuffle", t.shuffle}, {"threads", t.threads}}},
      {"detector",
       {{"classes", d.classes}, {"top_classes", d.top_classes}, {"theta", d.theta},
        {"samples", d.samples}, {"kmeans_seed", d.kmeans_seed},
        {"kmeans_max_iter", d.kmeans_max_iter}, {"kmeans_restarts", d.kmeans_restarts},
        {"stabilizer", d.stabilizer}, {"zoom", d.zoom}}},
      {"eval", {{"include_self_loops", c.eval.include_self_loops}}},
      {"bench", {{"structures", c.bench.structures}}},
      {"output", c.output},
      {"seeds", c.seeds}};
}

}  // namespace tcd
