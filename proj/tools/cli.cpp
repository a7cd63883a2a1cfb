#include "cli.hpp"

#include <fstream>

#include <CLI11.hpp>

#include "tcd/pipeline.hpp"
#include "tcd/serialize.hpp"

namespace tcd::cli {

namespace {

namespace fs = std::filesystem;

// Options shared by every command that reads a run config.
struct ConfigOptions {
  std::string path;
  std::string profile;
  std::string output;
  std::vector<std::string> sets;
};

void add_config_options(CLI::App* cmd, ConfigOptions& o) {
  cmd->add_option("-c,--config", o.path, "JSON run config")->check(CLI::ExistingFile);
  cmd->add_option("-p,--profile", o.profile, "named hyperparameter profile");
  cmd->add_option("-o,--output", o.output, "output directory");
  cmd->add_option("--set", o.sets, "override as section.key=value (repeatable)");
  cmd->allow_extras();
}

RunConfig resolve(const ConfigOptions& o, const CLI::App* cmd, std::vector<std::string> extra = {}) {
  // Unrecognised `--section.key=value` arguments are overrides.
  std::vector<std::string> overrides = extra;
  for (const auto& s : o.sets) overrides.push_back(s);
  for (const auto& r : cmd->remaining()) {
    if (r.rfind("--", 0) != 0 || r.find('=') == std::string::npos)
      throw ConfigError({"unexpected argument '" + r + "'"});
    overrides.push_back(r);
  }
  if (!o.output.empty()) overrides.push_back("output=\"" + o.output + "\"");
  return load_config(o.path, overrides, o.profile);
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write '" + path.string() + "'");
  f << text;
  if (!f) throw std::runtime_error("failed writing '" + path.string() + "'");
}

nlohmann::json train_report_json(const TrainReport& r) {
  return {{"train_loss", r.train_loss},     {"validation_loss", r.validation_loss},
          {"stop_epoch", r.stop_epoch},     {"best_epoch", r.best_epoch},
          {"best_validation", r.best_validation}, {"early_stopped", r.early_stopped}};
}

nlohmann::json discovery_json(const Discovery& d) {
  nlohmann::json targets = nlohmann::json::array();
  for (const auto& t : d.targets) {
    std::vector<std::size_t> sources;
    for (auto s : t.selection.sources) sources.push_back(s + 1);
    targets.push_back({{"target", t.target + 1},
                       {"windows_used", t.windows_used},
                       {"sources", sources},
                       {"classes_used", t.selection.classes_used},
                       {"reduced", t.selection.reduced},
                       {"degenerate", t.selection.degenerate}});
  }
  return {{"graph", graph_to_json(d.graph)}, {"degenerate", d.degenerate()}, {"targets", targets}};
}

CausalGraph load_truth_any(const fs::path& path, std::size_t n) {
  if (path.extension() == ".json") return load_graph_json(path);
  return load_ground_truth(path, n);
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Learn a temporal causal graph from multivariate time series"};
  app.require_subcommand(1);
  // Accepted before or after the subcommand; occurrences are counted after parsing.
  auto add_verbosity = [](CLI::App* cmd) {
    cmd->add_flag("-v,--verbose", "print epoch losses");
    cmd->add_flag("-q,--quiet", "suppress progress on stderr");
  };
  add_verbosity(&app);

  ConfigOptions gen_opts, train_opts, disc_opts, bench_opts;
  std::string gen_structure;
  long long gen_seed = -1;
  auto* gen = app.add_subcommand("generate", "write a synthetic dataset bundle");
  add_verbosity(gen);
  add_config_options(gen, gen_opts);
  gen->add_option("-s,--structure", gen_structure, "diamond, mediator, v-structure, fork or lorenz96");
  gen->add_option("--seed", gen_seed, "generator seed");

  std::string train_data;
  auto* tr = app.add_subcommand("train", "train a model and write a checkpoint");
  add_verbosity(tr);
  add_config_options(tr, train_opts);
  tr->add_option("-d,--data", train_data, "CSV series (overrides the config's data)");

  std::string disc_checkpoint, disc_data;
  auto* disc = app.add_subcommand("discover", "extract a causal graph from a checkpoint");
  add_verbosity(disc);
  add_config_options(disc, disc_opts);
  disc->add_option("-k,--checkpoint", disc_checkpoint, "checkpoint JSON")->required()->check(CLI::ExistingFile);
  disc->add_option("-d,--data", disc_data, "CSV series (overrides the config's data)");

  std::string eval_pred, eval_truth, eval_json;
  bool eval_no_self = false, eval_diff = false;
  auto* ev = app.add_subcommand("eval", "score a predicted graph against ground truth");
  add_verbosity(ev);
  ev->add_option("--pred", eval_pred, "predicted graph JSON")->required()->check(CLI::ExistingFile);
  ev->add_option("--truth", eval_truth, "truth graph JSON or truth CSV")->required()->check(CLI::ExistingFile);
  ev->add_option("--json", eval_json, "also write the result as JSON");
  ev->add_flag("--no-self-loops", eval_no_self, "ignore self-loops when scoring");
  ev->add_flag("--diff", eval_diff, "list TP/FP/FN edges");

  auto* bench = app.add_subcommand("bench", "multi-seed benchmark report");
  add_verbosity(bench);
  add_config_options(bench, bench_opts);

  std::vector<std::string> argv_rev(args.rbegin(), args.rend());
  try {
    app.parse(argv_rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }

  std::size_t verbosity = 0, quiet = 0;
  for (const CLI::App* a : std::initializer_list<const CLI::App*>{&app, gen, tr, disc, ev, bench}) {
    verbosity += a->get_option("--verbose")->count();
    quiet += a->get_option("--quiet")->count();
  }
  LogFn log;
  if (quiet == 0)
    log = [&err, verbosity](const std::string& line) {
      if (verbosity == 0 && line.rfind("epoch ", 0) == 0) return;
      err << line << "\n";
    };

  try {
    if (*gen) {
      std::vector<std::string> extra;
      if (!gen_structure.empty()) extra.push_back("data.structure=\"" + gen_structure + "\"");
      if (gen_seed >= 0) extra.push_back("data.seed=" + std::to_string(gen_seed));
      const RunConfig c = resolve(gen_opts, gen, extra);
      if (!c.data.csv.empty()) throw ConfigError({"generate needs a generator, not data.csv"});
      write_bundle(generate(c.data.generator), c.output);
      out << "wrote " << (fs::path(c.output) / "data.csv").string() << "\n";
    } else if (*tr) {
      std::vector<std::string> extra;
      if (!train_data.empty()) extra.push_back("data.csv=\"" + train_data + "\"");
      RunConfig c = resolve(train_opts, tr, extra);
      const DatasetBundle data = load_data(c);
      c.model.series = data.series.dim(0);
      c.model.validate();
      const Normalizer norm = fit_normalizer(data.series, c.data.standardize);
      const auto windows = make_windows(norm.apply(data.series), c.train.window, c.train.stride);
      TrainResult result = train(windows, c.model, c.train, [&](std::size_t e, double a, double b) {
        if (log) {
          char buf[96];
          std::snprintf(buf, sizeof buf, "epoch %zu train %.6f validation %.6f", e, a, b);
          log(buf);
        }
      });
      if (log)
        log("train: " + std::to_string(result.report.seconds) + "s, " +
            std::to_string(result.report.stop_epoch) + " epochs");
      const fs::path dir = c.output;
      fs::create_directories(dir);
      save_checkpoint({c.model, result.params, norm}, dir / "checkpoint.json");
      write_text(dir / "train_report.json", train_report_json(result.report).dump(1) + "\n");
      out << "best epoch " << result.report.best_epoch << ", validation loss "
          << result.report.best_validation << "\n";
    } else if (*disc) {
      std::vector<std::string> extra;
      if (!disc_data.empty()) extra.push_back("data.csv=\"" + disc_data + "\"");
      const RunConfig c = resolve(disc_opts, disc, extra);
      const Checkpoint ck = load_checkpoint(disc_checkpoint);
      const DatasetBundle data = load_data(c);
      if (data.series.dim(0) != ck.config.series)
        throw std::invalid_argument("data has " + std::to_string(data.series.dim(0)) +
                                    " series but the checkpoint expects " +
                                    std::to_string(ck.config.series));
      const auto windows = make_windows(ck.normalizer.apply(data.series), ck.config.window, 1);
      const Discovery d = discover(ck.params, ck.config, windows, c.detector);
      const fs::path dir = c.output;
      fs::create_directories(dir);
      save_graph_json(d.graph, dir / "graph.json");
      write_text(dir / "graph.dot", graph_to_dot(d.graph, data.labels));
      write_text(dir / "discovery.json", discovery_json(d).dump(1) + "\n");
      if (d.degenerate() && log) log("warning: k-means degenerated (all scores equal) for some target");
      out << d.graph.edge_count() << " edges" << (d.degenerate() ? " (degenerate)" : "") << "\n";
    } else if (*ev) {
      const CausalGraph pred = load_graph_json(eval_pred);
      const CausalGraph truth = load_truth_any(eval_truth, pred.vertex_count());
      const EvalResult r = evaluate(pred, truth, !eval_no_self);
      out << eval_to_text(r);
      if (eval_diff) out << diff_to_text(edge_diff(pred, truth, !eval_no_self));
      if (!eval_json.empty()) write_text(eval_json, eval_to_json(r).dump(1) + "\n");
    } else if (*bench) {
      const RunConfig c = resolve(bench_opts, bench);
      if (c.seeds.size() < 2) throw ConfigError({"bench needs at least 2 seeds"});
      const BenchReport report = run_bench(c, log);
      const fs::path dir = c.output;
      fs::create_directories(dir);
      write_text(dir / "report.json", report_to_json(report).dump(1) + "\n");
      const std::string text = report_to_text(report);
      write_text(dir / "report.txt", text);
      out << text;
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const DivergenceError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace tcd::cli
