// Command-line driver: generate -> simulate -> train -> evaluate, plus sweep.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ppct/config.hpp"
#include "ppct/csv_io.hpp"
#include "ppct/experiment.hpp"

namespace fs = std::filesystem;
using namespace ppct;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  bool force = false;
  std::optional<std::string> logs;
  std::optional<std::string> model;
  std::optional<unsigned> bits;
  std::optional<double> delay_min;
  std::optional<double> delay_max;
  std::optional<double> window;
  std::optional<unsigned> k;
  std::optional<std::string> grouping;
};

RunConfig resolve_config(const Options& o) {
  RunConfig c = o.config_path.empty() ? RunConfig{} : load_run_config(o.config_path);
  auto& p = c.sweep.pipeline.protocol;
  if (o.seed) c.sweep.gen.seed = *o.seed;
  if (o.out) c.output_dir = *o.out;
  if (o.bits) p.bits = *o.bits;
  if (o.delay_min) p.delay_min_h = *o.delay_min;
  if (o.delay_max) p.delay_max_h = *o.delay_max;
  if (o.window) p.window_h = *o.window;
  if (o.k) p.suppression_k = *o.k;
  if (o.grouping) p.grouping = parse_grouping(*o.grouping);
  c.validate();
  return c;
}

/// Refuses to clobber existing outputs unless --force was given.
void claim_outputs(const RunConfig& c, const Options& o, const std::vector<std::string>& names) {
  fs::create_directories(c.output_dir);
  if (o.force) return;
  for (const auto& n : names) {
    const fs::path p = c.output_dir / n;
    if (fs::exists(p))
      throw ConfigError("--force", "refusing to overwrite " + p.string() + " (pass --force)");
  }
}

fs::path input_path(const RunConfig& c, const std::optional<std::string>& flag, const char* name) {
  const fs::path p = flag ? fs::path(*flag) : c.output_dir / name;
  if (!fs::exists(p)) throw Error("missing input " + p.string());
  return p;
}

std::vector<LogRecord> load_logs(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot read " + path.string());
  try {
    return read_logs_csv(is);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

std::map<std::string, std::string> base_manifest(const RunConfig& c, const std::string& command) {
  std::map<std::string, std::string> m;
  m["command"] = command;
  m["config_hash"] = config_hash(c);
  m["seed"] = std::to_string(c.sweep.gen.seed);
  // The full effective config, so the artifact can be rebuilt from the manifest alone.
  std::istringstream dump(dump_run_config(c));
  std::string line;
  std::string section;
  while (std::getline(dump, line)) {
    if (line.empty()) continue;
    if (line.front() == '[') {
      section = line.substr(1, line.size() - 2);
      continue;
    }
    const auto eq = line.find(" = ");
    m["config." + section + "." + line.substr(0, eq)] = line.substr(eq + 3);
  }
  return m;
}

template <typename Fn>
void write_file(const RunConfig& c, const std::string& name, Fn&& fn) {
  write_atomically(c.output_dir / name, [&](std::ostream& os) { fn(os); });
}

int cmd_generate(const Options& o) {
  const RunConfig c = resolve_config(o);
  claim_outputs(c, o, {"logs.csv", "generate.manifest"});
  const std::vector<LogRecord> records = generate_logs(c.sweep.gen);
  write_file(c, "logs.csv", [&](std::ostream& os) { write_logs_csv(os, records); });
  std::size_t clicks = 0;
  std::size_t conversions = 0;
  for (const auto& r : records) {
    clicks += r.clicked;
    conversions += r.converted;
  }
  auto m = base_manifest(c, "generate");
  m["artifact"] = "logs.csv";
  m["rows"] = std::to_string(records.size());
  m["clicks"] = std::to_string(clicks);
  m["conversions"] = std::to_string(conversions);
  write_manifest(c.output_dir / "generate.manifest", m);
  std::cout << "wrote " << records.size() << " rows to " << (c.output_dir / "logs.csv").string() << '\n';
  return 0;
}

int cmd_simulate(const Options& o) {
  const RunConfig c = resolve_config(o);
  const fs::path logs = input_path(c, o.logs, "logs.csv");
  claim_outputs(c, o, {"callbacks.csv", "groups.csv", "simulate.manifest"});
  std::vector<LogRecord> clicks;
  for (auto& r : load_logs(logs))
    if (r.clicked) clicks.push_back(std::move(r));
  const ProtocolRun run = run_protocol(clicks, c.sweep.pipeline.protocol, c.sweep.gen.seed);
  write_file(c, "callbacks.csv", [&](std::ostream& os) { write_callbacks_csv(os, run.callbacks); });
  write_file(c, "groups.csv", [&](std::ostream& os) { write_groups_csv(os, run.groups); });
  std::size_t suppressed = 0;
  for (const auto& g : run.groups) suppressed += g.suppressed;
  auto m = base_manifest(c, "simulate");
  m["input"] = logs.string();
  m["artifacts"] = "callbacks.csv,groups.csv";
  m["callbacks"] = std::to_string(run.callbacks.size());
  m["groups"] = std::to_string(run.groups.size());
  m["groups_suppressed"] = std::to_string(suppressed);
  write_manifest(c.output_dir / "simulate.manifest", m);
  std::cout << run.callbacks.size() << " callbacks, " << run.groups.size() << " groups ("
            << suppressed << " suppressed)\n";
  return 0;
}

int cmd_train(const Options& o) {
  const RunConfig c = resolve_config(o);
  const fs::path logs = input_path(c, o.logs, "logs.csv");
  claim_outputs(c, o, {"model.ckpt", "trace.csv", "train.manifest"});
  const std::vector<LogRecord> records = load_logs(logs);
  const ExperimentSetting setting = c.single_setting();
  const SeedResult r = run_setting(setting, records, c.sweep.pipeline, c.sweep.gen.seed);
  save_checkpoint(r.model, c.output_dir / "model.ckpt");
  write_file(c, "trace.csv", [&](std::ostream& os) { write_trace_csv(os, r.diagnostics.trace); });
  auto m = base_manifest(c, "train");
  m["input"] = logs.string();
  m["artifacts"] = "model.ckpt,trace.csv";
  m["setting"] = std::string(setting_name(setting.kind));
  m["optin_rate"] = format_double(setting.optin_rate);
  m["n_hard"] = std::to_string(r.diagnostics.n_hard);
  m["n_soft"] = std::to_string(r.diagnostics.n_soft);
  m["best_epoch"] = std::to_string(r.diagnostics.trace.best_epoch);
  write_manifest(c.output_dir / "train.manifest", m);
  std::cout << setting_name(setting.kind) << " trained on " << r.diagnostics.n_hard << " hard + "
            << r.diagnostics.n_soft << " soft examples, best epoch "
            << r.diagnostics.trace.best_epoch << '\n';
  return 0;
}

int cmd_evaluate(const Options& o) {
  const RunConfig c = resolve_config(o);
  const fs::path logs = input_path(c, o.logs, "logs.csv");
  const fs::path model_path = input_path(c, o.model, "model.ckpt");
  claim_outputs(c, o, {"evaluation.csv", "evaluate.manifest"});
  const ModelParams model = load_checkpoint(model_path);
  const std::vector<LogRecord> records = load_logs(logs);
  const auto test = test_examples(records, c.sweep.gen.seed, c.sweep.pipeline.test_fraction);
  const Evaluation e = evaluate_model(model, test, c.sweep.pipeline.ece_bins);
  write_file(c, "evaluation.csv", [&](std::ostream& os) {
    os << "n_test,pr_auc,calibration_error\n"
       << test.size() << ',' << format_double(e.pr_auc) << ',' << format_double(e.calibration_error)
       << '\n';
  });
  auto m = base_manifest(c, "evaluate");
  m["input"] = logs.string();
  m["model"] = model_path.string();
  m["artifact"] = "evaluation.csv";
  m["n_test"] = std::to_string(test.size());
  write_manifest(c.output_dir / "evaluate.manifest", m);
  std::cout << "PR-AUC " << format_double(e.pr_auc) << " on " << test.size() << " held-out clicks\n";
  return 0;
}

int cmd_sweep(const Options& o) {
  const RunConfig c = resolve_config(o);
  SweepConfig sweep = c.sweep;
  sweep.validate();
  claim_outputs(c, o, {"cells.csv", "aggregated.csv", "summary.txt", "sweep.manifest"});

  // Cells stream into cells.csv.partial; it is only renamed once the sweep succeeds.
  const fs::path cells_path = c.output_dir / "cells.csv";
  fs::path partial = cells_path;
  partial += ".partial";
  std::ofstream cells(partial, std::ios::binary | std::ios::trunc);
  if (!cells) throw Error("cannot write " + partial.string());
  write_cells_header(cells);
  const SweepResult result = optin_sweep(sweep, [&](const SeedResult& cell) {
    write_cell_row(cells, cell);
    cells.flush();
    std::cerr << "  seed " << cell.seed << ' ' << setting_name(cell.setting.kind) << " @ "
              << format_double(cell.setting.optin_rate) << ": PR-AUC " << cell.pr_auc << '\n';
  });
  cells.close();
  fs::rename(partial, cells_path);

  write_file(c, "aggregated.csv", [&](std::ostream& os) { write_aggregated_csv(os, result.reports); });
  write_file(c, "summary.txt", [&](std::ostream& os) { write_summary(os, result.reports); });
  auto m = base_manifest(c, "sweep");
  m["artifacts"] = "cells.csv,aggregated.csv,summary.txt";
  m["cells"] = std::to_string(result.cells.size());
  m["seeds"] = std::to_string(sweep.gen.seed) + ".." +
               std::to_string(sweep.gen.seed + static_cast<std::uint64_t>(sweep.n_seeds) - 1);
  write_manifest(c.output_dir / "sweep.manifest", m);
  write_summary(std::cout, result.reports);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Conversion-rate training under privacy-preserving click tracking"};
  app.require_subcommand(1);
  Options o;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config_path, "INI config file")->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "override gen.seed");
    sub->add_option("--out", o.out, "output directory (overrides experiment.output_dir)");
    sub->add_flag("--force", o.force, "overwrite existing outputs");
    sub->add_option("--bits", o.bits, "group token bits");
    sub->add_option("--delay-min", o.delay_min, "minimum report delay (hours)");
    sub->add_option("--delay-max", o.delay_max, "maximum report delay (hours)");
    sub->add_option("--window", o.window, "aggregation window width (hours)");
    sub->add_option("--k", o.k, "suppression threshold");
    sub->add_option("--grouping", o.grouping, "RoundRobin | HashOfAd | Cohort");
  };

  std::map<CLI::App*, int (*)(const Options&)> handlers;
  auto add = [&](const char* name, const char* help, int (*fn)(const Options&)) {
    CLI::App* sub = app.add_subcommand(name, help);
    add_common(sub);
    handlers[sub] = fn;
    return sub;
  };
  add("generate", "write synthetic logs", cmd_generate);
  add("simulate", "run the reporting protocol over logs", cmd_simulate)
      ->add_option("--logs", o.logs, "log CSV (default <out>/logs.csv)");
  add("train", "train one setting on logs", cmd_train)
      ->add_option("--logs", o.logs, "log CSV (default <out>/logs.csv)");
  CLI::App* eval = add("evaluate", "score a checkpoint on held-out clicks", cmd_evaluate);
  eval->add_option("--logs", o.logs, "log CSV (default <out>/logs.csv)");
  eval->add_option("--model", o.model, "checkpoint (default <out>/model.ckpt)");
  add("sweep", "opt-in rate sweep over all settings", cmd_sweep);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    for (const auto& [sub, fn] : handlers)
      if (sub->parsed()) return fn(o);
  } catch (const ConfigError& e) {
    std::cerr << "config error [" << e.field() << "]: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitRuntime;
}
