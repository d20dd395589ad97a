#include "forgetlab/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "forgetlab/checkpoint.hpp"
#include "forgetlab/config.hpp"
#include "forgetlab/continual.hpp"
#include "forgetlab/dataset_io.hpp"
#include "forgetlab/errors.hpp"
#include "forgetlab/plot.hpp"
#include "forgetlab/report.hpp"

namespace forgetlab {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

RunConfig load_cfg(const std::string& path, const std::vector<std::string>& seed_overrides) {
  RunConfig cfg = load_run_config(path);
  for (const std::string& s : seed_overrides) apply_seed_override(cfg, s);
  cfg.validate();
  return cfg;
}

LoadedData load_matching_data(const RunConfig& cfg) {
  LoadedData loaded = read_datasets(cfg.data_dir);
  if (to_json(loaded.config) != to_json(cfg.data) || loaded.data_seed != cfg.seeds.data)
    throw ConfigError("dataset directory " + cfg.data_dir +
                      " was generated under a different data config or seed (re-run gen-data)");
  return loaded;
}

void print_matrix(const ForgettingMatrix& m) {
  for (const MatrixRow& row : m.rows) {
    std::string line = fmt::format("after task {}:", row.after_task);
    for (const TaskEval& t : row.tasks)
      line += fmt::format("  {} {:.4f} (d {:+.4f})", t.task_name, t.omega, t.delta);
    fmt::print("{}\n", line);
  }
}

double final_vl_mean(const ForgettingMatrix& m) {
  double sum = 0.0;
  long n = 0;
  for (const TaskEval& t : m.rows.back().tasks) {
    if (t.task_id == 1) continue;
    for (const EvalResult& r : t.datasets) {
      sum += r.accuracy();
      ++n;
    }
  }
  return n > 0 ? sum / static_cast<double>(n) : 0.0;
}

void cmd_gen_data(const RunConfig& cfg, const std::string& out, bool force) {
  const fs::path dir = out.empty() ? fs::path(cfg.data_dir) : fs::path(out);
  DataBundle b = generate_all(cfg.data, cfg.seeds.data);
  write_datasets(b, cfg.data, cfg.seeds.data, dir, force);
  fmt::print("datasets -> {} (fingerprint {})\n", dir.string(), bundle_fingerprint(b));
  fmt::print("  pretrain: {} docs; nl suite: {} sets x {} samples\n", b.pretrain.train.size(),
             b.nl_suite.size(), b.nl_suite.front().test.size());
  for (const TaskDataset& d : b.vl_tasks)
    fmt::print("  task {} {}: train {} test {}{}\n", d.task_id, d.name, d.train.size(),
               d.test.size(),
               d.alignment.empty() ? "" : fmt::format(" alignment {}", d.alignment.size()));
}

void cmd_pretrain(RunConfig cfg, const std::string& out, int steps_cap) {
  if (steps_cap > 0) {
    cfg.pretrain.step_cap = steps_cap;
    cfg.pretrain.eval_every = std::min(cfg.pretrain.eval_every, steps_cap);
    cfg.validate();
  }
  const fs::path dir = out.empty() ? fs::path(cfg.pretrain_dir) : fs::path(out);
  LoadedData loaded = load_matching_data(cfg);
  fs::create_directories(dir);
  std::ofstream metrics(dir / "metrics.csv");
  if (!metrics) throw IoError("cannot write " + (dir / "metrics.csv").string());
  metrics << "step,task,stage,loss,lr\n";
  TrainSink sink = [&](const TrainStep& s) {
    metrics << fmt::format("{},{},{},{:.6f},{:.8e}\n", s.global_step, s.task_id, s.stage, s.loss,
                           s.lr);
    if (s.step % 100 == 0)
      fmt::print("pretrain step {:>5}  loss {:.4f}  lr {:.2e}\n", s.step, s.loss, s.lr);
  };
  Checkpoint ckpt = pretrain_base_lm(cfg, loaded.bundle, sink);
  save_checkpoint(ckpt, dir / "base.ckpt");
  fmt::print("base LM -> {}\n", (dir / "base.ckpt").string());
  for (const EvalResult& r : ckpt.baseline->results)
    fmt::print("  {} ({}): {:.4f}\n", r.dataset, r.tag, r.accuracy());
  fmt::print("  NL score {:.4f}  (nlu {:.4f}, nlg {:.4f})\n", ckpt.baseline->omega,
             ckpt.baseline->nlu_mean, ckpt.baseline->nlg_mean);
}

TrainSink progress_sink() {
  return [](const TrainStep& s) {
    if (s.step == 1 || s.step % 50 == 0)
      fmt::print("{} task {} step {:>4}  loss {:.4f}\n", s.stage, s.task_id, s.step, s.loss);
  };
}

void cmd_run(const RunConfig& cfg, const std::string& out) {
  LoadedData loaded = load_matching_data(cfg);
  Checkpoint base = load_checkpoint(fs::path(cfg.pretrain_dir) / "base.ckpt");
  const std::string run_id = config_hash(cfg).substr(0, 12);
  const fs::path run_dir = out.empty() ? fs::path("runs") / run_id : fs::path(out);
  RunResult res = run_sequence(cfg, loaded.bundle, base, run_dir, progress_sink());
  print_matrix(res.matrix);
  fmt::print("report -> {}\n", res.report_csv.string());
}

void cmd_sweep(const std::string& spec_path, const std::string& out,
               const std::vector<std::string>& seed_overrides) {
  std::ifstream in(spec_path);
  if (!in) throw IoError("cannot open sweep spec: " + spec_path);
  json spec;
  try {
    in >> spec;
  } catch (const json::exception& e) {
    throw ConfigError("sweep spec parse error: " + std::string(e.what()));
  }
  if (!spec.contains("base")) throw ConfigError("sweep spec needs a 'base' run config");
  RunConfig base_cfg = run_config_from_json(spec["base"]);
  for (const std::string& s : seed_overrides) apply_seed_override(base_cfg, s);
  base_cfg.validate();
  if (!spec.contains("variants") || !spec["variants"].is_array() || spec["variants"].empty())
    throw ConfigError("sweep spec lists no variants");

  LoadedData loaded = load_matching_data(base_cfg);
  Checkpoint base = load_checkpoint(fs::path(base_cfg.pretrain_dir) / "base.ckpt");
  const fs::path out_dir = out.empty() ? fs::path("sweep") : fs::path(out);
  fs::create_directories(out_dir);

  struct Line {
    std::string name;
    double omega, delta, vl;
  };
  std::vector<Line> lines;
  std::vector<std::string> seen;
  for (const json& v : spec["variants"]) {
    const std::string name = v.value("name", "");
    if (name.empty() || name.find('/') != std::string::npos)
      throw ConfigError("each sweep variant needs a plain 'name'");
    if (std::find(seen.begin(), seen.end(), name) != seen.end())
      throw ConfigError("duplicate sweep variant name: " + name);
    seen.push_back(name);
    if (!v.contains("method")) throw ConfigError("variant '" + name + "' lacks a method");
    RunConfig cfg = base_cfg;
    cfg.method = method_spec_from_json(v["method"]);
    cfg.validate();
    fmt::print("== variant {} ({}) ==\n", name, to_string(cfg.method.variant));
    RunResult res = run_sequence(cfg, loaded.bundle, base, out_dir / name, nullptr);
    const TaskEval& nl = res.matrix.rows.back().tasks.front();
    lines.push_back({name, nl.omega, nl.delta, final_vl_mean(res.matrix)});
  }

  std::string table = fmt::format("{:<28}{:>10}{:>10}{:>10}\n", "variant", "nl_score", "nl_delta",
                                  "vl_mean");
  std::string csv = "variant,nl_score,nl_delta,vl_mean\n";
  for (const Line& l : lines) {
    table += fmt::format("{:<28}{:>10.4f}{:>10.4f}{:>10.4f}\n", l.name, l.omega, l.delta, l.vl);
    csv += fmt::format("{},{:.4f},{:.4f},{:.4f}\n", l.name, l.omega, l.delta, l.vl);
  }
  fmt::print("{}", table);
  write_text_file(out_dir / "sweep.csv", csv);
  fmt::print("table -> {}\n", (out_dir / "sweep.csv").string());
}

void cmd_plot(const std::vector<std::string>& run_dirs, const std::string& out) {
  std::vector<RunSeries> series;
  for (const std::string& dir : run_dirs) {
    json summary, manifest;
    try {
      summary = json::parse(read_text_file(fs::path(dir) / "summary.json"));
      manifest = json::parse(read_text_file(fs::path(dir) / "manifest.json"));
    } catch (const json::exception& e) {
      throw IoError("run artifacts in " + dir + " are corrupt: " + e.what());
    }
    std::string label = "run";
    if (manifest.contains("config"))
      label = manifest["config"].value("method", json::object()).value("variant", "run");
    int suffix = 2;
    const std::string stem = label;
    while (std::any_of(series.begin(), series.end(),
                       [&](const RunSeries& s) { return s.label == label; }))
      label = fmt::format("{}#{}", stem, suffix++);
    series.push_back(series_from_summary(summary, label));
  }
  const fs::path out_dir = out.empty() ? fs::path("plots") : fs::path(out);
  write_plots(series, out_dir);
  fmt::print("plots -> {}\n", out_dir.string());
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"desk-scale study of forgetting in multimodal instruction tuning"};
  app.require_subcommand(1);

  std::string config_path, out;
  std::vector<std::string> seed_overrides;
  bool force = false;
  int steps_cap = 0;
  std::vector<std::string> run_dirs;

  auto add_common = [&](CLI::App* sub, bool needs_config) {
    if (needs_config)
      sub->add_option("--config", config_path, "run config JSON")->required();
    sub->add_option("--out", out, "output directory (defaults from the config)");
    sub->add_option("--seed-override", seed_overrides,
                    "override one seed, e.g. train=123 (repeatable)");
  };

  CLI::App* gen = app.add_subcommand("gen-data", "materialize the synthetic datasets");
  add_common(gen, true);
  gen->add_flag("--force", force, "overwrite an existing dataset directory");
  gen->callback([&] { cmd_gen_data(load_cfg(config_path, seed_overrides), out, force); });

  CLI::App* pre = app.add_subcommand("pretrain", "train the base LM to the NL accuracy floor");
  add_common(pre, true);
  pre->add_option("--steps-cap", steps_cap, "override the pretraining step cap");
  pre->callback([&] { cmd_pretrain(load_cfg(config_path, seed_overrides), out, steps_cap); });

  CLI::App* run = app.add_subcommand("run", "execute the configured task sequence");
  add_common(run, true);
  run->callback([&] { cmd_run(load_cfg(config_path, seed_overrides), out); });

  CLI::App* sweep = app.add_subcommand("sweep", "run several method variants side by side");
  sweep->add_option("--config", config_path, "sweep spec JSON (base config + variants)")
      ->required();
  sweep->add_option("--out", out, "output root for the variant runs");
  sweep->add_option("--seed-override", seed_overrides,
                    "override one seed in the base config (repeatable)");
  sweep->callback([&] { cmd_sweep(config_path, out, seed_overrides); });

  CLI::App* plot = app.add_subcommand("plot", "charts + CSV extract from finished runs");
  plot->add_option("runs", run_dirs, "run directories with summary.json")->required();
  plot->add_option("--out", out, "output directory for the charts");
  plot->callback([&] { cmd_plot(run_dirs, out); });

  try {
    app.parse(argc, argv);
    return 0;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const ConfigError& e) {
    fmt::print(stderr, "config error: {}\n", e.what());
    return 1;
  } catch (const NumericError& e) {
    fmt::print(stderr, "numeric error: {}\n", e.what());
    return 2;
  } catch (const IoError& e) {
    fmt::print(stderr, "io error: {}\n", e.what());
    return 3;
  }
}

}  // namespace forgetlab
