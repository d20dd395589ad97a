#include "forgetlab/continual.hpp"

#include <fstream>
#include <numeric>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "forgetlab/dataset_io.hpp"
#include "forgetlab/errors.hpp"
#include "forgetlab/report.hpp"
#include "forgetlab/rng.hpp"

namespace forgetlab {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Unit {
  int task_id = 0;
  std::string label;
  std::vector<const TaskDataset*> sources;  // train splits learned in this unit
  std::vector<const TaskDataset*> evals;    // test sets scored from here on
};

std::vector<Unit> build_units(const RunConfig& cfg, const DataBundle& data) {
  std::vector<Unit> units;
  if (cfg.mode == RunMode::two_task) {
    Unit u;
    u.task_id = 2;
    u.label = "vl_mixture";
    for (const TaskDataset& d : data.vl_tasks) {
      u.sources.push_back(&d);
      u.evals.push_back(&d);
    }
    units.push_back(std::move(u));
  } else {
    for (const TaskDataset& d : data.vl_tasks) {
      Unit u;
      u.task_id = d.task_id;
      u.label = d.name;
      u.sources.push_back(&d);
      // The caption task trains the instruction format but has no slot in
      // the evaluation matrix; its effect shows up through the NL probes.
      if (d.kind != TaskKind::caption_instruct) u.evals.push_back(&d);
      units.push_back(std::move(u));
    }
  }
  if (units.empty()) throw ConfigError("no vision-language tasks to run");
  return units;
}

const TaskDataset& caption_dataset(const DataBundle& data) {
  for (const TaskDataset& d : data.vl_tasks)
    if (d.kind == TaskKind::caption_instruct) return d;
  throw ConfigError("data bundle lacks the caption task");
}

bool floor_met(const std::vector<EvalResult>& evals, const std::vector<TaskDataset>& suite,
               const PretrainConfig& cfg) {
  for (std::size_t i = 0; i < evals.size(); ++i) {
    const double acc = evals[i].accuracy();
    if (evals[i].tag == "nlg") {
      if (acc < cfg.floor_nlg) return false;
    } else {
      if (acc < cfg.floor_chance_factor * suite[i].chance()) return false;
    }
  }
  return true;
}

}  // namespace

Checkpoint pretrain_base_lm(const RunConfig& cfg, const DataBundle& data, const TrainSink& sink) {
  Parameters params = init_parameters(cfg.model, cfg.seeds.init);
  const std::vector<Sample>& corpus = data.pretrain.train;
  if (corpus.empty()) throw ConfigError("pretraining corpus is empty");
  if (data.nl_suite.empty()) throw ConfigError("NL suite is empty");

  const StageConfig& st = cfg.pretrain.stage;
  const int cap = cfg.pretrain.step_cap;
  Optimizer opt(st.adam);
  const TrainabilityMask mask = TrainabilityMask::finetune_full();
  const TargetPolicy policy;  // pretraining always uses hard targets

  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  std::vector<EvalResult> evals;
  auto check_floor = [&]() {
    evals.clear();
    for (const TaskDataset& d : data.nl_suite) evals.push_back(evaluate_dataset(params, d));
    return floor_met(evals, data.nl_suite, cfg.pretrain);
  };

  int step = 0;
  bool met = false;
  std::vector<Sample> batch;
  for (std::uint64_t epoch = 0; step < cap && !met; ++epoch) {
    // epoch order comes from the data seed, so the base LM is shared by
    // task-phase seed sweeps
    Rng erng(derive_seed(cfg.seeds.data, "pretrain_epoch", epoch));
    erng.shuffle(order);
    for (std::size_t pos = 0; pos < order.size() && step < cap && !met;
         pos += static_cast<std::size_t>(st.batch)) {
      batch.clear();
      const std::size_t end = std::min(order.size(), pos + static_cast<std::size_t>(st.batch));
      for (std::size_t i = pos; i < end; ++i) batch.push_back(corpus[order[i]]);
      const double lr = lr_at(step, cap, st);
      try {
        BatchResult br = batch_gradients(params, nullptr, batch, mask, policy);
        opt.step(params, nullptr, br.grads, lr, st.clip_norm);
        ++step;
        if (sink) sink({"pretrain", 1, step, step, br.loss, lr});
      } catch (const NumericError& e) {
        throw NumericError(fmt::format("pretrain step {}: {}", step, e.what()));
      }
      if (step % cfg.pretrain.eval_every == 0 || step == cap) met = check_floor();
    }
  }
  if (!met)
    throw NumericError(
        fmt::format("pretraining hit the {}-step cap below the accuracy floor", cap));

  Checkpoint ckpt;
  ckpt.params = std::move(params);
  ckpt.provenance = pretrain_provenance(cfg);
  ckpt.baseline = make_nl_baseline(std::move(evals));
  return ckpt;
}

void finalize_row(MatrixRow& row, EvalReferences& refs) {
  if (row.tasks.empty() || row.tasks.front().task_id != 1)
    throw ConfigError("evaluation row must start with the NL suite");
  for (TaskEval& t : row.tasks) {
    std::vector<double> accs;
    accs.reserve(t.datasets.size());
    for (const EvalResult& r : t.datasets) accs.push_back(r.accuracy());
    t.omega = task_score(accs);
    if (t.task_id == 1) {
      t.delta = forgetting_delta(refs.nl_omega, t.omega);
      row.splits = split_report(t.datasets, refs.nlu_mean, refs.nlg_mean);
    } else {
      auto [it, first_time] = refs.vl_first.try_emplace(t.task_id, t.omega);
      (void)first_time;
      t.delta = forgetting_delta(it->second, t.omega);
    }
  }
}

MatrixRow baseline_row(const NlBaseline& b, EvalReferences& refs) {
  MatrixRow row;
  row.after_task = 1;
  TaskEval nl;
  nl.task_id = 1;
  nl.task_name = "nl";
  nl.datasets = b.results;
  row.tasks.push_back(std::move(nl));
  finalize_row(row, refs);
  return row;
}

MatrixRow evaluate_row(const Parameters& params, const DataBundle& data,
                       const std::vector<EvalGroup>& groups, int after_task,
                       EvalReferences& refs) {
  MatrixRow row;
  row.after_task = after_task;
  TaskEval nl;
  nl.task_id = 1;
  nl.task_name = "nl";
  for (const TaskDataset& d : data.nl_suite) nl.datasets.push_back(evaluate_dataset(params, d));
  row.tasks.push_back(std::move(nl));
  for (const EvalGroup& g : groups) {
    TaskEval te;
    te.task_id = g.task_id;
    te.task_name = g.label;
    for (const TaskDataset* d : g.datasets) te.datasets.push_back(evaluate_dataset(params, *d));
    row.tasks.push_back(std::move(te));
  }
  finalize_row(row, refs);
  return row;
}

RunResult run_sequence(const RunConfig& cfg, const DataBundle& data, const Checkpoint& base,
                       const std::filesystem::path& run_dir, const TrainSink& sink) {
  if (!(base.params.config == cfg.model))
    throw ConfigError("checkpoint model shape differs from the configured model");
  if (base.provenance != pretrain_provenance(cfg))
    throw ConfigError("checkpoint was pretrained under a different setup (re-run pretrain)");
  if (!base.baseline) throw ConfigError("checkpoint lacks an NL baseline (re-run pretrain)");

  const std::string cfg_hash = config_hash(cfg);
  const std::string run_id = cfg_hash.substr(0, 12);
  const std::string data_fp = bundle_fingerprint(data);

  fs::create_directories(run_dir / "rows");
  fs::create_directories(run_dir / "state");

  const fs::path manifest_path = run_dir / "manifest.json";
  if (fs::exists(manifest_path)) {
    json m;
    try {
      m = json::parse(read_text_file(manifest_path));
    } catch (const json::exception& e) {
      throw IoError("run manifest is corrupt: " + std::string(e.what()));
    }
    if (m.value("config_hash", "") != cfg_hash || m.value("data_fingerprint", "") != data_fp ||
        m.value("pretrain_provenance", "") != base.provenance)
      throw ConfigError("run directory belongs to a different configuration: " +
                        run_dir.string());
  } else {
    json m = {{"kind", "forgetlab-run"},     {"run_id", run_id},
              {"config_hash", cfg_hash},     {"data_fingerprint", data_fp},
              {"pretrain_provenance", base.provenance}, {"config", to_json(cfg)}};
    write_text_file(manifest_path, m.dump(2) + "\n");
  }

  const std::vector<Unit> units = build_units(cfg, data);
  auto row_path = [&](int k) { return run_dir / "rows" / fmt::format("row_{}.json", k); };
  auto state_path = [&](int k) {
    return run_dir / "state" / fmt::format("after_task_{}.ckpt", k);
  };

  std::size_t completed = 0;
  if (fs::exists(row_path(1))) {
    for (std::size_t i = 0; i < units.size(); ++i) {
      if (fs::exists(row_path(units[i].task_id)) && fs::exists(state_path(units[i].task_id)))
        completed = i + 1;
      else
        break;
    }
  }

  EvalReferences refs;
  refs.nl_omega = base.baseline->omega;
  refs.nlu_mean = base.baseline->nlu_mean;
  refs.nlg_mean = base.baseline->nlg_mean;

  ForgettingMatrix matrix;
  if (fs::exists(row_path(1))) {
    MatrixRow row1 = row_counts_from_json(json::parse(read_text_file(row_path(1))));
    finalize_row(row1, refs);
    matrix.rows.push_back(std::move(row1));
  } else {
    MatrixRow row1 = baseline_row(*base.baseline, refs);
    write_text_file(row_path(1), row_counts_to_json(row1).dump(2) + "\n");
    matrix.rows.push_back(std::move(row1));
  }
  for (std::size_t i = 0; i < completed; ++i) {
    MatrixRow row = row_counts_from_json(json::parse(read_text_file(row_path(units[i].task_id))));
    finalize_row(row, refs);
    matrix.rows.push_back(std::move(row));
  }

  // metrics.csv: on resume, keep the prefix belonging to completed tasks
  const fs::path metrics_path = run_dir / "metrics.csv";
  std::string metrics_text = "step,task,stage,loss,lr\n";
  int global_step = 0;
  if (completed > 0 && fs::exists(metrics_path)) {
    std::istringstream in(read_text_file(metrics_path));
    const int last_task = units[completed - 1].task_id;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
      if (first) {
        first = false;
        continue;
      }
      if (line.empty()) continue;
      const auto c1 = line.find(',');
      const auto c2 = line.find(',', c1 + 1);
      if (c1 == std::string::npos || c2 == std::string::npos) continue;
      const int task = std::stoi(line.substr(c1 + 1, c2 - c1 - 1));
      if (task > last_task) continue;
      metrics_text += line + "\n";
      ++global_step;
    }
  }
  write_text_file(metrics_path, metrics_text);
  std::ofstream metrics(metrics_path, std::ios::app);
  if (!metrics) throw IoError("cannot append to " + metrics_path.string());
  TrainSink wrapped = [&](const TrainStep& s) {
    metrics << fmt::format("{},{},{},{:.6f},{:.8e}\n", s.global_step, s.task_id, s.stage, s.loss,
                           s.lr);
    if (sink) sink(s);
  };

  Parameters params = base.params;
  RehearsalBuffer buffer;
  if (completed > 0) {
    Checkpoint st = load_checkpoint(state_path(units[completed - 1].task_id));
    if (!(st.params.config == cfg.model) || st.provenance != cfg_hash)
      throw ConfigError("stored task state does not match this run's configuration");
    params = std::move(st.params);
    buffer = std::move(st.buffer);
  }

  for (std::size_t i = completed; i < units.size(); ++i) {
    const Unit& u = units[i];

    if (cfg.method.uses_rehearsal() && i > 0) {
      // the previous task's replay slice is admitted now, so the buffer
      // seen by task k holds tasks 2..k-1
      for (const TaskDataset* src : units[i - 1].sources)
        if (!buffer.per_task.count(src->task_id))
          buffer.per_task[src->task_id] =
              rehearsal_select(*src, cfg.method.rehearsal.fraction, cfg.seeds.train);
    }

    std::vector<Sample> stream;
    for (const TaskDataset* src : u.sources)
      stream.insert(stream.end(), src->train.begin(), src->train.end());
    Rng order(derive_seed(cfg.seeds.train, "task_stream", static_cast<std::uint64_t>(u.task_id)));
    order.shuffle(stream);
    if (cfg.method.uses_rehearsal() && buffer.total() > 0)
      stream = rehearsal_mix(stream, buffer,
                             derive_seed(cfg.seeds.train, "mix", static_cast<std::uint64_t>(u.task_id)));

    if (i == 0) {
      std::vector<Sample> align_data = caption_dataset(data).alignment;
      if (align_data.empty()) throw ConfigError("caption task lacks an alignment split");
      Rng arng(derive_seed(cfg.seeds.train, "align_stream"));
      arng.shuffle(align_data);
      train_alignment_stage(params, align_data, cfg.method, cfg.alignment, global_step, wrapped);
    }

    if (cfg.method.uses_lora()) {
      AdapterSet adapters = lora_attach(
          params, cfg.method.lora,
          derive_seed(cfg.seeds.init, "lora", static_cast<std::uint64_t>(u.task_id)));
      train_task(params, &adapters, stream, cfg.method, cfg.finetune, u.task_id, global_step,
                 wrapped);
      params = lora_merge(params, adapters);
    } else {
      train_task(params, nullptr, stream, cfg.method, cfg.finetune, u.task_id, global_step,
                 wrapped);
    }

    std::vector<EvalGroup> groups;
    for (std::size_t j = 0; j <= i; ++j)
      if (!units[j].evals.empty())
        groups.push_back({units[j].task_id, units[j].label, units[j].evals});
    MatrixRow row = evaluate_row(params, data, groups, u.task_id, refs);
    write_text_file(row_path(u.task_id), row_counts_to_json(row).dump(2) + "\n");
    matrix.rows.push_back(std::move(row));

    Checkpoint st;
    st.params = params;
    st.provenance = cfg_hash;
    st.buffer = buffer;
    save_checkpoint(st, state_path(u.task_id));
  }

  RunResult res;
  res.matrix = std::move(matrix);
  res.run_id = run_id;
  res.report_csv = run_dir / "report.csv";
  res.summary_json = run_dir / "summary.json";
  write_text_file(res.report_csv, render_report_csv(res.matrix, run_id));
  write_text_file(res.summary_json, render_summary(res.matrix, run_id).dump(2) + "\n");
  return res;
}

}  // namespace forgetlab
