#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "forgetlab/checkpoint.hpp"
#include "forgetlab/config.hpp"
#include "forgetlab/evaluation.hpp"
#include "forgetlab/synthdata.hpp"
#include "forgetlab/training.hpp"

namespace forgetlab {

// Trains the base LM on the pretraining corpus until it clears the NL floor
// (every multiple-choice probe at floor_chance_factor * chance, the cloze
// probe at floor_nlg), checking every eval_every steps. Hitting the step cap
// below the floor is a NumericError. The returned checkpoint carries the NL
// baseline the forgetting deltas are measured against.
Checkpoint pretrain_base_lm(const RunConfig& cfg, const DataBundle& data, const TrainSink& sink);

// First-learned reference scores deltas are measured against.
struct EvalReferences {
  double nl_omega = 0.0;
  double nlu_mean = 0.0;
  double nlg_mean = 0.0;
  std::map<int, double> vl_first;  // task id -> score when first learned
};

// One task's evaluation datasets within a row (the two-task mixture groups
// all four VL sets under one task id).
struct EvalGroup {
  int task_id = 0;
  std::string label;
  std::vector<const TaskDataset*> datasets;
};

// Computes scores, deltas and NL splits for a row of raw counts, extending
// refs with any task seen for the first time. The NL suite must come first.
void finalize_row(MatrixRow& row, EvalReferences& refs);

// Row 1: the pretrained model's NL scores; every delta is zero by definition.
MatrixRow baseline_row(const NlBaseline& b, EvalReferences& refs);

// Full evaluation sweep after a task: NL suite plus every given VL group.
MatrixRow evaluate_row(const Parameters& params, const DataBundle& data,
                       const std::vector<EvalGroup>& groups, int after_task, EvalReferences& refs);

struct RunResult {
  ForgettingMatrix matrix;
  std::string run_id;
  std::filesystem::path report_csv;
  std::filesystem::path summary_json;
};

// Executes the configured sequence (two_task or continual) from the
// pretrained checkpoint: per task, optional replay admission, optional
// adapters (merged back afterwards), training, then an evaluation row.
// Everything is persisted under run_dir (rows/, state/, metrics.csv), so a
// rerun resumes after the last completed task; finished runs just re-emit
// report.csv and summary.json.
RunResult run_sequence(const RunConfig& cfg, const DataBundle& data, const Checkpoint& base,
                       const std::filesystem::path& run_dir, const TrainSink& sink);

}  // namespace forgetlab
