#pragma once

#include <string>
#include <vector>

#include "forgetlab/data.hpp"
#include "forgetlab/model.hpp"

namespace forgetlab {

struct EvalResult {
  std::string dataset;
  std::string tag;  // "nlu" | "nlg" | "vl"
  EvalMode mode = EvalMode::generative_exact_match;
  long correct = 0;
  long n = 0;

  // counts are stored exactly; the division happens once, here
  double accuracy() const { return n > 0 ? static_cast<double>(correct) / static_cast<double>(n) : 0.0; }
};

// Exact match of the greedy output (truncated at EOS) against the target.
EvalResult accuracy_generative(const Parameters& p, const TaskDataset& d);

// Correct iff the best-scoring candidate is the labeled one.
EvalResult accuracy_multichoice(const Parameters& p, const TaskDataset& d);

EvalResult evaluate_dataset(const Parameters& p, const TaskDataset& d);

// Harmonic mean of per-dataset accuracies; 0 if any accuracy is 0 (the
// limiting value — the base LM scores 0 on vision sets).
double task_score(const std::vector<double>& accuracies);

// reference - current; negative values mean backward transfer. Accepts
// fractions or percents, as long as both sides use the same scale.
double forgetting_delta(double reference, double current);

struct SplitReport {
  double nlu_mean = 0.0;
  double nlg_mean = 0.0;
  double nlu_delta = 0.0;
  double nlg_delta = 0.0;
};

// Arithmetic means per tag over the NL suite results.
std::pair<double, double> split_means(const std::vector<EvalResult>& nl_results);
SplitReport split_report(const std::vector<EvalResult>& nl_results, double baseline_nlu,
                         double baseline_nlg);

struct TaskEval {
  int task_id = 0;
  std::string task_name;
  std::vector<EvalResult> datasets;
  double omega = 0.0;
  double delta = 0.0;  // vs this task's first-learned score (task 1: the base LM)
};

struct MatrixRow {
  int after_task = 0;  // k
  std::vector<TaskEval> tasks;
  SplitReport splits;
};

struct ForgettingMatrix {
  std::vector<MatrixRow> rows;
};

}  // namespace forgetlab
