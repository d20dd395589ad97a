#include "forgetlab/evaluation.hpp"

#include <cmath>

#include "forgetlab/errors.hpp"

namespace forgetlab {

EvalResult accuracy_generative(const Parameters& p, const TaskDataset& d) {
  if (d.eval_mode != EvalMode::generative_exact_match)
    throw ConfigError("accuracy_generative: dataset is not generative: " + d.name);
  if (d.test.empty()) throw ConfigError("accuracy_generative: empty test split: " + d.name);
  EvalResult r;
  r.dataset = d.name;
  r.tag = d.tag;
  r.mode = d.eval_mode;
  r.n = static_cast<long>(d.test.size());
  for (const Sample& s : d.test) {
    // The budget equals the target length: stopping early (EOS) or drifting
    // both surface as a mismatch, never as an unfair truncation.
    auto out = generate_greedy(p, nullptr, s, static_cast<int>(s.target_ids.size()));
    if (out == s.target_ids) ++r.correct;
  }
  return r;
}

EvalResult accuracy_multichoice(const Parameters& p, const TaskDataset& d) {
  if (d.eval_mode != EvalMode::multiple_choice)
    throw ConfigError("accuracy_multichoice: dataset is not multiple choice: " + d.name);
  if (d.test.empty()) throw ConfigError("accuracy_multichoice: empty test split: " + d.name);
  EvalResult r;
  r.dataset = d.name;
  r.tag = d.tag;
  r.mode = d.eval_mode;
  r.n = static_cast<long>(d.test.size());
  for (const Sample& s : d.test) {
    auto scores = score_candidates(p, nullptr, s);
    if (pick_candidate(scores) == s.correct) ++r.correct;
  }
  return r;
}

EvalResult evaluate_dataset(const Parameters& p, const TaskDataset& d) {
  return d.eval_mode == EvalMode::multiple_choice ? accuracy_multichoice(p, d)
                                                  : accuracy_generative(p, d);
}

double task_score(const std::vector<double>& accuracies) {
  if (accuracies.empty()) throw ConfigError("task_score: no accuracies");
  double inv_sum = 0.0;
  for (double a : accuracies) {
    if (a < 0.0 || a > 1.0 + 1e-12) throw ConfigError("task_score: accuracy out of [0,1]");
    if (a == 0.0) return 0.0;
    inv_sum += 1.0 / a;
  }
  return static_cast<double>(accuracies.size()) / inv_sum;
}

double forgetting_delta(double reference, double current) { return reference - current; }

std::pair<double, double> split_means(const std::vector<EvalResult>& nl_results) {
  double nlu_sum = 0.0, nlg_sum = 0.0;
  long nlu_n = 0, nlg_n = 0;
  for (const EvalResult& r : nl_results) {
    if (r.tag == "nlu") {
      nlu_sum += r.accuracy();
      ++nlu_n;
    } else if (r.tag == "nlg") {
      nlg_sum += r.accuracy();
      ++nlg_n;
    }
  }
  if (nlu_n == 0 || nlg_n == 0)
    throw ConfigError("split_means: results must cover both nlu and nlg");
  return {nlu_sum / nlu_n, nlg_sum / nlg_n};
}

SplitReport split_report(const std::vector<EvalResult>& nl_results, double baseline_nlu,
                         double baseline_nlg) {
  auto [nlu, nlg] = split_means(nl_results);
  SplitReport s;
  s.nlu_mean = nlu;
  s.nlg_mean = nlg;
  s.nlu_delta = forgetting_delta(baseline_nlu, nlu);
  s.nlg_delta = forgetting_delta(baseline_nlg, nlg);
  return s;
}

}  // namespace forgetlab
