#include "forgetlab/report.hpp"

#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "forgetlab/errors.hpp"

namespace forgetlab {

using nlohmann::json;

json eval_result_to_json(const EvalResult& r) {
  return {{"dataset", r.dataset},
          {"tag", r.tag},
          {"mode", to_string(r.mode)},
          {"correct", r.correct},
          {"n", r.n}};
}

EvalResult eval_result_from_json(const json& j) {
  EvalResult r;
  r.dataset = j.at("dataset").get<std::string>();
  r.tag = j.at("tag").get<std::string>();
  r.mode = eval_mode_from_string(j.at("mode").get<std::string>());
  r.correct = j.at("correct").get<long>();
  r.n = j.at("n").get<long>();
  if (r.n <= 0 || r.correct < 0 || r.correct > r.n)
    throw IoError("stored evaluation counts are inconsistent: " + r.dataset);
  return r;
}

json row_counts_to_json(const MatrixRow& row) {
  json tasks = json::array();
  for (const TaskEval& t : row.tasks) {
    json datasets = json::array();
    for (const EvalResult& r : t.datasets) datasets.push_back(eval_result_to_json(r));
    tasks.push_back(
        {{"task_id", t.task_id}, {"label", t.task_name}, {"datasets", std::move(datasets)}});
  }
  return {{"after_task", row.after_task}, {"tasks", std::move(tasks)}};
}

MatrixRow row_counts_from_json(const json& j) {
  MatrixRow row;
  try {
    row.after_task = j.at("after_task").get<int>();
    for (const json& tj : j.at("tasks")) {
      TaskEval t;
      t.task_id = tj.at("task_id").get<int>();
      t.task_name = tj.at("label").get<std::string>();
      for (const json& dj : tj.at("datasets")) t.datasets.push_back(eval_result_from_json(dj));
      row.tasks.push_back(std::move(t));
    }
  } catch (const json::exception& e) {
    throw IoError(std::string("stored evaluation row is corrupt: ") + e.what());
  }
  return row;
}

double round4(double v) { return std::stod(fmt::format("{:.4f}", v)); }

std::string render_report_csv(const ForgettingMatrix& m, const std::string& run_id) {
  std::string out = "run_id,after_task_k,eval_task_t,dataset,mode,n,accuracy,omega,delta,tag\n";
  for (const MatrixRow& row : m.rows)
    for (const TaskEval& t : row.tasks)
      for (const EvalResult& r : t.datasets)
        out += fmt::format("{},{},{},{},{},{},{:.4f},{:.4f},{:.4f},{}\n", run_id, row.after_task,
                           t.task_id, r.dataset, to_string(r.mode), r.n, r.accuracy(), t.omega,
                           t.delta, r.tag);
  return out;
}

json render_summary(const ForgettingMatrix& m, const std::string& run_id) {
  json rows = json::array();
  for (const MatrixRow& row : m.rows) {
    json tasks = json::array();
    for (const TaskEval& t : row.tasks) {
      json datasets = json::array();
      for (const EvalResult& r : t.datasets) {
        json d = eval_result_to_json(r);
        d["accuracy"] = round4(r.accuracy());
        datasets.push_back(std::move(d));
      }
      tasks.push_back({{"task_id", t.task_id},
                       {"label", t.task_name},
                       {"omega", round4(t.omega)},
                       {"delta", round4(t.delta)},
                       {"datasets", std::move(datasets)}});
    }
    rows.push_back({{"after_task", row.after_task},
                    {"tasks", std::move(tasks)},
                    {"splits",
                     {{"nlu_mean", round4(row.splits.nlu_mean)},
                      {"nlg_mean", round4(row.splits.nlg_mean)},
                      {"nlu_delta", round4(row.splits.nlu_delta)},
                      {"nlg_delta", round4(row.splits.nlg_delta)}}}});
  }
  return {{"run_id", run_id}, {"rows", std::move(rows)}};
}

void write_text_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << content;
  if (!out) throw IoError("write failed: " + path.string());
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace forgetlab
