#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "forgetlab/evaluation.hpp"

namespace forgetlab {

nlohmann::json eval_result_to_json(const EvalResult& r);
EvalResult eval_result_from_json(const nlohmann::json& j);

// Rows persist as raw counts only; scores and deltas are recomputed when a
// matrix is rebuilt, so nothing depends on rounded text.
nlohmann::json row_counts_to_json(const MatrixRow& row);
MatrixRow row_counts_from_json(const nlohmann::json& j);

// One CSV line per (row, task, dataset); the task-level score and delta are
// repeated on each of that task's dataset lines. Fixed 4-decimal rendering.
std::string render_report_csv(const ForgettingMatrix& m, const std::string& run_id);

// Per-row task scores, deltas, counts and NL split means; same rounding as
// the CSV so the two artifacts always agree.
nlohmann::json render_summary(const ForgettingMatrix& m, const std::string& run_id);

// The exact double the 4-decimal text renders back to.
double round4(double v);

void write_text_file(const std::filesystem::path& path, const std::string& content);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace forgetlab
