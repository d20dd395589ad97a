#include "forgetlab/data.hpp"

#include "forgetlab/errors.hpp"
#include "forgetlab/hashing.hpp"

namespace forgetlab {

std::string to_string(TaskKind k) {
  switch (k) {
    case TaskKind::pretrain: return "pretrain";
    case TaskKind::caption_instruct: return "caption_instruct";
    case TaskKind::vqa: return "vqa";
    case TaskKind::ocr: return "ocr";
    case TaskKind::refgrounding: return "refgrounding";
    case TaskKind::nl_eval: return "nl_eval";
  }
  throw ConfigError("unknown TaskKind");
}

TaskKind task_kind_from_string(const std::string& s) {
  if (s == "pretrain") return TaskKind::pretrain;
  if (s == "caption_instruct") return TaskKind::caption_instruct;
  if (s == "vqa") return TaskKind::vqa;
  if (s == "ocr") return TaskKind::ocr;
  if (s == "refgrounding") return TaskKind::refgrounding;
  if (s == "nl_eval") return TaskKind::nl_eval;
  throw ConfigError("unknown task kind: " + s);
}

std::string to_string(EvalMode m) {
  switch (m) {
    case EvalMode::generative_exact_match: return "generative_exact_match";
    case EvalMode::multiple_choice: return "multiple_choice";
  }
  throw ConfigError("unknown EvalMode");
}

EvalMode eval_mode_from_string(const std::string& s) {
  if (s == "generative_exact_match") return EvalMode::generative_exact_match;
  if (s == "multiple_choice") return EvalMode::multiple_choice;
  throw ConfigError("unknown eval mode: " + s);
}

bool SceneSpec::valid(int quadrant_count) const {
  std::vector<bool> used(static_cast<std::size_t>(quadrant_count), false);
  for (const auto& obj : objects) {
    if (obj.quadrant < 0 || obj.quadrant >= quadrant_count) return false;
    if (used[static_cast<std::size_t>(obj.quadrant)]) return false;
    used[static_cast<std::size_t>(obj.quadrant)] = true;
  }
  if (glyph == 0 || glyph == 1 || glyph == 2 || glyph == 3 || glyph == 4) return false;
  return true;
}

double TaskDataset::chance() const {
  if (eval_mode != EvalMode::multiple_choice) return 0.0;
  if (test.empty() || test.front().candidates.empty()) return 0.0;
  return 1.0 / static_cast<double>(test.front().candidates.size());
}

std::uint64_t hash_sample(const Sample& s) {
  Fnv64 h;
  h.update_u64(s.prompt_ids.size());
  for (int id : s.prompt_ids) h.update_i32(id);
  h.update_u64(s.target_ids.size());
  for (int id : s.target_ids) h.update_i32(id);
  h.update_u64(s.loss_mask.size());
  for (auto b : s.loss_mask) h.update_i32(b);
  h.update_i32(s.patches.has_value() ? 1 : 0);
  if (s.patches) {
    h.update_i64(s.patches->rows());
    h.update_i64(s.patches->cols());
    for (Eigen::Index r = 0; r < s.patches->rows(); ++r) {
      for (Eigen::Index c = 0; c < s.patches->cols(); ++c) {
        h.update_double((*s.patches)(r, c));
      }
    }
  }
  h.update_u64(s.candidates.size());
  for (const auto& cand : s.candidates) {
    h.update_u64(cand.size());
    for (int id : cand) h.update_i32(id);
  }
  h.update_i32(s.correct);
  h.update_i32(s.source_task);
  return h.digest();
}

std::uint64_t hash_dataset(const TaskDataset& d) {
  Fnv64 h;
  h.update_i32(d.task_id);
  h.update_string(to_string(d.kind));
  h.update_string(to_string(d.eval_mode));
  h.update_string(d.name);
  h.update_string(d.tag);
  for (const auto* split : {&d.train, &d.test, &d.alignment}) {
    h.update_u64(split->size());
    for (const auto& s : *split) h.update_u64(hash_sample(s));
  }
  return h.digest();
}

}  // namespace forgetlab
