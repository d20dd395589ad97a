#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace forgetlab {

enum class TaskKind { pretrain, caption_instruct, vqa, ocr, refgrounding, nl_eval };
enum class EvalMode { generative_exact_match, multiple_choice };

std::string to_string(TaskKind k);
TaskKind task_kind_from_string(const std::string& s);
std::string to_string(EvalMode m);
EvalMode eval_mode_from_string(const std::string& s);

struct SceneObject {
  int shape = 0;     // index into Vocabulary::shapes
  int color = 0;     // index into Vocabulary::colors
  int quadrant = 0;  // index into Vocabulary::quadrants
};

struct SceneSpec {
  std::vector<SceneObject> objects;  // at most one object per quadrant
  int glyph = -1;                    // vocabulary id of the written glyph, -1 = none
  bool valid(int quadrant_count = 4) const;
};

struct Sample {
  std::vector<int> prompt_ids;   // contains exactly one IMG id iff patches present
  std::vector<int> target_ids;   // exact-match target; EOS is appended at train time
  std::vector<std::uint8_t> loss_mask;  // aligned with target_ids
  std::optional<Eigen::MatrixXd> patches;  // P x F image features
  std::optional<SceneSpec> scene;
  std::vector<std::vector<int>> candidates;  // multiple-choice completions
  int correct = -1;                          // index into candidates
  int source_task = 0;                       // task that produced the sample

  bool has_image() const { return patches.has_value(); }
};

struct TaskDataset {
  int task_id = 0;
  TaskKind kind = TaskKind::pretrain;
  EvalMode eval_mode = EvalMode::generative_exact_match;
  std::string name;  // "vqa", "cloze", ...
  std::string tag;   // "vl" | "nlu" | "nlg" | "train"

  std::vector<Sample> train;
  std::vector<Sample> test;
  std::vector<Sample> alignment;  // caption task only: alignment-stage subset

  // Random-guess accuracy: 1/candidates for multiple choice, 0 for generative.
  double chance() const;
};

std::uint64_t hash_sample(const Sample& s);
std::uint64_t hash_dataset(const TaskDataset& d);

}  // namespace forgetlab
