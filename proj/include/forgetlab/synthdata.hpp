#pragma once

#include <cstdint>
#include <vector>

#include "forgetlab/data.hpp"
#include "forgetlab/vocab.hpp"

namespace forgetlab {

struct DataConfig {
  int vocab_size = 256;
  int pretrain_size = 20000;
  int nl_eval_size = 256;
  int vl_train_size = 2000;
  int vl_test_size = 256;
  int alignment_size = 2000;
  int patches = 16;   // must match the model's patch count
  int features = 8;   // must match the model's patch feature width
  double noise_sigma = 0.05;
  int context_budget = 128;  // generated sequences must fit

  void validate() const;
};

struct RenderConfig {
  int patches = 16;
  int features = 8;  // >= 8: occupancy, shape(2), color(2), glyph(2), quadrant beacon
  double noise_sigma = 0.05;
};

// Pure deterministic rendering of a scene into patch features. Patches are
// grouped into four contiguous quadrant blocks; object attributes are coded
// as unit-circle points in fixed feature pairs; glyph identity is written
// into every patch; uniform noise bounded by noise_sigma is added on top.
Eigen::MatrixXd render_scene(const SceneSpec& scene, std::uint64_t seed, const RenderConfig& cfg);

// Task 1 training corpus: short documents (1-4 sentences joined by SEP)
// drawn from a two-template probabilistic grammar.
TaskDataset generate_pretrain_corpus(const Vocabulary& vocab, std::uint64_t seed, int size);

// Five held-out probes of the pretraining grammar: one single-token cloze
// (generative) and four multiple-choice sets with 3-4 candidates each.
std::vector<TaskDataset> generate_nl_eval_suite(const Vocabulary& vocab, std::uint64_t seed,
                                                int size_each);

// Vision-language tasks 2..5: caption_instruct, vqa, ocr, refgrounding.
// caption_instruct additionally carries an alignment split.
TaskDataset generate_vl_task(TaskKind kind, const Vocabulary& vocab, std::uint64_t seed,
                             const DataConfig& cfg);

struct DataBundle {
  Vocabulary vocab;
  TaskDataset pretrain;
  std::vector<TaskDataset> nl_suite;  // 5 datasets, task id 1
  std::vector<TaskDataset> vl_tasks;  // task ids 2,3,4,5 in curriculum order
};

DataBundle generate_all(const DataConfig& cfg, std::uint64_t seed);

// Scene-truth answer for a vqa/ocr/refgrounding sample; the data is solvable
// by construction, so a lookup beats any model. Used as a test ceiling.
std::vector<int> oracle_answer(const Vocabulary& vocab, const Sample& s, TaskKind kind);

}  // namespace forgetlab
