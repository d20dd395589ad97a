#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "forgetlab/data.hpp"
#include "forgetlab/model.hpp"

namespace forgetlab {

struct SoftTargetConfig {
  double alpha = 0.01;
  void validate(int vocab) const;  // 0 < alpha < 1 - 1/N keeps argmax at the target
};

enum class LoraTargets { all_linear, attention_kqv };

struct LoraConfig {
  double rank_fraction = 0.5;  // of each target's min dimension
  int explicit_rank = 0;       // > 0 overrides rank_fraction
  double alpha = 8.0;
  bool rank_stabilized = true;
  LoraTargets targets = LoraTargets::all_linear;

  void validate() const;
  int rank_for(int rows, int cols) const;
  double scale_for(int rank) const;  // alpha/rank, or alpha/sqrt(rank) when stabilized
};

struct RehearsalConfig {
  double fraction = 0.01;
  void validate() const;
};

enum class MethodVariant { naive, soft_targets, lora, rehearsal, msgm, msgm_rehearsal };

std::string to_string(MethodVariant v);
MethodVariant method_variant_from_string(const std::string& s);

// One of the five mitigation strategies (plus the msgm+rehearsal combo),
// applied as composable training modifiers: a target-building rule, an
// optional adapter set, and an optional replay buffer.
struct MethodSpec {
  MethodVariant variant = MethodVariant::naive;
  SoftTargetConfig soft;
  LoraConfig lora;
  RehearsalConfig rehearsal;
  bool soft_in_alignment = true;  // smoothed targets also during the alignment stage

  bool uses_soft() const {
    return variant == MethodVariant::soft_targets || variant == MethodVariant::msgm ||
           variant == MethodVariant::msgm_rehearsal;
  }
  bool uses_lora() const {
    return variant == MethodVariant::lora || variant == MethodVariant::msgm ||
           variant == MethodVariant::msgm_rehearsal;
  }
  bool uses_rehearsal() const {
    return variant == MethodVariant::rehearsal || variant == MethodVariant::msgm_rehearsal;
  }
  void validate(int vocab) const;

  TargetPolicy finetune_policy() const;
  TargetPolicy alignment_policy() const;
};

// Probability vector with 1-alpha at the target and alpha/(N-1) elsewhere.
Eigen::VectorXd smooth_targets(int target, int vocab, double alpha);

// One-hot for naive/lora/rehearsal, smoothed for soft_targets/msgm variants.
Eigen::VectorXd build_target_distribution(const MethodSpec& method, int target, int vocab);

// Instantiates adapters (A random, B zero) on the LLM linear layers; freshly
// attached adapters leave every output unchanged.
AdapterSet lora_attach(const Parameters& params, const LoraConfig& cfg, std::uint64_t seed);

// Returns parameters with each target W replaced by W + scale*B*A and marks
// the adapter set consumed; merging twice is rejected.
Parameters lora_merge(const Parameters& params, AdapterSet& adapters);

// Replay storage for tasks >= 2; task 1 (the base LM) is never buffered.
struct RehearsalBuffer {
  std::map<int, std::vector<Sample>> per_task;

  std::size_t total() const;
};

std::vector<Sample> rehearsal_select(const TaskDataset& dataset, double fraction,
                                     std::uint64_t seed);

// Current split + every buffered sample, shuffled deterministically. Buffered
// samples keep their source_task, whose target-building rule they retain.
std::vector<Sample> rehearsal_mix(const std::vector<Sample>& current,
                                  const RehearsalBuffer& buffer, std::uint64_t seed);

}  // namespace forgetlab
