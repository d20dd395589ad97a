#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "forgetlab/data.hpp"

namespace forgetlab {

struct ModelConfig {
  int layers = 2;
  int d_model = 64;
  int heads = 4;
  int ffn = 256;
  int context = 128;  // token + patch budget
  int vocab = 256;
  int patches = 16;        // P
  int patch_features = 8;  // F
  int vision_dim = 32;
  double init_std = 0.05;
  double ln_eps = 1e-5;

  void validate() const;
  int head_dim() const { return d_model / heads; }
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

enum class Component { embedding, blocks, lm_head, vision, alignment, adapter };

Component component_of(const std::string& tensor_name);

// Which components receive gradients. The vision encoder is frozen
// unconditionally and has no entry here.
struct TrainabilityMask {
  bool embedding = false;
  bool blocks = false;
  bool lm_head = false;
  bool alignment = false;
  bool adapters = false;

  static TrainabilityMask alignment_only() { return {false, false, false, true, false}; }
  static TrainabilityMask finetune_full() { return {true, true, true, true, false}; }
  // LoRA fine-tuning: base LLM weights stay frozen, adapters + projector train.
  static TrainabilityMask finetune_lora() { return {false, false, false, true, true}; }

  bool trainable(Component c) const;
};

// All model state as named matrices (biases are column vectors). Names are
// hierarchical ("block00.attn.wq", "align.w1", ...) and the map order is the
// deterministic iteration order used by initialization, hashing, the
// optimizer and checkpoints.
struct Parameters {
  ModelConfig config;
  std::map<std::string, Eigen::MatrixXd> tensors;

  Eigen::MatrixXd& at(const std::string& name);
  const Eigen::MatrixXd& at(const std::string& name) const;
  std::int64_t count(Component c) const;  // scalar parameter count
};

Parameters init_parameters(const ModelConfig& cfg, std::uint64_t seed);

std::uint64_t hash_component(const Parameters& p, Component c);
std::uint64_t hash_parameters(const Parameters& p);

// Low-rank adapter pair for one base matrix: effective weight W + scale*B*A.
struct LoraAdapter {
  Eigen::MatrixXd a;   // r x in
  Eigen::MatrixXd b;   // out x r
  double scale = 1.0;  // alpha/r, or alpha/sqrt(r) when rank-stabilized
};

struct AdapterSet {
  std::map<std::string, LoraAdapter> adapters;  // keyed by base tensor name
  bool merged = false;

  bool active() const { return !merged && !adapters.empty(); }
};

// A model-ready sequence: BOS + prompt (IMG expanded to P patch slots) +
// optional continuation, plus the logits-row -> target-token pairs the loss
// runs over.
struct Assembled {
  struct Slot {
    int token = -1;  // vocabulary id, or
    int patch = -1;  // row into *patches
  };
  struct LossEntry {
    int row;     // logits row predicting `target`
    int target;  // token id
  };
  std::vector<Slot> slots;
  std::vector<LossEntry> entries;
  const Eigen::MatrixXd* patches = nullptr;  // borrowed from the sample

  int length() const { return static_cast<int>(slots.size()); }
};

enum class AssembleMode {
  train,        // targets + EOS appended, loss entries per mask (EOS always on)
  prompt_only,  // no targets, no entries (generation prefix)
};

Assembled assemble_sequence(const ModelConfig& cfg, const Sample& s, AssembleMode mode);
// Prompt followed by an arbitrary continuation scored at every position
// (candidate scoring); no EOS appended.
Assembled assemble_with_continuation(const ModelConfig& cfg, const Sample& s,
                                     const std::vector<int>& continuation);

Eigen::MatrixXd encode_image(const Parameters& p, const Eigen::MatrixXd& patches);
Eigen::MatrixXd align(const Parameters& p, const Eigen::MatrixXd& visual);

// Full causal forward; throws NumericError on non-finite intermediates.
Eigen::MatrixXd forward_logits(const Parameters& p, const AdapterSet* adapters,
                               const Assembled& seq);

// Masked mean cross entropy H(q, softmax(logits)) over rows with mask true.
// q must hold one probability row per logits row.
double loss_value(const Eigen::MatrixXd& logits, const Eigen::MatrixXd& q,
                  const std::vector<std::uint8_t>& mask);

// How training targets become distributions: one-hot, or smoothed with the
// true token at 1-alpha and the rest sharing alpha uniformly.
struct TargetPolicy {
  bool smoothed = false;
  double alpha = 0.0;
};

struct BatchResult {
  double loss = 0.0;
  // gradient of the mean batch loss for every trainable tensor; adapter
  // gradients are keyed "<base>.lora_a" / "<base>.lora_b"
  std::map<std::string, Eigen::MatrixXd> grads;
};

BatchResult batch_gradients(const Parameters& p, const AdapterSet* adapters,
                            std::span<const Sample> batch, const TrainabilityMask& mask,
                            const TargetPolicy& policy);

double batch_loss(const Parameters& p, const AdapterSet* adapters, std::span<const Sample> batch,
                  const TargetPolicy& policy);

// Greedy decoding from the sample's prompt (and image, if any): argmax next
// token, lowest id on ties, stops at EOS (excluded from the output), max_new
// tokens, or the context budget.
std::vector<int> generate_greedy(const Parameters& p, const AdapterSet* adapters, const Sample& s,
                                 int max_new);

// Mean log-probability of each candidate continuation after the prompt.
std::vector<double> score_candidates(const Parameters& p, const AdapterSet* adapters,
                                     const Sample& s);
int pick_candidate(const std::vector<double>& scores);  // argmax, lowest index on ties

// Maps a gradient key back to the tensor it updates (base or adapter half).
Eigen::MatrixXd* resolve_tensor(Parameters& p, AdapterSet* adapters, const std::string& grad_name);

}  // namespace forgetlab
