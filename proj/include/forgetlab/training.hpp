#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "forgetlab/mitigation.hpp"
#include "forgetlab/model.hpp"

namespace forgetlab {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

struct StageConfig {
  double peak_lr = 2e-5;
  double warmup_ratio = 0.03;
  std::string schedule = "warmup_cosine";
  int epochs = 1;  // the protocol is single-epoch per task
  int batch = 16;
  double clip_norm = 0.0;  // global-norm clipping; <= 0 disables
  AdamConfig adam;

  void validate() const;

  // Stage defaults: projector warmup at 1e-3 / batch 32, fine-tuning at
  // 2e-5 / batch 16 (the stages keep their 2:1 batch ratio).
  static StageConfig alignment_defaults();
  static StageConfig finetune_defaults();
};

// Linear warmup over ceil(ratio*total) steps to peak, then cosine decay.
double lr_at(int step, int total, const StageConfig& cfg);

// Adam with bias correction; moments keyed like gradients and created lazily,
// so frozen tensors never hold state.
struct Optimizer {
  AdamConfig cfg;
  int t = 0;
  std::map<std::string, std::pair<Eigen::MatrixXd, Eigen::MatrixXd>> moments;

  explicit Optimizer(const AdamConfig& c) : cfg(c) {}
  Optimizer() = default;

  void step(Parameters& params, AdapterSet* adapters,
            const std::map<std::string, Eigen::MatrixXd>& grads, double lr, double clip_norm);
};

struct TrainStep {
  std::string stage;  // "pretrain" | "alignment" | "finetune"
  int task_id = 0;
  int global_step = 0;
  int step = 0;  // within the stage
  double loss = 0.0;
  double lr = 0.0;
};
using TrainSink = std::function<void(const TrainStep&)>;

// One pass over the stream under the fine-tuning mask (or the LoRA mask when
// adapters are active). Returns the step count = ceil(|stream| / batch).
int train_task(Parameters& params, AdapterSet* adapters, const std::vector<Sample>& stream,
               const MethodSpec& method, const StageConfig& cfg, int task_id, int& global_step,
               const TrainSink& sink);

// One epoch over the caption alignment subset with everything frozen except
// the alignment projector.
int train_alignment_stage(Parameters& params, const std::vector<Sample>& data,
                          const MethodSpec& method, const StageConfig& cfg, int& global_step,
                          const TrainSink& sink);

}  // namespace forgetlab
