#include "forgetlab/training.hpp"

#include <cmath>
#include <numbers>
#include <span>

#include <fmt/format.h>

#include "forgetlab/errors.hpp"

namespace forgetlab {

void StageConfig::validate() const {
  if (peak_lr <= 0.0) throw ConfigError("peak learning rate must be positive");
  if (warmup_ratio <= 0.0 || warmup_ratio >= 1.0) throw ConfigError("warmup ratio must be in (0, 1)");
  if (schedule != "warmup_cosine") throw ConfigError("unknown schedule: " + schedule);
  if (epochs != 1) throw ConfigError("the training protocol is single-epoch (epochs must be 1)");
  if (batch < 1) throw ConfigError("batch size must be positive");
  if (adam.beta1 < 0.0 || adam.beta1 >= 1.0 || adam.beta2 < 0.0 || adam.beta2 >= 1.0 ||
      adam.eps <= 0.0 || adam.weight_decay < 0.0) {
    throw ConfigError("invalid optimizer hyperparameters");
  }
}

StageConfig StageConfig::alignment_defaults() {
  StageConfig c;
  c.peak_lr = 1e-3;
  c.batch = 32;
  return c;
}

StageConfig StageConfig::finetune_defaults() {
  StageConfig c;
  c.peak_lr = 2e-5;
  c.batch = 16;
  return c;
}

double lr_at(int step, int total, const StageConfig& cfg) {
  if (total <= 0) throw ConfigError("lr_at: total steps must be positive");
  if (step < 0 || step >= total) throw ConfigError("lr_at: step out of range");
  const int warmup = static_cast<int>(
      std::ceil(cfg.warmup_ratio * static_cast<double>(total)));
  if (step < warmup) {
    return cfg.peak_lr * static_cast<double>(step + 1) / static_cast<double>(warmup);
  }
  if (total == warmup) return cfg.peak_lr;  // all-warmup degenerate case
  double progress = static_cast<double>(step - warmup) / static_cast<double>(total - warmup);
  return cfg.peak_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

void Optimizer::step(Parameters& params, AdapterSet* adapters,
                     const std::map<std::string, Eigen::MatrixXd>& grads, double lr,
                     double clip_norm) {
  ++t;
  double factor = 1.0;
  if (clip_norm > 0.0) {
    double sq = 0.0;
    for (const auto& [name, g] : grads) sq += g.squaredNorm();
    double norm = std::sqrt(sq);
    if (norm > clip_norm) factor = clip_norm / norm;
  }
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (const auto& [name, g_raw] : grads) {
    Eigen::MatrixXd* param = resolve_tensor(params, adapters, name);
    auto& [m, v] = moments[name];
    if (m.size() == 0) {
      m = Eigen::MatrixXd::Zero(g_raw.rows(), g_raw.cols());
      v = Eigen::MatrixXd::Zero(g_raw.rows(), g_raw.cols());
    }
    Eigen::MatrixXd g = factor == 1.0 ? g_raw : Eigen::MatrixXd(factor * g_raw);
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.cwiseProduct(g);
    Eigen::MatrixXd update =
        (m / bc1).array() / ((v / bc2).array().sqrt() + cfg.eps);
    if (cfg.weight_decay != 0.0) update += cfg.weight_decay * *param;
    param->noalias() -= lr * update;
    if (!param->allFinite()) throw NumericError("optimizer: non-finite update for " + name);
  }
}

namespace {

int run_stage(Parameters& params, AdapterSet* adapters, const std::vector<Sample>& stream,
              const TrainabilityMask& mask, const TargetPolicy& policy, const StageConfig& cfg,
              const char* stage, int task_id, int& global_step, const TrainSink& sink) {
  cfg.validate();
  if (stream.empty()) throw ConfigError(fmt::format("{}: empty training stream", stage));
  const int n = static_cast<int>(stream.size());
  const int total = (n + cfg.batch - 1) / cfg.batch;
  Optimizer opt(cfg.adam);
  for (int step = 0; step < total; ++step) {
    const int begin = step * cfg.batch;
    const int len = std::min(cfg.batch, n - begin);
    std::span<const Sample> batch(stream.data() + begin, static_cast<std::size_t>(len));
    double lr = lr_at(step, total, cfg);
    try {
      BatchResult res = batch_gradients(params, adapters, batch, mask, policy);
      opt.step(params, adapters, res.grads, lr, cfg.clip_norm);
      if (sink) sink({stage, task_id, global_step, step, res.loss, lr});
    } catch (const NumericError& e) {
      throw NumericError(fmt::format("task {} {} step {}: {}", task_id, stage, step, e.what()));
    }
    ++global_step;
  }
  return total;
}

}  // namespace

int train_task(Parameters& params, AdapterSet* adapters, const std::vector<Sample>& stream,
               const MethodSpec& method, const StageConfig& cfg, int task_id, int& global_step,
               const TrainSink& sink) {
  const bool lora_active = adapters != nullptr && adapters->active();
  if (method.uses_lora() != lora_active) {
    throw ConfigError("train_task: adapters must be attached exactly for LoRA-family methods");
  }
  TrainabilityMask mask =
      lora_active ? TrainabilityMask::finetune_lora() : TrainabilityMask::finetune_full();
  return run_stage(params, adapters, stream, mask, method.finetune_policy(), cfg, "finetune",
                   task_id, global_step, sink);
}

int train_alignment_stage(Parameters& params, const std::vector<Sample>& data,
                          const MethodSpec& method, const StageConfig& cfg, int& global_step,
                          const TrainSink& sink) {
  if (data.empty()) throw ConfigError("alignment stage: empty data");
  return run_stage(params, nullptr, data, TrainabilityMask::alignment_only(),
                   method.alignment_policy(), cfg, "alignment", 2, global_step, sink);
}

}  // namespace forgetlab
