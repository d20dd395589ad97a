#include "forgetlab/mitigation.hpp"

#include <cmath>

#include <fmt/format.h>

#include "forgetlab/errors.hpp"
#include "forgetlab/rng.hpp"
#include "forgetlab/vocab.hpp"

namespace forgetlab {

namespace {

std::vector<std::string> lora_target_names(const ModelConfig& cfg, LoraTargets targets) {
  std::vector<std::string> names;
  for (int l = 0; l < cfg.layers; ++l) {
    std::string bp = fmt::format("block{:02d}.", l);
    names.push_back(bp + "attn.wq");
    names.push_back(bp + "attn.wk");
    names.push_back(bp + "attn.wv");
    if (targets == LoraTargets::all_linear) {
      names.push_back(bp + "attn.wo");
      names.push_back(bp + "ffn.w1");
      names.push_back(bp + "ffn.w2");
    }
  }
  if (targets == LoraTargets::all_linear) names.push_back("lm_head.w");
  return names;
}

}  // namespace

void SoftTargetConfig::validate(int vocab) const {
  if (alpha <= 0.0 || alpha >= 1.0) throw ConfigError("soft target alpha must be in (0, 1)");
  if (alpha >= 1.0 - 1.0 / static_cast<double>(vocab)) {
    throw ConfigError("soft target alpha too large: argmax must stay at the target token");
  }
}

void LoraConfig::validate() const {
  if (explicit_rank < 0) throw ConfigError("explicit LoRA rank must be >= 0");
  if (explicit_rank == 0 && (rank_fraction <= 0.0 || rank_fraction > 1.0)) {
    throw ConfigError("LoRA rank fraction must be in (0, 1]");
  }
  if (alpha <= 0.0) throw ConfigError("LoRA alpha must be positive");
}

int LoraConfig::rank_for(int rows, int cols) const {
  int min_dim = std::min(rows, cols);
  int r = explicit_rank > 0
              ? explicit_rank
              : static_cast<int>(std::lround(rank_fraction * static_cast<double>(min_dim)));
  if (r < 1) r = 1;
  if (r > min_dim) {
    throw ConfigError(fmt::format("LoRA rank {} exceeds layer min dimension {}", r, min_dim));
  }
  return r;
}

double LoraConfig::scale_for(int rank) const {
  return rank_stabilized ? alpha / std::sqrt(static_cast<double>(rank))
                         : alpha / static_cast<double>(rank);
}

void RehearsalConfig::validate() const {
  if (fraction <= 0.0 || fraction > 1.0) throw ConfigError("rehearsal fraction must be in (0, 1]");
}

std::string to_string(MethodVariant v) {
  switch (v) {
    case MethodVariant::naive: return "naive";
    case MethodVariant::soft_targets: return "soft_targets";
    case MethodVariant::lora: return "lora";
    case MethodVariant::rehearsal: return "rehearsal";
    case MethodVariant::msgm: return "msgm";
    case MethodVariant::msgm_rehearsal: return "msgm_rehearsal";
  }
  throw ConfigError("unknown method variant");
}

MethodVariant method_variant_from_string(const std::string& s) {
  if (s == "naive") return MethodVariant::naive;
  if (s == "soft_targets") return MethodVariant::soft_targets;
  if (s == "lora") return MethodVariant::lora;
  if (s == "rehearsal") return MethodVariant::rehearsal;
  if (s == "msgm") return MethodVariant::msgm;
  if (s == "msgm_rehearsal") return MethodVariant::msgm_rehearsal;
  throw ConfigError("unknown method variant: " + s);
}

void MethodSpec::validate(int vocab) const {
  if (uses_soft()) soft.validate(vocab);
  if (uses_lora()) lora.validate();
  if (uses_rehearsal()) rehearsal.validate();
}

TargetPolicy MethodSpec::finetune_policy() const {
  return uses_soft() ? TargetPolicy{true, soft.alpha} : TargetPolicy{false, 0.0};
}

TargetPolicy MethodSpec::alignment_policy() const {
  return uses_soft() && soft_in_alignment ? TargetPolicy{true, soft.alpha}
                                          : TargetPolicy{false, 0.0};
}

Eigen::VectorXd smooth_targets(int target, int vocab, double alpha) {
  if (target < 0 || target >= vocab) throw ConfigError("smooth_targets: target out of range");
  if (target == Vocabulary::kPad) {
    throw ConfigError("smooth_targets: PAD cannot be a training target");
  }
  if (alpha <= 0.0 || alpha >= 1.0) throw ConfigError("smooth_targets: alpha must be in (0, 1)");
  Eigen::VectorXd q =
      Eigen::VectorXd::Constant(vocab, alpha / static_cast<double>(vocab - 1));
  q(target) = 1.0 - alpha;
  return q;
}

Eigen::VectorXd build_target_distribution(const MethodSpec& method, int target, int vocab) {
  if (method.uses_soft()) return smooth_targets(target, vocab, method.soft.alpha);
  if (target < 0 || target >= vocab) throw ConfigError("target out of range");
  Eigen::VectorXd q = Eigen::VectorXd::Zero(vocab);
  q(target) = 1.0;
  return q;
}

AdapterSet lora_attach(const Parameters& params, const LoraConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  AdapterSet set;
  Rng rng(derive_seed(seed, "lora"));
  for (const std::string& name : lora_target_names(params.config, cfg.targets)) {
    const Eigen::MatrixXd& w = params.at(name);
    const int out = static_cast<int>(w.rows());
    const int in = static_cast<int>(w.cols());
    const int r = cfg.rank_for(out, in);
    LoraAdapter ad;
    ad.a.resize(r, in);
    const double std = 1.0 / std::sqrt(static_cast<double>(in));
    for (int i = 0; i < r; ++i) {
      for (int j = 0; j < in; ++j) ad.a(i, j) = rng.normal(0.0, std);
    }
    ad.b = Eigen::MatrixXd::Zero(out, r);
    ad.scale = cfg.scale_for(r);
    set.adapters.emplace(name, std::move(ad));
  }
  return set;
}

Parameters lora_merge(const Parameters& params, AdapterSet& adapters) {
  if (adapters.merged) throw ConfigError("adapters already merged");
  Parameters out = params;
  for (const auto& [name, ad] : adapters.adapters) {
    auto it = out.tensors.find(name);
    if (it == out.tensors.end()) throw ConfigError("adapter targets unknown tensor: " + name);
    Eigen::MatrixXd& w = it->second;
    if (ad.b.rows() != w.rows() || ad.a.cols() != w.cols() || ad.a.rows() != ad.b.cols()) {
      throw ConfigError("adapter shape mismatch for " + name);
    }
    w.noalias() += ad.scale * (ad.b * ad.a);
  }
  adapters.merged = true;
  return out;
}

std::size_t RehearsalBuffer::total() const {
  std::size_t n = 0;
  for (const auto& [task, samples] : per_task) n += samples.size();
  return n;
}

std::vector<Sample> rehearsal_select(const TaskDataset& dataset, double fraction,
                                     std::uint64_t seed) {
  if (dataset.task_id == 1) throw ConfigError("rehearsal excludes task 1");
  if (dataset.task_id < 2) throw ConfigError("rehearsal needs a task id >= 2");
  if (fraction <= 0.0 || fraction > 1.0) throw ConfigError("rehearsal fraction must be in (0, 1]");
  if (dataset.train.empty()) throw ConfigError("rehearsal: empty train split");

  const int n = static_cast<int>(dataset.train.size());
  int keep = static_cast<int>(std::lround(fraction * static_cast<double>(n)));
  if (keep < 1) keep = 1;
  if (keep > n) keep = n;

  std::vector<int> order(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  Rng rng(derive_seed(seed, "rehearsal_select", static_cast<std::uint64_t>(dataset.task_id)));
  rng.shuffle(order);

  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(keep));
  for (int i = 0; i < keep; ++i) {
    out.push_back(dataset.train[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])]);
  }
  return out;
}

std::vector<Sample> rehearsal_mix(const std::vector<Sample>& current,
                                  const RehearsalBuffer& buffer, std::uint64_t seed) {
  std::vector<Sample> stream = current;
  for (const auto& [task, samples] : buffer.per_task) {
    stream.insert(stream.end(), samples.begin(), samples.end());
  }
  Rng rng(derive_seed(seed, "rehearsal_mix"));
  rng.shuffle(stream);
  return stream;
}

}  // namespace forgetlab
