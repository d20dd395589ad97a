#include "forgetlab/config.hpp"

#include <fstream>
#include <initializer_list>

#include "forgetlab/errors.hpp"
#include "forgetlab/hashing.hpp"

namespace forgetlab {
namespace {

using nlohmann::json;

const json& need(const json& j, const char* key, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  auto it = j.find(key);
  if (it == j.end()) throw ConfigError(where + ": missing key '" + std::string(key) + "'");
  return *it;
}

void reject_unknown(const json& j, std::initializer_list<const char*> keys,
                    const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& item : j.items()) {
    bool known = false;
    for (const char* k : keys)
      if (item.key() == k) {
        known = true;
        break;
      }
    if (!known) throw ConfigError(where + ": unknown key '" + item.key() + "'");
  }
}

template <typename T>
T get_as(const json& j, const char* key, const std::string& where) {
  const json& v = need(j, key, where);
  try {
    return v.get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + ": bad value for '" + std::string(key) + "'");
  }
}

}  // namespace

nlohmann::json to_json(const ModelConfig& m) {
  return {{"layers", m.layers},   {"d_model", m.d_model},
          {"heads", m.heads},     {"ffn", m.ffn},
          {"context", m.context}, {"vocab", m.vocab},
          {"patches", m.patches}, {"patch_features", m.patch_features},
          {"vision_dim", m.vision_dim}, {"init_std", m.init_std},
          {"ln_eps", m.ln_eps}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  const std::string w = "model";
  reject_unknown(j,
                 {"layers", "d_model", "heads", "ffn", "context", "vocab", "patches",
                  "patch_features", "vision_dim", "init_std", "ln_eps"},
                 w);
  ModelConfig m;
  m.layers = get_as<int>(j, "layers", w);
  m.d_model = get_as<int>(j, "d_model", w);
  m.heads = get_as<int>(j, "heads", w);
  m.ffn = get_as<int>(j, "ffn", w);
  m.context = get_as<int>(j, "context", w);
  m.vocab = get_as<int>(j, "vocab", w);
  m.patches = get_as<int>(j, "patches", w);
  m.patch_features = get_as<int>(j, "patch_features", w);
  m.vision_dim = get_as<int>(j, "vision_dim", w);
  m.init_std = get_as<double>(j, "init_std", w);
  m.ln_eps = get_as<double>(j, "ln_eps", w);
  return m;
}

nlohmann::json to_json(const DataConfig& d) {
  return {{"vocab_size", d.vocab_size},
          {"pretrain_size", d.pretrain_size},
          {"nl_eval_size", d.nl_eval_size},
          {"vl_train_size", d.vl_train_size},
          {"vl_test_size", d.vl_test_size},
          {"alignment_size", d.alignment_size},
          {"patches", d.patches},
          {"features", d.features},
          {"noise_sigma", d.noise_sigma},
          {"context_budget", d.context_budget}};
}

DataConfig data_config_from_json(const nlohmann::json& j) {
  const std::string w = "data";
  reject_unknown(j,
                 {"vocab_size", "pretrain_size", "nl_eval_size", "vl_train_size", "vl_test_size",
                  "alignment_size", "patches", "features", "noise_sigma", "context_budget"},
                 w);
  DataConfig d;
  d.vocab_size = get_as<int>(j, "vocab_size", w);
  d.pretrain_size = get_as<int>(j, "pretrain_size", w);
  d.nl_eval_size = get_as<int>(j, "nl_eval_size", w);
  d.vl_train_size = get_as<int>(j, "vl_train_size", w);
  d.vl_test_size = get_as<int>(j, "vl_test_size", w);
  d.alignment_size = get_as<int>(j, "alignment_size", w);
  d.patches = get_as<int>(j, "patches", w);
  d.features = get_as<int>(j, "features", w);
  d.noise_sigma = get_as<double>(j, "noise_sigma", w);
  d.context_budget = get_as<int>(j, "context_budget", w);
  return d;
}

namespace {

json stage_to_json(const StageConfig& s) {
  return {{"peak_lr", s.peak_lr},
          {"warmup_ratio", s.warmup_ratio},
          {"schedule", s.schedule},
          {"epochs", s.epochs},
          {"batch", s.batch},
          {"clip_norm", s.clip_norm},
          {"adam",
           {{"beta1", s.adam.beta1},
            {"beta2", s.adam.beta2},
            {"eps", s.adam.eps},
            {"weight_decay", s.adam.weight_decay}}}};
}

StageConfig stage_from_json(const json& j, const std::string& w) {
  reject_unknown(
      j, {"peak_lr", "warmup_ratio", "schedule", "epochs", "batch", "clip_norm", "adam"}, w);
  StageConfig s;
  s.peak_lr = get_as<double>(j, "peak_lr", w);
  s.warmup_ratio = get_as<double>(j, "warmup_ratio", w);
  s.schedule = get_as<std::string>(j, "schedule", w);
  s.epochs = get_as<int>(j, "epochs", w);
  s.batch = get_as<int>(j, "batch", w);
  s.clip_norm = get_as<double>(j, "clip_norm", w);
  const json& a = need(j, "adam", w);
  reject_unknown(a, {"beta1", "beta2", "eps", "weight_decay"}, w + ".adam");
  s.adam.beta1 = get_as<double>(a, "beta1", w + ".adam");
  s.adam.beta2 = get_as<double>(a, "beta2", w + ".adam");
  s.adam.eps = get_as<double>(a, "eps", w + ".adam");
  s.adam.weight_decay = get_as<double>(a, "weight_decay", w + ".adam");
  return s;
}

std::string lora_targets_to_string(LoraTargets t) {
  return t == LoraTargets::all_linear ? "all_linear" : "attention_kqv";
}

LoraTargets lora_targets_from_string(const std::string& s) {
  if (s == "all_linear") return LoraTargets::all_linear;
  if (s == "attention_kqv") return LoraTargets::attention_kqv;
  throw ConfigError("method.lora: unknown targets '" + s + "'");
}

}  // namespace

nlohmann::json to_json(const MethodSpec& m) {
  return {{"variant", to_string(m.variant)},
          {"soft", {{"alpha", m.soft.alpha}}},
          {"lora",
           {{"rank_fraction", m.lora.rank_fraction},
            {"explicit_rank", m.lora.explicit_rank},
            {"alpha", m.lora.alpha},
            {"rank_stabilized", m.lora.rank_stabilized},
            {"targets", lora_targets_to_string(m.lora.targets)}}},
          {"rehearsal", {{"fraction", m.rehearsal.fraction}}},
          {"soft_in_alignment", m.soft_in_alignment}};
}

MethodSpec method_spec_from_json(const nlohmann::json& j) {
  const std::string w = "method";
  reject_unknown(j, {"variant", "soft", "lora", "rehearsal", "soft_in_alignment"}, w);
  MethodSpec m;
  try {
    m.variant = method_variant_from_string(get_as<std::string>(j, "variant", w));
  } catch (const ConfigError& e) {
    throw ConfigError(w + ": " + e.what());
  }
  const json& soft = need(j, "soft", w);
  reject_unknown(soft, {"alpha"}, w + ".soft");
  m.soft.alpha = get_as<double>(soft, "alpha", w + ".soft");
  const json& lora = need(j, "lora", w);
  reject_unknown(lora, {"rank_fraction", "explicit_rank", "alpha", "rank_stabilized", "targets"},
                 w + ".lora");
  m.lora.rank_fraction = get_as<double>(lora, "rank_fraction", w + ".lora");
  m.lora.explicit_rank = get_as<int>(lora, "explicit_rank", w + ".lora");
  m.lora.alpha = get_as<double>(lora, "alpha", w + ".lora");
  m.lora.rank_stabilized = get_as<bool>(lora, "rank_stabilized", w + ".lora");
  m.lora.targets = lora_targets_from_string(get_as<std::string>(lora, "targets", w + ".lora"));
  const json& reh = need(j, "rehearsal", w);
  reject_unknown(reh, {"fraction"}, w + ".rehearsal");
  m.rehearsal.fraction = get_as<double>(reh, "fraction", w + ".rehearsal");
  m.soft_in_alignment = get_as<bool>(j, "soft_in_alignment", w);
  return m;
}

std::string to_string(RunMode m) { return m == RunMode::two_task ? "two_task" : "continual"; }

RunMode run_mode_from_string(const std::string& s) {
  if (s == "two_task") return RunMode::two_task;
  if (s == "continual") return RunMode::continual;
  throw ConfigError("mode: expected 'two_task' or 'continual', got '" + s + "'");
}

RunConfig::RunConfig() {
  pretrain.stage = StageConfig::alignment_defaults();
  alignment = StageConfig::alignment_defaults();
  finetune = StageConfig::finetune_defaults();
}

void RunConfig::validate() const {
  model.validate();
  data.validate();
  if (data.vocab_size != model.vocab)
    throw ConfigError("config: data.vocab_size must equal model.vocab");
  if (data.patches != model.patches)
    throw ConfigError("config: data.patches must equal model.patches");
  if (data.features != model.patch_features)
    throw ConfigError("config: data.features must equal model.patch_features");
  if (data.context_budget != model.context)
    throw ConfigError("config: data.context_budget must equal model.context");
  if (pretrain.step_cap <= 0) throw ConfigError("pretrain.step_cap must be positive");
  if (pretrain.eval_every <= 0 || pretrain.eval_every > pretrain.step_cap)
    throw ConfigError("pretrain.eval_every must be in [1, step_cap]");
  if (pretrain.floor_nlg < 0.0 || pretrain.floor_nlg >= 1.0)
    throw ConfigError("pretrain.floor_nlg must be in [0, 1)");
  if (pretrain.floor_chance_factor < 0.0)
    throw ConfigError("pretrain.floor_chance_factor must be non-negative");
  pretrain.stage.validate();
  alignment.validate();
  finetune.validate();
  method.validate(model.vocab);
  if (data_dir.empty() || pretrain_dir.empty())
    throw ConfigError("config: data_dir and pretrain_dir must be set");
}

nlohmann::json to_json(const RunConfig& cfg) {
  return {{"model", to_json(cfg.model)},
          {"data", to_json(cfg.data)},
          {"pretrain",
           {{"stage", stage_to_json(cfg.pretrain.stage)},
            {"step_cap", cfg.pretrain.step_cap},
            {"eval_every", cfg.pretrain.eval_every},
            {"floor_nlg", cfg.pretrain.floor_nlg},
            {"floor_chance_factor", cfg.pretrain.floor_chance_factor}}},
          {"alignment", stage_to_json(cfg.alignment)},
          {"finetune", stage_to_json(cfg.finetune)},
          {"method", to_json(cfg.method)},
          {"mode", to_string(cfg.mode)},
          {"seeds",
           {{"data", cfg.seeds.data},
            {"init", cfg.seeds.init},
            {"train", cfg.seeds.train},
            {"eval", cfg.seeds.eval}}},
          {"data_dir", cfg.data_dir},
          {"pretrain_dir", cfg.pretrain_dir}};
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  const std::string w = "config";
  reject_unknown(j,
                 {"model", "data", "pretrain", "alignment", "finetune", "method", "mode", "seeds",
                  "data_dir", "pretrain_dir"},
                 w);
  RunConfig cfg;
  cfg.model = model_config_from_json(need(j, "model", w));
  cfg.data = data_config_from_json(need(j, "data", w));
  const json& p = need(j, "pretrain", w);
  reject_unknown(p, {"stage", "step_cap", "eval_every", "floor_nlg", "floor_chance_factor"},
                 "pretrain");
  cfg.pretrain.stage = stage_from_json(need(p, "stage", "pretrain"), "pretrain.stage");
  cfg.pretrain.step_cap = get_as<int>(p, "step_cap", "pretrain");
  cfg.pretrain.eval_every = get_as<int>(p, "eval_every", "pretrain");
  cfg.pretrain.floor_nlg = get_as<double>(p, "floor_nlg", "pretrain");
  cfg.pretrain.floor_chance_factor = get_as<double>(p, "floor_chance_factor", "pretrain");
  cfg.alignment = stage_from_json(need(j, "alignment", w), "alignment");
  cfg.finetune = stage_from_json(need(j, "finetune", w), "finetune");
  cfg.method = method_spec_from_json(need(j, "method", w));
  cfg.mode = run_mode_from_string(get_as<std::string>(j, "mode", w));
  const json& s = need(j, "seeds", w);
  reject_unknown(s, {"data", "init", "train", "eval"}, "seeds");
  cfg.seeds.data = get_as<std::uint64_t>(s, "data", "seeds");
  cfg.seeds.init = get_as<std::uint64_t>(s, "init", "seeds");
  cfg.seeds.train = get_as<std::uint64_t>(s, "train", "seeds");
  cfg.seeds.eval = get_as<std::uint64_t>(s, "eval", "seeds");
  cfg.data_dir = get_as<std::string>(j, "data_dir", w);
  cfg.pretrain_dir = get_as<std::string>(j, "pretrain_dir", w);
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config parse error in " + path.string() + ": " + e.what());
  }
  RunConfig cfg = run_config_from_json(j);
  cfg.validate();
  return cfg;
}

void save_run_config(const RunConfig& cfg, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write config: " + path.string());
  out << to_json(cfg).dump(2) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

std::string config_hash(const RunConfig& cfg) {
  Fnv64 h;
  h.update_string(to_json(cfg).dump());
  return hex64(h.digest());
}

std::string pretrain_provenance(const RunConfig& cfg) {
  nlohmann::json j = {{"model", to_json(cfg.model)},
                      {"data", to_json(cfg.data)},
                      {"pretrain",
                       {{"stage", stage_to_json(cfg.pretrain.stage)},
                        {"step_cap", cfg.pretrain.step_cap},
                        {"eval_every", cfg.pretrain.eval_every},
                        {"floor_nlg", cfg.pretrain.floor_nlg},
                        {"floor_chance_factor", cfg.pretrain.floor_chance_factor}}},
                      {"seeds", {{"data", cfg.seeds.data}, {"init", cfg.seeds.init}}}};
  Fnv64 h;
  h.update_string(j.dump());
  return hex64(h.digest());
}

void apply_seed_override(RunConfig& cfg, const std::string& spec) {
  auto eq = spec.find('=');
  if (eq == std::string::npos || eq == 0 || eq + 1 >= spec.size())
    throw ConfigError("seed override must look like name=value: '" + spec + "'");
  const std::string name = spec.substr(0, eq);
  const std::string value = spec.substr(eq + 1);
  std::uint64_t v = 0;
  try {
    std::size_t used = 0;
    v = std::stoull(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
  } catch (const std::exception&) {
    throw ConfigError("seed override value is not an unsigned integer: '" + value + "'");
  }
  if (name == "data")
    cfg.seeds.data = v;
  else if (name == "init")
    cfg.seeds.init = v;
  else if (name == "train")
    cfg.seeds.train = v;
  else if (name == "eval")
    cfg.seeds.eval = v;
  else
    throw ConfigError("unknown seed name '" + name + "' (expected data|init|train|eval)");
}

}  // namespace forgetlab
