#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "forgetlab/mitigation.hpp"
#include "forgetlab/model.hpp"
#include "forgetlab/synthdata.hpp"
#include "forgetlab/training.hpp"

namespace forgetlab {

enum class RunMode { two_task, continual };

std::string to_string(RunMode m);
RunMode run_mode_from_string(const std::string& s);

struct SeedPack {
  std::uint64_t data = 1;
  std::uint64_t init = 2;
  std::uint64_t train = 3;
  std::uint64_t eval = 4;  // reserved; evaluation is deterministic today
};

struct PretrainConfig {
  StageConfig stage;      // defaults set in RunConfig{}
  int step_cap = 4000;    // hard stop; failing the floor by then is an error
  int eval_every = 250;   // floor check cadence (steps)
  double floor_nlg = 0.30;
  double floor_chance_factor = 2.0;  // every nlu set must reach factor * chance
};

struct RunConfig {
  ModelConfig model;
  DataConfig data;
  PretrainConfig pretrain;
  StageConfig alignment;
  StageConfig finetune;
  MethodSpec method;
  RunMode mode = RunMode::continual;
  SeedPack seeds;
  std::string data_dir = "data";
  std::string pretrain_dir = "pretrain";

  RunConfig();  // wires per-stage defaults

  void validate() const;
};

nlohmann::json to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const DataConfig& d);
DataConfig data_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const ModelConfig& m);
ModelConfig model_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const MethodSpec& m);
MethodSpec method_spec_from_json(const nlohmann::json& j);

RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const RunConfig& cfg, const std::filesystem::path& path);

// Hash of the canonical JSON dump; doubles survive the round trip, so equal
// hashes mean equal configs.
std::string config_hash(const RunConfig& cfg);

// Everything the pretrained checkpoint depends on. Excludes seeds.train so
// task-phase seed sweeps can share one base LM.
std::string pretrain_provenance(const RunConfig& cfg);

// "name=value" with name in {data, init, train, eval}.
void apply_seed_override(RunConfig& cfg, const std::string& spec);

}  // namespace forgetlab
