#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "forgetlab/evaluation.hpp"
#include "forgetlab/mitigation.hpp"
#include "forgetlab/model.hpp"

namespace forgetlab {

// The base LM's scores on the NL suite, taken right after pretraining. Kept
// as exact counts; the derived numbers are recomputed on load.
struct NlBaseline {
  std::vector<EvalResult> results;
  double omega = 0.0;
  double nlu_mean = 0.0;
  double nlg_mean = 0.0;
};

NlBaseline make_nl_baseline(std::vector<EvalResult> results);

struct Checkpoint {
  Parameters params;
  std::string provenance;  // hash of everything the weights depend on
  std::string rng_state;   // training rng snapshot at save time
  std::optional<NlBaseline> baseline;
  RehearsalBuffer buffer;
};

// Binary container: magic + version + JSON header (config, tensor index,
// baseline counts, replay buffer) + raw little-endian double blob.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace forgetlab
