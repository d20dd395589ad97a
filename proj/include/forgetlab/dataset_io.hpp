#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "forgetlab/synthdata.hpp"

namespace forgetlab {

nlohmann::json sample_to_json(const Sample& s);
Sample sample_from_json(const nlohmann::json& j);

// Semantic fingerprint over every dataset (pretrain, NL suite, VL tasks),
// independent of on-disk formatting.
std::string bundle_fingerprint(const DataBundle& b);

// One JSONL file per dataset (header line, then records) plus manifest.json.
// Refuses to touch a directory that already holds a manifest unless force.
void write_datasets(const DataBundle& b, const DataConfig& cfg, std::uint64_t data_seed,
                    const std::filesystem::path& dir, bool force);

struct LoadedData {
  DataBundle bundle;
  DataConfig config;
  std::uint64_t data_seed = 0;
  std::string fingerprint;
};

// Reads everything back, verifying file hashes against the manifest and the
// semantic fingerprint against the reloaded content.
LoadedData read_datasets(const std::filesystem::path& dir);

}  // namespace forgetlab
