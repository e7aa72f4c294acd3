#pragma once

// Module-neutral checkpoint format:
//
//   {"format": "seclm-checkpoint", "version": 1,
//    "metadata": {...},
//    "parameters": {"<path>": {"shape": [..], "values": [..row-major..]}, ...}}
//
// Doubles are written with round-trip precision, so save/load is lossless.

#include <filesystem>
#include <nlohmann/json.hpp>

#include "seclm/autodiff.hpp"

namespace seclm {

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  ad::ParameterSet parameters;
  nlohmann::json metadata = nlohmann::json::object();
};

nlohmann::json checkpoint_to_json(const Checkpoint& ckpt);
Checkpoint checkpoint_from_json(const nlohmann::json& j);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Entries of `params` whose path starts with `prefix`.
ad::ParameterSet with_prefix(const ad::ParameterSet& params, const std::string& prefix);

}  // namespace seclm
