#include "seclm/checkpoint.hpp"

#include <fstream>

#include "seclm/error.hpp"

namespace seclm {

nlohmann::json checkpoint_to_json(const Checkpoint& ckpt) {
  nlohmann::json params = nlohmann::json::object();
  for (const auto& [path, t] : ckpt.parameters) {
    params[path] = {{"shape", t.shape()}, {"values", t.storage()}};
  }
  return {{"format", "seclm-checkpoint"},
          {"version", kCheckpointVersion},
          {"metadata", ckpt.metadata},
          {"parameters", std::move(params)}};
}

Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  if (!j.is_object() || j.value("format", "") != "seclm-checkpoint")
    throw Error(ErrorKind::Data, "not a seclm checkpoint");
  if (!j.contains("version") || j.at("version").get<int>() != kCheckpointVersion)
    throw Error(ErrorKind::Data, "unsupported checkpoint version (expected " + std::to_string(kCheckpointVersion) + ")");
  Checkpoint out;
  if (j.contains("metadata")) out.metadata = j.at("metadata");
  for (const auto& [path, entry] : j.at("parameters").items()) {
    auto shape = entry.at("shape").get<ad::Shape>();
    auto values = entry.at("values").get<std::vector<double>>();
    out.parameters.emplace(path, ad::Tensor(std::move(shape), std::move(values)));
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw Error(ErrorKind::Data, "cannot write checkpoint " + path.string());
  os << checkpoint_to_json(ckpt).dump() << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorKind::Data, "cannot read checkpoint " + path.string());
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Data, "malformed checkpoint " + path.string() + ": " + e.what());
  }
  return checkpoint_from_json(j);
}

ad::ParameterSet with_prefix(const ad::ParameterSet& params, const std::string& prefix) {
  ad::ParameterSet out;
  for (auto it = params.lower_bound(prefix); it != params.end() && it->first.starts_with(prefix); ++it)
    out.insert(*it);
  return out;
}

}  // namespace seclm
