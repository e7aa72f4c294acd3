#pragma once

// Dataset directory layout (schema version kDatasetSchemaVersion):
//
//   manifest.json   {"schema_version", "kind": "dataset", "generator": {...} | null}
//   rig.json        camera array (see save_rig)
//   skeleton.json   {"names", "parents", "offsets", "primary", "frame", "reference_pair"}
//   frames.jsonl    one object per (frame, camera):
//                     {"frame", "camera", "split": "train"|"test", "image": path|null,
//                      "shape": [c,h,w] (with image), "pose2d": {...}?, "pose3d": {...}?}
//   images/*.f32    raw little-endian float32, channels × height × width
//   split.json      split directories only: {"label_ratio", "seed", "labeled_primary",
//                   "labeled_secondary", "unlabeled"} (frame positions)
//
// Frames without annotations carry no pose keys at all. A pose2d record omits
// "secondary" when no secondary landmark is labeled.

#include <filesystem>
#include <nlohmann/json.hpp>

#include "seclm/synthdata.hpp"

namespace seclm {

inline constexpr int kDatasetSchemaVersion = 1;

nlohmann::json skeleton_to_json(const SkeletonSpec& s);
SkeletonSpec skeleton_from_json(const nlohmann::json& j);
nlohmann::json generator_to_json(const GeneratorConfig& c);
GeneratorConfig generator_from_json(const nlohmann::json& j);

/// Writes `dataset` into `dir` (created; existing dataset files are replaced).
void write_dataset(const Dataset& dataset, const std::filesystem::path& dir);
/// Throws Error(Data) on a missing file, malformed record or schema-version mismatch.
Dataset load_dataset(const std::filesystem::path& dir);

struct SplitInfo {
  double label_ratio = 0.0;
  std::uint64_t seed = 0;
};

void write_split(const DatasetSplit& split, const SplitInfo& info, const std::filesystem::path& dir);
DatasetSplit load_split(const std::filesystem::path& dir, SplitInfo* info = nullptr);

/// Files that define a dataset directory, in a fixed order (for content
/// hashing): the metadata files, then the images sorted by path.
std::vector<std::filesystem::path> dataset_files(const std::filesystem::path& dir);

}  // namespace seclm
