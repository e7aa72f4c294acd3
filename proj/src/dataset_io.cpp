#include "seclm/dataset_io.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "seclm/error.hpp"

namespace seclm {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json vec_json(const Vec2& v) { return json::array({v.x(), v.y()}); }
json vec_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

template <int N>
Eigen::Matrix<double, N, 1> vec_from(const json& j, const char* what) {
  if (!j.is_array() || j.size() != N) throw Error(ErrorKind::Data, std::string(what) + ": expected an array of " + std::to_string(N) + " numbers");
  Eigen::Matrix<double, N, 1> v;
  for (int i = 0; i < N; ++i) v[i] = j[static_cast<std::size_t>(i)].get<double>();
  return v;
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw Error(ErrorKind::Data, "cannot open " + p.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Data, p.string() + ": " + e.what());
  }
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Data, "cannot write " + p.string());
  out << s;
}

json pose2d_json(const Pose2D& p) {
  json j;
  json prim = json::array(), sec = json::array();
  for (const auto& v : p.primary) prim.push_back(vec_json(v));
  j["primary"] = prim;
  j["primary_visible"] = p.primary_visible;
  if (std::any_of(p.secondary_visible.begin(), p.secondary_visible.end(), [](bool b) { return b; })) {
    for (const auto& v : p.secondary) sec.push_back(vec_json(v));
    j["secondary"] = sec;
    j["secondary_visible"] = p.secondary_visible;
  }
  return j;
}

Pose2D pose2d_from(const json& j, std::size_t S) {
  Pose2D p;
  for (const auto& v : j.at("primary")) p.primary.push_back(vec_from<2>(v, "pose2d.primary"));
  p.primary_visible = j.at("primary_visible").get<std::vector<bool>>();
  if (j.contains("secondary")) {
    for (const auto& v : j.at("secondary")) p.secondary.push_back(vec_from<2>(v, "pose2d.secondary"));
    p.secondary_visible = j.at("secondary_visible").get<std::vector<bool>>();
  } else {
    p.secondary.assign(S, Vec2::Zero());
    p.secondary_visible.assign(S, false);
  }
  if (p.primary_visible.size() != p.primary.size() || p.secondary.size() != S || p.secondary_visible.size() != S)
    throw Error(ErrorKind::Data, "pose2d record has inconsistent landmark counts");
  return p;
}

json pose3d_json(const Pose3D& p) {
  json prim = json::array(), sec = json::array();
  for (const auto& v : p.primary) prim.push_back(vec_json(v));
  for (const auto& v : p.secondary) sec.push_back(vec_json(v));
  return {{"primary", prim}, {"secondary", sec}};
}

Pose3D pose3d_from(const json& j) {
  Pose3D p;
  for (const auto& v : j.at("primary")) p.primary.push_back(vec_from<3>(v, "pose3d.primary"));
  for (const auto& v : j.at("secondary")) p.secondary.push_back(vec_from<3>(v, "pose3d.secondary"));
  return p;
}

void write_image(const fs::path& p, const Image& img) {
  static_assert(std::endian::native == std::endian::little, "image files are little-endian float32");
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Data, "cannot write " + p.string());
  out.write(reinterpret_cast<const char*>(img.data.data()), static_cast<std::streamsize>(img.data.size() * sizeof(float)));
}

Image read_image(const fs::path& p, int c, int h, int w) {
  Image img(c, h, w);
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorKind::Data, "cannot open image " + p.string());
  in.read(reinterpret_cast<char*>(img.data.data()), static_cast<std::streamsize>(img.data.size() * sizeof(float)));
  if (in.gcount() != static_cast<std::streamsize>(img.data.size() * sizeof(float)) || in.peek() != EOF)
    throw Error(ErrorKind::Data, "image " + p.string() + " does not hold " + std::to_string(c) + "x" + std::to_string(h) + "x" + std::to_string(w) + " floats");
  return img;
}

std::string image_name(std::uint64_t frame, std::size_t camera) {
  std::ostringstream s;
  s << "images/f" << frame << "_c" << camera << ".f32";
  return s.str();
}

void check_schema(const fs::path& dir) {
  const json m = read_json(dir / "manifest.json");
  if (!m.contains("schema_version") || m["schema_version"] != kDatasetSchemaVersion)
    throw Error(ErrorKind::Data, "dataset " + dir.string() + " has schema version " + (m.contains("schema_version") ? m["schema_version"].dump() : "none") +
                                     ", expected " + std::to_string(kDatasetSchemaVersion));
}

void write_frames(const std::vector<MultiviewFrame>& frames, const fs::path& dir) {
  fs::create_directories(dir / "images");
  std::string lines;
  for (const auto& f : frames)
    for (const auto& v : f.views) {
      json j;
      j["frame"] = f.id;
      j["camera"] = v.camera;
      j["split"] = f.split == FrameSplit::Train ? "train" : "test";
      if (v.image) {
        const std::string name = image_name(f.id, v.camera);
        j["image"] = name;
        j["shape"] = {v.image->channels, v.image->height, v.image->width};
        write_image(dir / name, *v.image);
      } else {
        j["image"] = nullptr;
      }
      if (v.truth) j["pose2d"] = pose2d_json(*v.truth);
      if (f.truth3d) j["pose3d"] = pose3d_json(*f.truth3d);
      lines += j.dump() + "\n";
    }
  write_text(dir / "frames.jsonl", lines);
}

std::vector<MultiviewFrame> read_frames(const fs::path& dir, std::size_t S) {
  std::ifstream in(dir / "frames.jsonl");
  if (!in) throw Error(ErrorKind::Data, "cannot open " + (dir / "frames.jsonl").string());
  std::vector<MultiviewFrame> frames;
  std::map<std::uint64_t, std::size_t> index;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      const auto id = j.at("frame").get<std::uint64_t>();
      auto [it, fresh] = index.try_emplace(id, frames.size());
      if (fresh) {
        frames.emplace_back();
        frames.back().id = id;
      }
      MultiviewFrame& f = frames[it->second];
      const std::string split = j.at("split").get<std::string>();
      if (split != "train" && split != "test") throw Error(ErrorKind::Data, "unknown split '" + split + "'");
      f.split = split == "train" ? FrameSplit::Train : FrameSplit::Test;
      View v;
      v.camera = j.at("camera").get<std::size_t>();
      if (!j.at("image").is_null()) {
        v.image_path = j["image"].get<std::string>();
        const auto shape = j.at("shape").get<std::vector<int>>();
        if (shape.size() != 3) throw Error(ErrorKind::Data, "image shape must have three entries");
        v.image = read_image(dir / v.image_path, shape[0], shape[1], shape[2]);
      }
      if (j.contains("pose2d")) v.truth = pose2d_from(j["pose2d"], S);
      if (j.contains("pose3d") && !f.truth3d) f.truth3d = pose3d_from(j["pose3d"]);
      f.views.push_back(std::move(v));
    } catch (const json::exception& e) {
      throw Error(ErrorKind::Data, "frames.jsonl line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return frames;
}

}  // namespace

json skeleton_to_json(const SkeletonSpec& s) {
  json offsets = json::array();
  for (const auto& o : s.offsets) offsets.push_back(vec_json(o));
  return {{"names", s.names},
          {"parents", s.parents},
          {"offsets", offsets},
          {"primary", s.is_primary},
          {"frame", {s.frame.origin, s.frame.axis, s.frame.plane}},
          {"reference_pair", {s.reference_pair.first, s.reference_pair.second}}};
}

SkeletonSpec skeleton_from_json(const json& j) {
  SkeletonSpec s;
  try {
    s.names = j.at("names").get<std::vector<std::string>>();
    s.parents = j.at("parents").get<std::vector<int>>();
    s.is_primary = j.at("primary").get<std::vector<bool>>();
    if (j.contains("offsets"))
      for (const auto& o : j["offsets"]) s.offsets.push_back(vec_from<3>(o, "skeleton.offsets"));
    else
      s.offsets.assign(s.names.size(), Vec3::Zero());
    const auto fr = j.at("frame").get<std::vector<std::size_t>>();
    if (fr.size() != 3) throw Error(ErrorKind::Data, "skeleton frame needs three landmark indices");
    s.frame = {fr[0], fr[1], fr[2]};
    const auto rp = j.at("reference_pair").get<std::vector<std::size_t>>();
    if (rp.size() != 2) throw Error(ErrorKind::Data, "skeleton reference_pair needs two landmark indices");
    s.reference_pair = {rp[0], rp[1]};
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Data, std::string("skeleton: ") + e.what());
  }
  try {
    s.validate();
  } catch (const Error& e) {
    throw Error(ErrorKind::Data, std::string("skeleton: ") + e.what());
  }
  return s;
}

json generator_to_json(const GeneratorConfig& c) {
  return {{"seed", c.seed},
          {"train_frames", c.train_frames},
          {"test_frames", c.test_frames},
          {"image_frames", c.image_frames},
          {"rig",
           {{"count", c.rig.count},
            {"radius", c.rig.radius},
            {"height", c.rig.height},
            {"image_size", c.rig.image_size},
            {"focal", c.rig.focal},
            {"arc_degrees", c.rig.arc_degrees}}},
          {"render",
           {{"blob_sigma", c.render.blob_sigma},
            {"secondary_amplitude", c.render.secondary_amplitude},
            {"secondary_color_spread", c.render.secondary_color_spread},
            {"color_jitter", c.render.color_jitter},
            {"bone_intensity", c.render.bone_intensity},
            {"bone_width", c.render.bone_width},
            {"background", c.render.background},
            {"background_noise", c.render.background_noise},
            {"keypoint_noise_px", c.render.keypoint_noise_px}}},
          {"pose_model",
           {{"rank", c.pose_model.rank},
            {"amplitude", c.pose_model.amplitude},
            {"residual_sigma", c.pose_model.residual_sigma},
            {"heading_range", c.pose_model.heading_range},
            {"translation_range", c.pose_model.translation_range},
            {"seed", c.pose_model.seed}}}};
}

GeneratorConfig generator_from_json(const json& j) {
  GeneratorConfig c;
  try {
    auto opt = [](const json& o, const char* k, auto& v) {
      if (o.contains(k)) v = o[k].get<std::remove_reference_t<decltype(v)>>();
    };
    opt(j, "seed", c.seed);
    opt(j, "train_frames", c.train_frames);
    opt(j, "test_frames", c.test_frames);
    opt(j, "image_frames", c.image_frames);
    if (j.contains("rig")) {
      const json& r = j["rig"];
      opt(r, "count", c.rig.count);
      opt(r, "radius", c.rig.radius);
      opt(r, "height", c.rig.height);
      opt(r, "image_size", c.rig.image_size);
      opt(r, "focal", c.rig.focal);
      opt(r, "arc_degrees", c.rig.arc_degrees);
    }
    if (j.contains("render")) {
      const json& r = j["render"];
      opt(r, "blob_sigma", c.render.blob_sigma);
      opt(r, "secondary_amplitude", c.render.secondary_amplitude);
      opt(r, "secondary_color_spread", c.render.secondary_color_spread);
      opt(r, "color_jitter", c.render.color_jitter);
      opt(r, "bone_intensity", c.render.bone_intensity);
      opt(r, "bone_width", c.render.bone_width);
      opt(r, "background", c.render.background);
      opt(r, "background_noise", c.render.background_noise);
      opt(r, "keypoint_noise_px", c.render.keypoint_noise_px);
    }
    if (j.contains("pose_model")) {
      const json& r = j["pose_model"];
      opt(r, "rank", c.pose_model.rank);
      opt(r, "amplitude", c.pose_model.amplitude);
      opt(r, "residual_sigma", c.pose_model.residual_sigma);
      opt(r, "heading_range", c.pose_model.heading_range);
      opt(r, "translation_range", c.pose_model.translation_range);
      opt(r, "seed", c.pose_model.seed);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Config, std::string("generator config: ") + e.what());
  }
  return c;
}

void write_dataset(const Dataset& d, const fs::path& dir) {
  fs::create_directories(dir);
  write_text(dir / "manifest.json", json{{"schema_version", kDatasetSchemaVersion}, {"kind", "dataset"}, {"generator", generator_to_json(d.config)}}.dump(2) + "\n");
  geometry::save_rig(dir / "rig.json", d.rig);
  write_text(dir / "skeleton.json", skeleton_to_json(d.skeleton).dump(2) + "\n");
  write_frames(d.frames, dir);
}

Dataset load_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error(ErrorKind::Data, "dataset directory " + dir.string() + " does not exist");
  check_schema(dir);
  Dataset d;
  const json m = read_json(dir / "manifest.json");
  if (m.contains("generator") && m["generator"].is_object()) d.config = generator_from_json(m["generator"]);
  d.rig = geometry::load_rig(dir / "rig.json");
  d.skeleton = skeleton_from_json(read_json(dir / "skeleton.json"));
  d.frames = read_frames(dir, d.skeleton.secondary_count());
  for (const auto& f : d.frames)
    for (const auto& v : f.views)
      if (v.camera >= d.rig.size()) throw Error(ErrorKind::Data, "frame " + std::to_string(f.id) + " references camera " + std::to_string(v.camera) + " outside the rig");
  return d;
}

void write_split(const DatasetSplit& split, const SplitInfo& info, const fs::path& dir) {
  fs::create_directories(dir);
  write_text(dir / "manifest.json", json{{"schema_version", kDatasetSchemaVersion}, {"kind", "split"}, {"generator", nullptr}}.dump(2) + "\n");
  geometry::save_rig(dir / "rig.json", split.rig);
  write_text(dir / "skeleton.json", skeleton_to_json(split.skeleton).dump(2) + "\n");
  write_frames(split.frames, dir);
  write_text(dir / "split.json", json{{"label_ratio", info.label_ratio},
                                      {"seed", info.seed},
                                      {"labeled_primary", split.labeled_primary},
                                      {"labeled_secondary", split.labeled_secondary},
                                      {"unlabeled", split.unlabeled}}
                                         .dump(2) + "\n");
}

DatasetSplit load_split(const fs::path& dir, SplitInfo* info) {
  const Dataset d = load_dataset(dir);
  const json s = read_json(dir / "split.json");
  DatasetSplit split;
  split.rig = d.rig;
  split.skeleton = d.skeleton;
  split.frames = d.frames;
  try {
    split.labeled_primary = s.at("labeled_primary").get<std::vector<std::size_t>>();
    split.labeled_secondary = s.at("labeled_secondary").get<std::vector<std::size_t>>();
    split.unlabeled = s.at("unlabeled").get<std::vector<std::size_t>>();
    if (info) *info = {s.at("label_ratio").get<double>(), s.at("seed").get<std::uint64_t>()};
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Data, std::string("split.json: ") + e.what());
  }
  for (const auto* list : {&split.labeled_primary, &split.labeled_secondary, &split.unlabeled})
    for (std::size_t i : *list)
      if (i >= split.frames.size()) throw Error(ErrorKind::Data, "split.json index " + std::to_string(i) + " out of range");
  return split;
}

std::vector<fs::path> dataset_files(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const char* name : {"manifest.json", "rig.json", "skeleton.json", "frames.jsonl", "split.json"})
    if (fs::exists(dir / name)) files.push_back(dir / name);
  std::vector<fs::path> images;
  if (fs::is_directory(dir / "images"))
    for (const auto& e : fs::directory_iterator(dir / "images"))
      if (e.is_regular_file()) images.push_back(e.path());
  std::sort(images.begin(), images.end());
  files.insert(files.end(), images.begin(), images.end());
  return files;
}

}  // namespace seclm
