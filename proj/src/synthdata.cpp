#include "seclm/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include "seclm/error.hpp"

namespace seclm {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Mat3 rot_x(double a) { return Eigen::AngleAxisd(a, Vec3::UnitX()).toRotationMatrix(); }
Mat3 rot_y(double a) { return Eigen::AngleAxisd(a, Vec3::UnitY()).toRotationMatrix(); }
Mat3 rot_z(double a) { return Eigen::AngleAxisd(a, Vec3::UnitZ()).toRotationMatrix(); }

// Joint amplitude multipliers; limbs swing more than the trunk.
double joint_amplitude(const std::string& name) {
  if (name == "hip") return 0.15;
  if (name == "spine_mid" || name == "neck") return 0.35;
  if (name == "head" || name == "nose" || name.ends_with("ear")) return 0.5;
  if (name.ends_with("shoulder")) return 0.4;
  return 1.0;
}

struct Colour {
  double r, g, b;
};

// Distinct signatures for the 13 primaries.
constexpr Colour kPrimaryColours[] = {
    {1.0, 0.2, 0.2}, {1.0, 1.0, 0.2}, {0.2, 1.0, 0.2}, {0.2, 0.2, 1.0}, {1.0, 0.2, 1.0},
    {0.2, 1.0, 1.0}, {1.0, 0.6, 0.2}, {0.6, 0.2, 1.0}, {0.2, 0.6, 1.0}, {1.0, 0.2, 0.6},
    {0.6, 1.0, 0.2}, {0.2, 1.0, 0.6}, {1.0, 1.0, 1.0},
};

}  // namespace

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b) {
  return splitmix64(splitmix64(splitmix64(master) ^ a) ^ (b * 0x2545f4914f6cdd1dULL));
}

std::size_t SkeletonSpec::primary_count() const {
  return static_cast<std::size_t>(std::count(is_primary.begin(), is_primary.end(), true));
}

std::size_t SkeletonSpec::secondary_count() const { return landmark_count() - primary_count(); }

std::size_t SkeletonSpec::block_index(std::size_t landmark) const {
  return is_primary.at(landmark) ? landmark : landmark - primary_count();
}

std::size_t SkeletonSpec::index_of(const std::string& name) const {
  auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw Error(ErrorKind::Config, "unknown landmark '" + name + "'");
  return static_cast<std::size_t>(it - names.begin());
}

std::size_t SkeletonSpec::primary_index(const std::string& name) const {
  const std::size_t k = index_of(name);
  if (!is_primary[k]) throw Error(ErrorKind::Config, "landmark '" + name + "' is not primary");
  return k;
}

std::size_t SkeletonSpec::secondary_index(const std::string& name) const {
  const std::size_t k = index_of(name);
  if (is_primary[k]) throw Error(ErrorKind::Config, "landmark '" + name + "' is not secondary");
  return k - primary_count();
}

void SkeletonSpec::validate() const {
  const std::size_t n = names.size();
  if (parents.size() != n || offsets.size() != n || is_primary.size() != n)
    throw Error(ErrorKind::Config, "skeleton arrays differ in length");
  const std::size_t P = primary_count();
  for (std::size_t k = 0; k < n; ++k)
    if (is_primary[k] != (k < P)) throw Error(ErrorKind::Config, "skeleton must list primaries before secondaries");
  if (std::count(parents.begin(), parents.end(), -1) != 1) throw Error(ErrorKind::Config, "skeleton needs exactly one root");
  for (std::size_t k = 0; k < n; ++k) {
    // Walking up from any node must reach the root within n steps.
    int cur = static_cast<int>(k);
    std::size_t steps = 0;
    while (cur != -1) {
      if (cur < -1 || cur >= static_cast<int>(n) || ++steps > n)
        throw Error(ErrorKind::Config, "skeleton parent structure is not a tree");
      cur = parents[cur];
    }
  }
  for (std::size_t idx : {frame.origin, frame.axis, frame.plane, reference_pair.first, reference_pair.second})
    if (idx >= P) throw Error(ErrorKind::Config, "frame and reference landmarks must be primary");
}

SkeletonSpec default_skeleton() {
  SkeletonSpec s;
  struct Entry {
    const char* name;
    const char* parent;
    Vec3 offset;
    bool primary;
  };
  // x forward, y left, z up.
  const std::vector<Entry> entries = {
      {"nose", "head", {0.12, 0.0, -0.03}, true},
      {"head", "neck", {0.0, 0.0, 0.25}, true},
      {"neck", "spine_mid", {0.0, 0.0, 0.25}, true},
      {"r_shoulder", "neck", {0.0, -0.2, -0.03}, true},
      {"l_shoulder", "neck", {0.0, 0.2, -0.03}, true},
      {"r_hand", "r_elbow", {0.03, 0.0, -0.25}, true},
      {"l_hand", "l_elbow", {0.03, 0.0, -0.25}, true},
      {"hip", "", {0.0, 0.0, 0.0}, true},
      {"r_knee", "hip", {0.03, -0.12, -0.35}, true},
      {"l_knee", "hip", {0.03, 0.12, -0.35}, true},
      {"r_foot", "r_knee", {-0.03, 0.0, -0.35}, true},
      {"l_foot", "l_knee", {-0.03, 0.0, -0.35}, true},
      {"tail", "tail_mid", {-0.2, 0.0, -0.05}, true},
      {"r_elbow", "r_shoulder", {0.0, -0.03, -0.25}, false},
      {"l_elbow", "l_shoulder", {0.0, 0.03, -0.25}, false},
      {"r_ear", "head", {-0.03, -0.1, 0.05}, false},
      {"l_ear", "head", {-0.03, 0.1, 0.05}, false},
      {"spine_mid", "hip", {0.0, 0.0, 0.25}, false},
      {"tail_mid", "hip", {-0.2, 0.0, 0.0}, false},
  };
  for (const auto& e : entries) {
    s.names.emplace_back(e.name);
    s.offsets.push_back(e.offset);
    s.is_primary.push_back(e.primary);
  }
  for (const auto& e : entries) s.parents.push_back(std::string(e.parent).empty() ? -1 : static_cast<int>(s.index_of(e.parent)));
  s.frame = FrameSpec{s.primary_index("neck"), s.primary_index("hip"), s.primary_index("r_shoulder")};
  s.reference_pair = {s.primary_index("head"), s.primary_index("neck")};
  s.validate();
  return s;
}

PoseModel make_pose_model(const SkeletonSpec& spec, const PoseModelConfig& config) {
  spec.validate();
  const std::size_t angles = 3 * spec.landmark_count();
  if (config.rank > angles) throw Error(ErrorKind::Config, "pose model rank exceeds the joint-angle count");
  PoseModel m;
  m.mean = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(angles));
  m.basis = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(angles), static_cast<Eigen::Index>(config.rank));
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> normal;
  for (std::size_t k = 0; k < spec.landmark_count(); ++k) {
    const double amp = config.amplitude * joint_amplitude(spec.names[k]);
    for (std::size_t a = 0; a < 3; ++a)
      for (std::size_t r = 0; r < config.rank; ++r) m.basis(static_cast<Eigen::Index>(3 * k + a), static_cast<Eigen::Index>(r)) = amp * normal(rng) / std::sqrt(static_cast<double>(config.rank));
  }
  m.residual_sigma = config.residual_sigma;
  m.heading_range = config.heading_range;
  m.translation_range = config.translation_range;
  return m;
}

Pose3D forward_kinematics(const SkeletonSpec& spec, const Eigen::VectorXd& angles, double heading, const Vec3& translation) {
  const std::size_t n = spec.landmark_count();
  if (static_cast<std::size_t>(angles.size()) != 3 * n) throw Error(ErrorKind::Shape, "joint-angle vector has the wrong length");
  std::vector<Mat3> world_rot(n);
  std::vector<Vec3> pos(n);
  std::vector<bool> done(n, false);
  // Parents may appear after children in the listing; resolve recursively.
  auto solve = [&](auto&& self, std::size_t k) -> void {
    if (done[k]) return;
    const Mat3 local = rot_z(angles[3 * k + 2]) * rot_y(angles[3 * k + 1]) * rot_x(angles[3 * k]);
    const int p = spec.parents[k];
    if (p < 0) {
      world_rot[k] = rot_z(heading) * local;
      pos[k] = translation;
    } else {
      self(self, static_cast<std::size_t>(p));
      world_rot[k] = world_rot[p] * local;
      pos[k] = pos[p] + world_rot[k] * spec.offsets[k];
    }
    done[k] = true;
  };
  for (std::size_t k = 0; k < n; ++k) solve(solve, k);
  Pose3D pose;
  for (std::size_t k = 0; k < n; ++k) (spec.is_primary[k] ? pose.primary : pose.secondary).push_back(pos[k]);
  return pose;
}

Pose3D sample_pose(const SkeletonSpec& spec, const PoseModel& model, std::uint64_t seed) {
  if (model.angle_count() != 3 * spec.landmark_count()) throw Error(ErrorKind::Config, "pose model does not match the skeleton");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Eigen::VectorXd g(static_cast<Eigen::Index>(model.rank()));
  for (auto& v : g) v = normal(rng);
  Eigen::VectorXd angles = model.mean + model.basis * g;
  for (auto& a : angles) a = std::clamp(a + model.residual_sigma * normal(rng), -model.clamp, model.clamp);
  const double heading = model.heading_range * unit(rng);
  const Vec3 translation(model.translation_range * (2.0 * unit(rng) - 1.0), model.translation_range * (2.0 * unit(rng) - 1.0), 0.0);
  return forward_kinematics(spec, angles, heading, translation);
}

Rig build_rig(const RigSpec& spec) {
  if (spec.count < 2) throw Error(ErrorKind::Config, "a rig needs at least two cameras");
  if (spec.image_size <= 0 || !(spec.focal > 0.0) || !(spec.radius > 0.0)) throw Error(ErrorKind::Config, "invalid rig geometry");
  Rig rig;
  const bool ring = spec.arc_degrees >= 360.0;
  const double arc = spec.arc_degrees * std::numbers::pi / 180.0;
  for (std::size_t c = 0; c < spec.count; ++c) {
    const double theta = ring ? 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(spec.count)
                              : -0.5 * arc + arc * static_cast<double>(c) / static_cast<double>(spec.count - 1);
    const Vec3 centre(spec.radius * std::cos(theta), spec.radius * std::sin(theta), spec.height);
    const Vec3 forward = (spec.target - centre).normalized();
    const Vec3 right = forward.cross(Vec3::UnitZ()).normalized();
    const Vec3 down = forward.cross(right);
    CameraParams cam;
    cam.name = "cam" + std::to_string(c);
    cam.R.row(0) = right;
    cam.R.row(1) = down;
    cam.R.row(2) = forward;
    cam.t = -cam.R * centre;
    const double cxy = 0.5 * (spec.image_size - 1);
    cam.K << spec.focal, 0.0, cxy, 0.0, spec.focal, cxy, 0.0, 0.0, 1.0;
    cam.width = cam.height = spec.image_size;
    cam.validate();
    rig.push_back(std::move(cam));
  }
  return rig;
}

Pose2D project_pose(const Pose3D& pose, const CameraParams& cam) {
  auto one = [&](const Vec3& x, std::vector<Vec2>& pts, std::vector<bool>& vis) {
    const double z = geometry::depth(cam, x);
    if (z <= geometry::kMinDepth) {
      pts.emplace_back(Vec2::Zero());
      vis.push_back(false);
      return;
    }
    const Vec2 p = geometry::project(cam, x);
    pts.push_back(p);
    vis.push_back(p.x() >= 0.0 && p.y() >= 0.0 && p.x() <= cam.width - 1.0 && p.y() <= cam.height - 1.0);
  };
  Pose2D out;
  for (const auto& x : pose.primary) one(x, out.primary, out.primary_visible);
  for (const auto& x : pose.secondary) one(x, out.secondary, out.secondary_visible);
  return out;
}

Rendered render(const Pose3D& pose, const CameraParams& cam, const SkeletonSpec& spec, const RenderConfig& config,
                std::uint64_t seed) {
  const std::size_t P = spec.primary_count();
  if (pose.primary.size() != P || pose.secondary.size() != spec.secondary_count())
    throw Error(ErrorKind::Shape, "pose does not match the skeleton");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> jitter(-config.color_jitter, config.color_jitter);

  Rendered out;
  out.truth = project_pose(pose, cam);
  out.detected = out.truth;
  for (auto& p : out.detected.primary) p += config.keypoint_noise_px * Vec2(normal(rng), normal(rng));
  for (auto& p : out.detected.secondary) p += config.keypoint_noise_px * Vec2(normal(rng), normal(rng));

  const int W = cam.width, H = cam.height;
  Image img(3, H, W);
  for (auto& v : img.data) v = static_cast<float>(config.background + config.background_noise * normal(rng));

  auto landmark_px = [&](std::size_t k) -> const Vec2& {
    return spec.is_primary[k] ? out.truth.primary[k] : out.truth.secondary[k - P];
  };
  auto landmark_front = [&](std::size_t k) {
    const Vec3& x = spec.is_primary[k] ? pose.primary[k] : pose.secondary[k - P];
    return geometry::depth(cam, x) > geometry::kMinDepth;
  };
  auto composite = [&](int c, int y, int x, double v) {
    float& dst = img.at(c, y, x);
    dst = std::max(dst, static_cast<float>(v));
  };

  // Bones: faint grey segments between a landmark and its parent.
  const double bw2 = 2.0 * config.bone_width * config.bone_width;
  for (std::size_t k = 0; k < spec.landmark_count(); ++k) {
    const int p = spec.parents[k];
    if (p < 0 || !landmark_front(k) || !landmark_front(static_cast<std::size_t>(p))) continue;
    const Vec2 a = landmark_px(static_cast<std::size_t>(p)), b = landmark_px(k);
    const Vec2 ab = b - a;
    const double len2 = std::max(ab.squaredNorm(), 1e-12);
    const int x0 = std::max(0, static_cast<int>(std::floor(std::min(a.x(), b.x()) - 3)));
    const int x1 = std::min(W - 1, static_cast<int>(std::ceil(std::max(a.x(), b.x()) + 3)));
    const int y0 = std::max(0, static_cast<int>(std::floor(std::min(a.y(), b.y()) - 3)));
    const int y1 = std::min(H - 1, static_cast<int>(std::ceil(std::max(a.y(), b.y()) + 3)));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const Vec2 q(x, y);
        const double t = std::clamp((q - a).dot(ab) / len2, 0.0, 1.0);
        const double d2 = (q - (a + t * ab)).squaredNorm();
        const double v = config.bone_intensity * std::exp(-d2 / bw2);
        for (int c = 0; c < 3; ++c) composite(c, y, x, v);
      }
  }

  // Blobs: a fixed colour signature per landmark plus per-frame jitter. Blob
  // size does not depend on depth.
  const double s2 = 2.0 * config.blob_sigma * config.blob_sigma;
  const int reach = static_cast<int>(std::ceil(4.0 * config.blob_sigma));
  for (std::size_t k = 0; k < spec.landmark_count(); ++k) {
    if (!landmark_front(k)) continue;
    double colour[3];
    double amp = 1.0;
    if (spec.is_primary[k]) {
      const Colour& c = kPrimaryColours[k % std::size(kPrimaryColours)];
      colour[0] = c.r, colour[1] = c.g, colour[2] = c.b;
    } else {
      const double spread = config.secondary_color_spread;
      const auto j = static_cast<double>(k - P);
      colour[0] = 0.75 + spread * std::cos(2.1 * j);
      colour[1] = 0.75 + spread * std::sin(2.1 * j);
      colour[2] = 0.75 - spread * std::cos(1.3 * j);
      amp = config.secondary_amplitude;
    }
    for (double& c : colour) c = std::clamp(c + jitter(rng), 0.0, 1.0);
    const Vec2& p = landmark_px(k);
    const int cx = static_cast<int>(std::lround(p.x())), cy = static_cast<int>(std::lround(p.y()));
    for (int y = std::max(0, cy - reach); y <= std::min(H - 1, cy + reach); ++y)
      for (int x = std::max(0, cx - reach); x <= std::min(W - 1, cx + reach); ++x) {
        const double g = amp * std::exp(-((x - p.x()) * (x - p.x()) + (y - p.y()) * (y - p.y())) / s2);
        for (int c = 0; c < 3; ++c) composite(c, y, x, colour[c] * g);
      }
  }
  for (auto& v : img.data) v = std::clamp(v, 0.0f, 1.0f);
  out.image = std::move(img);
  return out;
}

bool MultiviewFrame::has_images() const {
  return !views.empty() && std::all_of(views.begin(), views.end(), [](const View& v) { return v.image.has_value(); });
}

std::vector<const MultiviewFrame*> Dataset::select(FrameSplit split, bool with_images) const {
  std::vector<const MultiviewFrame*> out;
  for (const auto& f : frames)
    if (f.split == split && (!with_images || f.has_images())) out.push_back(&f);
  return out;
}

Dataset generate_dataset(const GeneratorConfig& config) {
  Dataset ds;
  ds.config = config;
  ds.skeleton = default_skeleton();
  ds.rig = build_rig(config.rig);
  const PoseModel model = make_pose_model(ds.skeleton, config.pose_model);
  const std::size_t total = config.train_frames + config.test_frames;
  ds.frames.reserve(total);
  for (std::size_t i = 0; i < total; ++i) {
    MultiviewFrame f;
    f.id = i;
    f.split = i < config.train_frames ? FrameSplit::Train : FrameSplit::Test;
    const bool images = f.split == FrameSplit::Test || i < config.image_frames;
    const Pose3D pose = sample_pose(ds.skeleton, model, derive_seed(config.seed, i));
    for (std::size_t c = 0; c < ds.rig.size(); ++c) {
      View v;
      v.camera = c;
      if (images) {
        Rendered r = render(pose, ds.rig[c], ds.skeleton, config.render, derive_seed(config.seed, i, c + 1));
        v.image = std::move(r.image);
        v.truth = std::move(r.truth);
      } else {
        v.truth = project_pose(pose, ds.rig[c]);
      }
      f.views.push_back(std::move(v));
    }
    f.truth3d = pose;
    ds.frames.push_back(std::move(f));
  }
  return ds;
}

DatasetSplit make_splits(const std::vector<MultiviewFrame>& frames, const SkeletonSpec& skeleton, const Rig& rig,
                         double label_ratio, std::uint64_t seed, std::optional<double> primary_ratio) {
  if (!(label_ratio > 0.0) || label_ratio > 1.0) throw Error(ErrorKind::Config, "label ratio must lie in (0, 1]");
  const double pr = std::max(label_ratio, primary_ratio.value_or(0.5));
  if (pr > 1.0) throw Error(ErrorKind::Config, "primary label ratio must lie in (0, 1]");
  const std::size_t n = frames.size();
  const auto n_x = static_cast<std::size_t>(std::llround(label_ratio * static_cast<double>(n)));
  const auto n_z = static_cast<std::size_t>(std::llround(pr * static_cast<double>(n)));
  if (n_x == 0) throw Error(ErrorKind::Config, "label ratio leaves no labeled frames");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(derive_seed(seed, 0x5b17));
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<int> level(n, 0);  // 2: D_X, 1: D_Z only, 0: unlabeled
  for (std::size_t r = 0; r < n; ++r) level[order[r]] = r < n_x ? 2 : (r < n_z ? 1 : 0);

  DatasetSplit split;
  split.skeleton = skeleton;
  split.rig = rig;
  split.frames.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    MultiviewFrame f = frames[i];
    if (level[i] < 2) f.truth3d.reset();
    for (auto& v : f.views) {
      if (level[i] == 0) {
        v.truth.reset();
      } else if (level[i] == 1 && v.truth) {
        std::fill(v.truth->secondary.begin(), v.truth->secondary.end(), Vec2::Zero());
        std::fill(v.truth->secondary_visible.begin(), v.truth->secondary_visible.end(), false);
      }
    }
    if (level[i] >= 1) split.labeled_primary.push_back(i);
    if (level[i] == 2) split.labeled_secondary.push_back(i);
    else split.unlabeled.push_back(i);
    split.frames.push_back(std::move(f));
  }
  return split;
}

}  // namespace seclm
