#include "seclm/geometry.hpp"

#include <cmath>
#include <fstream>

#include "seclm/error.hpp"

namespace seclm {

Mat34 CameraParams::projection_matrix() const {
  Mat34 Rt;
  Rt.leftCols<3>() = R;
  Rt.col(3) = t;
  return K * Rt;
}

void CameraParams::validate() const {
  if (!R.allFinite() || !K.allFinite() || !t.allFinite())
    throw Error(ErrorKind::Precondition, "camera '" + name + "' has non-finite parameters");
  if ((R * R.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-9 || std::abs(R.determinant() - 1.0) > 1e-9)
    throw Error(ErrorKind::Precondition, "camera '" + name + "' rotation is not in SO(3)");
  if (K(1, 0) != 0.0 || K(2, 0) != 0.0 || K(2, 1) != 0.0 || K(0, 0) <= 0.0 || K(1, 1) <= 0.0)
    throw Error(ErrorKind::Precondition, "camera '" + name + "' intrinsics must be upper-triangular with positive focal lengths");
  if (width <= 0 || height <= 0) throw Error(ErrorKind::Precondition, "camera '" + name + "' has no image size");
}

Pose2D Pose2D::all_visible(std::vector<Vec2> primary, std::vector<Vec2> secondary) {
  Pose2D p;
  p.primary_visible.assign(primary.size(), true);
  p.secondary_visible.assign(secondary.size(), true);
  p.primary = std::move(primary);
  p.secondary = std::move(secondary);
  return p;
}

const Vec2& Pose2D::at(std::size_t k) const {
  return k < primary.size() ? primary[k] : secondary.at(k - primary.size());
}

bool Pose2D::visible(std::size_t k) const {
  return k < primary.size() ? primary_visible[k] : secondary_visible.at(k - primary.size());
}

SimilarityTransform SimilarityTransform::inverse() const {
  SimilarityTransform inv;
  inv.s = 1.0 / s;
  inv.R = R.transpose();
  inv.t = -(R.transpose() * t) / s;
  return inv;
}

SimilarityTransform SimilarityTransform::compose(const SimilarityTransform& other) const {
  SimilarityTransform c;
  c.s = s * other.s;
  c.R = R * other.R;
  c.t = s * (R * other.t) + t;
  return c;
}

void SimilarityTransform::validate() const {
  if (!(s > 0.0) || !std::isfinite(s)) throw Error(ErrorKind::Precondition, "similarity scale must be positive");
  if ((R * R.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-9 || std::abs(R.determinant() - 1.0) > 1e-9)
    throw Error(ErrorKind::Precondition, "similarity rotation is not in SO(3)");
}

namespace geometry {

double depth(const CameraParams& cam, const Vec3& x) { return (cam.R * x + cam.t).z(); }

Vec2 project(const CameraParams& cam, const Vec3& x) {
  const Vec3 h = cam.K * (cam.R * x + cam.t);
  const double z = (cam.R * x + cam.t).z();
  if (std::abs(z) <= kMinDepth) throw Error(ErrorKind::Degenerate, "projection of a point on the camera plane of '" + cam.name + "'");
  return {h.x() / h.z(), h.y() / h.z()};
}

Triangulation triangulate_dlt(const Vec2& zi, const Vec2& zj, const CameraParams& cam_i, const CameraParams& cam_j) {
  if (!zi.allFinite() || !zj.allFinite()) throw Error(ErrorKind::Precondition, "triangulation input is not finite");
  if ((cam_i.center() - cam_j.center()).norm() < kMinBaseline)
    throw Error(ErrorKind::Degenerate, "triangulation from cameras with zero baseline");
  const Mat34 Pi = cam_i.projection_matrix();
  const Mat34 Pj = cam_j.projection_matrix();
  Eigen::Matrix4d A;
  A.row(0) = zi.x() * Pi.row(2) - Pi.row(0);
  A.row(1) = zi.y() * Pi.row(2) - Pi.row(1);
  A.row(2) = zj.x() * Pj.row(2) - Pj.row(0);
  A.row(3) = zj.y() * Pj.row(2) - Pj.row(1);
  const Eigen::Matrix<double, 4, 3> M = A.leftCols<3>();
  const Eigen::Vector4d b = -A.col(3);
  Eigen::JacobiSVD<Eigen::Matrix<double, 4, 3>> svd(M, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  Triangulation out;
  out.condition_number = sv(2) > 0.0 ? sv(0) / sv(2) : std::numeric_limits<double>::infinity();
  out.low_confidence = !(out.condition_number <= kMaxConditionNumber);
  out.point = svd.solve(b);
  return out;
}

SimilarityTransform canonical_transform(std::span<const Vec3> primary, const FrameSpec& frame) {
  if (frame.origin >= primary.size() || frame.axis >= primary.size() || frame.plane >= primary.size())
    throw Error(ErrorKind::Precondition, "frame landmark index out of range");
  const Vec3& a = primary[frame.origin];
  const Vec3 d = primary[frame.axis] - a;
  const double len = d.norm();
  if (!(len > 1e-12)) throw Error(ErrorKind::Degenerate, "spine limb has zero length");
  const Vec3 v = primary[frame.plane] - a;
  // Area of the frame triangle once the spine is scaled to unit length.
  const double area = 0.5 * d.cross(v).norm() / (len * len);
  if (!(area > kMinFrameArea)) throw Error(ErrorKind::Degenerate, "frame-defining landmarks are collinear");
  const Vec3 e1 = d / len;
  const Vec3 e2 = (v - v.dot(e1) * e1).normalized();
  const Vec3 e3 = e1.cross(e2);
  SimilarityTransform T;
  T.R.row(0) = e1;
  T.R.row(1) = e2;
  T.R.row(2) = e3;
  T.s = 1.0 / len;
  T.t = -T.s * (T.R * a);
  return T;
}

Pose3D transform_pose(const Pose3D& pose, const SimilarityTransform& T) {
  Pose3D out = pose;
  for (auto& p : out.primary) p = T.apply(p);
  for (auto& p : out.secondary) p = T.apply(p);
  return out;
}

std::pair<Pose3D, SimilarityTransform> normalize_pose(const Pose3D& pose, const FrameSpec& frame) {
  const SimilarityTransform T = canonical_transform(pose.primary, frame);
  Pose3D out = transform_pose(pose, T);
  out.canonical = true;
  return {std::move(out), T};
}

SimilarityTransform procrustes_align(std::span<const Vec3> source, std::span<const Vec3> target) {
  if (source.size() != target.size() || source.size() < 3)
    throw Error(ErrorKind::Precondition, "procrustes alignment needs at least 3 corresponding points");
  const auto n = static_cast<double>(source.size());
  Vec3 mu_s = Vec3::Zero(), mu_t = Vec3::Zero();
  for (std::size_t i = 0; i < source.size(); ++i) {
    mu_s += source[i];
    mu_t += target[i];
  }
  mu_s /= n;
  mu_t /= n;
  Mat3 cov = Mat3::Zero();
  double var_s = 0.0;
  for (std::size_t i = 0; i < source.size(); ++i) {
    cov += (target[i] - mu_t) * (source[i] - mu_s).transpose();
    var_s += (source[i] - mu_s).squaredNorm();
  }
  cov /= n;
  var_s /= n;
  if (!(var_s > 0.0)) throw Error(ErrorKind::Degenerate, "procrustes source points coincide");
  Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 S = Mat3::Identity();
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) S(2, 2) = -1.0;
  SimilarityTransform T;
  T.R = svd.matrixU() * S * svd.matrixV().transpose();
  T.s = (svd.singularValues().asDiagonal() * S).trace() / var_s;
  T.t = mu_t - T.s * (T.R * mu_s);
  return T;
}

Similarity2D canonical_transform_2d(std::span<const Vec2> primary, const FrameSpec& frame) {
  if (frame.origin >= primary.size() || frame.axis >= primary.size())
    throw Error(ErrorKind::Precondition, "frame landmark index out of range");
  const Vec2& a = primary[frame.origin];
  const Vec2 d = primary[frame.axis] - a;
  const double len = d.norm();
  if (!(len > 1e-12)) throw Error(ErrorKind::Degenerate, "spine limb has zero length");
  const double c = d.x() / len, s = d.y() / len;
  Similarity2D T;
  T.R << c, s, -s, c;
  T.s = 1.0 / len;
  T.t = -T.s * (T.R * a);
  return T;
}

nlohmann::json camera_to_json(const CameraParams& cam) {
  std::vector<double> K, R;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) {
      K.push_back(cam.K(r, c));
      R.push_back(cam.R(r, c));
    }
  return {{"name", cam.name}, {"K", K}, {"R", R}, {"t", {cam.t.x(), cam.t.y(), cam.t.z()}}, {"width", cam.width}, {"height", cam.height}};
}

CameraParams camera_from_json(const nlohmann::json& j) {
  try {
    CameraParams cam;
    cam.name = j.at("name").get<std::string>();
    const auto K = j.at("K").get<std::vector<double>>();
    const auto R = j.at("R").get<std::vector<double>>();
    const auto t = j.at("t").get<std::vector<double>>();
    if (K.size() != 9 || R.size() != 9 || t.size() != 3) throw Error(ErrorKind::Data, "camera '" + cam.name + "' has malformed K/R/t");
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) {
        cam.K(r, c) = K[r * 3 + c];
        cam.R(r, c) = R[r * 3 + c];
      }
    cam.t = Vec3(t[0], t[1], t[2]);
    cam.width = j.at("width").get<int>();
    cam.height = j.at("height").get<int>();
    return cam;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Data, std::string("malformed camera record: ") + e.what());
  }
}

void save_rig(const std::filesystem::path& path, const Rig& rig) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& cam : rig) arr.push_back(camera_to_json(cam));
  std::ofstream os(path);
  if (!os) throw Error(ErrorKind::Data, "cannot write rig file " + path.string());
  os << arr.dump(2) << '\n';
}

Rig load_rig(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorKind::Data, "cannot read rig file " + path.string());
  nlohmann::json arr;
  try {
    is >> arr;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Data, "malformed rig file " + path.string() + ": " + e.what());
  }
  if (!arr.is_array()) throw Error(ErrorKind::Data, "rig file must hold a JSON array");
  Rig rig;
  for (const auto& j : arr) {
    rig.push_back(camera_from_json(j));
    rig.back().validate();
  }
  return rig;
}

}  // namespace geometry

namespace geometry::ad {

using seclm::ad::Tape;
using seclm::ad::Tensor;
namespace op = seclm::ad;

Var project_points(const Var& points, const CameraParams& cam) {
  const Tensor& pv = points.value();
  if (pv.rank() != 2 || pv.cols() != 3) throw Error(ErrorKind::Shape, "project_points expects (n, 3) points, got " + op::to_string(pv.shape()));
  const std::size_t n = pv.rows();
  const Mat3 KR = cam.K * cam.R;
  const Vec3 Kt = cam.K * cam.t;
  Tensor out({n, 2});
  std::vector<double> homog(3 * n);
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 x(pv.at(i, 0), pv.at(i, 1), pv.at(i, 2));
    const double z = (cam.R * x + cam.t).z();
    if (std::abs(z) <= kMinDepth) throw Error(ErrorKind::Degenerate, "projection of a point on the camera plane of '" + cam.name + "'");
    const Vec3 h = KR * x + Kt;
    out.at(i, 0) = h.x() / h.z();
    out.at(i, 1) = h.y() / h.z();
    homog[3 * i] = h.x();
    homog[3 * i + 1] = h.y();
    homog[3 * i + 2] = h.z();
  }
  const op::NodeId pp = points.id();
  return points.tape().record(std::move(out), {pp}, [pp, KR, homog = std::move(homog), n](const Tape&, op::NodeId, const Tensor& g, op::GradSink& sink) {
    Tensor& gp = sink.buffer(pp);
    for (std::size_t i = 0; i < n; ++i) {
      const double hx = homog[3 * i], hy = homog[3 * i + 1], hz = homog[3 * i + 2];
      const double gu = g[2 * i], gv = g[2 * i + 1];
      const Vec3 gh(gu / hz, gv / hz, -(gu * hx + gv * hy) / (hz * hz));
      const Vec3 gx = KR.transpose() * gh;
      for (int c = 0; c < 3; ++c) gp[3 * i + c] += gx[c];
    }
  });
}

namespace {

Var constant_vec(Tape& tape, const Eigen::Ref<const Eigen::VectorXd>& v) {
  return tape.constant(Tensor::vector(std::vector<double>(v.data(), v.data() + v.size())));
}

}  // namespace

Var triangulate(const Var& zi, const Var& zj, const CameraParams& cam_i, const CameraParams& cam_j) {
  if (zi.size() != 2 || zj.size() != 2) throw Error(ErrorKind::Shape, "triangulate expects 2-vectors, got " + op::to_string(zi.shape()) + " and " + op::to_string(zj.shape()));
  if ((cam_i.center() - cam_j.center()).norm() < kMinBaseline)
    throw Error(ErrorKind::Degenerate, "triangulation from cameras with zero baseline");
  Tape& tape = zi.tape();
  std::vector<Var> rows, rhs;
  for (const auto& [z, cam] : {std::pair<const Var&, const CameraParams&>{zi, cam_i}, {zj, cam_j}}) {
    const Mat34 P = cam.projection_matrix();
    for (int c = 0; c < 2; ++c) {
      const Var coord = op::slice(z, c, 1);
      const Eigen::Vector3d p2 = P.row(2).head<3>().transpose();
      const Eigen::Vector3d pc = P.row(c).head<3>().transpose();
      rows.push_back(op::scale_by(coord, constant_vec(tape, p2)) - constant_vec(tape, pc));
      rhs.push_back(op::add_scalar(op::scale(coord, -P(2, 3)), P(c, 3)));
    }
  }
  const Var M = op::stack_rows(rows);
  const Var b = op::concat(rhs);
  const Var Mt = op::transpose(M);
  return op::solve(op::matmul(Mt, M), op::matmul(Mt, b));
}

CanonicalFrame canonical_frame(const Var& primary, const FrameSpec& frame) {
  const Tensor& pv = primary.value();
  if (pv.rank() != 2 || pv.cols() != 3) throw Error(ErrorKind::Shape, "canonical_frame expects (P, 3) primaries, got " + op::to_string(pv.shape()));
  // Reuse the plain routine for the degeneracy checks.
  std::vector<Vec3> pts(pv.rows());
  for (std::size_t i = 0; i < pv.rows(); ++i) pts[i] = Vec3(pv.at(i, 0), pv.at(i, 1), pv.at(i, 2));
  (void)canonical_transform(pts, frame);

  Tape& tape = primary.tape();
  const Var one = tape.constant(Tensor::scalar(1.0));
  const Var a = op::row(primary, frame.origin);
  const Var d = op::row(primary, frame.axis) - a;
  const Var len = op::l2_norm(d);
  const Var e1 = op::scale_by(op::div(one, len), d);
  const Var v = op::row(primary, frame.plane) - a;
  const Var u = v - op::scale_by(op::dot(v, e1), e1);
  const Var e2 = op::scale_by(op::div(one, op::l2_norm(u)), u);
  const Var e3 = op::cross(e1, e2);
  return {a, op::stack_rows({e1, e2, e3}), len};
}

Var to_canonical(const CanonicalFrame& frame, const Var& points) {
  const Var one = points.tape().constant(Tensor::scalar(1.0));
  const Var centered = op::add_row(points, op::neg(frame.origin));
  return op::scale_by(op::div(one, frame.length), op::matmul(centered, op::transpose(frame.rotation)));
}

Var from_canonical(const CanonicalFrame& frame, const Var& points) {
  return op::add_row(op::scale_by(frame.length, op::matmul(points, frame.rotation)), frame.origin);
}

}  // namespace geometry::ad

}  // namespace seclm
