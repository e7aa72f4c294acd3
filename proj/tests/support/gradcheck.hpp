#pragma once

// Finite-difference gradient checking and small geometric fixtures shared by
// the unit tests and the acceptance binary.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include "seclm/autodiff.hpp"
#include "seclm/geometry.hpp"

namespace seclm::testing {

/// Builds a scalar loss on `tape` from the leaf `x`.
using ScalarFn = std::function<ad::Var(ad::Tape& tape, const ad::Var& x)>;

struct GradCheck {
  double max_abs_error = 0.0;
  double scale = 0.0;  // max |numeric gradient|
  /// max |a − n| / max(|a|, |n|) over entries where either exceeds 1e-8.
  double max_elementwise = 0.0;
  double worst_analytic = 0.0, worst_numeric = 0.0;  // entry attaining max_elementwise
  double relative() const { return max_abs_error / std::max(scale, 1e-12); }
};

/// Central differences against the tape gradient. The error is relative to
/// the largest numeric gradient component, so tiny components cannot blow it up.
inline GradCheck check_gradient(const ScalarFn& f, const ad::Tensor& x0, double h = 1e-6) {
  ad::Tape tape;
  const ad::Var x = tape.leaf(x0);
  const ad::Var y = f(tape, x);
  const ad::Tensor g = tape.backward(y).of(x);
  GradCheck out;
  ad::Tensor xp = x0;
  for (std::size_t i = 0; i < x0.size(); ++i) {
    auto eval = [&](double v) {
      xp[i] = v;
      ad::Tape t;
      const double r = f(t, t.leaf(xp)).item();
      xp[i] = x0[i];
      return r;
    };
    // Five-point stencil: truncation error O(h⁴).
    const double num = (8.0 * (eval(x0[i] + h) - eval(x0[i] - h)) - (eval(x0[i] + 2.0 * h) - eval(x0[i] - 2.0 * h))) / (12.0 * h);
    out.max_abs_error = std::max(out.max_abs_error, std::abs(num - g[i]));
    out.scale = std::max(out.scale, std::abs(num));
    const double mag = std::max(std::abs(num), std::abs(g[i]));
    if (mag >= 1e-8 && std::abs(num - g[i]) / mag > out.max_elementwise) {
      out.max_elementwise = std::abs(num - g[i]) / mag;
      out.worst_analytic = g[i];
      out.worst_numeric = num;
    }
  }
  return out;
}

inline ad::Tensor random_tensor(ad::Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  ad::Tensor t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (double& v : t.data()) v = u(rng);
  return t;
}

/// Pinhole camera at `centre` looking at `target` (rows of R: right, down, forward).
inline CameraParams look_at(const Vec3& centre, const Vec3& target, double focal = 100.0, int size = 64) {
  CameraParams cam;
  const Vec3 forward = (target - centre).normalized();
  Vec3 up = Vec3::UnitZ();
  if (std::abs(forward.dot(up)) > 0.99) up = Vec3::UnitY();
  const Vec3 right = forward.cross(up).normalized();
  const Vec3 down = forward.cross(right);
  cam.R.row(0) = right;
  cam.R.row(1) = down;
  cam.R.row(2) = forward;
  cam.t = -cam.R * centre;
  const double c = 0.5 * (size - 1);
  cam.K << focal, 0.0, c, 0.0, focal, c, 0.0, 0.0, 1.0;
  cam.width = cam.height = size;
  return cam;
}

inline Vec3 random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  return Vec3(n(rng), n(rng), n(rng)).normalized();
}

inline Mat3 random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
  return q.normalized().toRotationMatrix();
}

/// Two cameras on a sphere of radius `radius` around the origin, at least
/// `min_angle` radians apart as seen from the origin.
inline std::pair<CameraParams, CameraParams> random_camera_pair(std::mt19937_64& rng, double radius = 4.0, double min_angle = 0.3) {
  for (;;) {
    const Vec3 a = random_unit(rng) * radius, b = random_unit(rng) * radius;
    if (std::acos(std::clamp(a.normalized().dot(b.normalized()), -1.0, 1.0)) < min_angle) continue;
    return {look_at(a, Vec3::Zero()), look_at(b, Vec3::Zero())};
  }
}

}  // namespace seclm::testing
