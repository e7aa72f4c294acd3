#include "seclm/subspace.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "seclm/error.hpp"

namespace seclm {

namespace {

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const std::size_t m = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(m), v.end());
  const double hi = v[m];
  if (v.size() % 2 == 1) return hi;
  return 0.5 * (hi + *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(m)));
}

bool all_visible(const Pose2D& p) {
  return std::all_of(p.primary_visible.begin(), p.primary_visible.end(), [](bool b) { return b; }) &&
         std::all_of(p.secondary_visible.begin(), p.secondary_visible.end(), [](bool b) { return b; });
}

Eigen::VectorXd flatten(const std::vector<Vec3>& pts) {
  Eigen::VectorXd v(3 * static_cast<Eigen::Index>(pts.size()));
  for (std::size_t k = 0; k < pts.size(); ++k) v.segment<3>(3 * static_cast<Eigen::Index>(k)) = pts[k];
  return v;
}

Eigen::MatrixXd stack(const std::vector<Eigen::VectorXd>& rows) {
  if (rows.empty()) return {};
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
  return m;
}

}  // namespace

void PoseBasis::validate() const {
  if (dim != 2 && dim != 3) throw Error(ErrorKind::Precondition, "pose basis dimension must be 2 or 3");
  if (static_cast<std::size_t>(mean.size()) != rows() || static_cast<std::size_t>(bases.rows()) != rows())
    throw Error(ErrorKind::Shape, "pose basis rows do not match " + std::to_string(primary_count) + "+" + std::to_string(secondary_count) + " landmarks");
  const Eigen::MatrixXd gram = bases.transpose() * bases;
  if (!gram.isIdentity(1e-9)) throw Error(ErrorKind::Precondition, "pose basis vectors are not orthonormal");
}

Eigen::VectorXd pose_vector(const Pose3D& pose) {
  std::vector<Vec3> all = pose.primary;
  all.insert(all.end(), pose.secondary.begin(), pose.secondary.end());
  return flatten(all);
}

Eigen::VectorXd pose_vector(const Pose2D& pose) {
  Eigen::VectorXd v(2 * static_cast<Eigen::Index>(pose.landmark_count()));
  for (std::size_t k = 0; k < pose.landmark_count(); ++k) v.segment<2>(2 * static_cast<Eigen::Index>(k)) = pose.at(k);
  return v;
}

FitResult fit_basis(const Eigen::MatrixXd& samples, std::size_t primary_count, std::size_t secondary_count, int dim,
                    std::optional<std::size_t> count, double variance_target) {
  FitResult r;
  PoseBasis& b = r.basis;
  b.primary_count = primary_count;
  b.secondary_count = secondary_count;
  b.dim = dim;
  if (dim != 2 && dim != 3) throw Error(ErrorKind::Config, "pose basis dimension must be 2 or 3");
  if (static_cast<std::size_t>(samples.cols()) != b.rows())
    throw Error(ErrorKind::Shape, "pose samples have " + std::to_string(samples.cols()) + " columns, expected " + std::to_string(b.rows()));
  const auto n = static_cast<std::size_t>(samples.rows());
  if (n < 2 || (count && n < *count + 1))
    throw Error(ErrorKind::Precondition, "fit_basis needs at least B+1 samples, got " + std::to_string(n));
  if (!(variance_target > 0.0 && variance_target <= 1.0)) throw Error(ErrorKind::Config, "variance target must lie in (0, 1]");

  b.mean = samples.colwise().mean().transpose();
  const Eigen::MatrixXd centered = samples.rowwise() - b.mean.transpose();
  Eigen::BDCSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);
  const Eigen::VectorXd var = svd.singularValues().array().square() / static_cast<double>(n - 1);
  b.total_variance = var.sum();
  std::size_t rank = 0;
  while (rank < static_cast<std::size_t>(var.size()) && var[static_cast<Eigen::Index>(rank)] > 1e-12 * std::max(b.total_variance, 1e-300)) ++rank;
  if (b.total_variance <= 1e-300) rank = 0;

  std::size_t want = 0;
  if (count) {
    want = *count;
  } else if (rank > 0) {
    double acc = 0.0;
    while (want < rank && acc < variance_target * b.total_variance) acc += var[static_cast<Eigen::Index>(want++)];
  }
  if (want > rank) {
    r.warnings.push_back("data rank " + std::to_string(rank) + " is below the requested " + std::to_string(want) + " bases");
    want = rank;
  }
  if (rank == 0) r.warnings.push_back("pose samples have zero variance; no bases returned");

  b.bases = svd.matrixV().leftCols(static_cast<Eigen::Index>(want));
  b.explained = var.head(static_cast<Eigen::Index>(want));
  for (Eigen::Index c = 0; c < b.bases.cols(); ++c) {
    Eigen::Index arg = 0;
    b.bases.col(c).cwiseAbs().maxCoeff(&arg);
    if (b.bases(arg, c) < 0) b.bases.col(c) *= -1.0;
  }
  return r;
}

std::size_t PrimaryConfig::included() const { return static_cast<std::size_t>(std::count(include.begin(), include.end(), true)); }

void PrimaryConfig::validate(std::size_t primary_count) const {
  if (include.size() != primary_count)
    throw Error(ErrorKind::Config, "primary config '" + id + "' masks " + std::to_string(include.size()) + " landmarks, expected " + std::to_string(primary_count));
  if (included() < 3) throw Error(ErrorKind::Config, "primary config '" + id + "' includes fewer than 3 landmarks");
}

std::vector<PrimaryConfig> default_primary_configs(const SkeletonSpec& skeleton) {
  const std::size_t P = skeleton.primary_count();
  auto without = [&](std::string id, std::initializer_list<const char*> names) {
    PrimaryConfig c{std::move(id), std::vector<bool>(P, true)};
    for (const char* n : names) c.include[skeleton.primary_index(n)] = false;
    return c;
  };
  return {
      without("full", {}),
      without("no_wrists", {"r_hand", "l_hand"}),
      without("no_left_arm", {"l_hand", "l_shoulder"}),
      without("no_right_arm", {"r_hand", "r_shoulder"}),
      without("no_legs", {"r_knee", "l_knee", "r_foot", "l_foot"}),
      without("no_head", {"head", "nose"}),
      without("no_tail", {"tail"}),
  };
}

Reconstruction reconstruct_secondary(const PoseBasis& basis, const Eigen::VectorXd& primary, const PrimaryConfig& config,
                                     const std::optional<Eigen::VectorXd>& truth) {
  config.validate(basis.primary_count);
  const auto pr = static_cast<Eigen::Index>(basis.primary_rows());
  const auto sr = static_cast<Eigen::Index>(basis.rows()) - pr;
  if (primary.size() != pr) throw Error(ErrorKind::Shape, "primary vector has " + std::to_string(primary.size()) + " entries, basis expects " + std::to_string(pr));
  if (truth && truth->size() != sr) throw Error(ErrorKind::Shape, "secondary truth has " + std::to_string(truth->size()) + " entries, basis expects " + std::to_string(sr));
  const auto B = static_cast<Eigen::Index>(basis.count());
  Reconstruction r;
  r.alpha = Eigen::VectorXd::Zero(B);
  if (B > 0) {
    std::vector<Eigen::Index> keep;
    for (std::size_t k = 0; k < basis.primary_count; ++k)
      if (config.include[k])
        for (int d = 0; d < basis.dim; ++d) keep.push_back(static_cast<Eigen::Index>(basis.dim * k + d));
    const auto m = static_cast<Eigen::Index>(keep.size());
    Eigen::MatrixXd A(m, B);
    Eigen::VectorXd y(m);
    for (Eigen::Index i = 0; i < m; ++i) {
      A.row(i) = basis.bases.row(keep[i]);
      y[i] = primary[keep[i]] - basis.mean[keep[i]];
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
    qr.setThreshold(1e-10);
    if (qr.rank() == B) {
      r.alpha = qr.solve(y);
    } else {
      const Eigen::MatrixXd AtA = A.transpose() * A;
      const double lambda = 1e-8 * std::max(AtA.trace(), 1e-300);
      r.alpha = (AtA + lambda * Eigen::MatrixXd::Identity(B, B)).ldlt().solve(A.transpose() * y);
      r.ridge_fallback = true;
    }
  }
  r.secondary = basis.mean.tail(sr) + basis.bases.bottomRows(sr) * r.alpha;
  if (truth) r.error = (r.secondary - *truth).squaredNorm();
  return r;
}

Checkpoint basis_to_checkpoint(const PoseBasis& basis, const std::string& prefix) {
  Checkpoint c;
  const std::size_t D = basis.rows(), B = basis.count();
  c.parameters[prefix + "/mean"] = ad::Tensor({D}, std::vector<double>(basis.mean.data(), basis.mean.data() + D));
  std::vector<double> rowmajor(D * B);
  for (std::size_t i = 0; i < D; ++i)
    for (std::size_t j = 0; j < B; ++j) rowmajor[i * B + j] = basis.bases(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  c.parameters[prefix + "/bases"] = ad::Tensor({D, B}, std::move(rowmajor));
  c.parameters[prefix + "/explained"] = ad::Tensor({B}, std::vector<double>(basis.explained.data(), basis.explained.data() + B));
  c.metadata = {{"primary_count", basis.primary_count}, {"secondary_count", basis.secondary_count}, {"dim", basis.dim},
                {"total_variance", basis.total_variance}};
  return c;
}

PoseBasis basis_from_checkpoint(const Checkpoint& ckpt, const std::string& prefix) {
  auto find = [&](const std::string& key) -> const ad::Tensor& {
    auto it = ckpt.parameters.find(prefix + "/" + key);
    if (it == ckpt.parameters.end()) throw Error(ErrorKind::Data, "basis checkpoint lacks '" + prefix + "/" + key + "'");
    return it->second;
  };
  PoseBasis b;
  try {
    b.primary_count = ckpt.metadata.at("primary_count").get<std::size_t>();
    b.secondary_count = ckpt.metadata.at("secondary_count").get<std::size_t>();
    b.dim = ckpt.metadata.at("dim").get<int>();
    b.total_variance = ckpt.metadata.at("total_variance").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Data, std::string("basis checkpoint metadata: ") + e.what());
  }
  const ad::Tensor& mean = find("mean");
  const ad::Tensor& bases = find("bases");
  const ad::Tensor& explained = find("explained");
  if (bases.rank() != 2) throw Error(ErrorKind::Data, "basis checkpoint bases must be a matrix");
  b.mean = Eigen::Map<const Eigen::VectorXd>(mean.storage().data(), static_cast<Eigen::Index>(mean.size()));
  b.bases = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      bases.storage().data(), static_cast<Eigen::Index>(bases.rows()), static_cast<Eigen::Index>(bases.cols()));
  b.explained = Eigen::Map<const Eigen::VectorXd>(explained.storage().data(), static_cast<Eigen::Index>(explained.size()));
  b.validate();
  return b;
}

SubspaceReport compare_2d_3d(const std::vector<const MultiviewFrame*>& train, const std::vector<const MultiviewFrame*>& test,
                             const Rig& rig, const SkeletonSpec& skeleton, const std::vector<PrimaryConfig>& configs,
                             const SubspaceStudyConfig& study) {
  const std::size_t P = skeleton.primary_count(), S = skeleton.secondary_count();
  if (study.run_3d && (rig.size() < 2 || study.view_i == study.view_j || std::max(study.view_i, study.view_j) >= rig.size()))
    throw Error(ErrorKind::Precondition, "3D mode needs two distinct cameras to triangulate");
  for (const auto& c : configs) c.validate(P);
  SubspaceReport report;

  // A frame is usable when every view carries fully visible 2D truth.
  auto usable = [&](const MultiviewFrame& f) {
    if (f.views.size() != rig.size()) return false;
    return std::all_of(f.views.begin(), f.views.end(), [](const View& v) { return v.truth && all_visible(*v.truth); });
  };
  std::vector<const MultiviewFrame*> tr, te;
  for (const auto* f : train)
    if (usable(*f)) tr.push_back(f);
  for (const auto* f : test)
    if (usable(*f)) te.push_back(f);
  if (tr.size() != train.size() || te.size() != test.size())
    report.warnings.push_back(std::to_string(train.size() - tr.size() + test.size() - te.size()) + " frames dropped for missing or invisible 2D truth");
  if (te.empty()) throw Error(ErrorKind::Data, "subspace study has no usable test frames");

  auto triangulated = [&](const MultiviewFrame& f) {
    const Pose2D& a = *f.views[study.view_i].truth;
    const Pose2D& b = *f.views[study.view_j].truth;
    Pose3D pose;
    for (std::size_t k = 0; k < P + S; ++k) {
      const Vec3 x = geometry::triangulate_dlt(a.at(k), b.at(k), rig[study.view_i], rig[study.view_j]).point;
      (k < P ? pose.primary : pose.secondary).push_back(x);
    }
    return pose;
  };

  // 3D training data; it also fixes B when none is given.
  struct Canon3 {
    Pose3D canonical;
    SimilarityTransform T;
    const MultiviewFrame* frame;
  };
  std::vector<Eigen::VectorXd> rows3;
  std::size_t degenerate = 0;
  if (study.run_3d || !study.bases) {
    if (rig.size() < 2) throw Error(ErrorKind::Precondition, "choosing B from the 3D fit needs two cameras");
    for (const auto* f : tr) {
      try {
        rows3.push_back(pose_vector(geometry::normalize_pose(triangulated(*f), skeleton.frame).first));
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::Degenerate) throw;
        ++degenerate;
      }
    }
  }
  std::optional<FitResult> fit3;
  if (!rows3.empty()) fit3 = fit_basis(stack(rows3), P, S, 3, study.bases, study.variance_target);
  report.bases = study.bases ? *study.bases : (fit3 ? fit3->basis.count() : 0);
  if (!study.bases && !fit3) throw Error(ErrorKind::Data, "no training poses to choose B from");
  report.train_poses_3d = rows3.size();
  report.test_frames = te.size();

  std::map<std::string, SubspaceSummary> summary;
  for (const auto& c : configs) summary[c.id].config = c.id;

  if (study.run_3d) {
    const PoseBasis& basis = fit3->basis;
    for (const auto& w : fit3->warnings) report.warnings.push_back("3d fit: " + w);
    std::vector<Canon3> tests;
    for (const auto* f : te) {
      try {
        auto [canon, T] = geometry::normalize_pose(triangulated(*f), skeleton.frame);
        tests.push_back({std::move(canon), T, f});
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::Degenerate) throw;
        ++degenerate;
      }
    }
    for (const auto& c : configs) {
      std::vector<std::vector<double>> px(S), cn(S);
      for (const auto& t : tests) {
        const Eigen::VectorXd v = pose_vector(t.canonical);
        const auto rec = reconstruct_secondary(basis, v.head(static_cast<Eigen::Index>(3 * P)), c);
        for (std::size_t k = 0; k < S; ++k) {
          const Vec3 pred = rec.secondary.segment<3>(3 * static_cast<Eigen::Index>(k));
          cn[k].push_back((pred - t.canonical.secondary[k]).norm());
          const Vec3 world = t.T.invert(pred);
          for (std::size_t v2 = 0; v2 < rig.size(); ++v2)
            px[k].push_back((geometry::project(rig[v2], world) - t.frame->views[v2].truth->secondary[k]).norm());
        }
      }
      std::vector<double> all_px, all_cn;
      for (std::size_t k = 0; k < S; ++k) {
        report.rows.push_back({c.id, "3d", k, mean_of(px[k]), median_of(px[k]), mean_of(cn[k]), median_of(cn[k])});
        all_px.insert(all_px.end(), px[k].begin(), px[k].end());
        all_cn.insert(all_cn.end(), cn[k].begin(), cn[k].end());
      }
      summary[c.id].mean_px_3d = mean_of(all_px);
      summary[c.id].mean_canonical_3d = mean_of(all_cn);
    }
  }

  if (study.run_2d) {
    auto normalized = [&](const Pose2D& p, geometry::Similarity2D& T) {
      T = geometry::canonical_transform_2d(p.primary, skeleton.frame);
      Pose2D out = p;
      for (auto& x : out.primary) x = T.apply(x);
      for (auto& x : out.secondary) x = T.apply(x);
      return pose_vector(out);
    };
    std::vector<Eigen::VectorXd> rows2;
    geometry::Similarity2D T;
    for (const auto* f : tr)
      for (const auto& v : f->views) {
        try {
          rows2.push_back(normalized(*v.truth, T));
        } catch (const Error& e) {
          if (e.kind() != ErrorKind::Degenerate) throw;
          ++degenerate;
        }
      }
    if (rows2.empty()) throw Error(ErrorKind::Data, "no 2D training poses");
    report.train_poses_2d = rows2.size();
    const FitResult fit2 = fit_basis(stack(rows2), P, S, 2, report.bases, study.variance_target);
    for (const auto& w : fit2.warnings) report.warnings.push_back("2d fit: " + w);
    for (const auto& c : configs) {
      std::vector<std::vector<double>> px(S), cn(S);
      for (const auto* f : te)
        for (const auto& v : f->views) {
          Eigen::VectorXd vec;
          try {
            vec = normalized(*v.truth, T);
          } catch (const Error& e) {
            if (e.kind() != ErrorKind::Degenerate) throw;
            continue;
          }
          const auto rec = reconstruct_secondary(fit2.basis, vec.head(static_cast<Eigen::Index>(2 * P)), c);
          for (std::size_t k = 0; k < S; ++k) {
            const Vec2 pred = rec.secondary.segment<2>(2 * static_cast<Eigen::Index>(k));
            cn[k].push_back((pred - vec.segment<2>(2 * static_cast<Eigen::Index>(P + k))).norm());
            px[k].push_back((T.invert(pred) - v.truth->secondary[k]).norm());
          }
        }
      std::vector<double> all_px, all_cn;
      for (std::size_t k = 0; k < S; ++k) {
        report.rows.push_back({c.id, "2d", k, mean_of(px[k]), median_of(px[k]), mean_of(cn[k]), median_of(cn[k])});
        all_px.insert(all_px.end(), px[k].begin(), px[k].end());
        all_cn.insert(all_cn.end(), cn[k].begin(), cn[k].end());
      }
      summary[c.id].mean_px_2d = mean_of(all_px);
      summary[c.id].mean_canonical_2d = mean_of(all_cn);
    }
  }
  if (degenerate > 0) report.warnings.push_back(std::to_string(degenerate) + " poses skipped for a degenerate body frame");
  for (const auto& c : configs) report.summary.push_back(summary[c.id]);
  return report;
}

}  // namespace seclm
