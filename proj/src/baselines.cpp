#include "seclm/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "seclm/error.hpp"
#include "seclm/optim.hpp"
#include "seclm/subspace.hpp"

namespace seclm {

using ad::Tensor;
using ad::Var;

void CompletionMatrix::validate() const {
  if (values.rows() != mask.rows() || values.cols() != mask.cols())
    throw Error(ErrorKind::Shape, "completion mask is " + std::to_string(mask.rows()) + "x" + std::to_string(mask.cols()) + ", values are " +
                                      std::to_string(values.rows()) + "x" + std::to_string(values.cols()));
  for (Eigen::Index j = 0; j < mask.cols(); ++j)
    if (mask.col(j).sum() < 1.0) throw Error(ErrorKind::Data, "completion column " + std::to_string(j) + " has no observations");
  for (Eigen::Index i = 0; i < mask.rows(); ++i)
    if (mask.row(i).sum() < 1.0) throw Error(ErrorKind::Data, "completion row " + std::to_string(i) + " has no observations");
}

namespace {

struct Ridge {
  Eigen::VectorXd row, col;
};

Ridge ridge_terms(const CompletionMatrix& M, const AlsConfig& c) {
  Ridge r{Eigen::VectorXd::Constant(M.values.rows(), c.lambda), Eigen::VectorXd::Constant(M.values.cols(), c.lambda)};
  if (c.weighted) {
    const Eigen::VectorXd n = M.mask.rowwise().sum(), m = M.mask.colwise().sum().transpose();
    r.row = c.lambda * n / n.mean();
    r.col = c.lambda * m / m.mean();
  }
  return r;
}

}  // namespace

double als_objective(const CompletionMatrix& M, const Eigen::MatrixXd& U, const Eigen::MatrixXd& W, const AlsConfig& c) {
  const Ridge r = ridge_terms(M, c);
  const double fit = (M.mask.array() * (M.values - U * W).array().square()).sum();
  return fit + (r.row.array() * U.rowwise().squaredNorm().array()).sum() + (r.col.array() * W.colwise().squaredNorm().transpose().array()).sum();
}

CompletionResult als_complete(const CompletionMatrix& M, const AlsConfig& c) {
  M.validate();
  const Eigen::Index rows = M.values.rows(), cols = M.values.cols();
  const auto r = static_cast<Eigen::Index>(c.rank);
  if (r == 0) throw Error(ErrorKind::Config, "completion rank must be at least 1");
  if (r > std::min(rows, cols)) throw Error(ErrorKind::Config, "completion rank " + std::to_string(r) + " exceeds the matrix dimensions");
  if (!(c.lambda >= 0.0)) throw Error(ErrorKind::Config, "completion lambda must be non-negative");
  const Ridge ridge = ridge_terms(M, c);

  Eigen::MatrixXd filled = M.values;
  for (Eigen::Index j = 0; j < cols; ++j) {
    const double mu = (M.mask.col(j).array() * M.values.col(j).array()).sum() / M.mask.col(j).sum();
    for (Eigen::Index i = 0; i < rows; ++i)
      if (M.mask(i, j) == 0.0) filled(i, j) = mu;
  }
  Eigen::BDCSVD<Eigen::MatrixXd> svd(filled, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd sq = svd.singularValues().head(r).cwiseSqrt();
  CompletionResult out;
  out.U = svd.matrixU().leftCols(r) * sq.asDiagonal();
  out.W = sq.asDiagonal() * svd.matrixV().leftCols(r).transpose();

  const double initial = als_objective(M, out.U, out.W, c);
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(r, r);
  for (std::size_t it = 0; it < c.iterations && !out.diverged; ++it) {
    for (Eigen::Index i = 0; i < rows; ++i) {
      Eigen::MatrixXd A = ridge.row[i] * I;
      Eigen::VectorXd b = Eigen::VectorXd::Zero(r);
      for (Eigen::Index j = 0; j < cols; ++j)
        if (M.mask(i, j) != 0.0) {
          A.noalias() += out.W.col(j) * out.W.col(j).transpose();
          b.noalias() += M.values(i, j) * out.W.col(j);
        }
      out.U.row(i) = A.ldlt().solve(b).transpose();
    }
    out.objective.push_back(als_objective(M, out.U, out.W, c));
    for (Eigen::Index j = 0; j < cols; ++j) {
      Eigen::MatrixXd A = ridge.col[j] * I;
      Eigen::VectorXd b = Eigen::VectorXd::Zero(r);
      for (Eigen::Index i = 0; i < rows; ++i)
        if (M.mask(i, j) != 0.0) {
          A.noalias() += out.U.row(i).transpose() * out.U.row(i);
          b.noalias() += M.values(i, j) * out.U.row(i).transpose();
        }
      out.W.col(j) = A.ldlt().solve(b);
    }
    out.objective.push_back(als_objective(M, out.U, out.W, c));
    if (!std::isfinite(out.objective.back()) || out.objective.back() > 10.0 * initial) out.diverged = true;
  }
  out.completed = out.U * out.W;
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j)
      if (M.mask(i, j) != 0.0) out.completed(i, j) = M.values(i, j);
  return out;
}

NeighborCompletion nearest_neighbor_complete(const Eigen::MatrixXd& labeled, std::size_t primary_cols, const Eigen::VectorXd& query,
                                             const AlsConfig& config, std::size_t neighbours) {
  if (labeled.rows() == 0) throw Error(ErrorKind::Precondition, "nearest-neighbour completion needs a non-empty labeled set");
  const auto pc = static_cast<Eigen::Index>(primary_cols);
  if (query.size() != pc || labeled.cols() <= pc) throw Error(ErrorKind::Shape, "query has " + std::to_string(query.size()) + " primary columns, labeled rows have " + std::to_string(labeled.cols()));
  std::vector<std::pair<double, Eigen::Index>> dist;
  dist.reserve(static_cast<std::size_t>(labeled.rows()));
  for (Eigen::Index i = 0; i < labeled.rows(); ++i) dist.emplace_back((labeled.row(i).head(pc).transpose() - query).norm(), i);
  const std::size_t k = std::clamp<std::size_t>(neighbours, 1, dist.size());
  std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());

  CompletionMatrix M;
  const Eigen::Index cols = labeled.cols(), rows = static_cast<Eigen::Index>(k) + 1;
  M.values = Eigen::MatrixXd::Zero(rows, cols);
  M.mask = Eigen::MatrixXd::Ones(rows, cols);
  for (std::size_t r = 0; r < k; ++r) M.values.row(static_cast<Eigen::Index>(r)) = labeled.row(dist[r].second);
  M.values.row(rows - 1).head(pc) = query.transpose();
  M.mask.row(rows - 1).tail(cols - pc).setZero();
  AlsConfig c = config;
  c.rank = std::min<std::size_t>({config.rank, k, static_cast<std::size_t>(pc)});
  const CompletionResult res = als_complete(M, c);
  return {res.completed.row(rows - 1).tail(cols - pc).transpose(), dist.front().first, static_cast<std::size_t>(dist.front().second)};
}

double gaussian_kl(const Eigen::VectorXd& mu, const Eigen::VectorXd& logvar) {
  return 0.5 * (mu.array().square() + logvar.array().exp() - 1.0 - logvar.array()).sum();
}

Var gaussian_kl(const Var& mu, const Var& logvar) {
  return ad::scale(ad::sum(ad::add_scalar(ad::square(mu) + ad::exp(logvar) - logvar, -1.0)), 0.5);
}

Var vae_objective(const Var& recon, const Var& target, const Var& mu, const Var& logvar) {
  const std::size_t rows = recon.shape().size() == 2 ? recon.shape()[0] : 1;
  return ad::scale(ad::sum(ad::square(recon - target)) + gaussian_kl(mu, logvar), 1.0 / static_cast<double>(rows));
}

namespace {

struct VaeGraph {
  Var mu, logvar, recon;
};

Var affine(const ad::BoundParameters& p, const std::string& name, const Var& x) {
  return ad::add_row(ad::matmul(x, ad::get(p, "vae/" + name + "/weight")), ad::get(p, "vae/" + name + "/bias"));
}

VaeGraph vae_forward(const ad::BoundParameters& p, const Var& x, const Var* eps) {
  const Var h = ad::tanh(affine(p, "enc", x));
  VaeGraph g;
  g.mu = affine(p, "mu", h);
  g.logvar = affine(p, "logvar", h);
  const Var z = eps ? g.mu + ad::exp(ad::scale(g.logvar, 0.5)) * *eps : g.mu;
  g.recon = affine(p, "out", ad::tanh(affine(p, "dec", z)));
  return g;
}

Tensor to_tensor(const Eigen::MatrixXd& m) {
  Tensor t({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) t.at(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) = m(i, j);
  return t;
}

}  // namespace

Vae Vae::train(const Eigen::MatrixXd& data, std::size_t primary_cols, const VaeConfig& config) {
  if (data.rows() < 2) throw Error(ErrorKind::Precondition, "VAE training needs at least two rows");
  if (primary_cols == 0 || primary_cols >= static_cast<std::size_t>(data.cols())) throw Error(ErrorKind::Config, "VAE primary column count out of range");
  if (config.latent == 0 || config.hidden == 0 || config.batch == 0) throw Error(ErrorKind::Config, "VAE sizes must be positive");
  Vae v;
  v.config_ = config;
  v.primary_cols_ = primary_cols;
  v.mean_ = data.colwise().mean().transpose();
  v.scale_ = ((data.rowwise() - v.mean_.transpose()).array().square().colwise().sum() / static_cast<double>(data.rows() - 1)).sqrt().transpose();
  for (auto& s : v.scale_) s = s > 1e-9 ? s : 1.0;
  const Eigen::MatrixXd Z = ((data.rowwise() - v.mean_.transpose()).array().rowwise() / v.scale_.transpose().array()).matrix();

  const auto D = static_cast<std::size_t>(data.cols());
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> normal;
  auto layer = [&](const std::string& name, std::size_t in, std::size_t out) {
    Tensor w({in, out});
    const double s = std::sqrt(1.0 / static_cast<double>(in));
    for (double& x : w.data()) x = s * normal(rng);
    v.params_["vae/" + name + "/weight"] = std::move(w);
    v.params_["vae/" + name + "/bias"] = Tensor({out}, 0.0);
  };
  layer("enc", D, config.hidden);
  layer("mu", config.hidden, config.latent);
  layer("logvar", config.hidden, config.latent);
  layer("dec", config.latent, config.hidden);
  layer("out", config.hidden, D);

  Adam adam;
  std::uniform_int_distribution<Eigen::Index> pick(0, Z.rows() - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto B = static_cast<Eigen::Index>(config.batch);
  for (std::size_t step = 0; step < config.steps; ++step) {
    Eigen::MatrixXd target(B, Z.cols()), input(B, Z.cols()), eps(B, static_cast<Eigen::Index>(config.latent));
    for (Eigen::Index b = 0; b < B; ++b) {
      target.row(b) = Z.row(pick(rng));
      input.row(b) = target.row(b);
      if (unit(rng) < config.mask_probability) input.row(b).tail(Z.cols() - static_cast<Eigen::Index>(primary_cols)).setZero();
      for (Eigen::Index l = 0; l < eps.cols(); ++l) eps(b, l) = normal(rng);
    }
    ad::Tape tape;
    const auto bound = ad::bind(tape, v.params_);
    const Var e = tape.constant(to_tensor(eps));
    const VaeGraph g = vae_forward(bound, tape.constant(to_tensor(input)), &e);
    const Var loss = vae_objective(g.recon, tape.constant(to_tensor(target)), g.mu, g.logvar);
    if (!std::isfinite(loss.item())) throw Error(ErrorKind::Numerical, "VAE loss became non-finite at step " + std::to_string(step));
    v.history_.push_back(loss.item());
    adam.step(v.params_, ad::collect(tape.backward(loss), bound), config.learning_rate);
  }
  v.trained_ = true;
  return v;
}

Eigen::VectorXd Vae::reconstruct(const Eigen::VectorXd& row) const {
  if (!trained_) throw Error(ErrorKind::Precondition, "VAE has not been trained");
  if (row.size() != mean_.size()) throw Error(ErrorKind::Shape, "VAE row has " + std::to_string(row.size()) + " entries, expected " + std::to_string(mean_.size()));
  const Eigen::VectorXd z = (row - mean_).cwiseQuotient(scale_);
  ad::Tape tape;
  const auto bound = ad::bind(tape, params_, false);
  const VaeGraph g = vae_forward(bound, tape.constant(to_tensor(z.transpose())), nullptr);
  const auto vals = g.recon.value().values();
  return Eigen::Map<const Eigen::VectorXd>(vals.data(), static_cast<Eigen::Index>(vals.size())).cwiseProduct(scale_) + mean_;
}

Eigen::VectorXd Vae::impute(const Eigen::VectorXd& query_primary) const {
  if (!trained_) throw Error(ErrorKind::Precondition, "VAE has not been trained");
  const auto pc = static_cast<Eigen::Index>(primary_cols_);
  if (query_primary.size() != pc) throw Error(ErrorKind::Shape, "VAE query has " + std::to_string(query_primary.size()) + " primary entries, expected " + std::to_string(pc));
  Eigen::VectorXd row = mean_;
  row.head(pc) = query_primary;
  for (std::size_t it = 0; it < std::max<std::size_t>(config_.imputation_iterations, 1); ++it) {
    const Eigen::VectorXd rec = reconstruct(row);
    row.tail(row.size() - pc) = rec.tail(row.size() - pc);
  }
  return row.tail(row.size() - pc);
}

std::vector<BaselineResult> run_baselines(const std::vector<const MultiviewFrame*>& labeled, const std::vector<const MultiviewFrame*>& test,
                                          const Rig& rig, const SkeletonSpec& skeleton, const DetectorConfig& detector,
                                          const ad::ParameterSet& params, const BaselineRunConfig& config,
                                          const std::vector<double>& thresholds) {
  const std::size_t P = skeleton.primary_count(), S = skeleton.secondary_count();
  const std::size_t vi = config.view_i, vj = config.view_j;
  if (rig.size() < 2 || vi == vj || std::max(vi, vj) >= rig.size()) throw Error(ErrorKind::Precondition, "baselines need two distinct cameras");

  auto full_truth = [](const View& v) {
    return v.truth && std::all_of(v.truth->primary_visible.begin(), v.truth->primary_visible.end(), [](bool b) { return b; }) &&
           std::all_of(v.truth->secondary_visible.begin(), v.truth->secondary_visible.end(), [](bool b) { return b; });
  };
  // Training matrices from D_X: canonical 3D rows and per-view pixel rows.
  std::vector<Eigen::VectorXd> rows3, rows2;
  for (const auto* f : labeled) {
    if (f->views.size() != rig.size()) continue;
    for (const auto& v : f->views)
      if (full_truth(v)) rows2.push_back(pose_vector(*v.truth));
    if (!full_truth(f->views[vi]) || !full_truth(f->views[vj])) continue;
    Pose3D pose;
    for (std::size_t k = 0; k < P + S; ++k) {
      const Vec3 x = geometry::triangulate_dlt(f->views[vi].truth->at(k), f->views[vj].truth->at(k), rig[vi], rig[vj]).point;
      (k < P ? pose.primary : pose.secondary).push_back(x);
    }
    try {
      rows3.push_back(pose_vector(geometry::normalize_pose(pose, skeleton.frame).first));
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::Degenerate) throw;
    }
  }
  if (rows3.empty() || rows2.empty()) throw Error(ErrorKind::Data, "baselines need labeled secondary frames");
  auto stack = [](const std::vector<Eigen::VectorXd>& rows) {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), rows.front().size());
    for (std::size_t i = 0; i < rows.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
    return m;
  };
  const Eigen::MatrixXd M3 = stack(rows3), M2 = stack(rows2);
  std::optional<Vae> vae3, vae2;
  if (config.run_3d) vae3 = Vae::train(M3, 3 * P, config.vae);
  if (config.run_2d) vae2 = Vae::train(M2, 2 * P, config.vae);
  AlsConfig als = config.als, bals = config.als;
  als.weighted = false;
  bals.weighted = true;

  // Test frames: images and full truth in every view.
  struct TestFrame {
    const MultiviewFrame* frame;
    std::vector<Pose2D> detected;
  };
  std::vector<TestFrame> frames;
  for (const auto* f : test) {
    if (!f->has_images() || f->views.size() != rig.size()) continue;
    if (!std::all_of(f->views.begin(), f->views.end(), full_truth)) continue;
    TestFrame t{f, {}};
    for (const auto& v : f->views) t.detected.push_back(detect(detector, params, *v.image).pose);
    frames.push_back(std::move(t));
  }
  if (frames.empty()) throw Error(ErrorKind::Data, "baselines have no usable test frames");

  std::vector<std::size_t> secondary_ids(S);
  std::iota(secondary_ids.begin(), secondary_ids.end(), P);
  std::vector<Pose2D> truths;
  for (const auto& t : frames)
    for (const auto& v : t.frame->views) truths.push_back(*v.truth);

  std::vector<BaselineResult> results;
  {
    std::vector<Pose2D> preds;
    for (const auto& t : frames)
      for (const auto& d : t.detected) preds.push_back(d);
    results.push_back({"ours", pckh(preds, truths, thresholds, skeleton.reference_pair, secondary_ids)});
  }

  enum class Method { Als, Bals, Vae };
  const std::pair<Method, const char*> methods[] = {{Method::Als, "als"}, {Method::Bals, "bals"}, {Method::Vae, "vae"}};
  auto complete = [&](Method m, const Eigen::MatrixXd& table, const Vae& vae, const Eigen::VectorXd& query) -> Eigen::VectorXd {
    switch (m) {
      case Method::Als: return nearest_neighbor_complete(table, static_cast<std::size_t>(query.size()), query, als, config.neighbours).secondary;
      case Method::Bals: return nearest_neighbor_complete(table, static_cast<std::size_t>(query.size()), query, bals, config.neighbours).secondary;
      case Method::Vae: return vae.impute(query);
    }
    return {};
  };

  for (const bool gt : {false, true}) {
    if (gt && !config.with_ground_truth_primaries) continue;
    const std::string suffix = gt ? "-gtprim" : "";
    auto primaries = [&](const TestFrame& t, std::size_t v) -> const std::vector<Vec2>& {
      return gt ? t.frame->views[v].truth->primary : t.detected[v].primary;
    };
    for (const auto& [m, name] : methods) {
      if (config.run_3d) {
        std::vector<Pose2D> preds;
        for (const auto& t : frames) {
          Pose3D pose;
          for (std::size_t k = 0; k < P; ++k)
            pose.primary.push_back(geometry::triangulate_dlt(primaries(t, vi)[k], primaries(t, vj)[k], rig[vi], rig[vj]).point);
          std::optional<SimilarityTransform> T;
          try {
            T = geometry::canonical_transform(pose.primary, skeleton.frame);
          } catch (const Error& e) {
            if (e.kind() != ErrorKind::Degenerate) throw;
          }
          Eigen::VectorXd sec = Eigen::VectorXd::Zero(3 * static_cast<Eigen::Index>(S));
          if (T) {
            Eigen::VectorXd q(3 * static_cast<Eigen::Index>(P));
            for (std::size_t k = 0; k < P; ++k) q.segment<3>(3 * static_cast<Eigen::Index>(k)) = T->apply(pose.primary[k]);
            sec = complete(m, M3, vae3 ? *vae3 : Vae{}, q);
          }
          for (std::size_t v = 0; v < rig.size(); ++v) {
            Pose2D p = t.detected[v];
            for (std::size_t k = 0; k < S; ++k) {
              const Vec3 world = T ? T->invert(sec.segment<3>(3 * static_cast<Eigen::Index>(k))) : Vec3::Zero();
              const bool ok = T && geometry::depth(rig[v], world) > geometry::kMinDepth;
              // A failed reconstruction lands far outside the image and counts as wrong.
              p.secondary[k] = ok ? geometry::project(rig[v], world) : Vec2(-1e6, -1e6);
            }
            preds.push_back(std::move(p));
          }
        }
        results.push_back({std::string(name) + "-3d" + suffix, pckh(preds, truths, thresholds, skeleton.reference_pair, secondary_ids)});
      }
      if (config.run_2d) {
        std::vector<Pose2D> preds;
        for (const auto& t : frames)
          for (std::size_t v = 0; v < rig.size(); ++v) {
            Eigen::VectorXd q(2 * static_cast<Eigen::Index>(P));
            for (std::size_t k = 0; k < P; ++k) q.segment<2>(2 * static_cast<Eigen::Index>(k)) = primaries(t, v)[k];
            const Eigen::VectorXd sec = complete(m, M2, vae2 ? *vae2 : Vae{}, q);
            Pose2D p = t.detected[v];
            for (std::size_t k = 0; k < S; ++k) p.secondary[k] = sec.segment<2>(2 * static_cast<Eigen::Index>(k));
            preds.push_back(std::move(p));
          }
        results.push_back({std::string(name) + "-2d" + suffix, pckh(preds, truths, thresholds, skeleton.reference_pair, secondary_ids)});
      }
    }
  }
  return results;
}

}  // namespace seclm
