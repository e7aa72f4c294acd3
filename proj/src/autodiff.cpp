#include "seclm/autodiff.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "seclm/error.hpp"

namespace seclm::ad {

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMajor>;
using Map = Eigen::Map<RowMajor>;

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw Error(ErrorKind::Shape, std::string(op) + ": incompatible shapes " + to_string(a) + " and " + to_string(b));
}

[[noreturn]] void shape_error(const char* op, const Shape& a, const std::string& what) {
  throw Error(ErrorKind::Shape, std::string(op) + ": shape " + to_string(a) + " " + what);
}

void require_same(const char* op, const Var& a, const Var& b) {
  if (a.shape() != b.shape()) shape_error(op, a.shape(), b.shape());
  if (&a.tape() != &b.tape()) throw Error(ErrorKind::Precondition, std::string(op) + ": operands live on different tapes");
}

MapC as_matrix(const Tensor& t) { return MapC(t.values().data(), t.rows(), t.cols()); }

// Elementwise unary op with derivative expressed through input x and output y.
template <class F, class D>
Var unary(const Var& a, F f, D dfdx) {
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  const NodeId pa = a.id();
  return a.tape().record(std::move(y), {pa}, [pa, dfdx](const Tape& tape, NodeId self, const Tensor& g, GradSink& sink) {
    const Tensor& x = tape.value(pa);
    const Tensor& y = tape.value(self);
    Tensor& ga = sink.buffer(pa);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * dfdx(x[i], y[i]);
  });
}

}  // namespace

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), values_(std::move(values)) {
  if (numel(shape_) != values_.size())
    throw Error(ErrorKind::Shape, "tensor shape " + ad::to_string(shape_) + " does not match " +
                                      std::to_string(values_.size()) + " values");
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), values_(numel(shape_), fill) {}

Tensor Tensor::vector(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor({n}, std::move(v));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
  return Tensor({rows, cols}, std::move(v));
}

std::size_t Tensor::rows() const {
  if (shape_.size() != 2) shape_error("rows", shape_, "is not rank 2");
  return shape_[0];
}

std::size_t Tensor::cols() const {
  if (shape_.size() != 2) shape_error("cols", shape_, "is not rank 2");
  return shape_[1];
}

double Tensor::item() const {
  if (values_.size() != 1) shape_error("item", shape_, "is not a single element");
  return values_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (numel(shape) != values_.size()) shape_error("reshape", shape_, "cannot become " + ad::to_string(shape));
  return Tensor(std::move(shape), values_);
}

const Tensor& Var::value() const { return tape_->value(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

bool GradSink::wants(NodeId id) const { return tape_.requires_grad(id); }

Tensor& GradSink::buffer(NodeId id) {
  Tensor& g = grads_[id];
  if (g.empty() && !tape_.value(id).empty()) g = Tensor::zeros_like(tape_.value(id));
  return g;
}

Tensor Gradients::of(const Var& v, bool* detached) const {
  const bool hit = reached(v);
  if (detached) *detached = !hit;
  if (!hit) return Tensor::zeros_like(v.value());
  return grads_[v.id()];
}

bool Gradients::reached(const Var& v) const {
  return tape_ == &v.tape() && v.id() < grads_.size() && !grads_[v.id()].empty();
}

Var Tape::push(Tensor value, std::vector<NodeId> parents, BackwardFn fn, bool requires_grad) {
  const auto id = static_cast<NodeId>(nodes_.size());
  nodes_.push_back(Node{std::move(value), std::move(parents), requires_grad ? std::move(fn) : BackwardFn{}, requires_grad});
  return Var(this, id);
}

Var Tape::record(Tensor value, std::vector<NodeId> parents, BackwardFn fn) {
  bool rg = false;
  for (NodeId p : parents) rg = rg || nodes_[p].requires_grad;
  return push(std::move(value), std::move(parents), std::move(fn), rg);
}

Gradients Tape::backward(const Var& loss) const {
  if (&loss.tape() != this) throw Error(ErrorKind::Precondition, "backward: loss belongs to another tape");
  if (loss.size() != 1) shape_error("backward", loss.shape(), "is not a scalar loss");
  Gradients out;
  out.tape_ = this;
  out.grads_.resize(nodes_.size());
  if (!nodes_[loss.id()].requires_grad) return out;
  out.grads_[loss.id()] = Tensor(loss.shape(), 1.0);
  GradSink sink(*this, out.grads_);
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    const Node& node = nodes_[i];
    if (!node.backward || out.grads_[i].empty()) continue;
    node.backward(*this, static_cast<NodeId>(i), out.grads_[i], sink);
  }
  // Leaves are kept; drop buffers of nodes that never wanted gradients.
  for (std::size_t i = 0; i < nodes_.size(); ++i)
    if (!nodes_[i].requires_grad) out.grads_[i] = Tensor();
  return out;
}

// --------------------------------------------------------------------------

Var add(const Var& a, const Var& b) {
  require_same("add", a, b);
  Tensor y(a.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.value()[i] + b.value()[i];
  const NodeId pa = a.id(), pb = b.id();
  return a.tape().record(std::move(y), {pa, pb}, [pa, pb](const Tape&, NodeId, const Tensor& g, GradSink& sink) {
    for (NodeId p : {pa, pb}) {
      if (!sink.wants(p)) continue;
      Tensor& gp = sink.buffer(p);
      for (std::size_t i = 0; i < g.size(); ++i) gp[i] += g[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require_same("sub", a, b);
  Tensor y(a.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.value()[i] - b.value()[i];
  const NodeId pa = a.id(), pb = b.id();
  return a.tape().record(std::move(y), {pa, pb}, [pa, pb](const Tape&, NodeId, const Tensor& g, GradSink& sink) {
    if (sink.wants(pa)) {
      Tensor& ga = sink.buffer(pa);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (sink.wants(pb)) {
      Tensor& gb = sink.buffer(pb);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same("mul", a, b);
  Tensor y(a.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.value()[i] * b.value()[i];
  const NodeId pa = a.id(), pb = b.id();
  return a.tape().record(std::move(y), {pa, pb}, [pa, pb](const Tape& tape, NodeId, const Tensor& g, GradSink& sink) {
    const Tensor& av = tape.value(pa);
    const Tensor& bv = tape.value(pb);
    if (sink.wants(pa)) {
      Tensor& ga = sink.buffer(pa);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (sink.wants(pb)) {
      Tensor& gb = sink.buffer(pb);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Var div(const Var& a, const Var& b) {
  require_same("div", a, b);
  Tensor y(a.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.value()[i] / b.value()[i];
  const NodeId pa = a.id(), pb = b.id();
  return a.tape().record(std::move(y), {pa, pb}, [pa, pb](const Tape& tape, NodeId self, const Tensor& g, GradSink& sink) {
    const Tensor& bv = tape.value(pb);
    const Tensor& yv = tape.value(self);
    if (sink.wants(pa)) {
      Tensor& ga = sink.buffer(pa);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / bv[i];
    }
    if (sink.wants(pb)) {
      Tensor& gb = sink.buffer(pb);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i] * yv[i] / bv[i];
    }
  });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var scale(const Var& a, double k) {
  return unary(a, [k](double x) { return k * x; }, [k](double, double) { return k; });
}

Var add_scalar(const Var& a, double k) {
  return unary(a, [k](double x) { return x + k; }, [](double, double) { return 1.0; });
}

Var scale_by(const Var& s, const Var& v) {
  if (s.size() != 1) shape_error("scale_by", s.shape(), "is not a single-element scale");
  const double k = s.item();
  Tensor y(v.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = k * v.value()[i];
  const NodeId ps = s.id(), pv = v.id();
  return v.tape().record(std::move(y), {ps, pv}, [ps, pv](const Tape& tape, NodeId, const Tensor& g, GradSink& sink) {
    const double k = tape.value(ps)[0];
    const Tensor& vv = tape.value(pv);
    if (sink.wants(ps)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * vv[i];
      sink.buffer(ps)[0] += acc;
    }
    if (sink.wants(pv)) {
      Tensor& gv = sink.buffer(pv);
      for (std::size_t i = 0; i < g.size(); ++i) gv[i] += g[i] * k;
    }
  });
}

Var sum(const Var& a) {
  double s = 0.0;
  for (double x : a.value().values()) s += x;
  const NodeId pa = a.id();
  return a.tape().record(Tensor::scalar(s), {pa}, [pa](const Tape&, NodeId, const Tensor& g, GradSink& sink) {
    Tensor& ga = sink.buffer(pa);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0];
  });
}

Var mean(const Var& a) {
  if (a.size() == 0) shape_error("mean", a.shape(), "is empty");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Var square(const Var& a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var sqrt(const Var& a) {
  return unary(a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

Var exp(const Var& a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(const Var& a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var tanh(const Var& a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var relu(const Var& a) {
  // NaN passes through so a corrupted input surfaces as a non-finite loss.
  return unary(a, [](double x) { return x > 0.0 || std::isnan(x) ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var matmul(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || (bv.rank() != 2 && bv.rank() != 1)) shape_error("matmul", av.shape(), bv.shape());
  const std::size_t m = av.shape()[0], k = av.shape()[1];
  const bool vec = bv.rank() == 1;
  const std::size_t kb = bv.shape()[0];
  const std::size_t n = vec ? 1 : bv.shape()[1];
  if (k != kb) shape_error("matmul", av.shape(), bv.shape());
  Tensor y(vec ? Shape{m} : Shape{m, n});
  Map(y.data().data(), m, n).noalias() = MapC(av.values().data(), m, k) * MapC(bv.values().data(), k, n);
  const NodeId pa = a.id(), pb = b.id();
  return a.tape().record(std::move(y), {pa, pb}, [pa, pb, m, k, n](const Tape& tape, NodeId, const Tensor& g, GradSink& sink) {
    MapC G(g.values().data(), m, n);
    if (sink.wants(pa)) {
      Map(sink.buffer(pa).data().data(), m, k).noalias() += G * MapC(tape.value(pb).values().data(), k, n).transpose();
    }
    if (sink.wants(pb)) {
      Map(sink.buffer(pb).data().data(), k, n).noalias() += MapC(tape.value(pa).values().data(), m, k).transpose() * G;
    }
  });
}

Var transpose(const Var& a) {
  const Tensor& av = a.value();
  if (av.rank() != 2) shape_error("transpose", av.shape(), "is not rank 2");
  const std::size_t m = av.rows(), n = av.cols();
  Tensor y({n, m});
  Map(y.data().data(), n, m) = as_matrix(av).transpose();
  const NodeId pa = a.id();
  return a.tape().record(std::move(y), {pa}, [pa, m, n](const Tape&, NodeId, const Tensor& g, GradSink& sink) {
    Map(sink.buffer(pa).data().data(), m, n) += MapC(g.values().data(), n, m).transpose();
  });
}

Var add_row(const Var& m, const Var& r) {
  const Tensor& mv = m.value();
  if (mv.rank() != 2 || r.value().rank() != 1 || r.size() != mv.cols()) shape_error("add_row", mv.shape(), r.shape());
  const std::size_t rows = mv.rows(), cols = mv.cols();
  Tensor y = mv;
  const Tensor& rv = r.value();
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) y[i * cols + j] += rv[j];
  const NodeId pm = m.id(), pr = r.id();
  return m.tape().record(std::move(y), {pm, pr}, [pm, pr, rows, cols](const Tape&, NodeId, const Tensor& g, GradSink& sink) {
    if (sink.wants(pm)) {
      Tensor& gm = sink.buffer(pm);
      for (std::size_t i = 0; i < g.size(); ++i) gm[i] += g[i];
    }
    if (sink.wants(pr)) {
      Tensor& gr = sink.buffer(pr);
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) gr[j] += g[i * cols + j];
    }
  });
}

Var softmax(const Var& a) {
  const Tensor& av = a.value();
  if (av.rank() != 1 && av.rank() != 2) shape_error("softmax", av.shape(), "must be rank 1 or 2");
  const std::size_t cols = av.shape().back();
  const std::size_t rows = av.size() / std::max<std::size_t>(cols, 1);
  Tensor y(av.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = av.values().data() + r * cols;
    double* o = y.data().data() + r * cols;
    const double mx = *std::max_element(x, x + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += (o[c] = std::exp(x[c] - mx));
    for (std::size_t c = 0; c < cols; ++c) o[c] /= z;
  }
  const NodeId pa = a.id();
  return a.tape().record(std::move(y), {pa}, [pa, rows, cols](const Tape& tape, NodeId self, const Tensor& g, GradSink& sink) {
    const Tensor& yv = tape.value(self);
    Tensor& ga = sink.buffer(pa);
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t o = r * cols;
      double gy = 0.0;
      for (std::size_t c = 0; c < cols; ++c) gy += g[o + c] * yv[o + c];
      for (std::size_t c = 0; c < cols; ++c) ga[o + c] += yv[o + c] * (g[o + c] - gy);
    }
  });
}

Var dot(const Var& a, const Var& b) {
  if (a.size() != b.size()) shape_error("dot", a.shape(), b.shape());
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.value()[i] * b.value()[i];
  const NodeId pa = a.id(), pb = b.id();
  return a.tape().record(Tensor::scalar(s), {pa, pb}, [pa, pb](const Tape& tape, NodeId, const Tensor& g, GradSink& sink) {
    const Tensor& av = tape.value(pa);
    const Tensor& bv = tape.value(pb);
    if (sink.wants(pa)) {
      Tensor& ga = sink.buffer(pa);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0] * bv[i];
    }
    if (sink.wants(pb)) {
      Tensor& gb = sink.buffer(pb);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[0] * av[i];
    }
  });
}

Var l2_norm(const Var& a) {
  double s = 0.0;
  for (double x : a.value().values()) s += x * x;
  const double n = std::sqrt(s);
  const NodeId pa = a.id();
  return a.tape().record(Tensor::scalar(n), {pa}, [pa](const Tape& tape, NodeId self, const Tensor& g, GradSink& sink) {
    const double n = tape.value(self)[0];
    if (n == 0.0) return;  // subgradient 0 at the origin
    const Tensor& av = tape.value(pa);
    Tensor& ga = sink.buffer(pa);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0] * av[i] / n;
  });
}

Var cross(const Var& a, const Var& b) {
  if (a.size() != 3 || b.size() != 3) shape_error("cross", a.shape(), b.shape());
  const Tensor& x = a.value();
  const Tensor& z = b.value();
  Tensor y = Tensor::vector({x[1] * z[2] - x[2] * z[1], x[2] * z[0] - x[0] * z[2], x[0] * z[1] - x[1] * z[0]});
  const NodeId pa = a.id(), pb = b.id();
  return a.tape().record(std::move(y), {pa, pb}, [pa, pb](const Tape& tape, NodeId, const Tensor& g, GradSink& sink) {
    const Tensor& x = tape.value(pa);
    const Tensor& z = tape.value(pb);
    // d(x × z) = dx × z + x × dz;  gx = z × g, gz = g × x
    if (sink.wants(pa)) {
      Tensor& ga = sink.buffer(pa);
      ga[0] += z[1] * g[2] - z[2] * g[1];
      ga[1] += z[2] * g[0] - z[0] * g[2];
      ga[2] += z[0] * g[1] - z[1] * g[0];
    }
    if (sink.wants(pb)) {
      Tensor& gb = sink.buffer(pb);
      gb[0] += g[1] * x[2] - g[2] * x[1];
      gb[1] += g[2] * x[0] - g[0] * x[2];
      gb[2] += g[0] * x[1] - g[1] * x[0];
    }
  });
}

Var reshape(const Var& a, Shape shape) {
  Tensor y = a.value().reshaped(std::move(shape));
  const NodeId pa = a.id();
  return a.tape().record(std::move(y), {pa}, [pa](const Tape&, NodeId, const Tensor& g, GradSink& sink) {
    Tensor& ga = sink.buffer(pa);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Var slice(const Var& a, std::size_t start, std::size_t count) {
  if (start + count > a.size()) shape_error("slice", a.shape(), "too small for [" + std::to_string(start) + ", " + std::to_string(start + count) + ")");
  const auto v = a.value().values();
  Tensor y = Tensor::vector(std::vector<double>(v.begin() + start, v.begin() + start + count));
  const NodeId pa = a.id();
  return a.tape().record(std::move(y), {pa}, [pa, start](const Tape&, NodeId, const Tensor& g, GradSink& sink) {
    Tensor& ga = sink.buffer(pa);
    for (std::size_t i = 0; i < g.size(); ++i) ga[start + i] += g[i];
  });
}

Var row(const Var& m, std::size_t r) {
  const Tensor& mv = m.value();
  if (mv.rank() != 2 || r >= mv.rows()) shape_error("row", mv.shape(), "has no row " + std::to_string(r));
  return slice(m, r * mv.cols(), mv.cols());
}

Var concat(const std::vector<Var>& parts) {
  if (parts.empty()) throw Error(ErrorKind::Shape, "concat: no inputs");
  std::vector<double> v;
  std::vector<NodeId> ids;
  std::vector<std::size_t> offsets;
  for (const Var& p : parts) {
    offsets.push_back(v.size());
    ids.push_back(p.id());
    const auto pv = p.value().values();
    v.insert(v.end(), pv.begin(), pv.end());
  }
  Tape& tape = parts.front().tape();
  return tape.record(Tensor::vector(std::move(v)), ids, [ids, offsets](const Tape&, NodeId, const Tensor& g, GradSink& sink) {
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!sink.wants(ids[k])) continue;
      Tensor& gp = sink.buffer(ids[k]);
      for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[offsets[k] + i];
    }
  });
}

Var stack_rows(const std::vector<Var>& rows) {
  if (rows.empty()) throw Error(ErrorKind::Shape, "stack_rows: no inputs");
  const std::size_t n = rows.front().size();
  for (const Var& r : rows)
    if (r.size() != n) shape_error("stack_rows", rows.front().shape(), r.shape());
  return reshape(concat(rows), {rows.size(), n});
}

Var solve(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  if (av.rank() != 2 || av.rows() != av.cols() || b.size() != av.rows()) shape_error("solve", av.shape(), b.shape());
  const std::size_t n = av.rows();
  Eigen::MatrixXd A = as_matrix(av);
  Eigen::VectorXd rhs = Eigen::Map<const Eigen::VectorXd>(b.value().values().data(), n);
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(A);
  Eigen::VectorXd x = lu.solve(rhs);
  Tensor y = Tensor::vector(std::vector<double>(x.data(), x.data() + n));
  const NodeId pa = a.id(), pb = b.id();
  return a.tape().record(std::move(y), {pa, pb}, [pa, pb, n](const Tape& tape, NodeId self, const Tensor& g, GradSink& sink) {
    Eigen::MatrixXd A = as_matrix(tape.value(pa));
    Eigen::VectorXd gv = Eigen::Map<const Eigen::VectorXd>(g.values().data(), n);
    Eigen::VectorXd lambda = A.transpose().partialPivLu().solve(gv);
    if (sink.wants(pb)) {
      Tensor& gb = sink.buffer(pb);
      for (std::size_t i = 0; i < n; ++i) gb[i] += lambda[i];
    }
    if (sink.wants(pa)) {
      const Tensor& x = tape.value(self);
      Tensor& ga = sink.buffer(pa);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) ga[i * n + j] -= lambda[i] * x[j];
    }
  });
}

Var im2col(const Var& image, std::size_t h, std::size_t w, std::size_t kernel, std::size_t stride, std::size_t pad) {
  const Tensor& iv = image.value();
  if (iv.rank() != 2 || iv.rows() != h * w) shape_error("im2col", iv.shape(), "does not hold " + std::to_string(h) + "x" + std::to_string(w) + " positions");
  if (stride == 0 || kernel == 0) throw Error(ErrorKind::Precondition, "im2col: kernel and stride must be positive");
  const std::size_t c = iv.cols();
  const std::size_t ho = (h + 2 * pad - kernel) / stride + 1;
  const std::size_t wo = (w + 2 * pad - kernel) / stride + 1;
  const std::size_t width = kernel * kernel * c;
  // Source row for every (output position, kernel offset); -1 marks padding.
  std::vector<std::ptrdiff_t> src(ho * wo * kernel * kernel, -1);
  for (std::size_t oy = 0; oy < ho; ++oy)
    for (std::size_t ox = 0; ox < wo; ++ox)
      for (std::size_t ky = 0; ky < kernel; ++ky)
        for (std::size_t kx = 0; kx < kernel; ++kx) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
          const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
          if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(h) || ix >= static_cast<std::ptrdiff_t>(w)) continue;
          src[((oy * wo + ox) * kernel + ky) * kernel + kx] = iy * static_cast<std::ptrdiff_t>(w) + ix;
        }
  Tensor y({ho * wo, width});
  const double* in = iv.values().data();
  double* out = y.data().data();
  for (std::size_t k = 0; k < src.size(); ++k)
    if (src[k] >= 0) std::copy_n(in + src[k] * c, c, out + k * c);
  const NodeId pi = image.id();
  return image.tape().record(std::move(y), {pi}, [pi, src = std::move(src), c](const Tape&, NodeId, const Tensor& g, GradSink& sink) {
    Tensor& gi = sink.buffer(pi);
    double* acc = gi.data().data();
    const double* gv = g.values().data();
    for (std::size_t k = 0; k < src.size(); ++k) {
      if (src[k] < 0) continue;
      double* dst = acc + src[k] * c;
      const double* from = gv + k * c;
      for (std::size_t ch = 0; ch < c; ++ch) dst[ch] += from[ch];
    }
  });
}

Var stop_gradient(const Var& a) { return a.tape().constant(a.value()); }

// --------------------------------------------------------------------------

BoundParameters bind(Tape& tape, const ParameterSet& params, bool trainable) {
  BoundParameters out;
  for (const auto& [path, value] : params) out.emplace(path, trainable ? tape.leaf(value) : tape.constant(value));
  return out;
}

ParameterSet collect(const Gradients& grads, const BoundParameters& bound) {
  ParameterSet out;
  for (const auto& [path, var] : bound) out.emplace(path, grads.of(var));
  return out;
}

void accumulate(ParameterSet& acc, const ParameterSet& g) {
  for (const auto& [path, value] : g) {
    auto it = acc.find(path);
    if (it == acc.end()) {
      acc.emplace(path, value);
      continue;
    }
    if (it->second.shape() != value.shape()) shape_error("accumulate", it->second.shape(), value.shape());
    for (std::size_t i = 0; i < value.size(); ++i) it->second[i] += value[i];
  }
}

const Var& get(const BoundParameters& bound, const std::string& path) {
  auto it = bound.find(path);
  if (it == bound.end()) throw Error(ErrorKind::Data, "missing parameter '" + path + "'");
  return it->second;
}

}  // namespace seclm::ad
