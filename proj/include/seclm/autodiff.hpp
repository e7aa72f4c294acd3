#pragma once

// Reverse-mode automatic differentiation over dense row-major double arrays.
//
// A Tape records primitive operations as they are evaluated. Each recorded
// node stores its value, its parent node ids and a closure that pushes the
// incoming gradient back to the parents. Because nodes are appended in
// evaluation order, parents always precede children and a single reverse
// sweep visits every node exactly once.
//
// Tapes are single-threaded. Tensors are plain values and can be moved
// across threads freely; run one tape per worker.

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace seclm::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values);
  explicit Tensor(Shape shape, double fill = 0.0);

  static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }
  static Tensor vector(std::vector<double> v);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v);
  static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape(), 0.0); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return values_.size(); }
  std::size_t rank() const noexcept { return shape_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  /// Extents of a rank-2 tensor. Throws for other ranks.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> values() const noexcept { return values_; }
  std::span<double> data() noexcept { return values_; }
  const std::vector<double>& storage() const noexcept { return values_; }

  double operator[](std::size_t i) const { return values_[i]; }
  double& operator[](std::size_t i) { return values_[i]; }
  double at(std::size_t r, std::size_t c) const { return values_[r * shape_.back() + c]; }
  double& at(std::size_t r, std::size_t c) { return values_[r * shape_.back() + c]; }

  /// Value of a single-element tensor.
  double item() const;

  Tensor reshaped(Shape shape) const;

 private:
  Shape shape_;
  std::vector<double> values_;
};

using NodeId = std::uint32_t;
class Tape;

/// Handle to a node on a Tape. Cheap to copy; only valid while its tape lives.
class Var {
 public:
  Var() = default;

  bool valid() const noexcept { return tape_ != nullptr; }
  Tape& tape() const { return *tape_; }
  NodeId id() const noexcept { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
  double item() const { return value().item(); }
  bool requires_grad() const;

 private:
  friend class Tape;
  Var(Tape* tape, NodeId id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  NodeId id_ = 0;
};

/// Gradient buffers handed to backward closures.
class GradSink {
 public:
  /// True when the node participates in differentiation.
  bool wants(NodeId id) const;
  /// Zero-initialised (on first use) buffer shaped like the node's value.
  Tensor& buffer(NodeId id);

 private:
  friend class Tape;
  GradSink(const Tape& tape, std::vector<Tensor>& grads) : tape_(tape), grads_(grads) {}
  const Tape& tape_;
  std::vector<Tensor>& grads_;
};

using BackwardFn = std::function<void(const Tape& tape, NodeId self, const Tensor& grad, GradSink& sink)>;

class Gradients {
 public:
  /// Gradient of the loss w.r.t. `v`. Nodes the loss does not depend on
  /// (detached) yield zeros and set `*detached` when provided.
  Tensor of(const Var& v, bool* detached = nullptr) const;
  bool reached(const Var& v) const;

 private:
  friend class Tape;
  const Tape* tape_ = nullptr;
  std::vector<Tensor> grads_;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Differentiable input (parameter or input whose gradient is wanted).
  Var leaf(Tensor value) { return push(std::move(value), {}, nullptr, true); }
  /// Input that never receives a gradient.
  Var constant(Tensor value) { return push(std::move(value), {}, nullptr, false); }

  /// Appends a node computed from `parents`. The node requires a gradient
  /// iff any parent does; `fn` is dropped otherwise.
  Var record(Tensor value, std::vector<NodeId> parents, BackwardFn fn);

  /// Reverse sweep from a single-element loss.
  Gradients backward(const Var& loss) const;

  std::size_t size() const noexcept { return nodes_.size(); }
  const Tensor& value(NodeId id) const { return nodes_[id].value; }
  bool requires_grad(NodeId id) const { return nodes_[id].requires_grad; }
  const std::vector<NodeId>& parents(NodeId id) const { return nodes_[id].parents; }

 private:
  struct Node {
    Tensor value;
    std::vector<NodeId> parents;
    BackwardFn backward;
    bool requires_grad = false;
  };
  Var push(Tensor value, std::vector<NodeId> parents, BackwardFn fn, bool requires_grad);

  std::deque<Node> nodes_;  // stable addresses: values stay valid while the tape grows
};

// ---------------------------------------------------------------------------
// Primitives. Shapes must conform exactly; there is no implicit broadcasting.
// Mismatches throw seclm::Error(ErrorKind::Shape) naming both shapes.

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var neg(const Var& a);
Var scale(const Var& a, double k);
Var add_scalar(const Var& a, double k);
/// `s` holds one element; scales every entry of `v` by it.
Var scale_by(const Var& s, const Var& v);

Var sum(const Var& a);
Var mean(const Var& a);
Var square(const Var& a);
Var sqrt(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var tanh(const Var& a);
Var relu(const Var& a);

/// Rank-2 x rank-2, or rank-2 x rank-1 (matrix-vector).
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
/// (m, n) matrix plus an n-vector added to every row.
Var add_row(const Var& m, const Var& row);
/// Softmax along the last axis of a rank-2 tensor (rank-1: whole vector).
Var softmax(const Var& a);
Var dot(const Var& a, const Var& b);
Var l2_norm(const Var& a);
Var cross(const Var& a, const Var& b);

Var reshape(const Var& a, Shape shape);
/// Flat slice [start, start + count) of the row-major values, as a vector.
Var slice(const Var& a, std::size_t start, std::size_t count);
/// Row `r` of a rank-2 tensor, as a vector.
Var row(const Var& m, std::size_t r);
/// Concatenation of flattened values; result is a vector.
Var concat(const std::vector<Var>& parts);
/// Stacks equally sized vectors into a (parts.size(), n) matrix.
Var stack_rows(const std::vector<Var>& rows);

/// Solves the square system a x = b for a (n, n) matrix and n-vector b.
Var solve(const Var& a, const Var& b);

/// Patch extraction for convolution. `image` is (h*w, c) channels-last;
/// output is (ho*wo, k*k*c) with zero padding `pad` and the given stride.
Var im2col(const Var& image, std::size_t h, std::size_t w, std::size_t kernel, std::size_t stride,
           std::size_t pad);

/// Blocks gradient flow; the value passes through unchanged.
Var stop_gradient(const Var& a);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator-(const Var& a) { return neg(a); }
inline Var operator*(const Var& a, double k) { return scale(a, k); }
inline Var operator*(double k, const Var& a) { return scale(a, k); }

// ---------------------------------------------------------------------------
// Named parameter collections shared by every model in the library.

/// Ordered map from parameter path (e.g. "detector/conv1/weight") to value.
using ParameterSet = std::map<std::string, Tensor>;
using BoundParameters = std::map<std::string, Var>;

/// Registers every parameter as a leaf (or constant when `trainable` is false).
BoundParameters bind(Tape& tape, const ParameterSet& params, bool trainable = true);

/// Collects the gradients of bound parameters into a ParameterSet.
ParameterSet collect(const Gradients& grads, const BoundParameters& bound);

/// In-place `acc += g` for every path in `g`; absent paths are copied.
void accumulate(ParameterSet& acc, const ParameterSet& g);

const Var& get(const BoundParameters& bound, const std::string& path);

}  // namespace seclm::ad
