#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "mama/matrix.hpp"

// Reverse-mode automatic differentiation over dense matrices.
//
// A Tape owns every intermediate value of one forward pass. Ops append nodes
// in evaluation order; backward() walks them in reverse. A tape is not
// thread-safe, but independent tapes can be used concurrently, which is how
// the trainer parallelizes over batch elements.
namespace mama::ad {

class Tape;

class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Matrix& value() const;
  // Accumulated gradient; an empty matrix when nothing flowed into this node.
  const Matrix& grad() const;
  bool requires_grad() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  // Value of a 1×1 node.
  double scalar() const;

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var variable(Matrix value);
  // Leaf that aliases `value`; the caller keeps it alive for the tape's lifetime.
  Var external(const Matrix& value, bool requires_grad);

  // Appends an op node. The node requires grad iff any input does; `fn` is
  // dropped otherwise.
  Var record(Matrix value, std::initializer_list<Var> inputs, Backward fn);
  Var record(Matrix value, std::span<const Var> inputs, Backward fn);

  const Matrix& value(std::size_t id) const;
  const Matrix& grad(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  // Adds `delta` into the gradient of `id` (no-op for nodes without grad).
  void accumulate(std::size_t id, const Matrix& delta);
  // Zero-initialized gradient buffer for in-place accumulation.
  Matrix& grad_buffer(std::size_t id);

  // Seeds d(root)/d(root) = 1 for a 1×1 root and propagates.
  void backward(Var root);
  // Seeds several outputs at once (used to push loss gradients back into
  // per-example encoder tapes).
  void backward(std::span<const Var> roots, std::span<const Matrix> seeds);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix own;
    const Matrix* external = nullptr;
    Matrix grad;
    bool requires_grad = false;
    Backward fn;
  };
  void propagate(std::size_t from);

  std::deque<Node> nodes_;  // stable references across appends
};

// ---- ops -------------------------------------------------------------------

Var matmul(Var a, Var b);     // a·b
Var matmul_nt(Var a, Var b);  // a·bᵀ
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);          // elementwise
Var add_bias(Var a, Var bias);  // bias is 1×cols, broadcast over rows
Var add_const(Var a, const Matrix& c);
Var scale(Var a, double c);
Var div_scalar(Var a, Var s);  // s is 1×1
Var gelu(Var a);
Var layer_norm(Var a, Var gamma, Var beta, double eps = 1e-5);
Var softmax_rows(Var a);
Var log_softmax_rows(Var a);
Var transpose(Var a);
// Row-wise Euclidean normalization; throws NumericError on a zero row.
Var normalize_rows(Var a);
Var mean_rows(Var a);  // 1×cols average over rows
Var mean_all(Var a);   // 1×1
Var sum_all(Var a);    // 1×1
Var gather_rows(Var a, std::span<const std::size_t> rows);
Var concat_rows(std::span<const Var> parts);
Var diagonal(Var a);                // n×1
Var row_dot(Var a, Var b);          // n×1, ⟨a_i, b_i⟩
Var with_diagonal(Var a, Var diag);  // copy of a with diag (n×1) written onto its diagonal

// x·Wᵀ + b with W stored out×in.
Var linear(Var x, Var weight, Var bias);

}  // namespace mama::ad
