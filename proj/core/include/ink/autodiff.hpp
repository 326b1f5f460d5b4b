#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ink/tensor.hpp"

namespace ink::ad {

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string n, Matrix v, bool train = true)
      : name(std::move(n)), value(std::move(v)), grad(Matrix::Zero(value.rows(), value.cols())), trainable(train) {}

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Contiguous row ranges of a packed batch: sequence i occupies rows
// [offsets[i], offsets[i+1]).
struct Segments {
  std::vector<int> offsets{0};

  static Segments from_lengths(std::span<const int> lengths);
  int count() const { return static_cast<int>(offsets.size()) - 1; }
  int begin(int i) const { return offsets[i]; }
  int length(int i) const { return offsets[i + 1] - offsets[i]; }
  int total() const { return offsets.back(); }
};

// Reverse-mode differentiation over row-major matrices. Nodes are appended in
// evaluation order; backward() walks them in reverse. A tape built with
// record=false keeps values only and cannot be differentiated.
class Tape {
 public:
  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }

  Var leaf(Parameter& p);
  Var constant(Matrix value);

  const Matrix& value(Var v) const { return nodes_[v.id].value; }
  const Matrix& grad(Var v) const { return nodes_[v.id].grad; }
  bool requires_grad(Var v) const { return nodes_[v.id].needs_grad; }
  std::size_t size() const { return nodes_.size(); }

  Var matmul(Var a, Var b);
  // a * b^T
  Var matmul_nt(Var a, Var b);
  Var add(Var a, Var b);
  // Adds a 1 x n row to every row of a.
  Var add_row(Var a, Var row);
  Var scale(Var a, double s);
  Var relu(Var a);
  // Row-wise normalization followed by gain/bias (both 1 x n).
  Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
  // Rows of table selected by ids, multiplied by scale.
  Var gather_rows(Var table, std::span<const TokenId> ids, double scale = 1.0);
  // Multi-head scaled dot-product attention. Query segment i attends over key
  // segment i; with causal=true query row r of a segment sees key rows <= r.
  Var attention(Var q, Var k, Var v, int heads, const Segments& q_segments, const Segments& k_segments,
                bool causal);
  // Scalar node whose value is supplied by the caller together with dL/dx.
  Var external_loss(Var x, double loss_value, Matrix dloss_dx);
  Var sum(std::span<const Var> scalars);

  // Seeds d(root) with `seed` (defaults to ones) and accumulates gradients into
  // every reachable trainable Parameter.
  void backward(Var root);
  void backward(Var root, const Matrix& seed);

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool needs_grad = false;
    std::function<void(Tape&, int self)> backprop;
  };

  Var push(Matrix value, bool needs_grad, std::function<void(Tape&, int)> backprop);
  bool needs(std::initializer_list<Var> inputs) const;
  Matrix& grad_buffer(int id);

  bool record_;
  std::vector<Node> nodes_;
};

// Zeroes the grads of `params`, evaluates the scalar loss on a fresh tape, runs
// backward and returns a copy of each parameter's gradient.
std::vector<Matrix> gradient(std::span<Parameter* const> params, const std::function<Var(Tape&)>& loss);

}  // namespace ink::ad
