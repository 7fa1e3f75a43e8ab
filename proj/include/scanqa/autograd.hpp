#pragma once

// Reverse-mode differentiation over dense row-major matrices.
//
// A Tape records every operation of one forward pass. Values live in the
// tape's nodes; `Var` is a cheap handle. Parameters enter the graph through
// `Tape::param`, and `Tape::backward` adds d(loss)/d(param) into
// `Parameter::grad`.

#include <cstdint>
#include <deque>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "scanqa/geometry.hpp"

namespace scanqa {

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;

  Eigen::Index size() const { return value.size(); }
  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

namespace ag {

class Tape;

class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  const Matrix& value() const;
  /// Gradient after Tape::backward; empty when nothing reached this node.
  const Matrix& grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }
  bool valid() const { return tape_ != nullptr; }
  int id() const { return id_; }
  Tape* tape() const { return tape_; }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  explicit Tape(bool training = false, std::uint64_t dropout_seed = 0)
      : training_(training), rng_(dropout_seed) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  /// Leaf bound to a parameter. Binding the same parameter twice returns the same node.
  Var param(Parameter& p);

  /// Seeds d(out)/d(out) = 1 and propagates. `out` must be 1x1.
  void backward(Var out, double seed = 1.0);
  /// Adds parameter-leaf gradients into Parameter::grad.
  void flush_param_grads() const;

  bool training() const { return training_; }
  std::mt19937_64& rng() { return rng_; }
  std::size_t node_count() const { return nodes_.size(); }

  // Internal interface used by the op implementations.
  using BackwardFn = std::function<void(Tape&, const Matrix& grad)>;
  Var record(Matrix value, bool requires_grad, BackwardFn fn);
  const Matrix& value_of(int id) const;
  const Matrix& grad_of(int id) const;
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  void accumulate(int id, const Matrix& g);

 private:
  struct Node {
    Matrix owned;
    const Matrix* ref = nullptr;
    Matrix grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  std::deque<Node> nodes_;
  std::vector<std::pair<Parameter*, int>> bindings_;
  bool training_;
  std::mt19937_64 rng_;
};

// Elementwise and linear algebra.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_row(Var a, Var row);  // a (n x m) + broadcast row (1 x m)
Var matmul(Var a, Var b);
Var linear(Var x, Var weight, Var bias);  // x W + b, W is in x out
Var transpose(Var a);

Var gelu(Var a);
Var relu(Var a);
Var sigmoid(Var a);
Var tanh(Var a);
Var exp(Var a);
Var dropout(Var a, double rate);

// Shape manipulation.
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var slice_cols(Var a, Eigen::Index start, Eigen::Index count);
Var slice_rows(Var a, Eigen::Index start, Eigen::Index count);
Var gather_rows(Var a, std::span<const int> index);
/// Column-wise max over consecutive blocks of `group` rows.
Var group_max(Var a, int group);

Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
/// Row-wise softmax. `key_mask[j] == true` marks column j as excluded (weight exactly 0).
Var softmax_rows(Var a, const std::vector<bool>& key_mask = {});

/// Multi-head scaled dot-product attention on already projected q (n x d),
/// k and v (m x d). `key_mask[j] == true` excludes key j. Per-head attention
/// weights are copied to `weights_out` when given.
Var attention(Var q, Var k, Var v, int heads, const std::vector<bool>& key_mask,
              std::vector<Matrix>* weights_out = nullptr);

// Reductions and losses; all return 1x1.
Var sum(Var a);
Var mean(Var a);
/// Mean over rows of -log softmax(row)[target]. Rows with weight 0 are skipped;
/// returns 0 when every weight is 0.
Var softmax_cross_entropy(Var logits, std::span<const int> targets,
                          std::span<const double> row_weights = {});
/// sum(BCE(sigmoid(logits), targets)) over all elements, optionally divided by element count.
Var bce_with_logits(Var logits, const Matrix& targets, bool average);
/// Elementwise smooth-L1 (Huber, delta=1) summed over all elements.
Var smooth_l1_sum(Var diff);

double gelu_value(double x);

}  // namespace ag
}  // namespace scanqa
