#include "scanqa/autograd.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace scanqa::ag {

const Matrix& Var::value() const { return tape_->value_of(id_); }
const Matrix& Var::grad() const { return tape_->grad_of(id_); }

Var Tape::constant(Matrix value) { return record(std::move(value), false, nullptr); }

Var Tape::param(Parameter& p) {
  for (const auto& [bound, id] : bindings_) {
    if (bound == &p) return Var(this, id);
  }
  Node node;
  node.ref = &p.value;
  node.requires_grad = true;
  nodes_.push_back(std::move(node));
  const int id = static_cast<int>(nodes_.size()) - 1;
  bindings_.emplace_back(&p, id);
  return Var(this, id);
}

Var Tape::record(Matrix value, bool requires_grad, BackwardFn fn) {
  Node node;
  node.owned = std::move(value);
  node.requires_grad = requires_grad;
  if (requires_grad) node.backward = std::move(fn);
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

const Matrix& Tape::value_of(int id) const {
  const Node& n = nodes_[id];
  return n.ref ? *n.ref : n.owned;
}

const Matrix& Tape::grad_of(int id) const { return nodes_[id].grad; }

void Tape::accumulate(int id, const Matrix& g) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return;
  if (n.grad.size() == 0) {
    n.grad = g;
  } else {
    n.grad += g;
  }
}

void Tape::backward(Var out, double seed) {
  if (out.rows() != 1 || out.cols() != 1) throw std::logic_error("backward needs a scalar output");
  if (!requires_grad(out.id())) return;
  accumulate(out.id(), Matrix::Constant(1, 1, seed));
  for (int id = out.id(); id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.backward || n.grad.size() == 0) continue;
    n.backward(*this, n.grad);
  }
}

void Tape::flush_param_grads() const {
  for (const auto& [p, id] : bindings_) {
    const Matrix& g = nodes_[id].grad;
    if (g.size() == 0) continue;
    if (p->grad.size() == 0) p->zero_grad();
    p->grad += g;
  }
}

namespace {

bool any_grad(Var a) { return a.tape()->requires_grad(a.id()); }
bool any_grad(Var a, Var b) { return any_grad(a) || any_grad(b); }

void check_same_tape(Var a, Var b) {
  if (a.tape() != b.tape()) throw std::logic_error("operands recorded on different tapes");
}

void check_shape(bool ok, const char* op) {
  if (!ok) throw std::invalid_argument(std::string("shape mismatch in ") + op);
}

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double gelu_grad(double x) {
  return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

double gelu_value(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

Var add(Var a, Var b) {
  check_same_tape(a, b);
  check_shape(a.rows() == b.rows() && a.cols() == b.cols(), "add");
  const int ia = a.id(), ib = b.id();
  return a.tape()->record(a.value() + b.value(), any_grad(a, b), [ia, ib](Tape& t, const Matrix& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, g);
  });
}

Var sub(Var a, Var b) {
  check_same_tape(a, b);
  check_shape(a.rows() == b.rows() && a.cols() == b.cols(), "sub");
  const int ia = a.id(), ib = b.id();
  return a.tape()->record(a.value() - b.value(), any_grad(a, b), [ia, ib](Tape& t, const Matrix& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, -g);
  });
}

Var mul(Var a, Var b) {
  check_same_tape(a, b);
  check_shape(a.rows() == b.rows() && a.cols() == b.cols(), "mul");
  const int ia = a.id(), ib = b.id();
  Matrix out = a.value().cwiseProduct(b.value());
  return a.tape()->record(std::move(out), any_grad(a, b), [ia, ib](Tape& t, const Matrix& g) {
    if (t.requires_grad(ia)) t.accumulate(ia, g.cwiseProduct(t.value_of(ib)));
    if (t.requires_grad(ib)) t.accumulate(ib, g.cwiseProduct(t.value_of(ia)));
  });
}

Var scale(Var a, double s) {
  const int ia = a.id();
  return a.tape()->record(a.value() * s, any_grad(a),
                          [ia, s](Tape& t, const Matrix& g) { t.accumulate(ia, g * s); });
}

Var add_row(Var a, Var row) {
  check_same_tape(a, row);
  check_shape(row.rows() == 1 && row.cols() == a.cols(), "add_row");
  const int ia = a.id(), ir = row.id();
  Matrix out = a.value().rowwise() + row.value().row(0);
  return a.tape()->record(std::move(out), any_grad(a, row), [ia, ir](Tape& t, const Matrix& g) {
    t.accumulate(ia, g);
    if (t.requires_grad(ir)) t.accumulate(ir, g.colwise().sum());
  });
}

Var matmul(Var a, Var b) {
  check_same_tape(a, b);
  check_shape(a.cols() == b.rows(), "matmul");
  const int ia = a.id(), ib = b.id();
  Matrix out = a.value() * b.value();
  return a.tape()->record(std::move(out), any_grad(a, b), [ia, ib](Tape& t, const Matrix& g) {
    if (t.requires_grad(ia)) t.accumulate(ia, g * t.value_of(ib).transpose());
    if (t.requires_grad(ib)) t.accumulate(ib, t.value_of(ia).transpose() * g);
  });
}

Var linear(Var x, Var weight, Var bias) {
  check_same_tape(x, weight);
  check_same_tape(x, bias);
  check_shape(x.cols() == weight.rows() && bias.rows() == 1 && bias.cols() == weight.cols(),
              "linear");
  const int ix = x.id(), iw = weight.id(), ib = bias.id();
  Matrix out = x.value() * weight.value();
  out.rowwise() += bias.value().row(0);
  const bool req = any_grad(x, weight) || any_grad(bias);
  return x.tape()->record(std::move(out), req, [ix, iw, ib](Tape& t, const Matrix& g) {
    if (t.requires_grad(ix)) t.accumulate(ix, g * t.value_of(iw).transpose());
    if (t.requires_grad(iw)) t.accumulate(iw, t.value_of(ix).transpose() * g);
    if (t.requires_grad(ib)) t.accumulate(ib, g.colwise().sum());
  });
}

Var transpose(Var a) {
  const int ia = a.id();
  return a.tape()->record(a.value().transpose(), any_grad(a),
                          [ia](Tape& t, const Matrix& g) { t.accumulate(ia, g.transpose()); });
}

Var gelu(Var a) {
  const int ia = a.id();
  Matrix out = a.value().unaryExpr([](double x) { return gelu_value(x); });
  return a.tape()->record(std::move(out), any_grad(a), [ia](Tape& t, const Matrix& g) {
    t.accumulate(ia, g.cwiseProduct(t.value_of(ia).unaryExpr([](double x) { return gelu_grad(x); })));
  });
}

Var relu(Var a) {
  const int ia = a.id();
  Matrix out = a.value().cwiseMax(0.0);
  return a.tape()->record(std::move(out), any_grad(a), [ia](Tape& t, const Matrix& g) {
    Matrix mask = (t.value_of(ia).array() > 0.0).cast<double>().matrix();
    t.accumulate(ia, g.cwiseProduct(mask));
  });
}

Var sigmoid(Var a) {
  const int ia = a.id();
  Matrix out = a.value().unaryExpr([](double x) { return stable_sigmoid(x); });
  Matrix deriv = out.cwiseProduct((1.0 - out.array()).matrix());
  return a.tape()->record(std::move(out), any_grad(a),
                          [ia, deriv = std::move(deriv)](Tape& t, const Matrix& g) {
                            t.accumulate(ia, g.cwiseProduct(deriv));
                          });
}

Var tanh(Var a) {
  const int ia = a.id();
  Matrix out = a.value().array().tanh().matrix();
  Matrix deriv = (1.0 - out.array().square()).matrix();
  return a.tape()->record(std::move(out), any_grad(a),
                          [ia, deriv = std::move(deriv)](Tape& t, const Matrix& g) {
                            t.accumulate(ia, g.cwiseProduct(deriv));
                          });
}

Var exp(Var a) {
  const int ia = a.id();
  Matrix out = a.value().array().exp().matrix();
  Matrix copy = out;
  return a.tape()->record(std::move(out), any_grad(a),
                          [ia, copy = std::move(copy)](Tape& t, const Matrix& g) {
                            t.accumulate(ia, g.cwiseProduct(copy));
                          });
}

Var dropout(Var a, double rate) {
  Tape& tape = *a.tape();
  if (!tape.training() || rate <= 0.0) return a;
  if (rate >= 1.0) throw std::invalid_argument("dropout rate must be < 1");
  std::bernoulli_distribution keep(1.0 - rate);
  Matrix mask(a.rows(), a.cols());
  for (Eigen::Index i = 0; i < mask.size(); ++i) {
    mask.data()[i] = keep(tape.rng()) ? 1.0 / (1.0 - rate) : 0.0;
  }
  const int ia = a.id();
  Matrix out = a.value().cwiseProduct(mask);
  return tape.record(std::move(out), any_grad(a), [ia, mask = std::move(mask)](Tape& t, const Matrix& g) {
    t.accumulate(ia, g.cwiseProduct(mask));
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols of nothing");
  Tape* tape = parts[0].tape();
  const Eigen::Index rows = parts[0].rows();
  Eigen::Index cols = 0;
  bool req = false;
  std::vector<int> ids;
  std::vector<Eigen::Index> widths;
  for (Var p : parts) {
    check_same_tape(parts[0], p);
    check_shape(p.rows() == rows, "concat_cols");
    cols += p.cols();
    req = req || any_grad(p);
    ids.push_back(p.id());
    widths.push_back(p.cols());
  }
  Matrix out(rows, cols);
  Eigen::Index at = 0;
  for (Var p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return tape->record(std::move(out), req, [ids, widths](Tape& t, const Matrix& g) {
    Eigen::Index at = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (t.requires_grad(ids[k])) t.accumulate(ids[k], g.middleCols(at, widths[k]));
      at += widths[k];
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows of nothing");
  Tape* tape = parts[0].tape();
  const Eigen::Index cols = parts[0].cols();
  Eigen::Index rows = 0;
  bool req = false;
  std::vector<int> ids;
  std::vector<Eigen::Index> heights;
  for (Var p : parts) {
    check_same_tape(parts[0], p);
    check_shape(p.cols() == cols, "concat_rows");
    rows += p.rows();
    req = req || any_grad(p);
    ids.push_back(p.id());
    heights.push_back(p.rows());
  }
  Matrix out(rows, cols);
  Eigen::Index at = 0;
  for (Var p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  return tape->record(std::move(out), req, [ids, heights](Tape& t, const Matrix& g) {
    Eigen::Index at = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (t.requires_grad(ids[k])) t.accumulate(ids[k], g.middleRows(at, heights[k]));
      at += heights[k];
    }
  });
}

Var slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
  check_shape(start >= 0 && count >= 0 && start + count <= a.cols(), "slice_cols");
  const int ia = a.id();
  const Eigen::Index rows = a.rows(), cols = a.cols();
  return a.tape()->record(a.value().middleCols(start, count), any_grad(a),
                          [ia, rows, cols, start, count](Tape& t, const Matrix& g) {
                            Matrix full = Matrix::Zero(rows, cols);
                            full.middleCols(start, count) = g;
                            t.accumulate(ia, full);
                          });
}

Var slice_rows(Var a, Eigen::Index start, Eigen::Index count) {
  check_shape(start >= 0 && count >= 0 && start + count <= a.rows(), "slice_rows");
  const int ia = a.id();
  const Eigen::Index rows = a.rows(), cols = a.cols();
  return a.tape()->record(a.value().middleRows(start, count), any_grad(a),
                          [ia, rows, cols, start, count](Tape& t, const Matrix& g) {
                            Matrix full = Matrix::Zero(rows, cols);
                            full.middleRows(start, count) = g;
                            t.accumulate(ia, full);
                          });
}

Var gather_rows(Var a, std::span<const int> index) {
  const Matrix& src = a.value();
  Matrix out(static_cast<Eigen::Index>(index.size()), src.cols());
  for (std::size_t r = 0; r < index.size(); ++r) {
    check_shape(index[r] >= 0 && index[r] < src.rows(), "gather_rows");
    out.row(static_cast<Eigen::Index>(r)) = src.row(index[r]);
  }
  const int ia = a.id();
  const Eigen::Index rows = src.rows();
  std::vector<int> idx(index.begin(), index.end());
  return a.tape()->record(std::move(out), any_grad(a),
                          [ia, rows, idx = std::move(idx)](Tape& t, const Matrix& g) {
                            Matrix full = Matrix::Zero(rows, g.cols());
                            for (std::size_t r = 0; r < idx.size(); ++r) {
                              full.row(idx[r]) += g.row(static_cast<Eigen::Index>(r));
                            }
                            t.accumulate(ia, full);
                          });
}

Var group_max(Var a, int group) {
  check_shape(group >= 1 && a.rows() % group == 0, "group_max");
  const Matrix& src = a.value();
  const Eigen::Index groups = src.rows() / group;
  Matrix out(groups, src.cols());
  std::vector<int> argmax(static_cast<std::size_t>(groups * src.cols()));
  for (Eigen::Index gi = 0; gi < groups; ++gi) {
    for (Eigen::Index c = 0; c < src.cols(); ++c) {
      Eigen::Index best = gi * group;
      for (Eigen::Index r = best + 1; r < (gi + 1) * group; ++r) {
        if (src(r, c) > src(best, c)) best = r;
      }
      out(gi, c) = src(best, c);
      argmax[static_cast<std::size_t>(gi * src.cols() + c)] = static_cast<int>(best);
    }
  }
  const int ia = a.id();
  const Eigen::Index rows = src.rows();
  return a.tape()->record(std::move(out), any_grad(a),
                          [ia, rows, argmax = std::move(argmax)](Tape& t, const Matrix& g) {
                            Matrix full = Matrix::Zero(rows, g.cols());
                            for (Eigen::Index gi = 0; gi < g.rows(); ++gi) {
                              for (Eigen::Index c = 0; c < g.cols(); ++c) {
                                full(argmax[static_cast<std::size_t>(gi * g.cols() + c)], c) += g(gi, c);
                              }
                            }
                            t.accumulate(ia, full);
                          });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  check_same_tape(x, gamma);
  check_same_tape(x, beta);
  const Matrix& in = x.value();
  const Eigen::Index d = in.cols();
  check_shape(gamma.rows() == 1 && gamma.cols() == d && beta.rows() == 1 && beta.cols() == d,
              "layer_norm");
  Matrix xhat(in.rows(), d);
  Eigen::VectorXd inv_std(in.rows());
  for (Eigen::Index r = 0; r < in.rows(); ++r) {
    const double mu = in.row(r).mean();
    const double var = (in.row(r).array() - mu).square().mean();
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (in.row(r).array() - mu) * inv_std[r];
  }
  Matrix out = xhat.array().rowwise() * gamma.value().row(0).array();
  out.rowwise() += beta.value().row(0);
  const int ix = x.id(), ig = gamma.id(), ib = beta.id();
  const bool req = any_grad(x, gamma) || any_grad(beta);
  return x.tape()->record(
      std::move(out), req,
      [ix, ig, ib, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, const Matrix& g) {
        if (t.requires_grad(ig)) t.accumulate(ig, g.cwiseProduct(xhat).colwise().sum());
        if (t.requires_grad(ib)) t.accumulate(ib, g.colwise().sum());
        if (t.requires_grad(ix)) {
          const Matrix gx = g.array().rowwise() * t.value_of(ig).row(0).array();
          const double n = static_cast<double>(gx.cols());
          Matrix dx(gx.rows(), gx.cols());
          for (Eigen::Index r = 0; r < gx.rows(); ++r) {
            const double m1 = gx.row(r).mean();
            const double m2 = gx.row(r).cwiseProduct(xhat.row(r)).sum() / n;
            dx.row(r) = inv_std[r] * (gx.row(r).array() - m1 - xhat.row(r).array() * m2);
          }
          t.accumulate(ix, dx);
        }
      });
}

namespace {

// Softmax of each row with masked columns forced to exactly zero.
Matrix masked_softmax(const Matrix& s, const std::vector<bool>& mask) {
  Matrix out(s.rows(), s.cols());
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < s.cols(); ++c) {
      if (mask.empty() || !mask[c]) mx = std::max(mx, s(r, c));
    }
    if (!std::isfinite(mx)) throw std::invalid_argument("softmax over a fully masked row");
    double total = 0.0;
    for (Eigen::Index c = 0; c < s.cols(); ++c) {
      const double e = (!mask.empty() && mask[c]) ? 0.0 : std::exp(s(r, c) - mx);
      out(r, c) = e;
      total += e;
    }
    out.row(r) /= total;
  }
  return out;
}

// Backward of row softmax given probabilities p and upstream gradient g.
Matrix softmax_backward(const Matrix& p, const Matrix& g) {
  const Eigen::VectorXd dots = p.cwiseProduct(g).rowwise().sum();
  return p.cwiseProduct(g.colwise() - dots);
}

}  // namespace

Var softmax_rows(Var a, const std::vector<bool>& key_mask) {
  check_shape(key_mask.empty() || static_cast<Eigen::Index>(key_mask.size()) == a.cols(),
              "softmax_rows");
  Matrix p = masked_softmax(a.value(), key_mask);
  Matrix copy = p;
  const int ia = a.id();
  return a.tape()->record(std::move(p), any_grad(a), [ia, copy = std::move(copy)](Tape& t, const Matrix& g) {
    t.accumulate(ia, softmax_backward(copy, g));
  });
}

Var attention(Var q, Var k, Var v, int heads, const std::vector<bool>& key_mask,
              std::vector<Matrix>* weights_out) {
  check_same_tape(q, k);
  check_same_tape(q, v);
  const Eigen::Index d = q.cols();
  check_shape(heads >= 1 && d % heads == 0 && k.cols() == d && v.cols() == d && k.rows() == v.rows(),
              "attention");
  check_shape(key_mask.empty() || static_cast<Eigen::Index>(key_mask.size()) == k.rows(),
              "attention mask");
  if (!key_mask.empty()) {
    bool any_open = false;
    for (bool m : key_mask) any_open = any_open || !m;
    if (!any_open) throw std::invalid_argument("attention: every key is masked");
  }

  const Eigen::Index dh = d / heads;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const Matrix& qv = q.value();
  const Matrix& kv = k.value();
  const Matrix& vv = v.value();
  std::vector<Matrix> probs(static_cast<std::size_t>(heads));
  Matrix out(qv.rows(), d);
  for (int h = 0; h < heads; ++h) {
    const Matrix scores = qv.middleCols(h * dh, dh) * kv.middleCols(h * dh, dh).transpose() * inv_scale;
    probs[h] = masked_softmax(scores, key_mask);
    out.middleCols(h * dh, dh) = probs[h] * vv.middleCols(h * dh, dh);
  }
  if (weights_out) *weights_out = probs;

  const int iq = q.id(), ik = k.id(), iv = v.id();
  const bool req = any_grad(q, k) || any_grad(v);
  return q.tape()->record(
      std::move(out), req,
      [iq, ik, iv, heads, dh, inv_scale, probs = std::move(probs)](Tape& t, const Matrix& g) {
        const Matrix& qv = t.value_of(iq);
        const Matrix& kv = t.value_of(ik);
        const Matrix& vv = t.value_of(iv);
        Matrix dq = Matrix::Zero(qv.rows(), qv.cols());
        Matrix dk = Matrix::Zero(kv.rows(), kv.cols());
        Matrix dv = Matrix::Zero(vv.rows(), vv.cols());
        for (int h = 0; h < heads; ++h) {
          const Matrix& p = probs[h];
          const auto gh = g.middleCols(h * dh, dh);
          dv.middleCols(h * dh, dh) = p.transpose() * gh;
          const Matrix dp = gh * vv.middleCols(h * dh, dh).transpose();
          const Matrix ds = softmax_backward(p, dp) * inv_scale;
          dq.middleCols(h * dh, dh) = ds * kv.middleCols(h * dh, dh);
          dk.middleCols(h * dh, dh) = ds.transpose() * qv.middleCols(h * dh, dh);
        }
        t.accumulate(iq, dq);
        t.accumulate(ik, dk);
        t.accumulate(iv, dv);
      });
}

Var sum(Var a) {
  const int ia = a.id();
  const Eigen::Index rows = a.rows(), cols = a.cols();
  return a.tape()->record(Matrix::Constant(1, 1, a.value().sum()), any_grad(a),
                          [ia, rows, cols](Tape& t, const Matrix& g) {
                            t.accumulate(ia, Matrix::Constant(rows, cols, g(0, 0)));
                          });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  if (n == 0) throw std::invalid_argument("mean of empty matrix");
  return scale(sum(a), 1.0 / n);
}

Var softmax_cross_entropy(Var logits, std::span<const int> targets, std::span<const double> row_weights) {
  const Matrix& z = logits.value();
  check_shape(static_cast<Eigen::Index>(targets.size()) == z.rows(), "softmax_cross_entropy");
  check_shape(row_weights.empty() || row_weights.size() == targets.size(), "softmax_cross_entropy");
  const Matrix p = masked_softmax(z, {});
  std::vector<double> w(targets.size(), 1.0);
  if (!row_weights.empty()) w.assign(row_weights.begin(), row_weights.end());
  double total_w = 0.0;
  double loss = 0.0;
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    if (w[r] == 0.0) continue;
    const int target = targets[r];
    check_shape(target >= 0 && target < z.cols(), "softmax_cross_entropy target");
    const double mx = z.row(r).maxCoeff();
    const double lse = mx + std::log((z.row(r).array() - mx).exp().sum());
    loss += w[r] * (lse - z(r, target));
    total_w += w[r];
  }
  if (total_w == 0.0) return logits.tape()->constant(Matrix::Zero(1, 1));
  loss /= total_w;
  const int il = logits.id();
  std::vector<int> tg(targets.begin(), targets.end());
  return logits.tape()->record(
      Matrix::Constant(1, 1, loss), any_grad(logits),
      [il, p, tg = std::move(tg), w = std::move(w), total_w](Tape& t, const Matrix& g) {
        Matrix dz = Matrix::Zero(p.rows(), p.cols());
        for (Eigen::Index r = 0; r < p.rows(); ++r) {
          if (w[r] == 0.0) continue;
          dz.row(r) = p.row(r) * (w[r] / total_w);
          dz(r, tg[r]) -= w[r] / total_w;
        }
        t.accumulate(il, dz * g(0, 0));
      });
}

Var bce_with_logits(Var logits, const Matrix& targets, bool average) {
  const Matrix& z = logits.value();
  check_shape(targets.rows() == z.rows() && targets.cols() == z.cols(), "bce_with_logits");
  const double norm = average ? 1.0 / static_cast<double>(z.size()) : 1.0;
  double loss = 0.0;
  Matrix dz(z.rows(), z.cols());
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    const double x = z.data()[i];
    const double y = targets.data()[i];
    loss += std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::abs(x)));
    dz.data()[i] = (stable_sigmoid(x) - y) * norm;
  }
  const int il = logits.id();
  return logits.tape()->record(Matrix::Constant(1, 1, loss * norm), any_grad(logits),
                               [il, dz = std::move(dz)](Tape& t, const Matrix& g) {
                                 t.accumulate(il, dz * g(0, 0));
                               });
}

Var smooth_l1_sum(Var diff) {
  const Matrix& x = diff.value();
  double loss = 0.0;
  Matrix dx(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double v = x.data()[i];
    const double a = std::abs(v);
    loss += a < 1.0 ? 0.5 * v * v : a - 0.5;
    dx.data()[i] = a < 1.0 ? v : (v > 0.0 ? 1.0 : -1.0);
  }
  const int id = diff.id();
  return diff.tape()->record(Matrix::Constant(1, 1, loss), any_grad(diff),
                             [id, dx = std::move(dx)](Tape& t, const Matrix& g) {
                               t.accumulate(id, dx * g(0, 0));
                             });
}

}  // namespace scanqa::ag
