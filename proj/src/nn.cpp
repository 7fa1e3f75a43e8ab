#include "scanqa/nn.hpp"

#include <cmath>
#include <stdexcept>

#include <Eigen/QR>

namespace scanqa::nn {

Parameter& ParameterStore::create(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
  if (find(name)) throw std::logic_error("duplicate parameter: " + name);
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->value = Matrix::Zero(rows, cols);
  p->grad = Matrix::Zero(rows, cols);
  params_.push_back(std::move(p));
  return *params_.back();
}

Parameter* ParameterStore::find(const std::string& name) {
  for (auto& p : params_) {
    if (p->name == name) return p.get();
  }
  return nullptr;
}

const Parameter* ParameterStore::find(const std::string& name) const {
  for (const auto& p : params_) {
    if (p->name == name) return p.get();
  }
  return nullptr;
}

std::vector<Parameter*> ParameterStore::all() {
  std::vector<Parameter*> out;
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<const Parameter*> ParameterStore::all() const {
  std::vector<const Parameter*> out;
  for (const auto& p : params_) out.push_back(p.get());
  return out;
}

std::size_t ParameterStore::count(const std::string& prefix) const {
  std::size_t n = 0;
  for (const auto& p : params_) {
    if (p->name.starts_with(prefix)) n += static_cast<std::size_t>(p->size());
  }
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

double ParameterStore::grad_norm(const std::string& prefix) const {
  double s = 0.0;
  for (const auto& p : params_) {
    if (p->name.starts_with(prefix) && p->grad.size() > 0) s += p->grad.squaredNorm();
  }
  return std::sqrt(s);
}

void init_fan_in(Parameter& p, Eigen::Index fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<Eigen::Index>(fan_in, 1)));
  std::uniform_real_distribution<double> u(-bound, bound);
  for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = u(rng);
}

void init_orthogonal(Parameter& p, Rng& rng) {
  const Eigen::Index n = p.value.rows();
  std::normal_distribution<double> g(0.0, 1.0);
  for (Eigen::Index c0 = 0; c0 < p.value.cols(); c0 += n) {
    const Eigen::Index w = std::min(n, p.value.cols() - c0);
    Eigen::MatrixXd a(n, n);
    for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = g(rng);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
    Eigen::MatrixXd q = qr.householderQ();
    // sign fix makes the draw uniform over the orthogonal group
    const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (Eigen::Index j = 0; j < n; ++j) {
      if (r(j, j) < 0) q.col(j) *= -1.0;
    }
    p.value.middleCols(c0, w) = q.leftCols(w);
  }
}

ag::Var activate(ag::Var x, Activation act) {
  switch (act) {
    case Activation::kRelu:
      return ag::relu(x);
    case Activation::kGelu:
      return ag::gelu(x);
    case Activation::kNone:
      break;
  }
  return x;
}

Linear Linear::create(ParameterStore& store, const std::string& name, int in, int out, Rng& rng) {
  Linear l;
  l.weight = &store.create(name + ".weight", in, out);
  l.bias = &store.create(name + ".bias", 1, out);
  init_fan_in(*l.weight, in, rng);
  init_fan_in(*l.bias, in, rng);
  return l;
}

ag::Var Linear::operator()(ag::Tape& tape, ag::Var x) const {
  return ag::linear(x, tape.param(*weight), tape.param(*bias));
}

Mlp Mlp::create(ParameterStore& store, const std::string& name, const std::vector<int>& widths,
                Activation act, bool activate_last, Rng& rng) {
  if (widths.size() < 2) throw std::invalid_argument("Mlp needs at least input and output width");
  Mlp m;
  m.act = act;
  m.activate_last = activate_last;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    m.layers.push_back(Linear::create(store, name + "." + std::to_string(i), widths[i], widths[i + 1], rng));
  }
  return m;
}

ag::Var Mlp::operator()(ag::Tape& tape, ag::Var x) const {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    x = layers[i](tape, x);
    if (i + 1 < layers.size() || activate_last) x = activate(x, act);
  }
  return x;
}

LayerNorm LayerNorm::create(ParameterStore& store, const std::string& name, int dim) {
  LayerNorm ln;
  ln.gamma = &store.create(name + ".gamma", 1, dim);
  ln.beta = &store.create(name + ".beta", 1, dim);
  ln.gamma->value.setOnes();
  return ln;
}

ag::Var LayerNorm::operator()(ag::Tape& tape, ag::Var x) const {
  return ag::layer_norm(x, tape.param(*gamma), tape.param(*beta));
}

Adam::Adam(ParameterStore& store, AdamConfig cfg) : store_(store), cfg_(cfg) {
  for (const Parameter* p : store_.all()) {
    m_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  auto params = store_.all();
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    if (p.grad.size() == 0) continue;
    Matrix g = p.grad;
    if (cfg_.weight_decay != 0.0) g += cfg_.weight_decay * p.value;
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
    const Matrix m_hat = m_[i] / bc1;
    const Matrix v_hat = v_[i] / bc2;
    p.value.array() -= cfg_.lr * m_hat.array() / (v_hat.array().sqrt() + cfg_.eps);
  }
}

}  // namespace scanqa::nn
