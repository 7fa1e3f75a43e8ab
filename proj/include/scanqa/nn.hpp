#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "scanqa/autograd.hpp"

namespace scanqa::nn {

using Rng = std::mt19937_64;

/// Owns every learnable matrix of a model, in registration order.
class ParameterStore {
 public:
  Parameter& create(const std::string& name, Eigen::Index rows, Eigen::Index cols);
  Parameter* find(const std::string& name);
  const Parameter* find(const std::string& name) const;

  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;
  /// Total scalar count, optionally restricted to names with a prefix.
  std::size_t count(const std::string& prefix = "") const;
  void zero_grad();
  double grad_norm(const std::string& prefix = "") const;

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
};

/// U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weight and bias.
void init_fan_in(Parameter& p, Eigen::Index fan_in, Rng& rng);
/// Fill with an orthogonal matrix (rows x cols, square blocks along columns).
void init_orthogonal(Parameter& p, Rng& rng);

enum class Activation { kNone, kRelu, kGelu };

ag::Var activate(ag::Var x, Activation act);

struct Linear {
  Parameter* weight = nullptr;  // in x out
  Parameter* bias = nullptr;    // 1 x out

  static Linear create(ParameterStore& store, const std::string& name, int in, int out, Rng& rng);
  ag::Var operator()(ag::Tape& tape, ag::Var x) const;
  int in() const { return static_cast<int>(weight->value.rows()); }
  int out() const { return static_cast<int>(weight->value.cols()); }
};

/// Stack of affine layers; `act` follows every layer but the last unless
/// `activate_last`.
struct Mlp {
  std::vector<Linear> layers;
  Activation act = Activation::kRelu;
  bool activate_last = false;

  static Mlp create(ParameterStore& store, const std::string& name, const std::vector<int>& widths,
                    Activation act, bool activate_last, Rng& rng);
  ag::Var operator()(ag::Tape& tape, ag::Var x) const;
};

struct LayerNorm {
  Parameter* gamma = nullptr;
  Parameter* beta = nullptr;

  static LayerNorm create(ParameterStore& store, const std::string& name, int dim);
  ag::Var operator()(ag::Tape& tape, ag::Var x) const;
};

struct AdamConfig {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-5;  // L2 term added to the gradient
};

class Adam {
 public:
  Adam(ParameterStore& store, AdamConfig cfg);

  /// One update from the gradients currently held by the parameters.
  void step();
  void set_lr(double lr) { cfg_.lr = lr; }
  double lr() const { return cfg_.lr; }
  std::int64_t steps() const { return t_; }

  // State access for checkpoints; moments are in store registration order.
  std::vector<Matrix>& first_moments() { return m_; }
  std::vector<Matrix>& second_moments() { return v_; }
  void set_steps(std::int64_t t) { t_ = t; }

 private:
  ParameterStore& store_;
  AdamConfig cfg_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  std::int64_t t_ = 0;
};

}  // namespace scanqa::nn
