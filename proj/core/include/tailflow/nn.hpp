#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "tailflow/matrix.hpp"
#include "tailflow/rng.hpp"

namespace tailflow::nn {

struct NetConfig {
  std::size_t data_dim = 0;
  std::size_t hidden_width = 256;
  std::size_t hidden_layers = 4;
  std::size_t embed_dim = 256;  // even; embed_dim/2 sin/cos frequency pairs
  double freq_min = 1.0;
  double freq_max = 1000.0;
};

// Feed-forward velocity network v_theta(x, t): input [x, embed(t)], SiLU
// hidden layers, linear output of width data_dim. Parameters live in one flat
// vector; gradients and JVPs are computed by hand-rolled reverse/forward
// passes. An instance is immutable during forward/jvp and safe to share
// across threads; training mutates params through the span accessor.
class VelocityNet {
 public:
  explicit VelocityNet(const NetConfig& cfg);

  const NetConfig& config() const { return cfg_; }
  std::size_t n_params() const { return params_.size(); }
  std::span<double> params() { return params_; }
  std::span<const double> params() const { return params_; }
  const std::vector<double>& frequencies() const { return freqs_; }

  // He-uniform hidden layers, zero-initialized output layer (so the initial
  // velocity field is identically zero).
  void init(Rng& rng);

  std::vector<double> time_embed(double t) const;

  // x is b x d, t has length b; returns b x d.
  Matrix forward(const Matrix& x, std::span<const double> t) const;

  // Mean squared error over batch rows and coordinates, with the parameter
  // gradient accumulated into grad (which must have n_params() entries).
  double loss_and_grad(const Matrix& x, std::span<const double> t,
                       const Matrix& target, std::span<double> grad) const;

  // Forward-only MSE (validation).
  double loss(const Matrix& x, std::span<const double> t,
              const Matrix& target) const;

  // Directional derivative in x: J_x v(x, t) . v, batched row-wise.
  Matrix jvp(const Matrix& x, std::span<const double> t, const Matrix& v) const;

  // Adjoint: J_x^T u, batched row-wise.
  Matrix vjp(const Matrix& x, std::span<const double> t, const Matrix& u) const;

 private:
  NetConfig cfg_;
  std::vector<double> params_;
  std::vector<double> freqs_;
  // Offsets of W_l / b_l blocks inside params_ (layers 0..hidden_layers are
  // the hidden stack plus the output layer).
  std::vector<std::size_t> w_off_, b_off_;
  std::vector<std::size_t> in_dim_, out_dim_;
};

struct AdamWConfig {
  double lr = 5e-3;
  double weight_decay = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 10.0;  // global gradient norm; <= 0 disables
};

class AdamW {
 public:
  explicit AdamW(std::size_t n_params, AdamWConfig cfg = {});

  // Clips grad in place to the global norm, then applies one decoupled
  // weight-decay Adam update.
  void step(std::span<double> params, std::span<double> grad);

  std::size_t step_count() const { return t_; }
  const AdamWConfig& config() const { return cfg_; }

 private:
  AdamWConfig cfg_;
  std::vector<double> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace tailflow::nn
