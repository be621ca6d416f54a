#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "tailflow/datagen.hpp"
#include "tailflow/matrix.hpp"
#include "tailflow/nn.hpp"
#include "tailflow/transforms.hpp"

namespace tailflow::flow {

// ---------------------------------------------------------------------------
// Schedules
// ---------------------------------------------------------------------------

enum class ScheduleKind { Linear, VPTrig, VPPoly, Quadratic };
ScheduleKind schedule_from_string(const std::string& s);
std::string to_string(ScheduleKind k);

struct Schedule {
  ScheduleKind kind = ScheduleKind::Linear;

  double alpha(double t) const;
  double beta(double t) const;
  double dalpha(double t) const;
  double dbeta(double t) const;
  bool variance_preserving() const {
    return kind == ScheduleKind::VPTrig || kind == ScheduleKind::VPPoly;
  }
};

// x_t = alpha_t x0 + beta_t x1 and target u = dalpha_t x0 + dbeta_t x1,
// row-wise with one t per row.
void interpolate(const Schedule& sched, const Matrix& x0, const Matrix& x1,
                 std::span<const double> t, Matrix& x_t, Matrix& u);

// ---------------------------------------------------------------------------
// Training (Algorithm 1)
// ---------------------------------------------------------------------------

enum class TransformMode { Adaptive, Uniform, Arcsinh, Identity };
TransformMode transform_mode_from_string(const std::string& s);
std::string to_string(TransformMode m);

struct TrainConfig {
  ScheduleKind schedule = ScheduleKind::Linear;
  TransformMode mode = TransformMode::Adaptive;
  double alpha_max = 4.0;
  std::size_t hill_k = 0;  // 0 -> evt::default_gate_k(n_train)
  std::size_t max_epochs = 5000;
  std::size_t patience = 100;
  nn::AdamWConfig opt;
  bool standardize = false;
  std::uint64_t seed = 0;
  // Architecture (defaults are the production network).
  std::size_t hidden_width = 256;
  std::size_t hidden_layers = 4;
  std::size_t embed_dim = 256;
};

struct TrainingLog {
  std::vector<double> train_loss;
  std::vector<double> val_loss;
  std::size_t best_epoch = 0;
  std::size_t epochs = 0;
};

// Optional per-coordinate affine normalization of the log-space data.
struct Standardizer {
  bool enabled = false;
  std::vector<double> mean;
  std::vector<double> sd;

  void apply(Matrix& x) const;
  void invert(Matrix& x) const;
  double log_sd_sum() const;
};

struct TrainedModel {
  nn::VelocityNet net;
  transforms::TransformSpec transform;
  Schedule schedule;
  Standardizer standardizer;
  TrainingLog log;
  std::uint64_t seed = 0;
};

// Raised when training encounters a non-finite loss; harness code converts it
// into a recorded divergence rather than a crash.
struct DivergenceError : std::runtime_error {
  explicit DivergenceError(const std::string& what_, std::size_t epoch_ = 0)
      : std::runtime_error(what_), epoch(epoch_) {}
  std::size_t epoch;
};

TrainedModel train(const datagen::SampleMatrix& train_data,
                   const datagen::SampleMatrix& val_data, const TrainConfig& cfg);

// ---------------------------------------------------------------------------
// Sampling (Algorithm 2) and the DDIM family
// ---------------------------------------------------------------------------

// Velocity evaluated on all rows of x at one common time t.
using VelocityField = std::function<Matrix(const Matrix& x, double t)>;
// Directional derivative J_x v . dirs, row-wise.
using JvpField = std::function<Matrix(const Matrix& x, double t, const Matrix& dirs)>;
// Denoiser pair (x0_hat, x1_hat).
using DenoiserField = std::function<std::pair<Matrix, Matrix>(const Matrix& x, double t)>;

struct IntegrationResult {
  Matrix x;
  bool diverged = false;
  std::string reason;
};

// Euler integration of dx/dt = v(x, t) from t = 1 down to 0 with steps of
// 1/K. Non-finite states are reported, not thrown.
IntegrationResult euler_reverse(const VelocityField& v, Matrix x1, std::size_t steps);

enum class EtaMode { Zero, DDPMPosterior, MaxNoise };
EtaMode eta_mode_from_string(const std::string& s);

// Posterior-variance eta of the DDPM member of the family.
double ddpm_posterior_eta(const Schedule& sched, double t_k, double t_k1);

// DDIM transitions over the uniform grid t_k = k / steps, from t = 1 to 0.
// Requires a variance-preserving schedule.
IntegrationResult ddim_reverse(const DenoiserField& den, const Schedule& sched,
                               Matrix x1, std::size_t steps, EtaMode mode,
                               Rng& rng);

struct SampleResult {
  datagen::SampleMatrix sample;
  bool diverged = false;
  std::string reason;
};

// Algorithm 2 end to end: Gaussian init, Euler integration in log-space,
// optional clamp of masked coordinates, inverse transform.
SampleResult sample(const TrainedModel& model, std::size_t n, std::size_t steps,
                    double clamp_c, std::uint64_t seed);

SampleResult ddim_sample(const TrainedModel& model, std::size_t n,
                         std::size_t steps, EtaMode mode, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Score / denoiser conversions
// ---------------------------------------------------------------------------

// Solves v = dalpha x0 + dbeta x1, x = alpha x0 + beta x1 for (x0_hat,
// x1_hat). Throws at schedule singularities.
void denoiser_solve(const Schedule& sched, double t, const Matrix& x,
                    const Matrix& v, Matrix& x0_hat, Matrix& x1_hat);

std::pair<Matrix, Matrix> denoiser_from_velocity(const TrainedModel& model,
                                                 const Matrix& x, double t);
Matrix score_from_velocity(const TrainedModel& model, const Matrix& x, double t);

// Analytic fields of the Gaussian path p0 = N(0, sigma^2 I): oracles for the
// integrators, independent of any trained network.
VelocityField gaussian_path_velocity(const Schedule& sched, double sigma);
JvpField gaussian_path_jvp(const Schedule& sched, double sigma);
DenoiserField gaussian_path_denoiser(const Schedule& sched, double sigma);

// ---------------------------------------------------------------------------
// NLL via the continuous change-of-variables formula
// ---------------------------------------------------------------------------

struct NLLEstimate {
  double nll_per_dim = 0.0;
  std::size_t hutchinson_probes = 10;
  double atol = 1e-5;
  double rtol = 1e-5;
  double jacobian_term = 0.0;  // mean transform term over evaluated points
  std::size_t n_points = 0;
};

struct NLLCoreResult {
  std::vector<double> nll;  // -log p_0(z_i) per point, model (log) space
  std::size_t n_steps = 0;  // accepted dopri5 steps
};

// Integrates the augmented ODE (state, log-density) from t = 0 to 1 with an
// adaptive Dormand-Prince scheme; divergence of v estimated by Hutchinson
// probes through jvp. z0 holds the log-space points.
NLLCoreResult nll_core(const VelocityField& v, const JvpField& jvp,
                       const Matrix& z0, std::size_t probes, std::uint64_t seed,
                       double atol, double rtol);

NLLEstimate nll(const TrainedModel& model, const Matrix& data,
                std::size_t probes = 10, std::uint64_t seed = 0,
                double atol = 1e-5, double rtol = 1e-5);

}  // namespace tailflow::flow
