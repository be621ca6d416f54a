#include "tailflow/flow.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "tailflow/evt.hpp"

namespace tailflow::flow {

// ---------------------------------------------------------------------------
// Schedules
// ---------------------------------------------------------------------------

ScheduleKind schedule_from_string(const std::string& s) {
  if (s == "linear") return ScheduleKind::Linear;
  if (s == "vp_trig" || s == "vp-trig" || s == "trig") return ScheduleKind::VPTrig;
  if (s == "vp_poly" || s == "vp-poly" || s == "poly") return ScheduleKind::VPPoly;
  if (s == "quadratic") return ScheduleKind::Quadratic;
  throw std::invalid_argument("unknown schedule: " + s);
}

std::string to_string(ScheduleKind k) {
  switch (k) {
    case ScheduleKind::Linear: return "linear";
    case ScheduleKind::VPTrig: return "vp_trig";
    case ScheduleKind::VPPoly: return "vp_poly";
    case ScheduleKind::Quadratic: return "quadratic";
  }
  return "?";
}

double Schedule::alpha(double t) const {
  switch (kind) {
    case ScheduleKind::Linear: return 1.0 - t;
    case ScheduleKind::VPTrig: return std::cos(0.5 * std::numbers::pi * t);
    case ScheduleKind::VPPoly: return std::sqrt(1.0 - t);
    case ScheduleKind::Quadratic: return (1.0 - t) * (1.0 - t);
  }
  return 0.0;
}

double Schedule::beta(double t) const {
  switch (kind) {
    case ScheduleKind::Linear: return t;
    case ScheduleKind::VPTrig: return std::sin(0.5 * std::numbers::pi * t);
    case ScheduleKind::VPPoly: return std::sqrt(t);
    case ScheduleKind::Quadratic: return 1.0 - (1.0 - t) * (1.0 - t);
  }
  return 0.0;
}

double Schedule::dalpha(double t) const {
  switch (kind) {
    case ScheduleKind::Linear: return -1.0;
    case ScheduleKind::VPTrig:
      return -0.5 * std::numbers::pi * std::sin(0.5 * std::numbers::pi * t);
    case ScheduleKind::VPPoly: return -0.5 / std::sqrt(1.0 - t);
    case ScheduleKind::Quadratic: return -2.0 * (1.0 - t);
  }
  return 0.0;
}

double Schedule::dbeta(double t) const {
  switch (kind) {
    case ScheduleKind::Linear: return 1.0;
    case ScheduleKind::VPTrig:
      return 0.5 * std::numbers::pi * std::cos(0.5 * std::numbers::pi * t);
    case ScheduleKind::VPPoly: return 0.5 / std::sqrt(t);
    case ScheduleKind::Quadratic: return 2.0 * (1.0 - t);
  }
  return 0.0;
}

void interpolate(const Schedule& sched, const Matrix& x0, const Matrix& x1,
                 std::span<const double> t, Matrix& x_t, Matrix& u) {
  const std::size_t n = x0.rows();
  const std::size_t d = x0.cols();
  if (x1.rows() != n || x1.cols() != d || t.size() != n) {
    throw std::invalid_argument("interpolate: shape mismatch");
  }
  if (x_t.rows() != n || x_t.cols() != d) x_t = Matrix(n, d);
  if (u.rows() != n || u.cols() != d) u = Matrix(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    const double a = sched.alpha(t[i]);
    const double b = sched.beta(t[i]);
    const double da = sched.dalpha(t[i]);
    const double db = sched.dbeta(t[i]);
    for (std::size_t j = 0; j < d; ++j) {
      x_t(i, j) = a * x0(i, j) + b * x1(i, j);
      u(i, j) = da * x0(i, j) + db * x1(i, j);
    }
  }
}

// ---------------------------------------------------------------------------
// Standardizer
// ---------------------------------------------------------------------------

void Standardizer::apply(Matrix& x) const {
  if (!enabled) return;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < x.cols(); ++j) {
      x(i, j) = (x(i, j) - mean[j]) / sd[j];
    }
  }
}

void Standardizer::invert(Matrix& x) const {
  if (!enabled) return;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < x.cols(); ++j) {
      x(i, j) = x(i, j) * sd[j] + mean[j];
    }
  }
}

double Standardizer::log_sd_sum() const {
  if (!enabled) return 0.0;
  double s = 0.0;
  for (double v : sd) s += std::log(v);
  return s;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

TransformMode transform_mode_from_string(const std::string& s) {
  if (s == "adaptive") return TransformMode::Adaptive;
  if (s == "uniform") return TransformMode::Uniform;
  if (s == "arcsinh") return TransformMode::Arcsinh;
  if (s == "identity") return TransformMode::Identity;
  throw std::invalid_argument("unknown transform mode: " + s);
}

std::string to_string(TransformMode m) {
  switch (m) {
    case TransformMode::Adaptive: return "adaptive";
    case TransformMode::Uniform: return "uniform";
    case TransformMode::Arcsinh: return "arcsinh";
    case TransformMode::Identity: return "identity";
  }
  return "?";
}

namespace {

transforms::TransformSpec fit_transform(const Matrix& train, const TrainConfig& cfg) {
  const std::size_t d = train.cols();
  switch (cfg.mode) {
    case TransformMode::Uniform:
      return transforms::TransformSpec::uniform(transforms::Family::SoftLog, d);
    case TransformMode::Arcsinh:
      return transforms::TransformSpec::uniform(transforms::Family::Arcsinh, d);
    case TransformMode::Identity:
      return transforms::TransformSpec::identity(d);
    case TransformMode::Adaptive: {
      const std::size_t k = cfg.hill_k ? cfg.hill_k : evt::default_gate_k(train.rows());
      auto mask = evt::hill_mask(train, cfg.alpha_max, k);
      auto spec = transforms::TransformSpec::from_mask(transforms::Family::SoftLog,
                                                       std::move(mask), cfg.alpha_max);
      return spec;
    }
  }
  throw std::logic_error("fit_transform: unreachable");
}

void fill_gaussian(Matrix& m, Rng& rng) {
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) m(i, j) = rng.normal();
  }
}

}  // namespace

TrainedModel train(const datagen::SampleMatrix& train_data,
                   const datagen::SampleMatrix& val_data, const TrainConfig& cfg) {
  const Matrix& raw_train = train_data.data;
  const Matrix& raw_val = val_data.data;
  if (raw_train.rows() < 2) throw std::invalid_argument("train: need at least 2 rows");
  const std::size_t d = raw_train.cols();
  if (raw_val.rows() > 0 && raw_val.cols() != d) {
    throw std::invalid_argument("train: val dimension mismatch");
  }
  const bool early_stop = cfg.patience < cfg.max_epochs;
  if (raw_val.rows() == 0 && early_stop) {
    throw std::invalid_argument("train: empty validation set with early stopping requested");
  }

  transforms::TransformSpec spec = fit_transform(raw_train, cfg);
  Matrix xt = transforms::apply_forward(spec, raw_train);
  Matrix xv = raw_val.rows() > 0 ? transforms::apply_forward(spec, raw_val) : Matrix();

  Standardizer stdz;
  stdz.enabled = cfg.standardize;
  if (stdz.enabled) {
    stdz.mean.assign(d, 0.0);
    stdz.sd.assign(d, 1.0);
    const auto n = static_cast<double>(xt.rows());
    for (std::size_t j = 0; j < d; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < xt.rows(); ++i) s += xt(i, j);
      stdz.mean[j] = s / n;
      double ss = 0.0;
      for (std::size_t i = 0; i < xt.rows(); ++i) {
        const double c = xt(i, j) - stdz.mean[j];
        ss += c * c;
      }
      const double sd = std::sqrt(ss / n);
      stdz.sd[j] = sd > 1e-12 ? sd : 1.0;
    }
    stdz.apply(xt);
    if (xv.rows() > 0) stdz.apply(xv);
  }

  nn::NetConfig net_cfg;
  net_cfg.data_dim = d;
  net_cfg.hidden_width = cfg.hidden_width;
  net_cfg.hidden_layers = cfg.hidden_layers;
  net_cfg.embed_dim = cfg.embed_dim;
  nn::VelocityNet net(net_cfg);
  Rng rng_init(derive_seed(cfg.seed, 1));
  net.init(rng_init);

  nn::AdamW opt(net.n_params(), cfg.opt);
  Rng rng_train(derive_seed(cfg.seed, 2));
  Rng rng_val(derive_seed(cfg.seed, 3));

  const Schedule sched{cfg.schedule};
  const std::size_t n = xt.rows();
  const std::size_t nv = xv.rows();
  Matrix noise(n, d), x_t, target;
  std::vector<double> t(n);
  std::vector<double> grad(net.n_params());

  // The validation interpolants are drawn once and frozen: the validation
  // loss is then a deterministic function of the parameters, so best-epoch
  // selection and the patience counter respond to the model, not to
  // resampling noise.
  Matrix xv_t, target_v;
  std::vector<double> tv(nv);
  if (nv > 0) {
    Matrix noise_v(nv, d);
    for (std::size_t i = 0; i < nv; ++i) tv[i] = rng_val.open01();
    fill_gaussian(noise_v, rng_val);
    interpolate(sched, xv, noise_v, tv, xv_t, target_v);
  }

  TrainingLog log;
  double best_val = std::numeric_limits<double>::infinity();
  std::vector<double> best_params(net.params().begin(), net.params().end());
  std::size_t best_epoch = 0;

  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    // One fresh t per row per epoch; open interval avoids the schedule
    // endpoint singularities of the VP-poly derivative.
    for (std::size_t i = 0; i < n; ++i) t[i] = rng_train.open01();
    fill_gaussian(noise, rng_train);
    interpolate(sched, xt, noise, t, x_t, target);

    double train_loss;
    try {
      train_loss = net.loss_and_grad(x_t, t, target, grad);
    } catch (const std::runtime_error& e) {
      throw DivergenceError(std::string("training loss diverged: ") + e.what(), epoch);
    }
    log.train_loss.push_back(train_loss);
    opt.step(net.params(), grad);

    if (nv > 0) {
      double val_loss;
      try {
        val_loss = net.loss(xv_t, tv, target_v);
      } catch (const std::runtime_error& e) {
        throw DivergenceError(std::string("validation pass diverged: ") + e.what(), epoch);
      }
      if (!std::isfinite(val_loss)) {
        throw DivergenceError("validation loss is not finite", epoch);
      }
      log.val_loss.push_back(val_loss);
      if (val_loss < best_val) {
        best_val = val_loss;
        best_epoch = epoch;
        std::copy(net.params().begin(), net.params().end(), best_params.begin());
      }
      if (early_stop && epoch - best_epoch >= cfg.patience) break;
    } else {
      best_epoch = epoch;
      std::copy(net.params().begin(), net.params().end(), best_params.begin());
    }
  }

  std::copy(best_params.begin(), best_params.end(), net.params().begin());
  log.best_epoch = best_epoch;
  log.epochs = log.train_loss.size();

  return TrainedModel{std::move(net), std::move(spec), sched, std::move(stdz),
                      std::move(log), cfg.seed};
}

// ---------------------------------------------------------------------------
// Euler and DDIM integration
// ---------------------------------------------------------------------------

IntegrationResult euler_reverse(const VelocityField& v, Matrix x1, std::size_t steps) {
  if (steps == 0) throw std::invalid_argument("euler_reverse: steps must be >= 1");
  const double dt = 1.0 / static_cast<double>(steps);
  for (std::size_t k = steps; k >= 1; --k) {
    const double t = static_cast<double>(k) / static_cast<double>(steps);
    const Matrix vel = v(x1, t);
    for (std::size_t i = 0; i < x1.rows(); ++i) {
      for (std::size_t j = 0; j < x1.cols(); ++j) x1(i, j) -= dt * vel(i, j);
    }
    if (!x1.all_finite()) {
      std::ostringstream os;
      os << "non-finite state after Euler step at t=" << t;
      return IntegrationResult{std::move(x1), true, os.str()};
    }
  }
  return IntegrationResult{std::move(x1), false, {}};
}

EtaMode eta_mode_from_string(const std::string& s) {
  if (s == "zero") return EtaMode::Zero;
  if (s == "ddpm") return EtaMode::DDPMPosterior;
  if (s == "max") return EtaMode::MaxNoise;
  throw std::invalid_argument("unknown eta mode: " + s);
}

double ddpm_posterior_eta(const Schedule& sched, double t_k, double t_k1) {
  const double bk = sched.beta(t_k);
  const double bk1 = sched.beta(t_k1);
  const double ak = sched.alpha(t_k);
  const double ak1 = sched.alpha(t_k1);
  if (!(bk1 > 0.0) || !(ak > 0.0)) {
    throw std::invalid_argument("ddpm_posterior_eta: schedule degenerate at given times");
  }
  const double eta2 = (bk * bk) / (bk1 * bk1) * (1.0 - (ak1 * ak1) / (ak * ak));
  return std::sqrt(std::max(eta2, 0.0));
}

IntegrationResult ddim_reverse(const DenoiserField& den, const Schedule& sched,
                               Matrix x1, std::size_t steps, EtaMode mode,
                               Rng& rng) {
  if (steps == 0) throw std::invalid_argument("ddim_reverse: steps must be >= 1");
  if (!sched.variance_preserving()) {
    throw std::invalid_argument("DDIM requires variance-preserving schedule");
  }
  const auto grid_t = [&](std::size_t k) {
    return static_cast<double>(k) / static_cast<double>(steps);
  };
  for (std::size_t k = steps; k >= 1; --k) {
    const double t_cur = grid_t(k);
    const double t_tgt = grid_t(k - 1);
    auto [x0_hat, x1_hat] = den(x1, t_cur);
    const double beta_tgt = sched.beta(t_tgt);
    double eta = 0.0;
    switch (mode) {
      case EtaMode::Zero: eta = 0.0; break;
      case EtaMode::DDPMPosterior: eta = ddpm_posterior_eta(sched, t_tgt, t_cur); break;
      case EtaMode::MaxNoise: eta = beta_tgt; break;
    }
    const double rad = beta_tgt * beta_tgt - eta * eta;
    if (rad < -1e-12) {
      throw std::invalid_argument("ddim_reverse: eta exceeds beta (negative radicand)");
    }
    const double coef1 = std::sqrt(std::max(rad, 0.0));
    const double alpha_tgt = sched.alpha(t_tgt);
    for (std::size_t i = 0; i < x1.rows(); ++i) {
      for (std::size_t j = 0; j < x1.cols(); ++j) {
        double v = alpha_tgt * x0_hat(i, j) + coef1 * x1_hat(i, j);
        if (eta > 0.0) v += eta * rng.normal();
        x1(i, j) = v;
      }
    }
    if (!x1.all_finite()) {
      std::ostringstream os;
      os << "non-finite state after DDIM transition to t=" << t_tgt;
      return IntegrationResult{std::move(x1), true, os.str()};
    }
  }
  return IntegrationResult{std::move(x1), false, {}};
}

namespace {

VelocityField net_velocity(const TrainedModel& model) {
  return [&model](const Matrix& x, double t) {
    const std::vector<double> tv(x.rows(), t);
    return model.net.forward(x, tv);
  };
}

SampleResult finish_sample(const TrainedModel& model, IntegrationResult res,
                           double clamp_c) {
  SampleResult out;
  out.sample.labels.assign(model.transform.dim(), datagen::MarginLabel::Other);
  if (res.diverged) {
    out.diverged = true;
    out.reason = std::move(res.reason);
    out.sample.data = std::move(res.x);
    return out;
  }
  model.standardizer.invert(res.x);
  try {
    out.sample.data = transforms::apply_inverse(model.transform, res.x, clamp_c);
  } catch (const transforms::InverseOverflowError& e) {
    out.diverged = true;
    out.reason = e.what();
    out.sample.data = std::move(res.x);
  }
  return out;
}

}  // namespace

SampleResult sample(const TrainedModel& model, std::size_t n, std::size_t steps,
                    double clamp_c, std::uint64_t seed) {
  const std::size_t d = model.transform.dim();
  Rng rng(seed);
  Matrix x(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) x(i, j) = rng.normal();
  }
  IntegrationResult res;
  try {
    res = euler_reverse(net_velocity(model), std::move(x), steps);
  } catch (const std::runtime_error& e) {
    // Overflowing network outputs surface as forward-pass errors; record the
    // run as divergent instead of crashing.
    SampleResult out;
    out.sample.labels.assign(d, datagen::MarginLabel::Other);
    out.diverged = true;
    out.reason = e.what();
    return out;
  }
  return finish_sample(model, std::move(res), clamp_c);
}

SampleResult ddim_sample(const TrainedModel& model, std::size_t n,
                         std::size_t steps, EtaMode mode, std::uint64_t seed) {
  const std::size_t d = model.transform.dim();
  Rng rng(seed);
  Matrix x(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) x(i, j) = rng.normal();
  }
  DenoiserField den = [&model](const Matrix& xx, double t) {
    return denoiser_from_velocity(model, xx, t);
  };
  IntegrationResult res;
  try {
    res = ddim_reverse(den, model.schedule, std::move(x), steps, mode, rng);
  } catch (const std::invalid_argument&) {
    throw;  // schedule preconditions are caller errors
  } catch (const std::runtime_error& e) {
    SampleResult out;
    out.sample.labels.assign(d, datagen::MarginLabel::Other);
    out.diverged = true;
    out.reason = e.what();
    return out;
  }
  return finish_sample(model, std::move(res), transforms::kNoClamp);
}

// ---------------------------------------------------------------------------
// Score / denoiser conversions
// ---------------------------------------------------------------------------

void denoiser_solve(const Schedule& sched, double t, const Matrix& x,
                    const Matrix& v, Matrix& x0_hat, Matrix& x1_hat) {
  const double a = sched.alpha(t);
  const double b = sched.beta(t);
  const double da = sched.dalpha(t);
  const double db = sched.dbeta(t);
  if (!std::isfinite(a) || !std::isfinite(b) || !std::isfinite(da) || !std::isfinite(db)) {
    throw std::invalid_argument("denoiser_solve: schedule singular at t=" + std::to_string(t));
  }
  const double det = da * b - db * a;
  if (std::abs(det) < 1e-14) {
    throw std::invalid_argument("denoiser_solve: degenerate schedule system at t=" +
                                std::to_string(t));
  }
  const std::size_t n = x.rows(), d = x.cols();
  if (v.rows() != n || v.cols() != d) {
    throw std::invalid_argument("denoiser_solve: shape mismatch");
  }
  if (x0_hat.rows() != n || x0_hat.cols() != d) x0_hat = Matrix(n, d);
  if (x1_hat.rows() != n || x1_hat.cols() != d) x1_hat = Matrix(n, d);
  const double inv = 1.0 / det;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      x0_hat(i, j) = (v(i, j) * b - db * x(i, j)) * inv;
      x1_hat(i, j) = (da * x(i, j) - a * v(i, j)) * inv;
    }
  }
}

std::pair<Matrix, Matrix> denoiser_from_velocity(const TrainedModel& model,
                                                 const Matrix& x, double t) {
  const std::vector<double> tv(x.rows(), t);
  const Matrix v = model.net.forward(x, tv);
  Matrix x0_hat, x1_hat;
  denoiser_solve(model.schedule, t, x, v, x0_hat, x1_hat);
  return {std::move(x0_hat), std::move(x1_hat)};
}

Matrix score_from_velocity(const TrainedModel& model, const Matrix& x, double t) {
  const double b = model.schedule.beta(t);
  if (!(b > 0.0)) {
    throw std::invalid_argument("score_from_velocity: beta(t) must be positive");
  }
  auto [x0_hat, x1_hat] = denoiser_from_velocity(model, x, t);
  Matrix score(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < x.cols(); ++j) score(i, j) = -x1_hat(i, j) / b;
  }
  return score;
}

// ---------------------------------------------------------------------------
// Analytic Gaussian-path fields
// ---------------------------------------------------------------------------

namespace {

double gaussian_path_coef(const Schedule& sched, double sigma, double t) {
  const double a = sched.alpha(t);
  const double b = sched.beta(t);
  const double da = sched.dalpha(t);
  const double db = sched.dbeta(t);
  const double var = a * a * sigma * sigma + b * b;
  const double c = (da * a * sigma * sigma + db * b) / var;
  if (!std::isfinite(c)) {
    throw std::invalid_argument("gaussian_path: schedule singular at t=" + std::to_string(t));
  }
  return c;
}

}  // namespace

VelocityField gaussian_path_velocity(const Schedule& sched, double sigma) {
  return [sched, sigma](const Matrix& x, double t) {
    const double c = gaussian_path_coef(sched, sigma, t);
    Matrix out(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i) {
      for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) = c * x(i, j);
    }
    return out;
  };
}

JvpField gaussian_path_jvp(const Schedule& sched, double sigma) {
  return [sched, sigma](const Matrix& x, double t, const Matrix& dirs) {
    (void)x;
    const double c = gaussian_path_coef(sched, sigma, t);
    Matrix out(dirs.rows(), dirs.cols());
    for (std::size_t i = 0; i < dirs.rows(); ++i) {
      for (std::size_t j = 0; j < dirs.cols(); ++j) out(i, j) = c * dirs(i, j);
    }
    return out;
  };
}

DenoiserField gaussian_path_denoiser(const Schedule& sched, double sigma) {
  return [sched, sigma](const Matrix& x, double t) {
    const double a = sched.alpha(t);
    const double b = sched.beta(t);
    const double var = a * a * sigma * sigma + b * b;
    const double c0 = a * sigma * sigma / var;
    const double c1 = b / var;
    Matrix x0(x.rows(), x.cols()), x1(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i) {
      for (std::size_t j = 0; j < x.cols(); ++j) {
        x0(i, j) = c0 * x(i, j);
        x1(i, j) = c1 * x(i, j);
      }
    }
    return std::make_pair(std::move(x0), std::move(x1));
  };
}

// ---------------------------------------------------------------------------
// NLL: augmented ODE with adaptive Dormand-Prince and Hutchinson divergence
// ---------------------------------------------------------------------------

namespace {

struct AugState {
  Matrix x;               // n x d
  std::vector<double> a;  // accumulated divergence integral per point

  AugState() = default;
  AugState(std::size_t n, std::size_t d) : x(n, d), a(n, 0.0) {}
};

AugState axpy(const AugState& y, double h, std::span<const double> coefs,
              const std::vector<AugState>& ks) {
  AugState out = y;
  for (std::size_t s = 0; s < coefs.size(); ++s) {
    if (coefs[s] == 0.0) continue;
    const double c = h * coefs[s];
    const AugState& k = ks[s];
    for (std::size_t i = 0; i < out.x.rows(); ++i) {
      for (std::size_t j = 0; j < out.x.cols(); ++j) out.x(i, j) += c * k.x(i, j);
      out.a[i] += c * k.a[i];
    }
  }
  return out;
}

}  // namespace

NLLCoreResult nll_core(const VelocityField& v, const JvpField& jvp,
                       const Matrix& z0, std::size_t probes, std::uint64_t seed,
                       double atol, double rtol) {
  if (probes == 0) throw std::invalid_argument("nll_core: need at least one probe");
  const std::size_t n = z0.rows();
  const std::size_t d = z0.cols();

  // Rademacher probes are fixed per point for the whole trajectory.
  Rng rng(seed);
  std::vector<Matrix> eps(probes, Matrix(n, d));
  for (auto& e : eps) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < d; ++j) e(i, j) = rng.rademacher();
    }
  }

  const auto rhs = [&](const AugState& y, double t, AugState& out) {
    out.x = v(y.x, t);
    std::fill(out.a.begin(), out.a.end(), 0.0);
    for (const auto& e : eps) {
      const Matrix je = jvp(y.x, t, e);
      for (std::size_t i = 0; i < n; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < d; ++j) dot += je(i, j) * e(i, j);
        out.a[i] += dot;
      }
    }
    const double inv = 1.0 / static_cast<double>(probes);
    for (std::size_t i = 0; i < n; ++i) out.a[i] *= inv;
  };

  // Dormand-Prince 5(4) tableau.
  static constexpr double kA[7][6] = {
      {0, 0, 0, 0, 0, 0},
      {1.0 / 5, 0, 0, 0, 0, 0},
      {3.0 / 40, 9.0 / 40, 0, 0, 0, 0},
      {44.0 / 45, -56.0 / 15, 32.0 / 9, 0, 0, 0},
      {19372.0 / 6561, -25360.0 / 2187, 64448.0 / 6561, -212.0 / 729, 0, 0},
      {9017.0 / 3168, -355.0 / 33, 46732.0 / 5247, 49.0 / 176, -5103.0 / 18656, 0},
      {35.0 / 384, 0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84}};
  static constexpr double kC[7] = {0, 1.0 / 5, 3.0 / 10, 4.0 / 5, 8.0 / 9, 1.0, 1.0};
  static constexpr double kB5[7] = {35.0 / 384, 0,           500.0 / 1113, 125.0 / 192,
                                    -2187.0 / 6784, 11.0 / 84, 0};
  static constexpr double kB4[7] = {5179.0 / 57600,    0,        7571.0 / 16695,
                                    393.0 / 640,       -92097.0 / 339200,
                                    187.0 / 2100,      1.0 / 40};

  AugState y(n, d);
  y.x = z0;
  std::vector<AugState> k(7, AugState(n, d));
  rhs(y, 0.0, k[0]);

  double t = 0.0;
  double h = 1e-2;
  std::size_t accepted = 0;
  constexpr std::size_t kMaxSteps = 100000;
  for (std::size_t iter = 0; iter < kMaxSteps && t < 1.0; ++iter) {
    h = std::min(h, 1.0 - t);
    for (std::size_t s = 1; s < 7; ++s) {
      const AugState ys = axpy(y, h, std::span<const double>(kA[s], s), k);
      rhs(ys, t + kC[s] * h, k[s]);
    }
    AugState y5 = axpy(y, h, std::span<const double>(kB5, 7), k);
    const AugState y4 = axpy(y, h, std::span<const double>(kB4, 7), k);

    // Scaled RMS error over every state entry of every point.
    double err2 = 0.0;
    double worst = 0.0;
    std::size_t worst_point = 0;
    const auto count = static_cast<double>(n * (d + 1));
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < d; ++j) {
        const double e = y5.x(i, j) - y4.x(i, j);
        const double sc = atol + rtol * std::max(std::abs(y.x(i, j)), std::abs(y5.x(i, j)));
        const double r = e / sc;
        err2 += r * r;
        if (std::abs(r) > worst) {
          worst = std::abs(r);
          worst_point = i;
        }
      }
      const double e = y5.a[i] - y4.a[i];
      const double sc = atol + rtol * std::max(std::abs(y.a[i]), std::abs(y5.a[i]));
      const double r = e / sc;
      err2 += r * r;
      if (std::abs(r) > worst) {
        worst = std::abs(r);
        worst_point = i;
      }
    }
    const double err = std::sqrt(err2 / count);

    if (!std::isfinite(err)) {
      throw std::runtime_error("nll: non-finite integration error near t=" +
                               std::to_string(t));
    }
    if (err <= 1.0) {
      t += h;
      y = std::move(y5);
      k[0] = std::move(k[6]);  // FSAL
      k[6] = AugState(n, d);
      ++accepted;
    }
    double factor = 0.9 * std::pow(std::max(err, 1e-10), -0.2);
    factor = std::min(5.0, std::max(0.2, factor));
    h *= factor;
    if (h < 1e-13 && t < 1.0) {
      throw std::runtime_error("nll: step size underflow at t=" + std::to_string(t) +
                               " (worst point index " + std::to_string(worst_point) + ")");
    }
  }
  if (t < 1.0) throw std::runtime_error("nll: integrator failed to reach t=1");

  NLLCoreResult res;
  res.n_steps = accepted;
  res.nll.resize(n);
  const double log2pi = std::log(2.0 * std::numbers::pi);
  for (std::size_t i = 0; i < n; ++i) {
    double sq = 0.0;
    for (std::size_t j = 0; j < d; ++j) sq += y.x(i, j) * y.x(i, j);
    const double log_p1 = -0.5 * static_cast<double>(d) * log2pi - 0.5 * sq;
    res.nll[i] = -(log_p1 + y.a[i]);
  }
  return res;
}

NLLEstimate nll(const TrainedModel& model, const Matrix& data, std::size_t probes,
                std::uint64_t seed, double atol, double rtol) {
  if (!data.all_finite()) throw std::invalid_argument("nll: data must be finite");
  const std::size_t d = model.transform.dim();
  if (data.cols() != d) throw std::invalid_argument("nll: dimension mismatch");

  Matrix z = transforms::apply_forward(model.transform, data);
  model.standardizer.apply(z);

  const VelocityField v = net_velocity(model);
  const JvpField jv = [&model](const Matrix& x, double t, const Matrix& dirs) {
    const std::vector<double> tv(x.rows(), t);
    return model.net.jvp(x, tv, dirs);
  };
  const NLLCoreResult core = nll_core(v, jv, z, probes, seed, atol, rtol);

  const double log_sd = model.standardizer.log_sd_sum();
  double total = 0.0;
  double jac_total = 0.0;
  for (std::size_t i = 0; i < data.rows(); ++i) {
    const double jac = -transforms::log_det_jacobian(model.transform, data.row(i));
    jac_total += jac;
    total += core.nll[i] + log_sd + jac;
  }
  NLLEstimate est;
  est.nll_per_dim = total / static_cast<double>(data.rows() * d);
  est.hutchinson_probes = probes;
  est.atol = atol;
  est.rtol = rtol;
  est.jacobian_term = jac_total / static_cast<double>(data.rows());
  est.n_points = data.rows();
  return est;
}

}  // namespace tailflow::flow
