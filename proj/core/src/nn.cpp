#include "tailflow/nn.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace tailflow::nn {

namespace {

using Emat = Eigen::MatrixXd;
using MapM = Eigen::Map<Emat>;
using CMapM = Eigen::Map<const Emat>;
using MapV = Eigen::Map<Eigen::VectorXd>;
using CMapV = Eigen::Map<const Eigen::VectorXd>;

Emat silu(const Emat& z) {
  return (z.array() / (1.0 + (-z.array()).exp())).matrix();
}

Emat silu_prime(const Emat& z) {
  const auto s = 1.0 / (1.0 + (-z.array()).exp());
  return (s * (1.0 + z.array() * (1.0 - s))).matrix();
}

}  // namespace

VelocityNet::VelocityNet(const NetConfig& cfg) : cfg_(cfg) {
  if (cfg_.data_dim == 0) throw std::invalid_argument("VelocityNet: data_dim must be > 0");
  if (cfg_.embed_dim % 2 != 0) throw std::invalid_argument("VelocityNet: embed_dim must be even");
  if (cfg_.hidden_layers == 0) throw std::invalid_argument("VelocityNet: need at least one hidden layer");

  const std::size_t n_freq = cfg_.embed_dim / 2;
  freqs_.resize(n_freq);
  for (std::size_t k = 0; k < n_freq; ++k) {
    const double frac = n_freq > 1 ? static_cast<double>(k) / static_cast<double>(n_freq - 1) : 0.0;
    freqs_[k] = cfg_.freq_min * std::pow(cfg_.freq_max / cfg_.freq_min, frac);
  }

  const std::size_t n_layers = cfg_.hidden_layers + 1;
  in_dim_.resize(n_layers);
  out_dim_.resize(n_layers);
  w_off_.resize(n_layers);
  b_off_.resize(n_layers);
  std::size_t off = 0;
  for (std::size_t l = 0; l < n_layers; ++l) {
    in_dim_[l] = l == 0 ? cfg_.data_dim + cfg_.embed_dim : cfg_.hidden_width;
    out_dim_[l] = l == cfg_.hidden_layers ? cfg_.data_dim : cfg_.hidden_width;
    w_off_[l] = off;
    off += in_dim_[l] * out_dim_[l];
    b_off_[l] = off;
    off += out_dim_[l];
  }
  params_.assign(off, 0.0);
}

void VelocityNet::init(Rng& rng) {
  std::fill(params_.begin(), params_.end(), 0.0);
  for (std::size_t l = 0; l < cfg_.hidden_layers; ++l) {
    const double limit = std::sqrt(6.0 / static_cast<double>(in_dim_[l]));
    double* w = params_.data() + w_off_[l];
    const std::size_t count = in_dim_[l] * out_dim_[l];
    for (std::size_t i = 0; i < count; ++i) {
      w[i] = limit * (2.0 * rng.uniform01() - 1.0);
    }
  }
  // Output layer stays zero.
}

std::vector<double> VelocityNet::time_embed(double t) const {
  if (!(t >= 0.0 && t <= 1.0)) {
    throw std::invalid_argument("time_embed: t must be in [0,1]");
  }
  const std::size_t n_freq = freqs_.size();
  std::vector<double> out(cfg_.embed_dim);
  for (std::size_t k = 0; k < n_freq; ++k) {
    const double phase = 2.0 * std::numbers::pi * freqs_[k] * t;
    out[k] = std::sin(phase);
    out[n_freq + k] = std::cos(phase);
  }
  return out;
}

namespace {

struct Workspace {
  Emat in;                 // (d + embed) x b
  std::vector<Emat> z;     // pre-activations per hidden layer
  std::vector<Emat> h;     // post-activations per hidden layer
  Emat out;                // d x b
};

}  // namespace

// Builds the network input [x; sin; cos] as columns and runs the affine/SiLU
// stack, retaining pre/post activations for the backward and tangent passes.
static void run_forward(const NetConfig& cfg, const std::vector<double>& freqs,
                        std::span<const double> params,
                        const std::vector<std::size_t>& w_off,
                        const std::vector<std::size_t>& b_off,
                        const std::vector<std::size_t>& in_dim,
                        const std::vector<std::size_t>& out_dim, const Matrix& x,
                        std::span<const double> t, Workspace& ws) {
  const auto b = static_cast<Eigen::Index>(x.rows());
  const auto d = static_cast<Eigen::Index>(cfg.data_dim);
  const auto n_freq = static_cast<Eigen::Index>(freqs.size());
  if (x.cols() != cfg.data_dim) throw std::invalid_argument("forward: x has wrong width");
  if (t.size() != x.rows()) throw std::invalid_argument("forward: t length mismatch");

  ws.in.resize(d + 2 * n_freq, b);
  // Row-major b x d buffer viewed as its transpose.
  CMapM xt(x.data(), d, b);  // column-major (d x b) view of row-major (b x d)
  ws.in.topRows(d) = xt;
  {
    CMapV tv(t.data(), b);
    CMapV fv(freqs.data(), n_freq);
    Emat phase = (2.0 * std::numbers::pi) * fv * tv.transpose();  // n_freq x b
    ws.in.middleRows(d, n_freq) = phase.array().sin().matrix();
    ws.in.bottomRows(n_freq) = phase.array().cos().matrix();
  }

  const std::size_t n_hidden = cfg.hidden_layers;
  ws.z.resize(n_hidden);
  ws.h.resize(n_hidden);
  const Emat* cur = &ws.in;
  for (std::size_t l = 0; l < n_hidden; ++l) {
    CMapM w(params.data() + w_off[l], static_cast<Eigen::Index>(out_dim[l]),
            static_cast<Eigen::Index>(in_dim[l]));
    CMapV bias(params.data() + b_off[l], static_cast<Eigen::Index>(out_dim[l]));
    ws.z[l].noalias() = w * (*cur);
    ws.z[l].colwise() += bias;
    ws.h[l] = silu(ws.z[l]);
    cur = &ws.h[l];
  }
  const std::size_t lo = n_hidden;
  CMapM w(params.data() + w_off[lo], static_cast<Eigen::Index>(out_dim[lo]),
          static_cast<Eigen::Index>(in_dim[lo]));
  CMapV bias(params.data() + b_off[lo], static_cast<Eigen::Index>(out_dim[lo]));
  ws.out.noalias() = w * (*cur);
  ws.out.colwise() += bias;
}

Matrix VelocityNet::forward(const Matrix& x, std::span<const double> t) const {
  Workspace ws;
  run_forward(cfg_, freqs_, params_, w_off_, b_off_, in_dim_, out_dim_, x, t, ws);
  Matrix out(x.rows(), cfg_.data_dim);
  MapM ot(out.data(), static_cast<Eigen::Index>(cfg_.data_dim),
          static_cast<Eigen::Index>(x.rows()));
  ot = ws.out;
  if (!out.all_finite()) {
    if (!x.all_finite()) throw std::invalid_argument("forward: non-finite input");
    throw std::runtime_error("forward: non-finite output");
  }
  return out;
}

double VelocityNet::loss(const Matrix& x, std::span<const double> t,
                         const Matrix& target) const {
  Workspace ws;
  run_forward(cfg_, freqs_, params_, w_off_, b_off_, in_dim_, out_dim_, x, t, ws);
  CMapM tt(target.data(), static_cast<Eigen::Index>(cfg_.data_dim),
           static_cast<Eigen::Index>(x.rows()));
  return (ws.out - tt).squaredNorm() /
         static_cast<double>(x.rows() * cfg_.data_dim);
}

double VelocityNet::loss_and_grad(const Matrix& x, std::span<const double> t,
                                  const Matrix& target,
                                  std::span<double> grad) const {
  if (grad.size() != params_.size()) {
    throw std::invalid_argument("loss_and_grad: grad has wrong length");
  }
  if (target.rows() != x.rows() || target.cols() != x.cols()) {
    throw std::invalid_argument("loss_and_grad: target shape mismatch");
  }
  if (x.rows() == 0) throw std::invalid_argument("loss_and_grad: empty batch");
  Workspace ws;
  run_forward(cfg_, freqs_, params_, w_off_, b_off_, in_dim_, out_dim_, x, t, ws);

  const auto b = static_cast<Eigen::Index>(x.rows());
  const auto d = static_cast<Eigen::Index>(cfg_.data_dim);
  CMapM tt(target.data(), d, b);
  const double scale = 1.0 / static_cast<double>(x.rows() * cfg_.data_dim);
  Emat delta = ws.out - tt;
  const double loss_val = delta.squaredNorm() * scale;
  if (!std::isfinite(loss_val)) {
    throw std::runtime_error("loss_and_grad: non-finite loss");
  }
  delta *= 2.0 * scale;

  std::fill(grad.begin(), grad.end(), 0.0);
  const std::size_t lo = cfg_.hidden_layers;
  // Output layer.
  {
    MapM gw(grad.data() + w_off_[lo], static_cast<Eigen::Index>(out_dim_[lo]),
            static_cast<Eigen::Index>(in_dim_[lo]));
    MapV gb(grad.data() + b_off_[lo], static_cast<Eigen::Index>(out_dim_[lo]));
    const Emat& below = cfg_.hidden_layers > 0 ? ws.h.back() : ws.in;
    gw.noalias() = delta * below.transpose();
    gb = delta.rowwise().sum();
  }
  CMapM wo(params_.data() + w_off_[lo], static_cast<Eigen::Index>(out_dim_[lo]),
           static_cast<Eigen::Index>(in_dim_[lo]));
  Emat g = wo.transpose() * delta;  // gradient wrt h[last]
  for (std::size_t l = cfg_.hidden_layers; l-- > 0;) {
    Emat dz = g.cwiseProduct(silu_prime(ws.z[l]));
    MapM gw(grad.data() + w_off_[l], static_cast<Eigen::Index>(out_dim_[l]),
            static_cast<Eigen::Index>(in_dim_[l]));
    MapV gb(grad.data() + b_off_[l], static_cast<Eigen::Index>(out_dim_[l]));
    const Emat& below = l > 0 ? ws.h[l - 1] : ws.in;
    gw.noalias() = dz * below.transpose();
    gb = dz.rowwise().sum();
    if (l > 0) {
      CMapM w(params_.data() + w_off_[l], static_cast<Eigen::Index>(out_dim_[l]),
              static_cast<Eigen::Index>(in_dim_[l]));
      g.noalias() = w.transpose() * dz;
    }
  }
  return loss_val;
}

Matrix VelocityNet::jvp(const Matrix& x, std::span<const double> t,
                        const Matrix& v) const {
  if (v.rows() != x.rows() || v.cols() != x.cols()) {
    throw std::invalid_argument("jvp: direction shape mismatch");
  }
  Workspace ws;
  run_forward(cfg_, freqs_, params_, w_off_, b_off_, in_dim_, out_dim_, x, t, ws);

  const auto b = static_cast<Eigen::Index>(x.rows());
  const auto d = static_cast<Eigen::Index>(cfg_.data_dim);
  const auto n_freq = static_cast<Eigen::Index>(freqs_.size());
  Emat din = Emat::Zero(d + 2 * n_freq, b);
  din.topRows(d) = CMapM(v.data(), d, b);  // embedding does not depend on x

  Emat cur = std::move(din);
  for (std::size_t l = 0; l < cfg_.hidden_layers; ++l) {
    CMapM w(params_.data() + w_off_[l], static_cast<Eigen::Index>(out_dim_[l]),
            static_cast<Eigen::Index>(in_dim_[l]));
    Emat dz = w * cur;
    cur = dz.cwiseProduct(silu_prime(ws.z[l]));
  }
  const std::size_t lo = cfg_.hidden_layers;
  CMapM wo(params_.data() + w_off_[lo], static_cast<Eigen::Index>(out_dim_[lo]),
           static_cast<Eigen::Index>(in_dim_[lo]));
  Emat dout = wo * cur;

  Matrix out(x.rows(), cfg_.data_dim);
  MapM(out.data(), d, b) = dout;
  return out;
}

Matrix VelocityNet::vjp(const Matrix& x, std::span<const double> t,
                        const Matrix& u) const {
  if (u.rows() != x.rows() || u.cols() != x.cols()) {
    throw std::invalid_argument("vjp: cotangent shape mismatch");
  }
  Workspace ws;
  run_forward(cfg_, freqs_, params_, w_off_, b_off_, in_dim_, out_dim_, x, t, ws);

  const auto b = static_cast<Eigen::Index>(x.rows());
  const auto d = static_cast<Eigen::Index>(cfg_.data_dim);
  const std::size_t lo = cfg_.hidden_layers;
  CMapM wo(params_.data() + w_off_[lo], static_cast<Eigen::Index>(out_dim_[lo]),
           static_cast<Eigen::Index>(in_dim_[lo]));
  Emat g = wo.transpose() * CMapM(u.data(), d, b);
  for (std::size_t l = cfg_.hidden_layers; l-- > 0;) {
    Emat dz = g.cwiseProduct(silu_prime(ws.z[l]));
    CMapM w(params_.data() + w_off_[l], static_cast<Eigen::Index>(out_dim_[l]),
            static_cast<Eigen::Index>(in_dim_[l]));
    g.noalias() = w.transpose() * dz;
  }
  Matrix out(x.rows(), cfg_.data_dim);
  MapM(out.data(), d, b) = g.topRows(d);
  return out;
}

AdamW::AdamW(std::size_t n_params, AdamWConfig cfg)
    : cfg_(cfg), m_(n_params, 0.0), v_(n_params, 0.0) {}

void AdamW::step(std::span<double> params, std::span<double> grad) {
  if (params.size() != m_.size() || grad.size() != m_.size()) {
    throw std::invalid_argument("AdamW::step: size mismatch");
  }
  MapV g(grad.data(), static_cast<Eigen::Index>(grad.size()));
  if (cfg_.clip_norm > 0.0) {
    const double norm = g.norm();
    if (norm > cfg_.clip_norm) g *= cfg_.clip_norm / norm;
  }
  ++t_;
  MapV p(params.data(), static_cast<Eigen::Index>(params.size()));
  MapV m(m_.data(), static_cast<Eigen::Index>(m_.size()));
  MapV v(v_.data(), static_cast<Eigen::Index>(v_.size()));
  m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
  v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  p.array() -= cfg_.lr * ((m.array() / bc1) / ((v.array() / bc2).sqrt() + cfg_.eps) +
                          cfg_.weight_decay * p.array());
}

}  // namespace tailflow::nn
