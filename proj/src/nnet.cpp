#include "jam/nnet.hpp"

#include "jam/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace jam::nn {

namespace {

Matrix glorot(std::size_t in, std::size_t out, RngStream& rng) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(in + out));
  return stddev * rng_gaussian(rng, in, out);
}

}  // namespace

double silu(double x) { return x / (1.0 + std::exp(-x)); }

double silu_grad(double x) {
  const double s = 1.0 / (1.0 + std::exp(-x));
  return s * (1.0 + x * (1.0 - s));
}

// ---- Dense ------------------------------------------------------------------

Dense::Dense(std::size_t in, std::size_t out, RngStream& rng)
    : weight(glorot(in, out, rng)), bias(Matrix::Zero(1, static_cast<Eigen::Index>(out))) {}

Matrix Dense::forward(const Matrix& x, Cache& cache) const {
  require(x.cols() == weight.value.rows(), ErrorKind::InvalidInput, "dense: input width mismatch");
  cache.input = x;
  Matrix y(x.rows(), weight.value.cols());
  y.noalias() = x * weight.value;
  y.rowwise() += bias.value.row(0);
  return y;
}

Matrix Dense::backward(const Matrix& dy, const Cache& cache) {
  weight.grad.noalias() += cache.input.transpose() * dy;
  bias.grad.row(0) += dy.colwise().sum();
  Matrix dx(dy.rows(), weight.value.rows());
  dx.noalias() = dy * weight.value.transpose();
  return dx;
}

void Dense::collect(const std::string& prefix, std::vector<ParamRef>& out) {
  out.push_back({prefix + "weight", &weight});
  out.push_back({prefix + "bias", &bias});
}

// ---- LayerNorm --------------------------------------------------------------

LayerNorm::LayerNorm(std::size_t width, double eps_)
    : gain(Matrix::Ones(1, static_cast<Eigen::Index>(width))),
      bias(Matrix::Zero(1, static_cast<Eigen::Index>(width))),
      eps(eps_) {}

Matrix LayerNorm::forward(const Matrix& x, Cache& cache) const {
  const auto width = static_cast<double>(x.cols());
  cache.normalized.resize(x.rows(), x.cols());
  cache.inv_std.resize(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double mean = x.row(i).mean();
    const double var = (x.row(i).array() - mean).square().sum() / width;
    const double inv = 1.0 / std::sqrt(var + eps);
    cache.inv_std[i] = inv;
    cache.normalized.row(i) = (x.row(i).array() - mean) * inv;
  }
  Matrix y = cache.normalized.array().rowwise() * gain.value.row(0).array();
  y.rowwise() += bias.value.row(0);
  return y;
}

Matrix LayerNorm::backward(const Matrix& dy, const Cache& cache) {
  const auto& xhat = cache.normalized;
  gain.grad.row(0) += dy.cwiseProduct(xhat).colwise().sum();
  bias.grad.row(0) += dy.colwise().sum();
  const Matrix dxhat = dy.array().rowwise() * gain.value.row(0).array();
  const double width = static_cast<double>(dy.cols());
  Matrix dx(dy.rows(), dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const double sum_d = dxhat.row(i).sum();
    const double sum_dx = dxhat.row(i).dot(xhat.row(i));
    dx.row(i) = (cache.inv_std[i] / width) *
                (width * dxhat.row(i).array() - sum_d - xhat.row(i).array() * sum_dx);
  }
  return dx;
}

void LayerNorm::collect(const std::string& prefix, std::vector<ParamRef>& out) {
  out.push_back({prefix + "gain", &gain});
  out.push_back({prefix + "bias", &bias});
}

// ---- SwiGLU -----------------------------------------------------------------

SwiGlu::SwiGlu(std::size_t in, std::size_t out, RngStream& rng) : gate(in, out, rng), value(in, out, rng) {}

Matrix SwiGlu::forward(const Matrix& x, Cache& cache) const {
  cache.gate_pre = gate.forward(x, cache.gate_in);
  cache.value_pre = value.forward(x, cache.value_in);
  // Both dense caches hold the same input; keep one copy.
  cache.value_in.input.resize(0, 0);
  return cache.gate_pre.unaryExpr(&silu).cwiseProduct(cache.value_pre);
}

Matrix SwiGlu::backward(const Matrix& dy, const Cache& cache) {
  const Matrix d_value = dy.cwiseProduct(cache.gate_pre.unaryExpr(&silu));
  const Matrix d_gate = dy.cwiseProduct(cache.value_pre).cwiseProduct(cache.gate_pre.unaryExpr(&silu_grad));
  Matrix dx = gate.backward(d_gate, cache.gate_in);
  dx += value.backward(d_value, cache.gate_in);
  return dx;
}

void SwiGlu::collect(const std::string& prefix, std::vector<ParamRef>& out) {
  gate.collect(prefix + "gate.", out);
  value.collect(prefix + "value.", out);
}

// ---- Dropout ----------------------------------------------------------------

Matrix Dropout::forward(const Matrix& x, Mode mode, RngStream* rng, Cache& cache) const {
  if (mode == Mode::Eval || rate <= 0.0) {
    cache.mask.resize(0, 0);
    return x;
  }
  require(rng != nullptr, ErrorKind::UsageError, "dropout in train mode needs an rng");
  const double keep_scale = 1.0 / (1.0 - rate);
  cache.mask.resize(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i)
    cache.mask.data()[i] = rng->uniform() < rate ? 0.0 : keep_scale;
  return x.cwiseProduct(cache.mask);
}

Matrix Dropout::backward(const Matrix& dy, const Cache& cache) const {
  if (cache.mask.size() == 0) return dy;
  return dy.cwiseProduct(cache.mask);
}

// ---- ResidualMlp --------------------------------------------------------------

ResidualMlp::ResidualMlp(std::size_t width, double dropout_rate, RngStream& rng)
    : w1(glorot(width, width, rng)), w2(glorot(width, width, rng)), dropout{dropout_rate} {}

Matrix ResidualMlp::forward(const Matrix& x, Mode mode, RngStream* rng, Cache& cache) const {
  cache.input = x;
  cache.hidden_pre.noalias() = x * w1.value;
  cache.hidden_act = cache.hidden_pre.unaryExpr(&silu);
  Matrix branch(x.rows(), w2.value.cols());
  branch.noalias() = cache.hidden_act * w2.value;
  return x + dropout.forward(branch, mode, rng, cache.drop);
}

Matrix ResidualMlp::backward(const Matrix& dy, const Cache& cache) {
  const Matrix d_branch = dropout.backward(dy, cache.drop);
  w2.grad.noalias() += cache.hidden_act.transpose() * d_branch;
  Matrix d_act(dy.rows(), w2.value.rows());
  d_act.noalias() = d_branch * w2.value.transpose();
  const Matrix d_pre = d_act.cwiseProduct(cache.hidden_pre.unaryExpr(&silu_grad));
  w1.grad.noalias() += cache.input.transpose() * d_pre;
  Matrix dx = dy;
  dx.noalias() += d_pre * w1.value.transpose();
  return dx;
}

void ResidualMlp::collect(const std::string& prefix, std::vector<ParamRef>& out) {
  out.push_back({prefix + "w1", &w1});
  out.push_back({prefix + "w2", &w2});
}

// ---- Stage ------------------------------------------------------------------

Stage::Stage(std::size_t in, std::size_t width, double dropout_rate, double ln_eps, RngStream& rng)
    : dense(in, width, rng),
      norm(width, ln_eps),
      act(width, width, rng),
      dropout{dropout_rate},
      residual(width, dropout_rate, rng) {}

Matrix Stage::forward(const Matrix& x, Mode mode, RngStream* rng, Cache& cache) const {
  Matrix h = dense.forward(x, cache.dense);
  h = norm.forward(h, cache.norm);
  h = act.forward(h, cache.act);
  h = dropout.forward(h, mode, rng, cache.drop);
  return residual.forward(h, mode, rng, cache.residual);
}

Matrix Stage::backward(const Matrix& dy, const Cache& cache) {
  Matrix d = residual.backward(dy, cache.residual);
  d = dropout.backward(d, cache.drop);
  d = act.backward(d, cache.act);
  d = norm.backward(d, cache.norm);
  return dense.backward(d, cache.dense);
}

void Stage::collect(const std::string& prefix, std::vector<ParamRef>& out) {
  dense.collect(prefix + "dense.", out);
  norm.collect(prefix + "norm.", out);
  act.collect(prefix + "swiglu.", out);
  residual.collect(prefix + "residual.", out);
}

// ---- Autoencoder --------------------------------------------------------------

void AutoencoderConfig::validate() const {
  require(input_dim >= 1 && latent_dim >= 1, ErrorKind::InvalidInput, "autoencoder dims must be >= 1");
  require(std::all_of(hidden_dims.begin(), hidden_dims.end(), [](std::size_t d) { return d >= 1; }),
          ErrorKind::InvalidInput, "hidden dims must be >= 1");
  require(dropout >= 0.0 && dropout < 1.0, ErrorKind::InvalidInput, "dropout must lie in [0, 1)");
  require(layernorm_eps > 0.0, ErrorKind::InvalidInput, "layernorm_eps must be > 0");
}

Autoencoder::Autoencoder(const AutoencoderConfig& cfg, RngStream& rng) : cfg_(cfg) {
  cfg.validate();
  std::size_t width = cfg.input_dim;
  for (std::size_t h : cfg.hidden_dims) {
    encoder_.emplace_back(width, h, cfg.dropout, cfg.layernorm_eps, rng);
    width = h;
  }
  bottleneck_ = Dense(width, cfg.latent_dim, rng);
  width = cfg.latent_dim;
  for (auto it = cfg.hidden_dims.rbegin(); it != cfg.hidden_dims.rend(); ++it) {
    decoder_.emplace_back(width, *it, cfg.dropout, cfg.layernorm_eps, rng);
    width = *it;
  }
  output_ = Dense(width, cfg.input_dim, rng);
}

Autoencoder build_autoencoder(const AutoencoderConfig& cfg, RngStream& rng) { return Autoencoder(cfg, rng); }

ForwardResult Autoencoder::forward(const Matrix& x, Mode mode, RngStream* rng) const {
  require(x.cols() == static_cast<Eigen::Index>(cfg_.input_dim), ErrorKind::InvalidInput,
          "autoencoder: input has " + std::to_string(x.cols()) + " columns, expected " +
              std::to_string(cfg_.input_dim));
  ForwardResult out;
  Tape& tape = out.tape;
  tape.batch = x.rows();
  tape.encoder.resize(encoder_.size());
  tape.decoder.resize(decoder_.size());

  Matrix h = x;
  for (std::size_t s = 0; s < encoder_.size(); ++s) h = encoder_[s].forward(h, mode, rng, tape.encoder[s]);
  out.latent = bottleneck_.forward(h, tape.bottleneck);
  h = out.latent;
  for (std::size_t s = 0; s < decoder_.size(); ++s) h = decoder_[s].forward(h, mode, rng, tape.decoder[s]);
  out.reconstruction = output_.forward(h, tape.output);
  return out;
}

Matrix Autoencoder::backward(Tape& tape, const Matrix& d_latent, const Matrix& d_reconstruction) {
  require(!tape.consumed_, ErrorKind::UsageError, "tape was already consumed by backward()");
  require(d_latent.rows() == tape.batch && d_latent.cols() == static_cast<Eigen::Index>(cfg_.latent_dim),
          ErrorKind::InvalidInput, "backward: latent gradient shape mismatch");
  require(d_reconstruction.rows() == tape.batch &&
              d_reconstruction.cols() == static_cast<Eigen::Index>(cfg_.input_dim),
          ErrorKind::InvalidInput, "backward: reconstruction gradient shape mismatch");
  tape.consumed_ = true;

  Matrix d = output_.backward(d_reconstruction, tape.output);
  for (std::size_t s = decoder_.size(); s-- > 0;) d = decoder_[s].backward(d, tape.decoder[s]);
  d += d_latent;
  d = bottleneck_.backward(d, tape.bottleneck);
  for (std::size_t s = encoder_.size(); s-- > 0;) d = encoder_[s].backward(d, tape.encoder[s]);
  return d;
}

std::vector<ParamRef> Autoencoder::parameters(const std::string& prefix) {
  std::vector<ParamRef> out;
  for (std::size_t s = 0; s < encoder_.size(); ++s)
    encoder_[s].collect(prefix + "encoder." + std::to_string(s) + ".", out);
  bottleneck_.collect(prefix + "bottleneck.", out);
  for (std::size_t s = 0; s < decoder_.size(); ++s)
    decoder_[s].collect(prefix + "decoder." + std::to_string(s) + ".", out);
  output_.collect(prefix + "output.", out);
  return out;
}

namespace {

std::size_t count(const Dense& d) { return static_cast<std::size_t>(d.weight.value.size() + d.bias.value.size()); }

std::size_t count(const Stage& s) {
  return count(s.dense) + static_cast<std::size_t>(s.norm.gain.value.size() + s.norm.bias.value.size()) +
         count(s.act.gate) + count(s.act.value) +
         static_cast<std::size_t>(s.residual.w1.value.size() + s.residual.w2.value.size());
}

}  // namespace

std::size_t Autoencoder::parameter_count() const {
  std::size_t n = count(bottleneck_) + count(output_);
  for (const auto& s : encoder_) n += count(s);
  for (const auto& s : decoder_) n += count(s);
  return n;
}

void Autoencoder::zero_grad() {
  for (auto& p : parameters()) p.tensor->zero_grad();
}

// ---- optimisation -------------------------------------------------------------

void adamw_step(std::vector<ParamRef>& params, AdamWState& state, double lr) {
  for (const auto& p : params)
    if (!p.tensor->grad.allFinite()) fail(ErrorKind::NonFiniteGradient, "non-finite gradient in " + p.name);
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.push_back(Matrix::Zero(p.tensor->value.rows(), p.tensor->value.cols()));
      state.v.push_back(Matrix::Zero(p.tensor->value.rows(), p.tensor->value.cols()));
    }
  }
  require(state.m.size() == params.size(), ErrorKind::InvalidInput, "adamw: parameter list changed");
  const auto& c = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Matrix& w = params[k].tensor->value;
    const Matrix& g = params[k].tensor->grad;
    require(g.rows() == w.rows() && g.cols() == w.cols() && state.m[k].rows() == w.rows() &&
                state.m[k].cols() == w.cols(),
            ErrorKind::InvalidInput, "adamw: shape mismatch for " + params[k].name);
    w *= (1.0 - lr * c.weight_decay);
    state.m[k] = c.beta1 * state.m[k] + (1.0 - c.beta1) * g;
    state.v[k] = c.beta2 * state.v[k] + (1.0 - c.beta2) * g.cwiseAbs2();
    w.array() -= lr * (state.m[k].array() / bc1) / ((state.v[k].array() / bc2).sqrt() + c.eps);
  }
}

double cosine_lr(double epoch, double total_epochs, double lr0, double lr_min) {
  require(total_epochs > 0 && epoch >= 0 && epoch <= total_epochs, ErrorKind::InvalidInput,
          "cosine_lr: epoch out of range");
  return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + std::cos(std::numbers::pi * epoch / total_epochs));
}

double grad_norm(const std::vector<ParamRef>& params) {
  double sq = 0.0;
  for (const auto& p : params) sq += p.tensor->grad.squaredNorm();
  return std::sqrt(sq);
}

double clip_grad_norm(std::vector<ParamRef>& params, double max_norm) {
  const double norm = grad_norm(params);
  if (norm > max_norm) {
    const double scale = max_norm / norm;
    for (auto& p : params) p.tensor->grad *= scale;
  }
  return norm;
}

double grad_check(std::vector<ParamRef>& params, const std::function<double()>& loss,
                  const std::function<void()>& compute_grads, double h, RngStream& rng,
                  std::size_t samples) {
  for (auto& p : params) p.tensor->zero_grad();
  compute_grads();

  std::vector<std::pair<std::size_t, Eigen::Index>> entries;
  for (std::size_t k = 0; k < params.size(); ++k)
    for (Eigen::Index i = 0; i < params[k].tensor->value.size(); ++i) entries.emplace_back(k, i);
  std::vector<std::size_t> chosen(entries.size());
  if (entries.size() <= samples) {
    for (std::size_t i = 0; i < entries.size(); ++i) chosen[i] = i;
  } else {
    auto perm = permutation(rng, entries.size());
    perm.resize(samples);
    chosen = std::move(perm);
  }

  double worst = 0.0;
  for (std::size_t c : chosen) {
    const auto [k, i] = entries[c];
    double& w = params[k].tensor->value.data()[i];
    const double analytic = params[k].tensor->grad.data()[i];
    const double saved = w;
    w = saved + h;
    const double up = loss();
    w = saved - h;
    const double down = loss();
    w = saved;
    const double fd = (up - down) / (2.0 * h);
    worst = std::max(worst, std::abs(analytic - fd) / std::max(1e-8, std::abs(analytic) + std::abs(fd)));
  }
  return worst;
}

}  // namespace jam::nn
