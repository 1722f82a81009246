#include "jam/losses.hpp"

#include "jam/error.hpp"

#include <algorithm>
#include <limits>

namespace jam::loss {

void SimilarityConfig::validate() const {
  require(tau > 0, ErrorKind::InvalidInput, "tau must be > 0");
  require(logit_scale_max >= 0, ErrorKind::InvalidInput, "logit_scale_max must be >= 0");
}

double SimilarityConfig::scale(double log_scale) const {
  return mode == LogitScaleMode::Fixed ? 1.0 / tau : std::exp(log_scale);
}

double SimilarityConfig::clamp_log_scale(double log_scale) const {
  return std::clamp(log_scale, 0.0, logit_scale_max);
}

std::string to_string(Objective o) {
  switch (o) {
    case Objective::Con: return "con";
    case Objective::NegCon: return "negcon";
    case Objective::Spread: return "spread";
  }
  return "?";
}

Objective objective_from_string(const std::string& s) {
  if (s == "con") return Objective::Con;
  if (s == "negcon") return Objective::NegCon;
  if (s == "spread") return Objective::Spread;
  fail(ErrorKind::ConfigError, "unknown objective '" + s + "' (expected con, negcon or spread)");
}

void LossConfig::validate() const {
  auto in_unit = [](double a) { return a >= 0.0 && a <= 1.0; };
  if (alpha.kind == AlphaSchedule::Kind::Fixed)
    require(in_unit(alpha.value), ErrorKind::ConfigError, "alpha must lie in [0, 1]");
  else
    require(in_unit(alpha.start) && in_unit(alpha.end), ErrorKind::ConfigError,
            "alpha schedule endpoints must lie in [0, 1]");
  require(lambda_start >= lambda_end && lambda_end >= 0, ErrorKind::ConfigError,
          "lambda schedule needs lambda_start >= lambda_end >= 0");
}

// ---- similarity ----------------------------------------------------------------

namespace {

Matrix normalize_rows(const Matrix& z, Vector* norms = nullptr) {
  Matrix u = z;
  if (norms) norms->resize(z.rows());
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const double n = z.row(i).norm();
    require(n > 0 && std::isfinite(n), ErrorKind::DegenerateInput, "cosine similarity: zero-norm row");
    u.row(i) /= n;
    if (norms) (*norms)[i] = n;
  }
  return u;
}

// Backward through row normalization u = z / |z|.
Matrix normalize_backward(const Matrix& u, const Vector& norms, const Matrix& du) {
  Matrix dz(u.rows(), u.cols());
  for (Eigen::Index i = 0; i < u.rows(); ++i) {
    const double proj = u.row(i).dot(du.row(i));
    dz.row(i) = (du.row(i) - proj * u.row(i)) / norms[i];
  }
  return dz;
}

// Adds weight * (logsumexp_{k in set} x_k - x_pos) to the running value and its
// gradient into g. `in_set(k)` selects the denominator entries.
template <typename InSet>
double nce_row(const double* x, Eigen::Index len, Eigen::Index pos, InSet in_set, double weight, double* g) {
  double mx = -std::numeric_limits<double>::infinity();
  for (Eigen::Index k = 0; k < len; ++k)
    if (in_set(k)) mx = std::max(mx, x[k]);
  double sum = 0.0;
  for (Eigen::Index k = 0; k < len; ++k)
    if (in_set(k)) sum += std::exp(x[k] - mx);
  const double lse = mx + std::log(sum);
  if (g) {
    for (Eigen::Index k = 0; k < len; ++k)
      if (in_set(k)) g[k] += weight * std::exp(x[k] - lse);
    g[pos] -= weight;
  }
  return weight * (lse - x[pos]);
}

void check_square(const Matrix& vp, const char* what) {
  require(vp.rows() == vp.cols(), ErrorKind::InvalidInput, std::string(what) + ": logits must be N x N");
  require(vp.rows() >= 2, ErrorKind::InvalidInput, std::string(what) + ": needs at least 2 pairs");
}

void check_pair(const Matrix& vp, const Matrix& vn, const char* what) {
  check_square(vp, what);
  require(vn.rows() == vp.rows() && vn.cols() == vp.cols(), ErrorKind::InvalidInput,
          std::string(what) + ": negative logits shape mismatch");
}

// Row i of the concatenated pool [vp(i, :), vn(i, :)].
void pool_row(const Matrix& vp, const Matrix& vn, Eigen::Index i, std::vector<double>& row) {
  const auto n = vp.cols();
  row.resize(static_cast<std::size_t>(2 * n));
  for (Eigen::Index j = 0; j < n; ++j) {
    row[static_cast<std::size_t>(j)] = vp(i, j);
    row[static_cast<std::size_t>(n + j)] = vn(i, j);
  }
}

void scatter_pool(const std::vector<double>& g, Eigen::Index i, LogitGrad& grad) {
  const auto n = grad.vp.cols();
  for (Eigen::Index j = 0; j < n; ++j) {
    grad.vp(i, j) += g[static_cast<std::size_t>(j)];
    grad.vn(i, j) += g[static_cast<std::size_t>(n + j)];
  }
}

}  // namespace

Matrix cosine_logits(const Matrix& za, const Matrix& zb, double scale) {
  require(za.cols() == zb.cols(), ErrorKind::InvalidInput, "cosine_logits: latent dims differ");
  const Matrix ua = normalize_rows(za);
  const Matrix ub = normalize_rows(zb);
  return scale * (ua * ub.transpose());
}

// ---- logit-space terms ------------------------------------------------------------

double vl_term(const Matrix& vp, bool include_positive, double weight, LogitGrad* grad) {
  check_square(vp, "vl");
  const auto n = vp.rows();
  const double w = weight / static_cast<double>(n);
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    auto in_set = [&](Eigen::Index j) { return include_positive || j != i; };
    total += nce_row(vp.row(i).data(), n, i, in_set, w, grad ? grad->vp.row(i).data() : nullptr);
  }
  return total;
}

double lv_term(const Matrix& vp, bool include_positive, double weight, LogitGrad* grad) {
  check_square(vp, "lv");
  const auto n = vp.rows();
  const double w = weight / static_cast<double>(n);
  // Column i of vp holds caption i against every image.
  const Matrix vt = vp.transpose();
  Matrix gt = Matrix::Zero(n, n);
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    auto in_set = [&](Eigen::Index j) { return include_positive || j != i; };
    total += nce_row(vt.row(i).data(), n, i, in_set, w, grad ? gt.row(i).data() : nullptr);
  }
  if (grad) grad->vp += gt.transpose();
  return total;
}

double negcon_vl_term(const Matrix& vp, const Matrix& vn, bool include_positive, double weight, LogitGrad* grad) {
  check_pair(vp, vn, "negcon");
  const auto n = vp.rows();
  const double w = weight / (2.0 * static_cast<double>(n));
  std::vector<double> row, g;
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    pool_row(vp, vn, i, row);
    g.assign(row.size(), 0.0);
    auto in_set = [&](Eigen::Index k) { return include_positive || k != i; };
    total += nce_row(row.data(), 2 * n, i, in_set, w, grad ? g.data() : nullptr);
    if (grad) scatter_pool(g, i, *grad);
  }
  return total;
}

double concon_term(const Matrix& vp, const Matrix& vn, double weight, LogitGrad* grad) {
  check_pair(vp, vn, "concon");
  const auto n = vp.rows();
  // Mean over anchors, then over the two members of the similar-context set.
  const double w = weight / (2.0 * static_cast<double>(n));
  std::vector<double> row, g;
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    pool_row(vp, vn, i, row);
    g.assign(row.size(), 0.0);
    for (const Eigen::Index c : {i, n + i}) {
      auto in_set = [&](Eigen::Index k) { return k == c || (k != i && k != n + i); };
      total += nce_row(row.data(), 2 * n, c, in_set, w, grad ? g.data() : nullptr);
    }
    if (grad) scatter_pool(g, i, *grad);
  }
  return total;
}

double contextnce_term(const Matrix& vp, const Matrix& vn, double weight, LogitGrad* grad) {
  require(vp.rows() == vp.cols() && vn.rows() == vp.rows() && vn.cols() == vp.cols(), ErrorKind::InvalidInput,
          "contextnce: logits must be N x N");
  require(vp.rows() >= 1, ErrorKind::InvalidInput, "contextnce: empty batch");
  const auto n = vp.rows();
  const double w = weight / static_cast<double>(n);
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double x[2] = {vp(i, i), vn(i, i)};
    double g[2] = {0.0, 0.0};
    total += nce_row(x, 2, 0, [](Eigen::Index) { return true; }, w, grad ? g : nullptr);
    if (grad) {
      grad->vp(i, i) += g[0];
      grad->vn(i, i) += g[1];
    }
  }
  return total;
}

// ---- objectives on latents -------------------------------------------------------

namespace {

void check_batch(const Matrix& zv, const Matrix& zl, const char* what) {
  require(zv.rows() == zl.rows(), ErrorKind::InvalidInput, std::string(what) + ": batch sizes differ");
}

}  // namespace

double loss_vl_con(const Matrix& zv, const Matrix& zlp, double scale, bool include_positive) {
  check_batch(zv, zlp, "loss_vl_con");
  return vl_term(cosine_logits(zv, zlp, scale), include_positive);
}

double loss_lv(const Matrix& zlp, const Matrix& zv, double scale, bool include_positive) {
  check_batch(zv, zlp, "loss_lv");
  return lv_term(cosine_logits(zv, zlp, scale), include_positive);
}

double loss_con(const Matrix& zv, const Matrix& zlp, double scale, bool include_positive) {
  check_batch(zv, zlp, "loss_con");
  const Matrix vp = cosine_logits(zv, zlp, scale);
  return 0.5 * (vl_term(vp, include_positive) + lv_term(vp, include_positive));
}

double loss_negcon(const Matrix& zv, const Matrix& zlp, const Matrix& zln, double scale, bool include_positive) {
  check_batch(zv, zlp, "loss_negcon");
  check_batch(zv, zln, "loss_negcon");
  const Matrix vp = cosine_logits(zv, zlp, scale);
  const Matrix vn = cosine_logits(zv, zln, scale);
  return 0.5 * (negcon_vl_term(vp, vn, include_positive) + lv_term(vp, include_positive));
}

double loss_concon(const Matrix& zv, const Matrix& zlp, const Matrix& zln, double scale) {
  check_batch(zv, zlp, "loss_concon");
  check_batch(zv, zln, "loss_concon");
  return concon_term(cosine_logits(zv, zlp, scale), cosine_logits(zv, zln, scale));
}

double loss_contextnce(const Matrix& zv, const Matrix& zlp, const Matrix& zln, double scale) {
  check_batch(zv, zlp, "loss_contextnce");
  check_batch(zv, zln, "loss_contextnce");
  return contextnce_term(cosine_logits(zv, zlp, scale), cosine_logits(zv, zln, scale));
}

double loss_spread_vl(const Matrix& zv, const Matrix& zlp, const Matrix& zln, double alpha, double scale) {
  require(alpha >= 0.0 && alpha <= 1.0, ErrorKind::InvalidInput, "spread: alpha must lie in [0, 1]");
  check_batch(zv, zlp, "loss_spread");
  check_batch(zv, zln, "loss_spread");
  const Matrix vp = cosine_logits(zv, zlp, scale);
  const Matrix vn = cosine_logits(zv, zln, scale);
  return (1.0 - alpha) * concon_term(vp, vn) + alpha * contextnce_term(vp, vn);
}

double loss_spread(const Matrix& zv, const Matrix& zlp, const Matrix& zln, double alpha, double scale) {
  const double vl = loss_spread_vl(zv, zlp, zln, alpha, scale);
  return 0.5 * (vl + lv_term(cosine_logits(zv, zlp, scale), false));
}

double mse_recon(const Matrix& x, const Matrix& xhat) {
  require(x.rows() == xhat.rows() && x.cols() == xhat.cols(), ErrorKind::InvalidInput,
          "mse_recon: shape mismatch");
  require(x.size() > 0, ErrorKind::InvalidInput, "mse_recon: empty input");
  return (xhat - x).squaredNorm() / static_cast<double>(x.size());
}

// ---- schedules -------------------------------------------------------------------

double lambda_schedule(double epoch, double total, const LossConfig& cfg) {
  require(epoch >= 0 && epoch <= total, ErrorKind::InvalidInput, "lambda_schedule: epoch out of range");
  if (total <= 0) return cfg.lambda_start;
  if (epoch == total) return cfg.lambda_end;
  return cfg.lambda_start + (cfg.lambda_end - cfg.lambda_start) * epoch / total;
}

double alpha_schedule(const AlphaSchedule& spec, double epoch, double total) {
  switch (spec.kind) {
    case AlphaSchedule::Kind::Fixed:
      require(spec.value >= 0 && spec.value <= 1, ErrorKind::ConfigError, "alpha must lie in [0, 1]");
      return spec.value;
    case AlphaSchedule::Kind::Linear:
      require(spec.start >= 0 && spec.start <= 1 && spec.end >= 0 && spec.end <= 1, ErrorKind::ConfigError,
              "alpha schedule endpoints must lie in [0, 1]");
      require(epoch >= 0 && epoch <= total, ErrorKind::ConfigError, "alpha_schedule: epoch out of range");
      if (total <= 0) return spec.start;
      if (epoch == total) return spec.end;
      return spec.start + (spec.end - spec.start) * epoch / total;
  }
  fail(ErrorKind::ConfigError, "malformed alpha schedule");
}

// ---- full objective ------------------------------------------------------------------

AlignmentResult alignment_loss(const Matrix& zv, const Matrix& zlp, const Matrix& zln, double alpha,
                               double log_scale, const LossConfig& loss_cfg, const SimilarityConfig& sim_cfg,
                               bool want_grad) {
  check_batch(zv, zlp, "alignment_loss");
  check_batch(zv, zln, "alignment_loss");
  require(zv.cols() == zlp.cols() && zv.cols() == zln.cols(), ErrorKind::InvalidInput,
          "alignment_loss: latent dims differ");
  const double scale = sim_cfg.scale(log_scale);
  const bool inc = loss_cfg.include_positive_in_denominator;
  const bool uses_negatives = loss_cfg.objective != Objective::Con;

  Vector nv, np, nn;
  const Matrix uv = normalize_rows(zv, &nv);
  const Matrix up = normalize_rows(zlp, &np);
  const Matrix cos_vp = uv * up.transpose();
  Matrix un, cos_vn;
  if (uses_negatives) {
    un = normalize_rows(zln, &nn);
    cos_vn = uv * un.transpose();
  } else {
    cos_vn = Matrix::Zero(zv.rows(), zv.rows());
  }
  const Matrix vp = scale * cos_vp;
  const Matrix vn = scale * cos_vn;

  LogitGrad g(zv.rows());
  LogitGrad* gp = want_grad ? &g : nullptr;
  AlignmentResult out;
  switch (loss_cfg.objective) {
    case Objective::Con:
      out.value = vl_term(vp, inc, 0.5, gp) + lv_term(vp, inc, 0.5, gp);
      break;
    case Objective::NegCon:
      out.value = negcon_vl_term(vp, vn, inc, 0.5, gp) + lv_term(vp, inc, 0.5, gp);
      break;
    case Objective::Spread:
      require(alpha >= 0.0 && alpha <= 1.0, ErrorKind::InvalidInput, "spread: alpha must lie in [0, 1]");
      out.value = concon_term(vp, vn, 0.5 * (1.0 - alpha), gp) + contextnce_term(vp, vn, 0.5 * alpha, gp) +
                  lv_term(vp, false, 0.5, gp);
      break;
  }
  if (!want_grad) return out;

  const Matrix d_cos_vp = scale * g.vp;
  const Matrix d_cos_vn = scale * g.vn;
  const double d_scale = g.vp.cwiseProduct(cos_vp).sum() + g.vn.cwiseProduct(cos_vn).sum();
  out.d_log_scale = sim_cfg.mode == LogitScaleMode::Learnable ? d_scale * scale : 0.0;

  Matrix d_uv = d_cos_vp * up;
  const Matrix d_up = d_cos_vp.transpose() * uv;
  out.d_zlp = normalize_backward(up, np, d_up);
  if (uses_negatives) {
    d_uv += d_cos_vn * un;
    out.d_zln = normalize_backward(un, nn, d_cos_vn.transpose() * uv);
  } else {
    out.d_zln = Matrix::Zero(zln.rows(), zln.cols());
  }
  out.d_zv = normalize_backward(uv, nv, d_uv);
  return out;
}

ObjectiveBreakdown total_objective(const ObjectiveInputs& in, double lambda, double alpha, double log_scale,
                                   const LossConfig& loss_cfg, const SimilarityConfig& sim_cfg, bool want_grad) {
  ObjectiveBreakdown out;
  out.lambda = lambda;
  out.alpha = alpha;
  out.logit_scale = sim_cfg.scale(log_scale);
  out.recon_v = mse_recon(in.images, in.images_recon);
  out.recon_l = mse_recon(in.texts, in.texts_recon);
  out.align_grad = alignment_loss(in.zv, in.zlp, in.zln, alpha, log_scale, loss_cfg, sim_cfg, want_grad);
  out.align = out.align_grad.value;
  out.total = lambda * (out.recon_v + out.recon_l) + out.align;
  if (want_grad) {
    out.d_images_recon = (2.0 * lambda / static_cast<double>(in.images.size())) * (in.images_recon - in.images);
    out.d_texts_recon = (2.0 * lambda / static_cast<double>(in.texts.size())) * (in.texts_recon - in.texts);
  }
  return out;
}

}  // namespace jam::loss
