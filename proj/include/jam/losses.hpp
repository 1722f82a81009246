#pragma once

// Cross-modal alignment objectives over autoencoder latents.
//
// Every objective is a function of two logit blocks computed from cosine
// similarities of a batch of N anchors:
//   vp(i, j) = scale * cos(v_i, lp_j)   image i vs positive caption j
//   vn(i, j) = scale * cos(v_i, ln_j)   image i vs hard-negative caption j
// The text pool used by NegCon and ConCon is [lp_1..lp_N, ln_1..ln_N], so for
// anchor i the similar-context set is {i, N + i} and everything else is the
// dissimilar-context set. All ratios are evaluated with log-sum-exp.

#include "jam/numkit.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace jam::loss {

enum class LogitScaleMode { Fixed, Learnable };

struct SimilarityConfig {
  double tau = 0.07;
  LogitScaleMode mode = LogitScaleMode::Learnable;
  double logit_scale_init = std::log(1.0 / 0.07);
  double logit_scale_max = std::log(100.0);

  void validate() const;
  /// Multiplier applied to cosine similarities. Fixed mode ignores log_scale.
  double scale(double log_scale) const;
  double clamp_log_scale(double log_scale) const;
};

enum class Objective { Con, NegCon, Spread };

std::string to_string(Objective o);
Objective objective_from_string(const std::string& s);

struct AlphaSchedule {
  enum class Kind { Fixed, Linear };
  Kind kind = Kind::Fixed;
  double value = 0.5;  // Fixed
  double start = 0.5;  // Linear
  double end = 0.5;    // Linear

  static AlphaSchedule fixed(double a) { return {Kind::Fixed, a, a, a}; }
  static AlphaSchedule linear(double s, double e) { return {Kind::Linear, s, s, e}; }
};

struct LossConfig {
  Objective objective = Objective::Spread;
  AlphaSchedule alpha = AlphaSchedule::fixed(0.5);
  double lambda_start = 1.0;
  double lambda_end = 0.1;
  /// Standard InfoNCE denominators (positive included) instead of the j != i form.
  bool include_positive_in_denominator = false;

  void validate() const;
};

// ---- similarity ----------------------------------------------------------------

/// scale * cos(a_i, b_j). Throws DegenerateInput on zero-norm rows.
Matrix cosine_logits(const Matrix& za, const Matrix& zb, double scale);

/// Gradient of a loss with respect to the two logit blocks.
struct LogitGrad {
  Matrix vp;
  Matrix vn;

  LogitGrad() = default;
  LogitGrad(Eigen::Index n) : vp(Matrix::Zero(n, n)), vn(Matrix::Zero(n, n)) {}
};

// Logit-space terms. Each returns the loss value and, when grad is non-null,
// adds weight * d loss / d logits into it.

double vl_term(const Matrix& vp, bool include_positive, double weight = 1.0, LogitGrad* grad = nullptr);
double lv_term(const Matrix& vp, bool include_positive, double weight = 1.0, LogitGrad* grad = nullptr);
double negcon_vl_term(const Matrix& vp, const Matrix& vn, bool include_positive, double weight = 1.0,
                      LogitGrad* grad = nullptr);
double concon_term(const Matrix& vp, const Matrix& vn, double weight = 1.0, LogitGrad* grad = nullptr);
double contextnce_term(const Matrix& vp, const Matrix& vn, double weight = 1.0, LogitGrad* grad = nullptr);

// ---- objectives on latents -------------------------------------------------------

double loss_vl_con(const Matrix& zv, const Matrix& zlp, double scale, bool include_positive = false);
double loss_lv(const Matrix& zlp, const Matrix& zv, double scale, bool include_positive = false);
double loss_con(const Matrix& zv, const Matrix& zlp, double scale, bool include_positive = false);
double loss_negcon(const Matrix& zv, const Matrix& zlp, const Matrix& zln, double scale,
                   bool include_positive = false);
double loss_concon(const Matrix& zv, const Matrix& zlp, const Matrix& zln, double scale);
double loss_contextnce(const Matrix& zv, const Matrix& zlp, const Matrix& zln, double scale);
/// (1 - alpha) * ConCon + alpha * contextNCE.
double loss_spread_vl(const Matrix& zv, const Matrix& zlp, const Matrix& zln, double alpha, double scale);
/// 0.5 * [spread_vl + LV].
double loss_spread(const Matrix& zv, const Matrix& zlp, const Matrix& zln, double alpha, double scale);

double mse_recon(const Matrix& x, const Matrix& xhat);

// ---- schedules -------------------------------------------------------------------

/// start + (end - start) * epoch / total; total = 0 gives start.
double lambda_schedule(double epoch, double total, const LossConfig& cfg);
double alpha_schedule(const AlphaSchedule& spec, double epoch, double total);

// ---- full objective with gradients -------------------------------------------------

struct AlignmentResult {
  double value = 0.0;
  Matrix d_zv;
  Matrix d_zlp;
  Matrix d_zln;
  double d_log_scale = 0.0;
};

/// Alignment loss for the configured objective and its gradients with respect to
/// the raw latents and the log-space logit scale.
AlignmentResult alignment_loss(const Matrix& zv, const Matrix& zlp, const Matrix& zln, double alpha,
                               double log_scale, const LossConfig& loss_cfg, const SimilarityConfig& sim_cfg,
                               bool want_grad = true);

struct ObjectiveInputs {
  const Matrix& zv;
  const Matrix& zlp;
  const Matrix& zln;
  const Matrix& images;          // vision autoencoder input
  const Matrix& images_recon;
  const Matrix& texts;           // language autoencoder input ([positives; negatives])
  const Matrix& texts_recon;
};

struct ObjectiveBreakdown {
  double total = 0.0;
  double recon_v = 0.0;
  double recon_l = 0.0;
  double align = 0.0;
  double lambda = 0.0;
  double alpha = 0.0;
  double logit_scale = 0.0;  // effective multiplier

  AlignmentResult align_grad;
  Matrix d_images_recon;
  Matrix d_texts_recon;
};

/// lambda(t) * (MSE_V + MSE_L) + alignment. lambda and alpha are passed in
/// already evaluated so the caller controls the schedule horizon.
ObjectiveBreakdown total_objective(const ObjectiveInputs& in, double lambda, double alpha, double log_scale,
                                   const LossConfig& loss_cfg, const SimilarityConfig& sim_cfg,
                                   bool want_grad = true);

}  // namespace jam::loss
