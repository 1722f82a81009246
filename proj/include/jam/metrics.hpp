#pragma once

// Representational alignment metrics between two embedding sets whose rows are
// paired samples: HSIC/CKA, mutual-kNN CKNNA, PCA/kernel-PCA assisted CCA, and
// SVCCA, plus the match / easy / hard report built from them.

#include "jam/numkit.hpp"

#include <array>
#include <optional>
#include <string>
#include <vector>

namespace jam::metrics {

enum class KernelKind { Linear, Rbf };

struct Kernel {
  KernelKind kind = KernelKind::Linear;
  double gamma = 0.0;  // only for Rbf

  static Kernel linear() { return {}; }
  static Kernel rbf(double gamma) { return {KernelKind::Rbf, gamma}; }
};

struct KernelMatrix {
  Matrix values;
  Kernel kernel;

  Eigen::Index n() const { return values.rows(); }
};

KernelMatrix gram(const Matrix& x, const Kernel& kernel);

/// H K H with H = I - 11^T/n.
KernelMatrix center_gram(const KernelMatrix& k);

/// tr(K̄ L̄) / (n-1)^2.
double hsic(const KernelMatrix& k, const KernelMatrix& l);

/// Throws DegenerateInput when either view has zero centered variance.
double cka(const Matrix& x, const Matrix& y, const Kernel& kernel = Kernel::linear());

/// 1 / (2 * median squared pairwise distance) over i < j.
double median_gamma(const Matrix& x);

enum class NeighborSimilarity { InnerProduct, Cosine };

/// Dense 0/1 mask; entry (i, j) is set when j is among the k most similar rows
/// to i in both views. Ties in similarity resolve toward the lower index.
using Mask = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Mask mutual_knn_mask(const Matrix& v, const Matrix& l, std::size_t k,
                     NeighborSimilarity sim = NeighborSimilarity::InnerProduct);

/// Masked centered alignment sum_ij mask_ij K̄_ij L̄_ij.
double align_local(const Matrix& k_centered, const Matrix& l_centered, const Mask& mask);

/// Whether (i, i) pairs enter the masked sums. Excluded by default; including
/// them makes k = n-1 reproduce CKA exactly.
enum class SelfPairs { Exclude, Include };

/// Align_local(K, L) / sqrt(Align_local(K, K) Align_local(L, L)), where each
/// term is masked by the mutual kNN of the pair of views it compares (so the
/// normalizers use each view's own kNN). Linear kernels.
double cknna(const Matrix& v, const Matrix& l, std::size_t k,
             NeighborSimilarity sim = NeighborSimilarity::InnerProduct, SelfPairs self_pairs = SelfPairs::Exclude);

/// Scores on the top r principal components of the centered input. Component
/// signs are chosen so that each component's largest-magnitude loading is positive.
Matrix pca_reduce(const Matrix& x, std::size_t r);

/// Top r components of the centered RBF kernel; column c is K̄ u_c / sqrt(lambda_c).
Matrix kpca_reduce(const Matrix& x, std::size_t r, double gamma);

struct CcaResult {
  Vector correlations;  // descending, clipped to [0, 1]
  double first() const { return correlations.size() ? correlations[0] : 0.0; }
};

/// Canonical correlations via whitened cross-covariance, with ridge
/// 1e-8 * trace/dim on each auto-covariance. k = 0 keeps min(dx, dy).
CcaResult cca(const Matrix& x, const Matrix& y, std::size_t k = 0);

struct SvccaOptions {
  double eta = 0.99;
  std::size_t k = 10;
};

/// Smallest leading rank whose squared singular values reach eta of the total.
std::size_t rank_for_variance(const Vector& singular_values, double eta);

double svcca(const Matrix& x, const Matrix& y, const SvccaOptions& opts = {});

// ---- report ---------------------------------------------------------------

enum class Setting { Match, EasyNonMatch, HardNonMatch };
enum class Metric { CcaLinear, CcaKernel, Cka, Svcca, Cknna };

inline constexpr std::array<Setting, 3> kSettings{Setting::Match, Setting::EasyNonMatch,
                                                  Setting::HardNonMatch};
inline constexpr std::array<Metric, 5> kMetrics{Metric::CcaLinear, Metric::CcaKernel, Metric::Cka,
                                                Metric::Svcca, Metric::Cknna};

std::string to_string(Setting s);
std::string to_string(Metric m);

struct ReportConfig {
  std::size_t pca_dim = 50;      // r for linear / kernel PCA before CCA
  std::size_t svcca_k = 10;
  double svcca_eta = 0.99;
  std::size_t knn_k = 10;
  double rbf_gamma = 0.0;        // <= 0 selects the median heuristic per view
  NeighborSimilarity knn_similarity = NeighborSimilarity::InnerProduct;
};

/// One metric in one setting; value is set unless the metric raised.
struct ReportCell {
  Setting setting;
  Metric metric;
  std::optional<double> value;
  std::string error;
};

struct AlignmentReport {
  ReportConfig config;
  std::vector<ReportCell> cells;

  const ReportCell* find(Setting s, Metric m) const;
  /// Throws InvalidInput if the cell is absent or failed.
  double score(Setting s, Metric m) const;
  bool has_setting(Setting s) const;
};

/// Scores every metric for (V, L_match), (V, L_easy), (V, L_hard). A metric
/// that raises records its error in the cell instead of aborting the report.
/// Passing no easy matrix omits that setting.
AlignmentReport alignment_report(const Matrix& v, const Matrix& l_match, const Matrix* l_easy,
                                 const Matrix& l_hard, const ReportConfig& cfg = {});

double compute_metric(Metric metric, const Matrix& v, const Matrix& l, const ReportConfig& cfg);

}  // namespace jam::metrics
