#include "jam/metrics.hpp"

#include "jam/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace jam::metrics {

namespace {

Matrix pairwise_sq_dist(const Matrix& x) {
  const auto n = x.rows();
  Matrix d(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    d(i, i) = 0.0;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double v = (x.row(i) - x.row(j)).squaredNorm();
      d(i, j) = v;
      d(j, i) = v;
    }
  }
  return d;
}

void fix_component_signs(Matrix& components) {
  for (Eigen::Index c = 0; c < components.cols(); ++c) {
    Eigen::Index arg = 0;
    components.col(c).cwiseAbs().maxCoeff(&arg);
    if (components(arg, c) < 0) components.col(c) = -components.col(c);
  }
}

Matrix inv_sqrt_spd(const Matrix& s) {
  const EigResult e = sym_eig(s);
  Vector d = e.values;
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    require(d[i] > 0, ErrorKind::DegenerateInput, "covariance is not positive definite");
    d[i] = 1.0 / std::sqrt(d[i]);
  }
  return e.vectors * d.asDiagonal() * e.vectors.transpose();
}

}  // namespace

KernelMatrix gram(const Matrix& x, const Kernel& kernel) {
  require(all_finite(x), ErrorKind::InvalidInput, "gram: non-finite input");
  if (kernel.kind == KernelKind::Linear) {
    Matrix k = x * x.transpose();
    return {0.5 * (k + k.transpose()), kernel};
  }
  require(kernel.gamma > 0, ErrorKind::InvalidInput, "gram: rbf gamma must be > 0");
  Matrix k = (-kernel.gamma * pairwise_sq_dist(x).array()).exp().matrix();
  return {std::move(k), kernel};
}

KernelMatrix center_gram(const KernelMatrix& k) {
  const auto& v = k.values;
  const auto n = v.rows();
  if (n == 0) return k;
  const Vector row_mean = v.rowwise().mean();
  const Eigen::RowVectorXd col_mean = v.colwise().mean();
  const double grand = v.mean();
  Matrix c = v;
  c.colwise() -= row_mean;
  c.rowwise() -= col_mean;
  c.array() += grand;
  return {0.5 * (c + c.transpose()), k.kernel};
}

double hsic(const KernelMatrix& k, const KernelMatrix& l) {
  require(k.n() == l.n(), ErrorKind::InvalidInput, "hsic: kernel sizes differ");
  require(k.n() >= 2, ErrorKind::InvalidInput, "hsic: needs at least 2 samples");
  const Matrix kc = center_gram(k).values;
  const Matrix lc = center_gram(l).values;
  const double m = static_cast<double>(k.n() - 1);
  return kc.cwiseProduct(lc).sum() / (m * m);
}

double cka(const Matrix& x, const Matrix& y, const Kernel& kernel) {
  require(x.rows() == y.rows(), ErrorKind::InvalidInput, "cka: row counts differ");
  require(x.rows() >= 2, ErrorKind::InvalidInput, "cka: needs at least 2 samples");
  const KernelMatrix kx = gram(x, kernel);
  const KernelMatrix ky = gram(y, kernel);
  const Matrix kc = center_gram(kx).values;
  const Matrix lc = center_gram(ky).values;
  // Relative test: a constant view leaves only rounding residue after centering.
  auto degenerate = [](const Matrix& c, const Matrix& raw) {
    return c.norm() <= 1e-12 * std::max(raw.norm(), 1e-300);
  };
  if (degenerate(kc, kx.values) || degenerate(lc, ky.values))
    fail(ErrorKind::DegenerateInput, "cka: a view has zero centered variance");
  const double kl = kc.cwiseProduct(lc).sum();
  const double kk = kc.squaredNorm();
  const double ll = lc.squaredNorm();
  return kl / std::sqrt(kk * ll);
}

double median_gamma(const Matrix& x) {
  const auto n = x.rows();
  require(n >= 2, ErrorKind::InvalidInput, "median_gamma: needs at least 2 samples");
  std::vector<double> d;
  d.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) d.push_back((x.row(i) - x.row(j)).squaredNorm());
  const auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
  std::nth_element(d.begin(), mid, d.end());
  double med = *mid;
  if (d.size() % 2 == 0) med = 0.5 * (med + *std::max_element(d.begin(), mid));
  require(med > 0, ErrorKind::DegenerateInput, "median_gamma: median pairwise distance is zero");
  return 1.0 / (2.0 * med);
}

namespace {

Matrix neighbor_similarity(const Matrix& x, NeighborSimilarity sim) {
  if (sim == NeighborSimilarity::InnerProduct) return x * x.transpose();
  Matrix u = x;
  for (Eigen::Index i = 0; i < u.rows(); ++i) {
    const double n = u.row(i).norm();
    require(n > 0, ErrorKind::DegenerateInput, "cosine neighbors: zero-norm row");
    u.row(i) /= n;
  }
  return u * u.transpose();
}

// top_k[i] holds i's k nearest rows as a 0/1 row of length n.
Mask knn_rows(const Matrix& s, std::size_t k) {
  const auto n = s.rows();
  Mask out = Mask::Zero(n, n);
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n - 1));
  for (Eigen::Index i = 0; i < n; ++i) {
    std::size_t c = 0;
    for (Eigen::Index j = 0; j < n; ++j)
      if (j != i) idx[c++] = j;
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                      [&](Eigen::Index a, Eigen::Index b) {
                        if (s(i, a) != s(i, b)) return s(i, a) > s(i, b);
                        return a < b;
                      });
    for (std::size_t t = 0; t < k; ++t) out(i, idx[t]) = 1;
  }
  return out;
}

}  // namespace

Mask mutual_knn_mask(const Matrix& v, const Matrix& l, std::size_t k, NeighborSimilarity sim) {
  require(v.rows() == l.rows(), ErrorKind::InvalidInput, "mutual_knn_mask: row counts differ");
  const auto n = static_cast<std::size_t>(v.rows());
  require(n >= 2 && k >= 1 && k <= n - 1, ErrorKind::InvalidInput,
          "mutual_knn_mask: k must lie in [1, n-1]");
  const Mask a = knn_rows(neighbor_similarity(v, sim), k);
  const Mask b = knn_rows(neighbor_similarity(l, sim), k);
  return a.cwiseProduct(b);
}

double align_local(const Matrix& kc, const Matrix& lc, const Mask& mask) {
  require(kc.rows() == mask.rows() && lc.rows() == mask.rows(), ErrorKind::InvalidInput,
          "align_local: size mismatch");
  double acc = 0.0;
  for (Eigen::Index i = 0; i < mask.rows(); ++i)
    for (Eigen::Index j = 0; j < mask.cols(); ++j)
      if (mask(i, j)) acc += kc(i, j) * lc(i, j);
  return acc;
}

double cknna(const Matrix& v, const Matrix& l, std::size_t k, NeighborSimilarity sim, SelfPairs self_pairs) {
  // Each alignment term uses the mask of the two views it compares, so the
  // normalizers run over each view's own neighbourhoods.
  Mask vl = mutual_knn_mask(v, l, k, sim);
  if (vl.cast<int>().sum() == 0) fail(ErrorKind::DegenerateInput, "cknna: mutual kNN mask is empty");
  Mask vv = mutual_knn_mask(v, v, k, sim);
  Mask ll_mask = mutual_knn_mask(l, l, k, sim);
  if (self_pairs == SelfPairs::Include)
    for (Mask* m : {&vl, &vv, &ll_mask}) m->diagonal().setOnes();
  const Matrix kc = center_gram(gram(v, Kernel::linear())).values;
  const Matrix lc = center_gram(gram(l, Kernel::linear())).values;
  const double kl = align_local(kc, lc, vl);
  const double kk = align_local(kc, kc, vv);
  const double ll = align_local(lc, lc, ll_mask);
  if (!(kk > 0) || !(ll > 0)) fail(ErrorKind::DegenerateInput, "cknna: zero masked self-alignment");
  return kl / std::sqrt(kk * ll);
}

Matrix pca_reduce(const Matrix& x, std::size_t r) {
  const auto rows = static_cast<std::size_t>(x.rows());
  const auto cols = static_cast<std::size_t>(x.cols());
  require(r >= 1 && rows >= 2 && r <= std::min(rows - 1, cols), ErrorKind::InvalidInput,
          "pca_reduce: r must lie in [1, min(rows-1, cols)]");
  const Matrix xc = center_columns(x);
  const SvdResult d = svd(xc);
  Matrix comps = d.vt.topRows(static_cast<Eigen::Index>(r)).transpose();
  fix_component_signs(comps);
  return xc * comps;
}

Matrix kpca_reduce(const Matrix& x, std::size_t r, double gamma) {
  const auto rows = static_cast<std::size_t>(x.rows());
  require(r >= 1 && rows >= 2 && r <= rows - 1, ErrorKind::InvalidInput,
          "kpca_reduce: r must lie in [1, rows-1]");
  const Matrix kc = center_gram(gram(x, Kernel::rbf(gamma))).values;
  const EigResult e = sym_eig(kc);
  const auto rr = static_cast<Eigen::Index>(r);
  Matrix u = e.vectors.leftCols(rr);
  fix_component_signs(u);
  const double floor = 1e-12 * std::max(e.values[0], 0.0);
  Matrix out(x.rows(), rr);
  for (Eigen::Index c = 0; c < rr; ++c) {
    const double lambda = e.values[c];
    require(lambda > floor, ErrorKind::DegenerateInput, "kpca_reduce: kernel rank is below r");
    out.col(c) = kc * u.col(c) / std::sqrt(lambda);
  }
  return out;
}

CcaResult cca(const Matrix& x, const Matrix& y, std::size_t k) {
  require(x.rows() == y.rows(), ErrorKind::InvalidInput, "cca: row counts differ");
  require(x.rows() >= 3, ErrorKind::InvalidInput, "cca: needs at least 3 samples");
  require(x.cols() >= 1 && y.cols() >= 1, ErrorKind::InvalidInput, "cca: empty view");
  const auto kmax = static_cast<std::size_t>(std::min(x.cols(), y.cols()));
  if (k == 0) k = kmax;
  require(k <= kmax, ErrorKind::InvalidInput, "cca: k exceeds min(dx, dy)");

  const double n = static_cast<double>(x.rows());
  const Matrix xc = center_columns(x);
  const Matrix yc = center_columns(y);
  auto cov = [n](const Matrix& a) {
    Matrix s = a.transpose() * a / n;
    s = 0.5 * (s + s.transpose());
    const double tr = s.trace();
    require(tr > 0, ErrorKind::DegenerateInput, "cca: a view has zero variance");
    s.diagonal().array() += 1e-8 * tr / static_cast<double>(s.rows());
    return s;
  };
  const Matrix wx = inv_sqrt_spd(cov(xc));
  const Matrix wy = inv_sqrt_spd(cov(yc));
  const Matrix sxy = xc.transpose() * yc / n;
  const SvdResult d = svd(wx * sxy * wy);
  CcaResult out;
  out.correlations = d.s.head(static_cast<Eigen::Index>(k)).cwiseMax(0.0).cwiseMin(1.0);
  return out;
}

std::size_t rank_for_variance(const Vector& s, double eta) {
  require(eta > 0 && eta <= 1, ErrorKind::InvalidInput, "svcca: eta must lie in (0, 1]");
  const double total = s.squaredNorm();
  require(total > 0, ErrorKind::DegenerateInput, "svcca: view has zero variance");
  double acc = 0.0;
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    acc += s[i] * s[i];
    if (acc >= eta * total * (1 - 1e-12)) return static_cast<std::size_t>(i + 1);
  }
  return static_cast<std::size_t>(s.size());
}

double svcca(const Matrix& x, const Matrix& y, const SvccaOptions& opts) {
  require(x.rows() == y.rows(), ErrorKind::InvalidInput, "svcca: row counts differ");
  require(x.rows() >= 3, ErrorKind::InvalidInput, "svcca: needs at least 3 samples");
  require(opts.k >= 1, ErrorKind::InvalidInput, "svcca: k must be >= 1");
  auto reduce = [&](const Matrix& m) {
    const SvdResult d = svd(center_columns(m));
    const auto r = static_cast<Eigen::Index>(rank_for_variance(d.s, opts.eta));
    return Matrix(d.u.leftCols(r) * d.s.head(r).asDiagonal());
  };
  const Matrix xr = reduce(x);
  const Matrix yr = reduce(y);
  const auto k = std::min({static_cast<std::size_t>(xr.cols()), static_cast<std::size_t>(yr.cols()), opts.k});
  const CcaResult c = cca(xr, yr, k);
  return c.correlations.mean();
}

// ---- report ---------------------------------------------------------------

std::string to_string(Setting s) {
  switch (s) {
    case Setting::Match: return "match";
    case Setting::EasyNonMatch: return "easy_nonmatch";
    case Setting::HardNonMatch: return "hard_nonmatch";
  }
  return "?";
}

std::string to_string(Metric m) {
  switch (m) {
    case Metric::CcaLinear: return "cca_linear";
    case Metric::CcaKernel: return "cca_kernel";
    case Metric::Cka: return "cka";
    case Metric::Svcca: return "svcca";
    case Metric::Cknna: return "cknna";
  }
  return "?";
}

const ReportCell* AlignmentReport::find(Setting s, Metric m) const {
  for (const auto& c : cells)
    if (c.setting == s && c.metric == m) return &c;
  return nullptr;
}

double AlignmentReport::score(Setting s, Metric m) const {
  const ReportCell* c = find(s, m);
  require(c != nullptr && c->value.has_value(), ErrorKind::InvalidInput,
          "report has no score for " + to_string(s) + "/" + to_string(m));
  return *c->value;
}

bool AlignmentReport::has_setting(Setting s) const {
  return std::any_of(cells.begin(), cells.end(), [s](const ReportCell& c) { return c.setting == s; });
}

double compute_metric(Metric metric, const Matrix& v, const Matrix& l, const ReportConfig& cfg) {
  const auto n = static_cast<std::size_t>(v.rows());
  require(n >= 3, ErrorKind::InvalidInput, "metrics need at least 3 samples");
  switch (metric) {
    case Metric::CcaLinear: {
      const auto rv = std::min({cfg.pca_dim, n - 1, static_cast<std::size_t>(v.cols())});
      const auto rl = std::min({cfg.pca_dim, n - 1, static_cast<std::size_t>(l.cols())});
      return cca(pca_reduce(v, rv), pca_reduce(l, rl)).first();
    }
    case Metric::CcaKernel: {
      const auto r = std::min(cfg.pca_dim, n - 1);
      const double gv = cfg.rbf_gamma > 0 ? cfg.rbf_gamma : median_gamma(v);
      const double gl = cfg.rbf_gamma > 0 ? cfg.rbf_gamma : median_gamma(l);
      return cca(kpca_reduce(v, r, gv), kpca_reduce(l, r, gl)).first();
    }
    case Metric::Cka: return cka(v, l);
    case Metric::Svcca: return svcca(v, l, {cfg.svcca_eta, cfg.svcca_k});
    case Metric::Cknna: return cknna(v, l, cfg.knn_k, cfg.knn_similarity);
  }
  fail(ErrorKind::InvalidInput, "unknown metric");
}

AlignmentReport alignment_report(const Matrix& v, const Matrix& l_match, const Matrix* l_easy,
                                 const Matrix& l_hard, const ReportConfig& cfg) {
  require(l_match.rows() == v.rows() && l_hard.rows() == v.rows() &&
              (l_easy == nullptr || l_easy->rows() == v.rows()),
          ErrorKind::InvalidInput, "alignment_report: all views must share n");
  AlignmentReport report;
  report.config = cfg;
  for (Setting s : kSettings) {
    const Matrix* text = s == Setting::Match ? &l_match : s == Setting::HardNonMatch ? &l_hard : l_easy;
    if (text == nullptr) continue;
    for (Metric m : kMetrics) {
      ReportCell cell{s, m, std::nullopt, {}};
      try {
        cell.value = compute_metric(m, v, *text, cfg);
      } catch (const Error& e) {
        cell.error = e.what();
      }
      report.cells.push_back(std::move(cell));
    }
  }
  return report;
}

}  // namespace jam::metrics
