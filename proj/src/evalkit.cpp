#include "jam/evalkit.hpp"

#include "jam/error.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace jam::eval {

namespace {

Matrix unit_rows(const Matrix& z) {
  Matrix u = z;
  for (Eigen::Index i = 0; i < u.rows(); ++i) {
    const double n = u.row(i).norm();
    require(n > 0, ErrorKind::DegenerateInput, "retrieval: zero-norm latent row");
    u.row(i) /= n;
  }
  return u;
}

void check_aligned(const Matrix& zv, const Matrix& zlp, const Matrix& zln) {
  require(zv.rows() == zlp.rows() && zv.rows() == zln.rows(), ErrorKind::InvalidInput,
          "retrieval: latent row counts differ");
  require(zv.cols() == zlp.cols() && zv.cols() == zln.cols(), ErrorKind::InvalidInput,
          "retrieval: latent dims differ");
  require(zv.rows() > 0, ErrorKind::InvalidInput, "retrieval: no queries");
}

}  // namespace

double recall_binary(const Matrix& zv, const Matrix& zlp, const Matrix& zln) {
  check_aligned(zv, zlp, zln);
  const Matrix uv = unit_rows(zv), up = unit_rows(zlp), un = unit_rows(zln);
  std::size_t hits = 0;
  for (Eigen::Index i = 0; i < uv.rows(); ++i)
    if (uv.row(i).dot(up.row(i)) > uv.row(i).dot(un.row(i))) ++hits;
  return static_cast<double>(hits) / static_cast<double>(uv.rows());
}

double recall_5way(const Matrix& zv, const Matrix& zlp, const Matrix& zln, RngStream& rng) {
  check_aligned(zv, zlp, zln);
  const auto n = static_cast<std::uint64_t>(zv.rows());
  require(n >= 5, ErrorKind::InvalidInput, "recall_5way needs at least 5 samples");
  const Matrix uv = unit_rows(zv), up = unit_rows(zlp), un = unit_rows(zln);
  std::size_t hits = 0;
  for (std::uint64_t i = 0; i < n; ++i) {
    std::array<std::uint64_t, 3> picks{};
    for (std::size_t t = 0; t < picks.size(); ++t) {
      std::uint64_t j;
      do {
        j = rng.below(n);
      } while (j == i || std::find(picks.begin(), picks.begin() + static_cast<std::ptrdiff_t>(t), j) !=
                             picks.begin() + static_cast<std::ptrdiff_t>(t));
      picks[t] = j;
    }
    const auto q = static_cast<Eigen::Index>(i);
    const double pos = uv.row(q).dot(up.row(q));
    bool best = pos > uv.row(q).dot(un.row(q));
    for (auto j : picks) best = best && pos > uv.row(q).dot(up.row(static_cast<Eigen::Index>(j)));
    if (best) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

RetrievalResult evaluate(const Matrix& zv, const Matrix& zlp, const Matrix& zln, std::uint64_t seed) {
  RetrievalResult r;
  r.recall_binary = recall_binary(zv, zlp, zln);
  auto rng = rng_new(seed).fork(0x5EA1);
  r.recall_5way = recall_5way(zv, zlp, zln, rng);
  r.n_queries = static_cast<std::size_t>(zv.rows());
  r.seed = seed;
  return r;
}

MeanStd mean_std(const std::vector<double>& xs) {
  require(!xs.empty(), ErrorKind::InvalidInput, "mean_std: empty input");
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  var /= static_cast<double>(xs.size());
  return {mean, std::sqrt(var)};
}

Aggregate aggregate_seeds(const std::vector<RetrievalResult>& results) {
  require(!results.empty(), ErrorKind::InvalidInput, "aggregate_seeds: no results");
  std::vector<double> b, f;
  for (const auto& r : results) {
    b.push_back(r.recall_binary);
    f.push_back(r.recall_5way);
  }
  return {mean_std(b), mean_std(f), results.size()};
}

}  // namespace jam::eval
