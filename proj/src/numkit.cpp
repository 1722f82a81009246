#include "jam/numkit.hpp"

#include "jam/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace jam {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidInput: return "InvalidInput";
    case ErrorKind::DegenerateInput: return "DegenerateInput";
    case ErrorKind::FormatError: return "FormatError";
    case ErrorKind::ManifestError: return "ManifestError";
    case ErrorKind::UsageError: return "UsageError";
    case ErrorKind::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::ConfigError: return "ConfigError";
    case ErrorKind::IoError: return "IoError";
  }
  return "Unknown";
}

bool all_finite(const Matrix& m) { return m.allFinite(); }

double max_abs(const Matrix& m) { return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff(); }

SvdResult svd(const Matrix& a) {
  require(all_finite(a), ErrorKind::InvalidInput, "svd: non-finite input");
  if (a.size() == 0) return {Matrix(a.rows(), 0), Vector(0), Matrix(0, a.cols())};
  // Column-major copy: Eigen's SVDs are tuned for it.
  Eigen::MatrixXd cm = a;
  Eigen::JacobiSVD<Eigen::MatrixXd, Eigen::ColPivHouseholderQRPreconditioner> solver(
      cm, Eigen::ComputeThinU | Eigen::ComputeThinV);
  SvdResult out;
  out.u = solver.matrixU();
  out.s = solver.singularValues();
  out.vt = solver.matrixV().transpose();
  return out;
}

EigResult sym_eig(const Matrix& s) {
  require(s.rows() == s.cols(), ErrorKind::InvalidInput, "sym_eig: matrix is not square");
  require(all_finite(s), ErrorKind::InvalidInput, "sym_eig: non-finite input");
  const double scale = std::max(1.0, max_abs(s));
  const double asym = s.size() == 0 ? 0.0 : max_abs(s - s.transpose());
  require(asym <= 1e-10 * scale, ErrorKind::InvalidInput, "sym_eig: matrix is not symmetric");

  const Eigen::MatrixXd sym = 0.5 * (s + s.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(sym);
  const auto n = s.rows();
  EigResult out;
  out.values.resize(n);
  out.vectors.resize(n, n);
  // Eigen returns ascending order.
  for (Eigen::Index i = 0; i < n; ++i) {
    out.values[i] = solver.eigenvalues()[n - 1 - i];
    out.vectors.col(i) = solver.eigenvectors().col(n - 1 - i);
  }
  return out;
}

Matrix center_columns(const Matrix& x) {
  if (x.rows() == 0) return x;
  const Eigen::RowVectorXd mean = x.colwise().mean();
  return x.rowwise() - mean;
}

namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace

RngStream::RngStream(std::uint64_t seed) : seed_(seed), key_(mix64(seed + kGolden)) {}

std::uint64_t RngStream::next_u64() {
  ++counter_;
  // Two rounds so that consecutive keys do not produce correlated streams.
  return mix64(mix64(key_ ^ (counter_ * kGolden)) + key_);
}

double RngStream::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

std::uint64_t RngStream::below(std::uint64_t bound) {
  require(bound > 0, ErrorKind::InvalidInput, "RngStream::below: bound must be positive");
  const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % bound);
  std::uint64_t x = next_u64();
  while (x >= limit) x = next_u64();
  return x % bound;
}

double RngStream::gaussian() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

RngStream RngStream::fork(std::uint64_t tag) const {
  return RngStream(seed_, mix64(key_ ^ mix64(tag * kGolden + 0x632BE59BD9B4E019ULL)));
}

Matrix rng_gaussian(RngStream& rng, std::size_t rows, std::size_t cols) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = rng.gaussian();
  return m;
}

std::vector<std::size_t> permutation(RngStream& rng, std::size_t n) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.below(i));
    std::swap(p[i - 1], p[j]);
  }
  return p;
}

Matrix orthonormalize_columns(const Matrix& a) {
  require(a.rows() >= a.cols(), ErrorKind::InvalidInput,
          "orthonormalize_columns: needs rows >= cols");
  Eigen::MatrixXd cm = a;
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(cm);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(a.rows(), a.cols());
  // Fix signs against R's diagonal so the result is a function of a alone.
  const Eigen::MatrixXd r = qr.matrixQR().topRows(a.cols()).triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < q.cols(); ++j)
    if (r(j, j) < 0) q.col(j) = -q.col(j);
  return q;
}

Matrix gather_rows(const Matrix& m, const std::vector<std::size_t>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(rows[i]));
  return out;
}

}  // namespace jam
