#pragma once

// Dense linear algebra and deterministic randomness shared by every module.

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <vector>

namespace jam {

/// Row-major so that one sample per row maps onto contiguous storage.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

struct SvdResult {
  Matrix u;   // rows x k
  Vector s;   // k, non-negative, descending
  Matrix vt;  // k x cols
};

struct EigResult {
  Vector values;   // descending
  Matrix vectors;  // column i pairs with values[i]
};

bool all_finite(const Matrix& m);

/// Thin SVD. Throws InvalidInput on non-finite entries.
SvdResult svd(const Matrix& a);

/// Eigendecomposition of a symmetric matrix, eigenvalues descending.
/// Throws InvalidInput when |S - S^T| exceeds 1e-10 (relative to max|S| when that is above 1).
EigResult sym_eig(const Matrix& s);

/// Subtracts each column's mean.
Matrix center_columns(const Matrix& x);

/// Counter-based generator: the n-th draw is a pure function of (key, n), so a
/// stream can be forked into independent substreams without shared state.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed);

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t next_u64();
  /// Uniform on [0, 1) with 53 bits of mantissa.
  double uniform();
  /// Unbiased integer in [0, bound).
  std::uint64_t below(std::uint64_t bound);
  double gaussian();

  /// Derived stream keyed on (this key, tag); does not advance this stream.
  RngStream fork(std::uint64_t tag) const;

 private:
  RngStream(std::uint64_t seed, std::uint64_t key) : seed_(seed), key_(key) {}

  std::uint64_t seed_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

inline RngStream rng_new(std::uint64_t seed) { return RngStream(seed); }

Matrix rng_gaussian(RngStream& rng, std::size_t rows, std::size_t cols);

/// Fisher-Yates permutation of [0, n) driven by rng.
std::vector<std::size_t> permutation(RngStream& rng, std::size_t n);

/// Orthonormal basis for the columns of a (rows >= cols), via Householder QR.
Matrix orthonormalize_columns(const Matrix& a);

double max_abs(const Matrix& m);

/// Rows selected by index, in the given order.
Matrix gather_rows(const Matrix& m, const std::vector<std::size_t>& rows);

}  // namespace jam
