#pragma once

// Image-to-text retrieval on latents: binary (positive vs its hard negative)
// and 5-way (plus three other samples' positives) Recall@1, and cross-seed
// aggregation.

#include "jam/numkit.hpp"

#include <cstdint>
#include <vector>

namespace jam::eval {

struct RetrievalResult {
  double recall_binary = 0.0;
  double recall_5way = 0.0;
  std::size_t n_queries = 0;
  std::uint64_t seed = 0;
};

/// Fraction of rows where cos(v, lp) > cos(v, ln). Ties count as misses.
double recall_binary(const Matrix& zv, const Matrix& zlp, const Matrix& zln);

/// Candidates for query i: lp_i, ln_i and lp_j for three distinct j != i drawn
/// without replacement. Success requires lp_i to be strictly best.
double recall_5way(const Matrix& zv, const Matrix& zlp, const Matrix& zln, RngStream& rng);

RetrievalResult evaluate(const Matrix& zv, const Matrix& zlp, const Matrix& zln, std::uint64_t seed);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population
};

MeanStd mean_std(const std::vector<double>& xs);

struct Aggregate {
  MeanStd recall_binary;
  MeanStd recall_5way;
  std::size_t runs = 0;
};

Aggregate aggregate_seeds(const std::vector<RetrievalResult>& results);

}  // namespace jam::eval
