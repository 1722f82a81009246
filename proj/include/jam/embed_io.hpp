#pragma once

// JEMB embedding files, paired-dataset manifests, splitting, and the planted
// synthetic generator.
//
// JEMB layout (all integers little-endian):
//   offset 0   magic "JEMB"
//   offset 4   u32 version (= 1)
//   offset 8   u8  dtype (0 = f32, 1 = f64)
//   offset 9   3 reserved zero bytes
//   offset 12  u64 rows
//   offset 20  u64 cols
//   offset 28  rows*cols values, row-major, IEEE-754 little-endian

#include "jam/numkit.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace jam::io {

enum class DType : std::uint8_t { F32 = 0, F64 = 1 };

inline constexpr std::array<char, 4> kJembMagic{'J', 'E', 'M', 'B'};
inline constexpr std::uint32_t kJembVersion = 1;
inline constexpr std::size_t kJembHeaderBytes = 28;

std::size_t dtype_size(DType dtype);

void write_embeddings(const std::filesystem::path& path, const Matrix& m, DType dtype);
Matrix read_embeddings(const std::filesystem::path& path);

/// Header fields of a JEMB file without loading the payload.
struct JembHeader {
  std::uint32_t version = 0;
  DType dtype = DType::F64;
  std::uint64_t rows = 0;
  std::uint64_t cols = 0;
};
JembHeader read_header(const std::filesystem::path& path);

/// Row i of images, positives and negatives describes the same sample.
struct PairedDataset {
  Matrix images;
  Matrix positives;
  Matrix negatives;
  std::vector<std::uint64_t> ids;

  std::size_t size() const { return static_cast<std::size_t>(images.rows()); }
  /// Rows in the given order; ids follow.
  PairedDataset subset(const std::vector<std::size_t>& rows) const;
  void validate() const;
};

/// Parsed manifest. `easy` and `latents` are optional extras the synth command emits.
struct Manifest {
  std::filesystem::path images;
  std::filesystem::path positives;
  std::filesystem::path negatives;
  std::optional<std::uint64_t> n;
  std::optional<std::filesystem::path> easy;
  std::optional<std::filesystem::path> latents;
  std::string meta;  // JSON object describing how the files were produced; not interpreted
};

/// Relative paths inside the manifest resolve against the manifest's directory.
Manifest read_manifest(const std::filesystem::path& manifest_path);
void write_manifest(const std::filesystem::path& manifest_path, const Manifest& manifest);

PairedDataset load_paired_dataset(const std::filesystem::path& manifest_path);

struct SplitRatios {
  double train = 0.70;
  double val = 0.15;
  double test = 0.15;
};

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
};

/// Sizes: floor of each share, then leftover rows one at a time to test, val,
/// train (in that order). Row order comes from a seeded permutation.
SplitIndices split_indices(std::size_t n, const SplitRatios& ratios, std::uint64_t seed);

struct Splits {
  PairedDataset train;
  PairedDataset val;
  PairedDataset test;
};
Splits split_dataset(const PairedDataset& ds, const SplitRatios& ratios, std::uint64_t seed);

struct SynthConfig {
  std::size_t n = 500;
  std::size_t latent_dim = 16;
  std::size_t context_dims = 12;
  std::size_t fine_dims = 4;
  std::size_t d_v = 64;
  std::size_t d_l = 96;
  double noise_std = 0.05;
  double hard_delta = 1.0;
  std::uint64_t seed = 5;

  void validate() const;
};

struct SynthData {
  PairedDataset dataset;
  Matrix easy_negatives;  // text rows built from independent latents
  Matrix latents;         // n x latent_dim
};

SynthData synth_generate(const SynthConfig& cfg);

/// Validation used by the generator, exposed so that tests can build the
/// degenerate hard_delta = 0 case without going through SynthConfig checks.
SynthData synth_generate_unchecked(const SynthConfig& cfg);

}  // namespace jam::io
