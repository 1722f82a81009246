#pragma once

// Named-tensor container used for model checkpoints.
//
// Layout (integers little-endian, values IEEE-754 f64 little-endian):
//   "JCKP" | u32 version | u64 meta_len | meta (UTF-8 JSON) | u64 count |
//   count x { u32 name_len | name | u64 rows | u64 cols | rows*cols f64 row-major }

#include "jam/numkit.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace jam::nn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::string meta;  // JSON document
  std::vector<std::pair<std::string, Matrix>> tensors;

  /// Throws FormatError when the tensor is absent.
  const Matrix& tensor(const std::string& name) const;
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace jam::nn
