#include "jam/checkpoint.hpp"

#include "byteio.hpp"
#include "jam/error.hpp"

#include <algorithm>
#include <fstream>
#include <iterator>

namespace jam::nn {

namespace {
constexpr char kMagic[4] = {'J', 'C', 'K', 'P'};
}

const Matrix& Checkpoint::tensor(const std::string& name) const {
  for (const auto& [n, m] : tensors)
    if (n == name) return m;
  fail(ErrorKind::FormatError, "checkpoint has no tensor '" + name + "'");
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::vector<char> buf(kMagic, kMagic + 4);
  detail::put_le<std::uint32_t>(buf, kCheckpointVersion);
  detail::put_le<std::uint64_t>(buf, ckpt.meta.size());
  buf.insert(buf.end(), ckpt.meta.begin(), ckpt.meta.end());
  detail::put_le<std::uint64_t>(buf, ckpt.tensors.size());
  for (const auto& [name, m] : ckpt.tensors) {
    require(m.allFinite(), ErrorKind::FormatError, "refusing to checkpoint non-finite tensor " + name);
    detail::put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(name.size()));
    buf.insert(buf.end(), name.begin(), name.end());
    detail::put_le<std::uint64_t>(buf, static_cast<std::uint64_t>(m.rows()));
    detail::put_le<std::uint64_t>(buf, static_cast<std::uint64_t>(m.cols()));
    for (Eigen::Index k = 0; k < m.size(); ++k) detail::put_f64(buf, m.data()[k]);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::IoError, "cannot write " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) fail(ErrorKind::IoError, "short write to " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::FormatError, "cannot open checkpoint " + path.string());
  const std::vector<char> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  detail::Reader r(bytes.data(), bytes.size());
  auto need = [&](std::size_t n) {
    if (!r.has(n)) fail(ErrorKind::FormatError, "truncated checkpoint " + path.string());
  };
  need(8);
  if (!std::equal(kMagic, kMagic + 4, r.take(4))) fail(ErrorKind::FormatError, "bad checkpoint magic");
  const auto version = detail::get_le<std::uint32_t>(r.take(4));
  if (version != kCheckpointVersion)
    fail(ErrorKind::FormatError, "unsupported checkpoint version " + std::to_string(version));
  Checkpoint ckpt;
  need(8);
  const auto meta_len = detail::get_le<std::uint64_t>(r.take(8));
  need(meta_len);
  const char* meta = r.take(meta_len);
  ckpt.meta.assign(meta, meta + meta_len);
  need(8);
  const auto count = detail::get_le<std::uint64_t>(r.take(8));
  for (std::uint64_t t = 0; t < count; ++t) {
    need(4);
    const auto name_len = detail::get_le<std::uint32_t>(r.take(4));
    need(name_len);
    const char* name = r.take(name_len);
    need(16);
    const auto rows = detail::get_le<std::uint64_t>(r.take(8));
    const auto cols = detail::get_le<std::uint64_t>(r.take(8));
    if (cols != 0 && rows > r.remaining() / 8 / cols) fail(ErrorKind::FormatError, "truncated checkpoint tensor");
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = detail::get_f64(r.take(8));
    ckpt.tensors.emplace_back(std::string(name, name_len), std::move(m));
  }
  if (r.remaining() != 0) fail(ErrorKind::FormatError, "trailing bytes in checkpoint");
  return ckpt;
}

}  // namespace jam::nn
