#include "jam/embed_io.hpp"

#include "byteio.hpp"
#include "jam/error.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <algorithm>
#include <fstream>
#include <iterator>
#include <numeric>

namespace jam::io {

namespace fs = std::filesystem;
using detail::Reader;

std::size_t dtype_size(DType dtype) { return dtype == DType::F32 ? 4 : 8; }

namespace {

std::vector<char> slurp(const fs::path& path, ErrorKind missing_kind) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(missing_kind, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

JembHeader parse_header(Reader& r, const fs::path& path) {
  if (!r.has(kJembHeaderBytes)) fail(ErrorKind::FormatError, "truncated header in " + path.string());
  const char* magic = r.take(4);
  if (!std::equal(kJembMagic.begin(), kJembMagic.end(), magic))
    fail(ErrorKind::FormatError, "bad magic in " + path.string());
  JembHeader h;
  h.version = detail::get_le<std::uint32_t>(r.take(4));
  if (h.version != kJembVersion)
    fail(ErrorKind::FormatError, "unsupported JEMB version " + std::to_string(h.version));
  const auto dtype = static_cast<std::uint8_t>(*r.take(1));
  if (dtype > 1) fail(ErrorKind::FormatError, "unknown dtype " + std::to_string(dtype));
  h.dtype = static_cast<DType>(dtype);
  const char* reserved = r.take(3);
  if (reserved[0] || reserved[1] || reserved[2]) fail(ErrorKind::FormatError, "nonzero reserved header bytes");
  h.rows = detail::get_le<std::uint64_t>(r.take(8));
  h.cols = detail::get_le<std::uint64_t>(r.take(8));
  return h;
}

}  // namespace

void write_embeddings(const fs::path& path, const Matrix& m, DType dtype) {
  require(all_finite(m), ErrorKind::FormatError, "refusing to write non-finite values");
  std::vector<char> buf;
  buf.reserve(kJembHeaderBytes + static_cast<std::size_t>(m.size()) * dtype_size(dtype));
  buf.insert(buf.end(), kJembMagic.begin(), kJembMagic.end());
  detail::put_le<std::uint32_t>(buf, kJembVersion);
  buf.push_back(static_cast<char>(dtype));
  buf.insert(buf.end(), 3, '\0');
  detail::put_le<std::uint64_t>(buf, static_cast<std::uint64_t>(m.rows()));
  detail::put_le<std::uint64_t>(buf, static_cast<std::uint64_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (dtype == DType::F32)
        detail::put_f32(buf, static_cast<float>(m(i, j)));
      else
        detail::put_f64(buf, m(i, j));
    }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::IoError, "cannot write " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) fail(ErrorKind::IoError, "short write to " + path.string());
}

JembHeader read_header(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::FormatError, "cannot open " + path.string());
  std::vector<char> head(kJembHeaderBytes);
  in.read(head.data(), static_cast<std::streamsize>(head.size()));
  Reader r(head.data(), static_cast<std::size_t>(in.gcount()));
  return parse_header(r, path);
}

Matrix read_embeddings(const fs::path& path) {
  const auto bytes = slurp(path, ErrorKind::FormatError);
  Reader r(bytes.data(), bytes.size());
  const JembHeader h = parse_header(r, path);
  const std::size_t width = dtype_size(h.dtype);
  if (h.cols != 0 && h.rows > r.remaining() / width / h.cols)
    fail(ErrorKind::FormatError, "truncated payload in " + path.string());
  const std::size_t count = static_cast<std::size_t>(h.rows * h.cols);
  if (r.remaining() != count * width)
    fail(ErrorKind::FormatError, "payload size mismatch in " + path.string());

  Matrix m(static_cast<Eigen::Index>(h.rows), static_cast<Eigen::Index>(h.cols));
  double* out = m.data();
  for (std::size_t k = 0; k < count; ++k) {
    const char* p = r.take(width);
    out[k] = h.dtype == DType::F32 ? static_cast<double>(detail::get_f32(p)) : detail::get_f64(p);
  }
  if (!all_finite(m)) fail(ErrorKind::FormatError, "non-finite values in " + path.string());
  return m;
}

PairedDataset PairedDataset::subset(const std::vector<std::size_t>& rows) const {
  PairedDataset out;
  out.images = gather_rows(images, rows);
  out.positives = gather_rows(positives, rows);
  out.negatives = gather_rows(negatives, rows);
  out.ids.reserve(rows.size());
  for (auto r : rows) out.ids.push_back(ids[r]);
  return out;
}

void PairedDataset::validate() const {
  const auto n = images.rows();
  require(positives.rows() == n && negatives.rows() == n, ErrorKind::InvalidInput,
          "paired dataset row counts differ");
  require(positives.cols() == negatives.cols(), ErrorKind::InvalidInput,
          "positive and negative text dims differ");
  require(ids.size() == static_cast<std::size_t>(n), ErrorKind::InvalidInput,
          "paired dataset id count differs from row count");
}

namespace {

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path q(p);
  return q.is_absolute() ? q : base / q;
}

}  // namespace

Manifest read_manifest(const fs::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) fail(ErrorKind::ManifestError, "cannot open manifest " + manifest_path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::ManifestError, std::string("manifest is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) fail(ErrorKind::ManifestError, "manifest must be a JSON object");
  static const std::vector<std::string> known{"images", "positives", "negatives", "n", "easy", "latents", "meta"};
  for (const auto& [key, _] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      fail(ErrorKind::ManifestError, "unknown manifest key '" + key + "'");

  const fs::path base = manifest_path.parent_path();
  auto path_field = [&](const char* key) {
    if (!j.contains(key) || !j[key].is_string())
      fail(ErrorKind::ManifestError, std::string("manifest needs string key '") + key + "'");
    return resolve(base, j[key].get<std::string>());
  };
  Manifest m;
  m.images = path_field("images");
  m.positives = path_field("positives");
  m.negatives = path_field("negatives");
  if (j.contains("n")) {
    if (!j["n"].is_number_unsigned()) fail(ErrorKind::ManifestError, "manifest 'n' must be a non-negative integer");
    m.n = j["n"].get<std::uint64_t>();
  }
  if (j.contains("easy")) m.easy = path_field("easy");
  if (j.contains("latents")) m.latents = path_field("latents");
  if (j.contains("meta")) {
    if (!j["meta"].is_object()) fail(ErrorKind::ManifestError, "manifest 'meta' must be an object");
    m.meta = j["meta"].dump();
  }
  return m;
}

void write_manifest(const fs::path& manifest_path, const Manifest& m) {
  const fs::path base = manifest_path.parent_path();
  auto rel = [&](const fs::path& p) { return p.lexically_relative(base).generic_string(); };
  nlohmann::ordered_json j;
  j["images"] = rel(m.images);
  j["positives"] = rel(m.positives);
  j["negatives"] = rel(m.negatives);
  if (m.n) j["n"] = *m.n;
  if (m.easy) j["easy"] = rel(*m.easy);
  if (m.latents) j["latents"] = rel(*m.latents);
  if (!m.meta.empty()) j["meta"] = nlohmann::ordered_json::parse(m.meta);
  std::ofstream out(manifest_path, std::ios::trunc);
  if (!out) fail(ErrorKind::IoError, "cannot write " + manifest_path.string());
  out << j.dump(2) << '\n';
}

PairedDataset load_paired_dataset(const fs::path& manifest_path) {
  const Manifest m = read_manifest(manifest_path);
  auto load = [](const fs::path& p) {
    if (!fs::exists(p)) fail(ErrorKind::ManifestError, "missing embedding file " + p.string());
    return read_embeddings(p);
  };
  PairedDataset ds;
  ds.images = load(m.images);
  ds.positives = load(m.positives);
  ds.negatives = load(m.negatives);
  const auto n = ds.images.rows();
  if (ds.positives.rows() != n || ds.negatives.rows() != n)
    fail(ErrorKind::ManifestError, "row counts differ: images=" + std::to_string(n) +
                                       " positives=" + std::to_string(ds.positives.rows()) +
                                       " negatives=" + std::to_string(ds.negatives.rows()));
  if (ds.positives.cols() != ds.negatives.cols())
    fail(ErrorKind::ManifestError, "positive and negative text dims differ");
  if (m.n && *m.n != static_cast<std::uint64_t>(n))
    fail(ErrorKind::ManifestError, "manifest n=" + std::to_string(*m.n) + " but files hold " +
                                       std::to_string(n) + " rows");
  ds.ids.resize(static_cast<std::size_t>(n));
  std::iota(ds.ids.begin(), ds.ids.end(), std::uint64_t{0});
  return ds;
}

SplitIndices split_indices(std::size_t n, const SplitRatios& ratios, std::uint64_t seed) {
  require(ratios.train >= 0 && ratios.val >= 0 && ratios.test >= 0, ErrorKind::InvalidInput,
          "split ratios must be non-negative");
  require(std::abs(ratios.train + ratios.val + ratios.test - 1.0) <= 1e-9, ErrorKind::InvalidInput,
          "split ratios must sum to 1");
  require(n >= 10, ErrorKind::InvalidInput, "split_dataset needs at least 10 rows");

  // The small slack keeps exact products such as 0.15 * 100 from flooring to 14.
  auto share = [n](double r) { return static_cast<std::size_t>(std::floor(r * static_cast<double>(n) + 1e-9)); };
  std::size_t sizes[3] = {share(ratios.train), share(ratios.val), share(ratios.test)};
  std::size_t left = n - (sizes[0] + sizes[1] + sizes[2]);
  for (std::size_t k = 0; left > 0; ++k, --left) sizes[2 - (k % 3)] += 1;

  auto rng = rng_new(seed).fork(0x5917);
  const auto perm = permutation(rng, n);
  SplitIndices out;
  out.train.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(sizes[0]));
  out.val.assign(perm.begin() + static_cast<std::ptrdiff_t>(sizes[0]),
                 perm.begin() + static_cast<std::ptrdiff_t>(sizes[0] + sizes[1]));
  out.test.assign(perm.begin() + static_cast<std::ptrdiff_t>(sizes[0] + sizes[1]), perm.end());
  return out;
}

Splits split_dataset(const PairedDataset& ds, const SplitRatios& ratios, std::uint64_t seed) {
  const auto idx = split_indices(ds.size(), ratios, seed);
  return {ds.subset(idx.train), ds.subset(idx.val), ds.subset(idx.test)};
}

void SynthConfig::validate() const {
  require(n >= 1 && latent_dim >= 1 && context_dims >= 1 && fine_dims >= 1 && d_v >= 1 && d_l >= 1,
          ErrorKind::InvalidInput, "synth dims must be >= 1");
  require(context_dims + fine_dims == latent_dim, ErrorKind::InvalidInput,
          "context_dims + fine_dims must equal latent_dim");
  require(noise_std >= 0, ErrorKind::InvalidInput, "noise_std must be >= 0");
  require(hard_delta > 0, ErrorKind::InvalidInput, "hard_delta must be > 0");
}

namespace {

// Fixed map R^k -> R^d with orthonormal columns (or rows when d < k).
Matrix projection(RngStream rng, std::size_t d, std::size_t k) {
  if (d >= k) return orthonormalize_columns(rng_gaussian(rng, d, k));
  return orthonormalize_columns(rng_gaussian(rng, k, d)).transpose();
}

Matrix embed(const Matrix& z, const Matrix& w, double noise_std, RngStream rng) {
  Matrix out = (z * w.transpose()).array().tanh().matrix();
  if (noise_std > 0) out += noise_std * rng_gaussian(rng, static_cast<std::size_t>(out.rows()),
                                                     static_cast<std::size_t>(out.cols()));
  return out;
}

}  // namespace

SynthData synth_generate_unchecked(const SynthConfig& cfg) {
  const auto root = rng_new(cfg.seed);
  const Matrix w_v = projection(root.fork(1), cfg.d_v, cfg.latent_dim);
  const Matrix w_l = projection(root.fork(2), cfg.d_l, cfg.latent_dim);

  auto zr = root.fork(3);
  const Matrix z = rng_gaussian(zr, cfg.n, cfg.latent_dim);
  auto er = root.fork(4);
  const Matrix z_easy = rng_gaussian(er, cfg.n, cfg.latent_dim);

  // Hard latents keep the context block and move the fine block by hard_delta
  // along a random unit direction.
  Matrix z_hard = z;
  auto ur = root.fork(5);
  const auto fine0 = static_cast<Eigen::Index>(cfg.context_dims);
  const auto fine = static_cast<Eigen::Index>(cfg.fine_dims);
  for (Eigen::Index i = 0; i < z_hard.rows(); ++i) {
    Eigen::RowVectorXd u(fine);
    for (Eigen::Index j = 0; j < fine; ++j) u[j] = ur.gaussian();
    const double norm = u.norm();
    if (norm > 0) u /= norm;
    z_hard.row(i).segment(fine0, fine) += cfg.hard_delta * u;
  }

  SynthData out;
  out.dataset.images = embed(z, w_v, cfg.noise_std, root.fork(6));
  out.dataset.positives = embed(z, w_l, cfg.noise_std, root.fork(7));
  out.dataset.negatives = embed(z_hard, w_l, cfg.noise_std, root.fork(8));
  out.dataset.ids.resize(cfg.n);
  std::iota(out.dataset.ids.begin(), out.dataset.ids.end(), std::uint64_t{0});
  out.easy_negatives = embed(z_easy, w_l, cfg.noise_std, root.fork(9));
  out.latents = z;
  return out;
}

SynthData synth_generate(const SynthConfig& cfg) {
  cfg.validate();
  return synth_generate_unchecked(cfg);
}

}  // namespace jam::io
