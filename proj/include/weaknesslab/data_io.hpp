#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "weaknesslab/errors.hpp"
#include "weaknesslab/rng.hpp"

// Dataset ingestion: big-endian IDX files (MNIST/Fashion-MNIST layout),
// deterministic splits, synthetic datasets for hermetic tests, and a raw
// little-endian cache format.

namespace weaknesslab {

using ImageMatrix =
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Dataset {
  std::string name;
  ImageMatrix images;               // n x d, pixels in [0, 1]
  std::vector<std::uint8_t> labels;  // class indices, < 10

  Eigen::Index n() const { return images.rows(); }
  Eigen::Index dim() const { return images.cols(); }

  void validate() const {
    if (static_cast<std::size_t>(images.rows()) != labels.size())
      throw FormatError("Dataset " + name + ": image/label count mismatch");
    for (std::uint8_t l : labels)
      if (l >= 10) throw FormatError("Dataset " + name + ": label out of range");
    if (images.size() > 0) {
      float lo = images.minCoeff(), hi = images.maxCoeff();
      if (!(lo >= 0.0f && hi <= 1.0f))
        throw FormatError("Dataset " + name + ": pixel outside [0, 1]");
    }
  }
};

struct Split {
  std::vector<std::uint32_t> train_indices;
  std::vector<std::uint32_t> probe_indices;
  std::vector<std::uint32_t> test_indices;
  std::uint64_t seed = 0;
};

namespace detail {

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open file: " + path);
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in),
                                   std::istreambuf_iterator<char>());
}

inline std::uint32_t read_be32(const std::vector<std::uint8_t>& bytes,
                               std::size_t offset, const std::string& field) {
  if (offset + 4 > bytes.size()) throw FormatError("truncated file at " + field);
  return (std::uint32_t(bytes[offset]) << 24) | (std::uint32_t(bytes[offset + 1]) << 16) |
         (std::uint32_t(bytes[offset + 2]) << 8) | std::uint32_t(bytes[offset + 3]);
}

inline void write_be32(std::ofstream& out, std::uint32_t v) {
  std::uint8_t b[4] = {std::uint8_t(v >> 24), std::uint8_t(v >> 16),
                       std::uint8_t(v >> 8), std::uint8_t(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace detail

// Parses an IDX image/label file pair. Magic numbers are 0x00000803 for
// images (unsigned byte, 3 dims) and 0x00000801 for labels; all header
// fields are big-endian. Pixels are divided by 255.0 exactly, with no
// other preprocessing.
inline Dataset load_idx(const std::string& images_path,
                        const std::string& labels_path) {
  auto ibytes = detail::read_file_bytes(images_path);
  auto lbytes = detail::read_file_bytes(labels_path);

  std::uint32_t imagic = detail::read_be32(ibytes, 0, "images magic");
  if (imagic != 0x00000803u)
    throw FormatError("images magic: expected 0x00000803, got " +
                      std::to_string(imagic));
  std::uint32_t n = detail::read_be32(ibytes, 4, "images count");
  std::uint32_t rows = detail::read_be32(ibytes, 8, "images rows");
  std::uint32_t cols = detail::read_be32(ibytes, 12, "images cols");

  std::uint32_t lmagic = detail::read_be32(lbytes, 0, "labels magic");
  if (lmagic != 0x00000801u)
    throw FormatError("labels magic: expected 0x00000801, got " +
                      std::to_string(lmagic));
  std::uint32_t n_labels = detail::read_be32(lbytes, 4, "labels count");
  if (n != n_labels)
    throw FormatError("example count mismatch: " + std::to_string(n) +
                      " images vs " + std::to_string(n_labels) + " labels");

  std::size_t dim = std::size_t(rows) * cols;
  std::size_t need = 16 + std::size_t(n) * dim;
  if (ibytes.size() < need) throw FormatError("truncated images data");
  if (lbytes.size() < 8 + n) throw FormatError("truncated labels data");

  Dataset d;
  d.name = std::filesystem::path(images_path).filename().string();
  d.images.resize(n, static_cast<Eigen::Index>(dim));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < dim; ++j)
      d.images(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          static_cast<float>(ibytes[16 + i * dim + j]) / 255.0f;
  d.labels.assign(lbytes.begin() + 8, lbytes.begin() + 8 + n);
  d.validate();
  return d;
}

// Writes a dataset back out as an IDX pair (inverse of load_idx for
// byte-valued pixels). side*side must equal the feature dimension.
inline void save_idx(const Dataset& d, const std::string& images_path,
                     const std::string& labels_path, std::uint32_t side = 28) {
  if (static_cast<Eigen::Index>(side) * side != d.dim())
    throw ArgumentError("save_idx: side^2 != feature dim");
  std::ofstream io(images_path, std::ios::binary);
  if (!io) throw DataError("cannot write " + images_path);
  detail::write_be32(io, 0x00000803u);
  detail::write_be32(io, static_cast<std::uint32_t>(d.n()));
  detail::write_be32(io, side);
  detail::write_be32(io, side);
  for (Eigen::Index i = 0; i < d.n(); ++i)
    for (Eigen::Index j = 0; j < d.dim(); ++j) {
      float v = d.images(i, j) * 255.0f;
      auto byte = static_cast<std::uint8_t>(std::clamp(v + 0.5f, 0.0f, 255.0f));
      io.write(reinterpret_cast<const char*>(&byte), 1);
    }
  std::ofstream lo(labels_path, std::ios::binary);
  if (!lo) throw DataError("cannot write " + labels_path);
  detail::write_be32(lo, 0x00000801u);
  detail::write_be32(lo, static_cast<std::uint32_t>(d.n()));
  lo.write(reinterpret_cast<const char*>(d.labels.data()),
           static_cast<std::streamsize>(d.labels.size()));
}

// Deterministic train/probe split: one seeded Fisher-Yates shuffle of the
// pool, train first, probe next. Test indices refer to the held-out official
// test set and are filled in by the harness.
inline Split make_split(const Dataset& d, std::size_t n_train, std::size_t n_probe,
                        std::uint64_t seed) {
  std::size_t n = static_cast<std::size_t>(d.n());
  if (n_train + n_probe > n)
    throw ArgumentError("make_split: n_train + n_probe exceeds pool size");
  std::vector<std::uint32_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = static_cast<std::uint32_t>(i);
  SplitMix64 rng(seed);
  for (std::size_t i = n; i > 1; --i)
    std::swap(perm[i - 1], perm[static_cast<std::size_t>(rng.next_below(i))]);
  Split s;
  s.seed = seed;
  s.train_indices.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.probe_indices.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train),
                         perm.begin() + static_cast<std::ptrdiff_t>(n_train + n_probe));
  return s;
}

// k isotropic Gaussian blobs clipped to [0,1]^d, labels round-robin over
// blob index. Centres are drawn in [0.2, 0.8]^d with a minimum pairwise
// separation of 6*sigma, relaxed geometrically if the draw keeps failing so
// the construction always terminates.
//
// The seed fixes the task (blob centres); sample_offset selects which
// samples of that task to emit, so disjoint offsets give fresh draws from
// the same distribution (train pool vs held-out test set).
inline Dataset synthetic_gaussian(std::size_t n, std::size_t d, std::size_t k_classes,
                                  std::uint64_t seed, double sigma = 0.05,
                                  std::size_t sample_offset = 0) {
  if (n == 0 || d == 0 || k_classes == 0 || k_classes > 10)
    throw ArgumentError("synthetic_gaussian: n, d, k must be positive (k <= 10)");
  SplitMix64 rng(seed);
  SplitMix64 centre_rng = rng.split(1);
  std::vector<std::vector<double>> centres;
  double min_sep = 6.0 * sigma;
  int fails = 0;
  while (centres.size() < k_classes) {
    std::vector<double> c(d);
    for (double& x : c) x = centre_rng.next_uniform(0.2, 0.8);
    bool ok = true;
    for (const auto& prev : centres) {
      double dist2 = 0.0;
      for (std::size_t j = 0; j < d; ++j) dist2 += (c[j] - prev[j]) * (c[j] - prev[j]);
      if (dist2 < min_sep * min_sep) {
        ok = false;
        break;
      }
    }
    if (ok) {
      centres.push_back(std::move(c));
      fails = 0;
    } else if (++fails >= 200) {
      min_sep *= 0.9;
      fails = 0;
    }
  }
  Dataset out;
  out.name = "synthetic-gaussian";
  out.images.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  out.labels.resize(n);
  SplitMix64 stream_root = rng.split(2);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t sample = sample_offset + i;
    std::size_t label = sample % k_classes;
    out.labels[i] = static_cast<std::uint8_t>(label);
    SplitMix64 sample_rng = stream_root.split(sample);
    for (std::size_t j = 0; j < d; ++j) {
      double v = centres[label][j] + sigma * sample_rng.next_normal();
      out.images(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  out.validate();
  return out;
}

// Synthetic 28x28 ten-class image task used when no real IDX data is
// available. Each class is a template of Gaussian bumps; samples get an
// integer shift, amplitude jitter, distractor bumps, and pixel noise. The
// knobs are chosen so small MLPs memorise a 250-point subset easily but
// test accuracy varies meaningfully across training seeds.
//
// The seed fixes the task (class templates); sample_offset selects which
// samples of that task to emit, so a held-out test set is drawn with the
// offset placed past the training pool.
inline Dataset synthetic_digits(std::size_t n, std::uint64_t seed,
                                std::size_t sample_offset = 0) {
  constexpr int kSide = 28;
  constexpr int kDim = kSide * kSide;
  constexpr int kClasses = 10;
  SplitMix64 root(seed);

  // Class templates (shared across every dataset drawn from this seed).
  std::vector<std::vector<float>> templates(kClasses, std::vector<float>(kDim, 0.0f));
  for (int c = 0; c < kClasses; ++c) {
    SplitMix64 trng = root.split(1000 + static_cast<std::uint64_t>(c));
    int n_bumps = 3 + static_cast<int>(trng.next_below(3));
    for (int b = 0; b < n_bumps; ++b) {
      double cx = trng.next_uniform(6.0, 22.0);
      double cy = trng.next_uniform(6.0, 22.0);
      double s = trng.next_uniform(1.6, 3.2);
      double amp = trng.next_uniform(0.55, 1.0);
      for (int y = 0; y < kSide; ++y)
        for (int x = 0; x < kSide; ++x) {
          double r2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
          templates[c][y * kSide + x] +=
              static_cast<float>(amp * std::exp(-r2 / (2.0 * s * s)));
        }
    }
  }

  Dataset out;
  out.name = "synthetic-digits";
  out.images.resize(static_cast<Eigen::Index>(n), kDim);
  out.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t sample = sample_offset + i;
    int label = static_cast<int>(sample % kClasses);
    out.labels[i] = static_cast<std::uint8_t>(label);
    SplitMix64 srng = root.split(1 + sample);
    int dx = static_cast<int>(srng.next_below(7)) - 3;
    int dy = static_cast<int>(srng.next_below(7)) - 3;
    double scale = srng.next_uniform(0.7, 1.2);
    std::vector<double> px(kDim, 0.0);
    for (int y = 0; y < kSide; ++y) {
      int sy = y - dy;
      if (sy < 0 || sy >= kSide) continue;
      for (int x = 0; x < kSide; ++x) {
        int sx = x - dx;
        if (sx < 0 || sx >= kSide) continue;
        px[y * kSide + x] = scale * templates[label][sy * kSide + sx];
      }
    }
    int n_distract = 1 + static_cast<int>(srng.next_below(2));
    for (int b = 0; b < n_distract; ++b) {
      double cx = srng.next_uniform(2.0, 26.0);
      double cy = srng.next_uniform(2.0, 26.0);
      double s = srng.next_uniform(1.0, 2.4);
      double amp = srng.next_uniform(0.25, 0.6);
      int x0 = std::max(0, static_cast<int>(cx - 4 * s));
      int x1 = std::min(kSide - 1, static_cast<int>(cx + 4 * s));
      int y0 = std::max(0, static_cast<int>(cy - 4 * s));
      int y1 = std::min(kSide - 1, static_cast<int>(cy + 4 * s));
      for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
          double r2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
          px[y * kSide + x] += amp * std::exp(-r2 / (2.0 * s * s));
        }
    }
    for (int j = 0; j < kDim; ++j) {
      double v = px[j] + 0.07 * srng.next_normal();
      out.images(static_cast<Eigen::Index>(i), j) =
          static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  out.validate();
  return out;
}

// --- cache format -----------------------------------------------------------
// Little-endian layout, version 1:
//   magic "WLDS" | u32 version | u32 name_len | name bytes
//   u64 n | u64 dim | n label bytes | n*dim float32 pixels (row-major)
// Stored pixels are the dataset's own float32 values, so a round trip is
// bit-identical.

inline void save_cache(const Dataset& d, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write cache: " + path);
  out.write("WLDS", 4);
  std::uint32_t version = 1;
  out.write(reinterpret_cast<const char*>(&version), 4);
  auto name_len = static_cast<std::uint32_t>(d.name.size());
  out.write(reinterpret_cast<const char*>(&name_len), 4);
  out.write(d.name.data(), name_len);
  std::uint64_t n = static_cast<std::uint64_t>(d.n());
  std::uint64_t dim = static_cast<std::uint64_t>(d.dim());
  out.write(reinterpret_cast<const char*>(&n), 8);
  out.write(reinterpret_cast<const char*>(&dim), 8);
  out.write(reinterpret_cast<const char*>(d.labels.data()),
            static_cast<std::streamsize>(d.labels.size()));
  out.write(reinterpret_cast<const char*>(d.images.data()),
            static_cast<std::streamsize>(sizeof(float) * n * dim));
}

inline Dataset load_cache(const std::string& path) {
  auto bytes = detail::read_file_bytes(path);
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "WLDS", 4) != 0)
    throw FormatError("cache magic: not a WLDS file: " + path);
  std::uint32_t version;
  std::memcpy(&version, bytes.data() + 4, 4);
  if (version != 1) throw FormatError("cache version: unsupported " + std::to_string(version));
  std::uint32_t name_len;
  std::memcpy(&name_len, bytes.data() + 8, 4);
  std::size_t off = 12;
  if (bytes.size() < off + name_len + 16) throw FormatError("truncated cache header");
  Dataset d;
  d.name.assign(reinterpret_cast<const char*>(bytes.data() + off), name_len);
  off += name_len;
  std::uint64_t n, dim;
  std::memcpy(&n, bytes.data() + off, 8);
  std::memcpy(&dim, bytes.data() + off + 8, 8);
  off += 16;
  if (bytes.size() < off + n + sizeof(float) * n * dim)
    throw FormatError("truncated cache data");
  d.labels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(off),
                  bytes.begin() + static_cast<std::ptrdiff_t>(off + n));
  off += n;
  d.images.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
  std::memcpy(d.images.data(), bytes.data() + off, sizeof(float) * n * dim);
  d.validate();
  return d;
}

// Data directory resolution: CLI flag wins, then WEAKNESSLAB_DATA_DIR.
inline std::string default_data_dir() {
  const char* env = std::getenv("WEAKNESSLAB_DATA_DIR");
  return env ? std::string(env) : std::string();
}

// Loads <dir>/<name>/{train,t10k}-{images-idx3,labels-idx1}-ubyte.
inline std::pair<Dataset, Dataset> load_idx_pair(const std::string& dir,
                                                 const std::string& name) {
  namespace fs = std::filesystem;
  fs::path base = fs::path(dir) / name;
  Dataset train = load_idx((base / "train-images-idx3-ubyte").string(),
                           (base / "train-labels-idx1-ubyte").string());
  Dataset test = load_idx((base / "t10k-images-idx3-ubyte").string(),
                          (base / "t10k-labels-idx1-ubyte").string());
  train.name = name + "-train";
  test.name = name + "-test";
  return {std::move(train), std::move(test)};
}

}  // namespace weaknesslab
