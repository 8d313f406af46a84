#include <catch2/catch_amalgamated.hpp>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

#include "weaknesslab/data_io.hpp"

using namespace weaknesslab;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("weaknesslab_test_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  static int& counter() {
    static int c = 0;
    return c;
  }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(std::uint8_t(v >> 24));
  out.push_back(std::uint8_t(v >> 16));
  out.push_back(std::uint8_t(v >> 8));
  out.push_back(std::uint8_t(v));
}

void write_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

// Reference IDX pair: n 2x2 images with pixel value = example index, labels
// = index mod 10.
void write_idx_pair(const std::string& images, const std::string& labels,
                    std::uint32_t n, std::uint32_t side = 2,
                    std::uint32_t image_magic = 0x00000803,
                    std::uint32_t label_magic = 0x00000801) {
  std::vector<std::uint8_t> ib;
  put_be32(ib, image_magic);
  put_be32(ib, n);
  put_be32(ib, side);
  put_be32(ib, side);
  for (std::uint32_t i = 0; i < n; ++i)
    for (std::uint32_t j = 0; j < side * side; ++j)
      ib.push_back(static_cast<std::uint8_t>((i + j) % 256));
  write_bytes(images, ib);
  std::vector<std::uint8_t> lb;
  put_be32(lb, label_magic);
  put_be32(lb, n);
  for (std::uint32_t i = 0; i < n; ++i) lb.push_back(i % 10);
  write_bytes(labels, lb);
}

}  // namespace

TEST_CASE("load_idx decodes a well-formed pair") {
  TempDir tmp;
  write_idx_pair(tmp.file("img"), tmp.file("lab"), 5);
  Dataset d = load_idx(tmp.file("img"), tmp.file("lab"));
  REQUIRE(d.n() == 5);
  REQUIRE(d.dim() == 4);
  REQUIRE(d.images(0, 0) == 0.0f);
  REQUIRE(d.images(3, 1) == 4.0f / 255.0f);
  REQUIRE(d.labels[4] == 4);
  REQUIRE(d.images.minCoeff() >= 0.0f);
  REQUIRE(d.images.maxCoeff() <= 1.0f);
}

TEST_CASE("load_idx rejects a bad label magic") {
  TempDir tmp;
  write_idx_pair(tmp.file("img"), tmp.file("lab"), 3, 2, 0x00000803, 0x00000805);
  REQUIRE_THROWS_MATCHES(load_idx(tmp.file("img"), tmp.file("lab")), FormatError,
                         Catch::Matchers::MessageMatches(
                             Catch::Matchers::ContainsSubstring("labels magic")));
}

TEST_CASE("load_idx rejects a bad image magic") {
  TempDir tmp;
  write_idx_pair(tmp.file("img"), tmp.file("lab"), 3, 2, 0x00000801);
  REQUIRE_THROWS_MATCHES(load_idx(tmp.file("img"), tmp.file("lab")), FormatError,
                         Catch::Matchers::MessageMatches(
                             Catch::Matchers::ContainsSubstring("images magic")));
}

TEST_CASE("load_idx rejects truncated image data") {
  TempDir tmp;
  write_idx_pair(tmp.file("img"), tmp.file("lab"), 3);
  fs::resize_file(tmp.file("img"), 16 + 3 * 4 - 2);
  REQUIRE_THROWS_MATCHES(load_idx(tmp.file("img"), tmp.file("lab")), FormatError,
                         Catch::Matchers::MessageMatches(
                             Catch::Matchers::ContainsSubstring("truncated images")));
}

TEST_CASE("load_idx rejects an example count mismatch") {
  TempDir tmp;
  write_idx_pair(tmp.file("img"), tmp.file("lab"), 3);
  write_idx_pair(tmp.file("img2"), tmp.file("lab2"), 4);
  REQUIRE_THROWS_MATCHES(
      load_idx(tmp.file("img"), tmp.file("lab2")), FormatError,
      Catch::Matchers::MessageMatches(
          Catch::Matchers::ContainsSubstring("count mismatch")));
}

TEST_CASE("load_idx accepts a zero-example file") {
  TempDir tmp;
  write_idx_pair(tmp.file("img"), tmp.file("lab"), 0, 28);
  Dataset d = load_idx(tmp.file("img"), tmp.file("lab"));
  REQUIRE(d.n() == 0);
  REQUIRE(d.dim() == 784);
}

TEST_CASE("save_idx round-trips byte-valued pixels") {
  TempDir tmp;
  Dataset d = synthetic_digits(12, 5);
  save_idx(d, tmp.file("img"), tmp.file("lab"));
  Dataset back = load_idx(tmp.file("img"), tmp.file("lab"));
  REQUIRE(back.n() == d.n());
  REQUIRE(back.labels == d.labels);
  // Quantised to byte precision on the way out.
  for (Eigen::Index i = 0; i < d.n(); ++i)
    for (Eigen::Index j = 0; j < d.dim(); ++j)
      REQUIRE(std::fabs(back.images(i, j) - d.images(i, j)) <= 0.5f / 255.0f + 1e-6f);
}

TEST_CASE("make_split is deterministic and disjoint") {
  Dataset d = synthetic_gaussian(60, 3, 3, 11);
  Split a = make_split(d, 25, 10, 1234);
  Split b = make_split(d, 25, 10, 1234);
  REQUIRE(a.train_indices == b.train_indices);
  REQUIRE(a.probe_indices == b.probe_indices);
  REQUIRE(a.train_indices.size() == 25);
  REQUIRE(a.probe_indices.size() == 10);
  std::set<std::uint32_t> seen(a.train_indices.begin(), a.train_indices.end());
  for (std::uint32_t i : a.probe_indices) REQUIRE(!seen.count(i));

  Split c = make_split(d, 25, 10, 99);
  REQUIRE(a.train_indices != c.train_indices);

  REQUIRE_THROWS_AS(make_split(d, 55, 10, 0), ArgumentError);
}

TEST_CASE("synthetic_gaussian shape, determinism, and range") {
  Dataset a = synthetic_gaussian(30, 4, 3, 7);
  Dataset b = synthetic_gaussian(30, 4, 3, 7);
  REQUIRE(a.n() == 30);
  REQUIRE(a.dim() == 4);
  for (std::uint8_t l : a.labels) REQUIRE(l < 3);
  REQUIRE(a.images == b.images);
  REQUIRE(a.labels == b.labels);
  a.validate();
}

TEST_CASE("synthetic_digits is deterministic and in range") {
  Dataset a = synthetic_digits(40, 9000);
  Dataset b = synthetic_digits(40, 9000);
  REQUIRE(a.images == b.images);
  REQUIRE(a.dim() == 784);
  for (std::size_t i = 0; i < a.labels.size(); ++i) REQUIRE(a.labels[i] == i % 10);
  a.validate();
  Dataset c = synthetic_digits(40, 9001);
  REQUIRE(a.images != c.images);
}

TEST_CASE("cache round-trip is bit-identical") {
  TempDir tmp;
  Dataset d = synthetic_digits(17, 3);
  save_cache(d, tmp.file("cache.wlds"));
  Dataset back = load_cache(tmp.file("cache.wlds"));
  REQUIRE(back.name == d.name);
  REQUIRE(back.labels == d.labels);
  REQUIRE(back.images.rows() == d.images.rows());
  REQUIRE(std::memcmp(back.images.data(), d.images.data(),
                      sizeof(float) * static_cast<std::size_t>(d.images.size())) == 0);
}

TEST_CASE("cache loader rejects foreign bytes") {
  TempDir tmp;
  write_bytes(tmp.file("junk"), {'n', 'o', 'p', 'e', 0, 0, 0, 0, 1, 2, 3, 4});
  REQUIRE_THROWS_AS(load_cache(tmp.file("junk")), FormatError);
}
