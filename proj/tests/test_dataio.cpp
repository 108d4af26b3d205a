#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include <gtest/gtest.h>

#include "dragd/dataio.hpp"
#include "dragd/error.hpp"
#include "dragd/random.hpp"

namespace {

using namespace dragd;
namespace fs = std::filesystem;

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("dragd_test_dataio_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write_bytes(const fs::path& p, const std::vector<std::uint8_t>& b) {
  std::ofstream os(p, std::ios::binary);
  os.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

void put_be32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<std::uint8_t>(v >> s));
}

// Two 2x3 images written by hand in the IDX layout.
std::pair<std::vector<std::uint8_t>, std::vector<std::uint8_t>> idx_fixture() {
  std::vector<std::uint8_t> img, lab;
  put_be32(img, 0x00000803);
  put_be32(img, 2);
  put_be32(img, 2);
  put_be32(img, 3);
  for (std::uint8_t v : {0, 255, 51, 102, 153, 204, 255, 0, 0, 0, 0, 255}) img.push_back(v);
  put_be32(lab, 0x00000801);
  put_be32(lab, 2);
  lab.push_back(7);
  lab.push_back(2);
  return {img, lab};
}

TEST(Idx, HandWrittenFixtureRoundTrips) {
  const auto [img, lab] = idx_fixture();
  const LabeledDataset d = parse_idx(img, lab);
  ASSERT_EQ(d.size(), 2u);
  EXPECT_EQ(d.images.shape(), (Shape{2, 1, 2, 3}));
  EXPECT_EQ(d.labels, (std::vector<int>{7, 2}));
  EXPECT_EQ(d.images[0], 0.0);
  EXPECT_EQ(d.images[1], 1.0);
  EXPECT_DOUBLE_EQ(d.images[2], 0.2);
  const fs::path dir = temp_dir("idx");
  write_idx(d, dir / "i", dir / "l");
  const LabeledDataset back = load_idx(dir / "i", dir / "l");
  EXPECT_EQ(back.images, d.images);
  EXPECT_EQ(back.labels, d.labels);
}

TEST(Idx, BadMagicAndTruncationNameTheOffset) {
  auto [img, lab] = idx_fixture();
  auto bad = img;
  bad[3] = 0x04;
  EXPECT_THROW(parse_idx(bad, lab), FormatError);
  auto short_img = img;
  short_img.resize(short_img.size() - 1);
  try {
    parse_idx(short_img, lab);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), short_img.size());
  }
}

TEST(Idx, RandomBytesAlwaysScaleIntoUnitInterval) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::uint8_t> img, lab;
    const std::uint32_t n = 1 + static_cast<std::uint32_t>(rng.below(5)), h = 1 + static_cast<std::uint32_t>(rng.below(6));
    put_be32(img, 0x803);
    put_be32(img, n);
    put_be32(img, h);
    put_be32(img, h);
    for (std::uint32_t i = 0; i < n * h * h; ++i) img.push_back(static_cast<std::uint8_t>(rng.below(256)));
    put_be32(lab, 0x801);
    put_be32(lab, n);
    for (std::uint32_t i = 0; i < n; ++i) lab.push_back(static_cast<std::uint8_t>(rng.below(10)));
    const LabeledDataset d = parse_idx(img, lab);
    for (double v : d.images.data()) ASSERT_TRUE(v >= 0.0 && v <= 1.0);
    for (std::size_t i = 0; i < n * h * h; ++i) ASSERT_DOUBLE_EQ(d.images[i] * 255.0, img[16 + i]);
  }
}

TEST(Cifar, LabelByteComesBeforePixels) {
  std::vector<std::uint8_t> rec(3073);
  rec[0] = 6;
  for (std::size_t i = 1; i < rec.size(); ++i) rec[i] = static_cast<std::uint8_t>(i % 256);
  const LabeledDataset d = parse_cifar10_records(rec);
  ASSERT_EQ(d.size(), 1u);
  EXPECT_EQ(d.labels[0], 6);
  EXPECT_EQ(d.images.shape(), (Shape{1, 3, 32, 32}));
  // Channel-planar: pixel 0 of the green plane is byte 1 + 1024.
  EXPECT_DOUBLE_EQ(d.images[1024] * 255.0, static_cast<double>((1 + 1024) % 256));
  rec.pop_back();
  EXPECT_THROW(parse_cifar10_records(rec), FormatError);
}

TEST(Cifar, MissingBatchFileIsAnError) {
  const fs::path dir = temp_dir("cifar");
  std::vector<std::uint8_t> rec(3073, 0);
  for (int i = 1; i <= 5; ++i) write_bytes(dir / ("data_batch_" + std::to_string(i) + ".bin"), rec);
  EXPECT_THROW(load_cifar10_binary(dir), IoError);
  write_bytes(dir / "test_batch.bin", rec);
  EXPECT_EQ(load_cifar10_binary(dir).size(), 6u);
}

TEST(Resize, IdentityAndConstantPreservation) {
  Rng rng(4);
  Tensor img(Shape{3, 7, 5});
  for (double& v : img.data()) v = rng.uniform();
  EXPECT_EQ(resize_bilinear(img, 7, 5), img);
  const Tensor flat(Shape{3, 250, 250}, 0.37);
  const Tensor small = resize_bilinear(flat, 32, 32);
  EXPECT_EQ(small.shape(), (Shape{3, 32, 32}));
  for (double v : small.data()) EXPECT_NEAR(v, 0.37, 1e-15);
}

TEST(ImageDir, FoldersBecomeLabelsAndBadFilesAreSkipped) {
  const fs::path dir = temp_dir("imgdir");
  fs::create_directories(dir / "alice");
  fs::create_directories(dir / "bob");
  write_pnm(Tensor(Shape{3, 250, 250}, 0.5), dir / "alice" / "a.ppm");
  write_pnm(Tensor(Shape{1, 40, 30}, 0.2), dir / "bob" / "b.pgm");
  write_bytes(dir / "bob" / "broken.pgm", {'P', '5', '\n', 'x'});
  const LabeledDataset d = load_image_dir(dir, 32, 3);
  ASSERT_EQ(d.size(), 2u);
  EXPECT_EQ(d.images.shape(), (Shape{2, 3, 32, 32}));
  EXPECT_EQ(d.labels, (std::vector<int>{0, 1}));
  const fs::path empty = temp_dir("imgdir_empty");
  fs::create_directories(empty / "c");
  write_bytes(empty / "c" / "broken.pgm", {'P', '5'});
  EXPECT_THROW(load_image_dir(empty, 32, 3), IoError);
}

TEST(Pnm, GridLayoutAndQuantisation) {
  Rng rng(5);
  Tensor imgs(Shape{16, 1, 6, 5});
  for (double& v : imgs.data()) v = rng.uniform();
  const fs::path dir = temp_dir("grid");
  write_image_grid(imgs, dir / "g.pgm", 4);
  const Tensor grid = read_pnm(dir / "g.pgm");
  EXPECT_EQ(grid.shape(), (Shape{1, 4 * 6 + 5, 4 * 5 + 5}));
  // Image 6 sits at grid row 1, column 2.
  const std::size_t gw = grid.dim(2), top = 1 + 1 * 7, left = 1 + 2 * 6;
  for (std::size_t y = 0; y < 6; ++y)
    for (std::size_t x = 0; x < 5; ++x) EXPECT_LE(std::abs(grid[(top + y) * gw + left + x] - imgs[6 * 30 + y * 5 + x]), 1.0 / 255);
  // Separators are white.
  EXPECT_EQ(grid[0], 1.0);

  write_image_grid(imgs.rows(0, 1), dir / "one.pgm", 4);
  EXPECT_EQ(read_pnm(dir / "one.pgm").shape(), (Shape{1, 8, 7}));
  EXPECT_THROW(write_image_grid(imgs, dir / "missing" / "x.pgm", 4), IoError);
}

TEST(Pnm, ColourRoundTrip) {
  Rng rng(6);
  Tensor img(Shape{3, 4, 4});
  for (double& v : img.data()) v = rng.uniform();
  const fs::path dir = temp_dir("ppm");
  write_pnm(img, dir / "c.ppm");
  const Tensor back = read_pnm(dir / "c.ppm");
  ASSERT_EQ(back.shape(), img.shape());
  for (std::size_t i = 0; i < img.numel(); ++i) EXPECT_LE(std::abs(back[i] - img[i]), 0.5 / 255 + 1e-12);
}

TEST(Synthetic, DeterministicValidAndBalanced) {
  const LabeledDataset a = synthetic_digits(40, 9), b = synthetic_digits(40, 9);
  EXPECT_EQ(a.images, b.images);
  EXPECT_EQ(a.labels, b.labels);
  a.validate();
  std::map<int, int> counts;
  for (int l : a.labels) ++counts[l];
  EXPECT_EQ(counts.size(), 10u);
  for (const auto& [l, c] : counts) EXPECT_EQ(c, 4);
  const LabeledDataset blobs = synthetic_blobs(30, 3, {3, 8, 8}, 2);
  blobs.validate();
  EXPECT_EQ(blobs.images.shape(), (Shape{30, 3, 8, 8}));
}

TEST(Partition, SingleClientGetsEverything) {
  const LabeledDataset d = synthetic_blobs(50, 5, {1, 4, 4}, 1);
  const Partition p = dirichlet_partition(d, 1, 0.1, 3);
  ASSERT_EQ(p.clients.size(), 1u);
  EXPECT_EQ(p.clients[0].size(), 50u);
}

TEST(Partition, DisjointAndSizeConservingOnRandomTriples) {
  Rng rng(11);
  std::vector<int> labels(300);
  for (int& l : labels) l = static_cast<int>(rng.below(10));
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t k = 1 + rng.below(20);
    const double alpha = std::pow(10.0, rng.uniform(-2.0, 3.0));
    const Partition p = dirichlet_partition(labels, 10, k, alpha, rng.next_u64());
    std::set<std::size_t> seen;
    std::size_t total = 0;
    for (const auto& c : p.clients) {
      total += c.size();
      for (std::size_t i : c) ASSERT_TRUE(seen.insert(i).second);
    }
    ASSERT_EQ(total, labels.size());
    ASSERT_EQ(p.clients.size(), k);
  }
}

TEST(Partition, TenClientsAlphaPointOne) {
  const LabeledDataset d = synthetic_digits(200, 1, 8);
  const Partition p = dirichlet_partition(d, 10, 0.1, 7);
  EXPECT_EQ(p.total(), 200u);
}

TEST(Partition, DeterministicPerSeedAndErrors) {
  const LabeledDataset d = synthetic_blobs(40, 4, {1, 4, 4}, 1);
  const Partition a = dirichlet_partition(d, 5, 0.5, 9), b = dirichlet_partition(d, 5, 0.5, 9);
  EXPECT_EQ(a.clients, b.clients);
  EXPECT_THROW(dirichlet_partition(d, 41, 0.5, 9), ConfigError);
  EXPECT_THROW(dirichlet_partition(d, 0, 0.5, 9), ConfigError);
  EXPECT_THROW(dirichlet_partition(d, 4, 0.0, 9), ConfigError);
}

TEST(Partition, HugeAlphaIsNearUniform) {
  // 10 clients, 10 classes of 1000: each client should hold about 100 of each label.
  std::vector<int> labels(10000);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i % 10);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Partition p = dirichlet_partition(labels, 10, 10, 1e6, seed);
    for (const auto& c : p.clients) {
      std::vector<double> hist(10, 0.0);
      for (std::size_t i : c) hist[labels[i]] += 1.0;
      for (double h : hist) ASSERT_NEAR(h, 100.0, 5.0) << "seed " << seed;
    }
  }
}

}  // namespace
