#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dragd/tensor.hpp"

namespace dragd {

/// Images (N, C, H, W) with pixels in [0, 1] and integer labels.
struct LabeledDataset {
  Tensor images{Shape{0, 1, 1, 1}};
  std::vector<int> labels;
  std::size_t num_classes = 10;
  std::string name;

  std::size_t size() const { return labels.size(); }
  Shape image_shape() const;

  LabeledDataset subset(std::span<const std::size_t> indices) const;
  /// Labels of the given rows (all rows when empty) as a (N) tensor of class indices.
  Tensor label_tensor(std::span<const std::size_t> indices = {}) const;
  /// Throws if pixels fall outside [0, 1] or labels outside [0, num_classes).
  void validate() const;
};

LabeledDataset concat(const LabeledDataset& a, const LabeledDataset& b);

/// Disjoint per-client index lists.
struct Partition {
  std::vector<std::vector<std::size_t>> clients;
  std::size_t total() const;
};

// ---------------------------------------------------------------------------
// Loaders

/// MNIST-style IDX pair (big-endian magic 0x00000803 / 0x00000801).
LabeledDataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path);
LabeledDataset parse_idx(std::span<const std::uint8_t> image_bytes, std::span<const std::uint8_t> label_bytes);
void write_idx(const LabeledDataset& data, const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path);

/// CIFAR-10 binary batches data_batch_1..5.bin then test_batch.bin. Each
/// record is one label byte followed by 3072 channel-planar pixel bytes.
LabeledDataset load_cifar10_binary(const std::filesystem::path& dir);
LabeledDataset parse_cifar10_records(std::span<const std::uint8_t> bytes);

/// One subfolder per class (sorted by name), each holding binary PGM/PPM
/// images. Images are resized bilinearly to target_size x target_size and
/// converted to `channels` (1 or 3). Unreadable files are skipped.
LabeledDataset load_image_dir(const std::filesystem::path& dir, std::size_t target_size, std::size_t channels = 3);

/// Bilinear resize of one (C, H, W) image with half-pixel centres.
Tensor resize_bilinear(const Tensor& image, std::size_t out_h, std::size_t out_w);

// ---------------------------------------------------------------------------
// Synthetic data

/// Seeded per-class Gaussian blobs: a smooth random prototype per class plus
/// pixel noise of standard deviation `noise`, clamped to [0, 1].
LabeledDataset synthetic_blobs(std::size_t n, std::size_t num_classes, Shape image_shape, std::uint64_t seed,
                               double noise = 0.1);

/// Seeded handwritten-digit look-alikes (28 x 28 by default): stroke glyphs
/// for 0-9 under random affine jitter and stroke width. Labels cycle 0..9
/// in shuffled order.
LabeledDataset synthetic_digits(std::size_t n, std::uint64_t seed, std::size_t size = 28);

// ---------------------------------------------------------------------------
// Partitioning

/// Non-IID split: for every label, client proportions are drawn from
/// Dirichlet(alpha * 1_K) and that label's (shuffled) samples are dealt out
/// by largest-remainder rounding. Deterministic per seed.
Partition dirichlet_partition(const LabeledDataset& data, std::size_t clients, double alpha, std::uint64_t seed);
Partition dirichlet_partition(std::span<const int> labels, std::size_t num_classes, std::size_t clients, double alpha,
                              std::uint64_t seed);

// ---------------------------------------------------------------------------
// PGM / PPM

/// Reads a binary P5/P6 file (maxval <= 255) into (C, H, W) in [0, 1].
Tensor read_pnm(const std::filesystem::path& path);
/// Writes a (C, H, W) image, C = 1 (P5) or 3 (P6), clamping to [0, 1].
void write_pnm(const Tensor& image, const std::filesystem::path& path);

/// Lays out a (N, C, H, W) batch row-major in `cols` columns with 1-pixel
/// white separators (including an outer border) and writes it as PGM/PPM.
void write_image_grid(const Tensor& images, const std::filesystem::path& path, std::size_t cols);

}  // namespace dragd
