#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "dragd/tensor.hpp"

namespace dragd {

/// Mean squared pixel difference. Throws ShapeError on mismatched shapes.
double mse(const Tensor& a, const Tensor& b);

/// 10 log10(peak^2 / mse) in dB; +infinity when mse is 0.
double psnr_from_mse(double mse_value, double peak = 1.0);
double psnr(const Tensor& a, const Tensor& b, double peak = 1.0);

/// Mean local SSIM of two (C, H, W) images: 11 x 11 Gaussian window with
/// sigma 1.5 over every valid position, C1 = (0.01 peak)^2,
/// C2 = (0.03 peak)^2, averaged over channels. Images smaller than the
/// window use one global window (uniform weights) and log a warning.
double ssim(const Tensor& a, const Tensor& b, double peak = 1.0);

/// "inf" / "-inf" / "nan" for non-finite values, %.17g otherwise, so every
/// persisted number reads back bit-exactly.
std::string format_metric(double value);
double parse_metric(const std::string& text);

/// Minimum-cost assignment for a square cost matrix (row-major n x n).
/// Returns col[i] for every row i.
std::vector<std::size_t> min_cost_assignment(std::span<const double> cost, std::size_t n);

/// Permutation p with recon[i] matched to truth[p[i]], minimising total MSE
/// within each label group. A label multiset mismatch falls back to one
/// global assignment with a warning.
std::vector<std::size_t> align_batches(const Tensor& recon, const Tensor& truth, std::span<const int> recon_labels,
                                       std::span<const int> truth_labels);

struct ImageScore {
  double mse = 0.0;
  double psnr = 0.0;
  double ssim = 0.0;
};

/// Per-image scores of recon[i] against truth[perm[i]] (identity when perm
/// is empty).
std::vector<ImageScore> score_batch(const Tensor& recon, const Tensor& truth, std::span<const std::size_t> perm = {});

/// Component-wise mean of per-image scores. PSNR is recomputed from the mean
/// MSE so the summary stays consistent with it.
ImageScore mean_score(std::span<const ImageScore> scores);

}  // namespace dragd
