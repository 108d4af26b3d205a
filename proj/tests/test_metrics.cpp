#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <gtest/gtest.h>

#include "dragd/error.hpp"
#include "dragd/metrics.hpp"
#include "dragd/random.hpp"

namespace {

using namespace dragd;

Tensor random_image(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform();
  return t;
}

TEST(Mse, Examples) {
  Rng rng(1);
  const Tensor a = random_image({1, 8, 8}, rng);
  EXPECT_EQ(mse(a, a), 0.0);
  EXPECT_DOUBLE_EQ(mse(Tensor(Shape{3, 4, 4}, 0.75), Tensor(Shape{3, 4, 4}, 0.25)), 0.25);
  EXPECT_THROW(mse(a, Tensor(Shape{1, 8, 7}, 0.0)), ShapeError);
}

TEST(Mse, MatchesTwoLoopRecomputationAndIsSymmetric) {
  Rng rng(2);
  for (int t = 0; t < 10; ++t) {
    const Tensor a = random_image({3, 5, 7}, rng), b = random_image({3, 5, 7}, rng);
    long double acc = 0;
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t p = 0; p < 35; ++p) {
        const long double d = static_cast<long double>(a[c * 35 + p]) - b[c * 35 + p];
        acc += d * d;
      }
    EXPECT_NEAR(mse(a, b), static_cast<double>(acc / 105), 1e-15);
    EXPECT_EQ(mse(a, b), mse(b, a));
  }
}

TEST(Psnr, Examples) {
  EXPECT_NEAR(psnr_from_mse(0.01), 20.0, 1e-9);
  EXPECT_NEAR(psnr_from_mse(1.0), 0.0, 1e-12);
  EXPECT_TRUE(std::isinf(psnr_from_mse(0.0)));
  const Tensor a(Shape{1, 4, 4}, 0.3);
  EXPECT_EQ(format_metric(psnr(a, a)), "inf");
}

TEST(Psnr, StrictlyDecreasingInMse) {
  double prev = std::numeric_limits<double>::infinity();
  for (double m = 1e-6; m < 1.0; m *= 1.7) {
    const double p = psnr_from_mse(m);
    EXPECT_LT(p, prev);
    prev = p;
  }
}

TEST(Ssim, IdenticalImagesGiveOne) {
  Rng rng(3);
  for (const Shape& s : {Shape{1, 16, 16}, Shape{3, 32, 32}, Shape{1, 5, 5}}) {
    const Tensor a = random_image(s, rng);
    EXPECT_DOUBLE_EQ(ssim(a, a), 1.0);
  }
}

TEST(Ssim, ConstantImagesClosedForm) {
  const double a = 0.2, b = 0.7, c1 = 1e-4;
  const double expect = (2 * a * b + c1) / (a * a + b * b + c1);
  EXPECT_NEAR(ssim(Tensor(Shape{1, 16, 16}, a), Tensor(Shape{1, 16, 16}, b)), expect, 1e-12);
}

// Direct evaluation of the windowed SSIM mean for one channel.
double brute_ssim(const Tensor& x, const Tensor& y) {
  const std::size_t h = x.dim(1), w = x.dim(2);
  double g[11], gs = 0;
  for (int i = 0; i < 11; ++i) gs += g[i] = std::exp(-(i - 5.0) * (i - 5.0) / 4.5);
  double total = 0;
  for (std::size_t r = 0; r + 11 <= h; ++r)
    for (std::size_t q = 0; q + 11 <= w; ++q) {
      double mx = 0, my = 0;
      for (int i = 0; i < 11; ++i)
        for (int j = 0; j < 11; ++j) {
          const double wt = g[i] * g[j] / (gs * gs);
          mx += wt * x[(r + i) * w + q + j];
          my += wt * y[(r + i) * w + q + j];
        }
      double vx = 0, vy = 0, cxy = 0;
      for (int i = 0; i < 11; ++i)
        for (int j = 0; j < 11; ++j) {
          const double wt = g[i] * g[j] / (gs * gs);
          const double dx = x[(r + i) * w + q + j] - mx, dy = y[(r + i) * w + q + j] - my;
          vx += wt * dx * dx;
          vy += wt * dy * dy;
          cxy += wt * dx * dy;
        }
      total += ((2 * mx * my + 1e-4) * (2 * cxy + 9e-4)) / ((mx * mx + my * my + 1e-4) * (vx + vy + 9e-4));
    }
  return total / static_cast<double>((h - 10) * (w - 10));
}

TEST(Ssim, NegatedCheckerboardIsNegative) {
  Tensor a(Shape{1, 16, 16}), b(Shape{1, 16, 16});
  for (std::size_t y = 0; y < 16; ++y)
    for (std::size_t x = 0; x < 16; ++x) {
      a[y * 16 + x] = (x + y) % 2 ? 0.9 : 0.1;
      b[y * 16 + x] = 1.0 - a[y * 16 + x];
    }
  const double s = ssim(a, b);
  EXPECT_LT(s, 0.0);
  EXPECT_NEAR(s, brute_ssim(a, b), 1e-12);
}

TEST(Ssim, AgreesWithBruteForceAndIsSymmetric) {
  Rng rng(4);
  for (int t = 0; t < 5; ++t) {
    const Tensor a = random_image({1, 14, 13}, rng), b = random_image({1, 14, 13}, rng);
    EXPECT_NEAR(ssim(a, b), brute_ssim(a, b), 1e-12);
    EXPECT_NEAR(ssim(a, b), ssim(b, a), 1e-15);
  }
}

TEST(Ssim, SmallImagesUseGlobalWindow) {
  Rng rng(5);
  const Tensor a = random_image({1, 6, 6}, rng), b = random_image({1, 6, 6}, rng);
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < 36; ++i) {
    ma += a[i] / 36;
    mb += b[i] / 36;
  }
  double va = 0, vb = 0, cab = 0;
  for (std::size_t i = 0; i < 36; ++i) {
    va += (a[i] - ma) * (a[i] - ma) / 36;
    vb += (b[i] - mb) * (b[i] - mb) / 36;
    cab += (a[i] - ma) * (b[i] - mb) / 36;
  }
  const double expect = ((2 * ma * mb + 1e-4) * (2 * cab + 9e-4)) / ((ma * ma + mb * mb + 1e-4) * (va + vb + 9e-4));
  EXPECT_NEAR(ssim(a, b), expect, 1e-12);
}

TEST(MetricText, RoundTrip) {
  for (double v : {0.1, 1.0 / 3.0, 1e-300, 123456.789, -2.5}) EXPECT_EQ(parse_metric(format_metric(v)), v);
  EXPECT_TRUE(std::isinf(parse_metric("inf")));
  EXPECT_TRUE(std::isnan(parse_metric("nan")));
  EXPECT_THROW(parse_metric("1.5x"), Error);
}

TEST(Assignment, MatchesBruteForce) {
  Rng rng(6);
  for (int t = 0; t < 30; ++t) {
    const std::size_t n = 1 + rng.below(6);
    std::vector<double> cost(n * n);
    for (double& c : cost) c = rng.uniform();
    const auto col = min_cost_assignment(cost, n);
    double got = 0;
    for (std::size_t i = 0; i < n; ++i) got += cost[i * n + col[i]];
    std::vector<std::size_t> p(n);
    std::iota(p.begin(), p.end(), std::size_t{0});
    double best = std::numeric_limits<double>::infinity();
    do {
      double s = 0;
      for (std::size_t i = 0; i < n; ++i) s += cost[i * n + p[i]];
      best = std::min(best, s);
    } while (std::next_permutation(p.begin(), p.end()));
    EXPECT_NEAR(got, best, 1e-12);
  }
}

Tensor make_batch(std::size_t n, Rng& rng) { return random_image({n, 1, 6, 6}, rng); }

double total_mse(const Tensor& r, const Tensor& t, const std::vector<std::size_t>& perm) {
  double s = 0;
  for (std::size_t i = 0; i < perm.size(); ++i) s += mse(r.rows(i, i + 1), t.rows(perm[i], perm[i] + 1));
  return s;
}

TEST(Align, IdentityWhenAlreadyAligned) {
  Rng rng(7);
  const Tensor t = make_batch(5, rng);
  const std::vector<int> labels{0, 1, 1, 2, 0};
  const auto perm = align_batches(t, t, labels, labels);
  EXPECT_EQ(perm, (std::vector<std::size_t>{0, 1, 2, 3, 4}));
}

TEST(Align, SwappedSameLabelPairIsUndone) {
  Rng rng(8);
  const Tensor t = make_batch(3, rng);
  const Tensor parts[] = {t.rows(0, 1), t.rows(2, 3), t.rows(1, 2)};
  const Tensor r = concat_rows(parts);
  const std::vector<int> labels{4, 9, 9};
  EXPECT_EQ(align_batches(r, t, labels, labels), (std::vector<std::size_t>{0, 2, 1}));
}

TEST(Align, NeverWorseThanAnyPermutationOfSix) {
  Rng rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor t = make_batch(6, rng), r = make_batch(6, rng);
    const std::vector<int> labels(6, 3);
    const auto perm = align_batches(r, t, labels, labels);
    const double got = total_mse(r, t, perm);
    std::vector<std::size_t> p{0, 1, 2, 3, 4, 5};
    do {
      ASSERT_LE(got, total_mse(r, t, p) + 1e-12);
    } while (std::next_permutation(p.begin(), p.end()));
  }
}

TEST(Align, RespectsLabelGroupsAndFallsBackOnMismatch) {
  Rng rng(10);
  const Tensor t = make_batch(4, rng), r = make_batch(4, rng);
  const std::vector<int> lt{0, 0, 1, 1};
  const auto perm = align_batches(r, t, lt, lt);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(lt[perm[i]], lt[i]);
  std::vector<std::size_t> id{0, 1, 2, 3};
  EXPECT_LE(total_mse(r, t, perm), total_mse(r, t, id) + 1e-15);
  const std::vector<int> lr{0, 0, 0, 1};
  const auto global = align_batches(r, t, lr, lt);
  std::vector<std::size_t> sorted = global;
  std::sort(sorted.begin(), sorted.end());
  EXPECT_EQ(sorted, id);
}

TEST(Scores, MeanReportsPsnrOfMeanMse) {
  const std::vector<ImageScore> s{{0.01, 20.0, 0.5}, {0.03, 0.0, 0.7}};
  const ImageScore m = mean_score(s);
  EXPECT_DOUBLE_EQ(m.mse, 0.02);
  EXPECT_DOUBLE_EQ(m.ssim, 0.6);
  EXPECT_DOUBLE_EQ(m.psnr, psnr_from_mse(0.02));
  EXPECT_THROW(mean_score(std::vector<ImageScore>{}), ShapeError);
}

TEST(Scores, ScoreBatchUsesPermutation) {
  Rng rng(11);
  const Tensor t = make_batch(2, rng);
  const Tensor parts[] = {t.rows(1, 2), t.rows(0, 1)};
  const auto scores = score_batch(concat_rows(parts), t, std::vector<std::size_t>{1, 0});
  for (const auto& s : scores) {
    EXPECT_EQ(s.mse, 0.0);
    EXPECT_DOUBLE_EQ(s.ssim, 1.0);
  }
}

}  // namespace
