#include "dragd/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include <spdlog/spdlog.h>

#include "dragd/error.hpp"

namespace dragd {

double mse(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError("mse: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  if (a.numel() == 0) throw ShapeError("mse: empty images");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.numel());
}

double psnr_from_mse(double mse_value, double peak) {
  if (mse_value <= 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse_value);
}

double psnr(const Tensor& a, const Tensor& b, double peak) { return psnr_from_mse(mse(a, b), peak); }

namespace {

constexpr std::size_t kWindow = 11;
constexpr double kSigma = 1.5;

std::vector<double> gaussian_window() {
  std::vector<double> g(kWindow);
  const double mid = (kWindow - 1) / 2.0;
  double total = 0.0;
  for (std::size_t i = 0; i < kWindow; ++i) {
    g[i] = std::exp(-(i - mid) * (i - mid) / (2 * kSigma * kSigma));
    total += g[i];
  }
  for (double& v : g) v /= total;
  return g;
}

struct Moments {
  double mx = 0, my = 0, xx = 0, yy = 0, xy = 0;
};

double ssim_term(const Moments& m, double c1, double c2) {
  const double vx = m.xx - m.mx * m.mx;
  const double vy = m.yy - m.my * m.my;
  const double cov = m.xy - m.mx * m.my;
  return ((2 * m.mx * m.my + c1) * (2 * cov + c2)) / ((m.mx * m.mx + m.my * m.my + c1) * (vx + vy + c2));
}

}  // namespace

double ssim(const Tensor& a, const Tensor& b, double peak) {
  if (a.shape() != b.shape()) throw ShapeError("ssim: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  if (a.rank() != 3 || a.numel() == 0) throw ShapeError("ssim: expected a (C, H, W) image, got " + shape_str(a.shape()));
  const std::size_t ch = a.dim(0), h = a.dim(1), w = a.dim(2);
  const double c1 = (0.01 * peak) * (0.01 * peak);
  const double c2 = (0.03 * peak) * (0.03 * peak);
  double total = 0.0;

  if (h < kWindow || w < kWindow) {
    spdlog::warn("ssim: {}x{} image is smaller than the {}x{} window; using one global window", h, w, kWindow, kWindow);
    const double inv = 1.0 / static_cast<double>(h * w);
    for (std::size_t c = 0; c < ch; ++c) {
      Moments m;
      for (std::size_t i = 0; i < h * w; ++i) {
        const double x = a[c * h * w + i], y = b[c * h * w + i];
        m.mx += x * inv;
        m.my += y * inv;
        m.xx += x * x * inv;
        m.yy += y * y * inv;
        m.xy += x * y * inv;
      }
      total += ssim_term(m, c1, c2);
    }
    return total / static_cast<double>(ch);
  }

  const std::vector<double> g = gaussian_window();
  const std::size_t oh = h - kWindow + 1, ow = w - kWindow + 1;
  for (std::size_t c = 0; c < ch; ++c) {
    const double* x = a.data().data() + c * h * w;
    const double* y = b.data().data() + c * h * w;
    double sum = 0.0;
    for (std::size_t r = 0; r < oh; ++r) {
      for (std::size_t q = 0; q < ow; ++q) {
        Moments m;
        for (std::size_t i = 0; i < kWindow; ++i) {
          for (std::size_t j = 0; j < kWindow; ++j) {
            const double wt = g[i] * g[j];
            const double xv = x[(r + i) * w + q + j], yv = y[(r + i) * w + q + j];
            m.mx += wt * xv;
            m.my += wt * yv;
            m.xx += wt * xv * xv;
            m.yy += wt * yv * yv;
            m.xy += wt * xv * yv;
          }
        }
        sum += ssim_term(m, c1, c2);
      }
    }
    total += sum / static_cast<double>(oh * ow);
  }
  return total / static_cast<double>(ch);
}

std::string format_metric(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buf[32];
  const int n = std::snprintf(buf, sizeof buf, "%.17g", value);
  return std::string(buf, static_cast<std::size_t>(n));
}

double parse_metric(const std::string& text) {
  if (text == "inf") return std::numeric_limits<double>::infinity();
  if (text == "-inf") return -std::numeric_limits<double>::infinity();
  if (text == "nan") return std::numeric_limits<double>::quiet_NaN();
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) throw Error("not a number: '" + text + "'");
  return v;
}

std::vector<std::size_t> min_cost_assignment(std::span<const double> cost, std::size_t n) {
  if (cost.size() != n * n) throw ShapeError("min_cost_assignment: cost matrix is not n x n");
  if (n == 0) return {};
  // Potentials method (Kuhn-Munkres) on 1-based arrays; column 0 is a sentinel.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> col(n);
  for (std::size_t j = 1; j <= n; ++j) col[p[j] - 1] = j - 1;
  return col;
}

namespace {

void assign_group(const Tensor& recon, const Tensor& truth, const std::vector<std::size_t>& rows,
                  const std::vector<std::size_t>& cols, std::vector<std::size_t>& perm) {
  const std::size_t n = rows.size();
  std::vector<double> cost(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    const Tensor r = recon.rows(rows[i], rows[i] + 1);
    for (std::size_t j = 0; j < n; ++j) cost[i * n + j] = mse(r, truth.rows(cols[j], cols[j] + 1));
  }
  const std::vector<std::size_t> col = min_cost_assignment(cost, n);
  for (std::size_t i = 0; i < n; ++i) perm[rows[i]] = cols[col[i]];
}

}  // namespace

std::vector<std::size_t> align_batches(const Tensor& recon, const Tensor& truth, std::span<const int> recon_labels,
                                       std::span<const int> truth_labels) {
  if (recon.shape() != truth.shape()) {
    throw ShapeError("align_batches: shapes " + shape_str(recon.shape()) + " and " + shape_str(truth.shape()));
  }
  const std::size_t n = recon.rank() == 0 ? 0 : recon.dim(0);
  if (recon_labels.size() != n || truth_labels.size() != n) {
    throw ShapeError("align_batches: label count does not match batch size " + std::to_string(n));
  }
  std::vector<std::size_t> perm(n);
  std::map<int, std::pair<std::vector<std::size_t>, std::vector<std::size_t>>> groups;
  for (std::size_t i = 0; i < n; ++i) {
    groups[recon_labels[i]].first.push_back(i);
    groups[truth_labels[i]].second.push_back(i);
  }
  const bool same_multiset = std::all_of(groups.begin(), groups.end(),
                                         [](const auto& g) { return g.second.first.size() == g.second.second.size(); });
  if (!same_multiset) {
    spdlog::warn("align_batches: label multisets differ; aligning without labels");
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), std::size_t{0});
    assign_group(recon, truth, all, all, perm);
    return perm;
  }
  for (const auto& [label, g] : groups) assign_group(recon, truth, g.first, g.second, perm);
  return perm;
}

std::vector<ImageScore> score_batch(const Tensor& recon, const Tensor& truth, std::span<const std::size_t> perm) {
  if (recon.shape() != truth.shape()) {
    throw ShapeError("score_batch: shapes " + shape_str(recon.shape()) + " and " + shape_str(truth.shape()));
  }
  const std::size_t n = recon.dim(0);
  if (!perm.empty() && perm.size() != n) throw ShapeError("score_batch: permutation length mismatch");
  Shape image = recon.shape();
  image.erase(image.begin());
  std::vector<ImageScore> out;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = perm.empty() ? i : perm[i];
    const Tensor r = recon.rows(i, i + 1).reshaped(image);
    const Tensor t = truth.rows(j, j + 1).reshaped(image);
    const double m = mse(r, t);
    out.push_back({m, psnr_from_mse(m), ssim(r, t)});
  }
  return out;
}

ImageScore mean_score(std::span<const ImageScore> scores) {
  if (scores.empty()) throw ShapeError("mean_score: no scores");
  ImageScore s;
  for (const ImageScore& x : scores) {
    s.mse += x.mse;
    s.ssim += x.ssim;
  }
  s.mse /= static_cast<double>(scores.size());
  s.ssim /= static_cast<double>(scores.size());
  s.psnr = psnr_from_mse(s.mse);
  return s;
}

}  // namespace dragd
