#include <algorithm>
#include <cmath>
#include <numbers>
#include <utility>

#include "dragd/dataio.hpp"
#include "dragd/error.hpp"
#include "dragd/random.hpp"

namespace dragd {
namespace {

using Point = std::pair<double, double>;
using Stroke = std::vector<Point>;

Stroke ellipse(double cx, double cy, double rx, double ry, double from = 0.0, double to = 2.0 * std::numbers::pi,
               int steps = 18) {
  Stroke s;
  for (int i = 0; i <= steps; ++i) {
    const double t = from + (to - from) * i / steps;
    s.emplace_back(cx + rx * std::cos(t), cy + ry * std::sin(t));
  }
  return s;
}

// Glyph skeletons in unit coordinates (x right, y down).
std::vector<Stroke> glyph(int digit) {
  switch (digit) {
    case 0: return {ellipse(0.5, 0.5, 0.19, 0.3)};
    case 1: return {{{0.40, 0.30}, {0.52, 0.18}, {0.52, 0.82}}};
    case 2: return {{{0.30, 0.33}, {0.36, 0.21}, {0.50, 0.16}, {0.64, 0.21}, {0.69, 0.34}, {0.60, 0.50}, {0.31, 0.80}, {0.72, 0.80}}};
    case 3: return {{{0.31, 0.20}, {0.68, 0.20}, {0.48, 0.44}, {0.64, 0.51}, {0.70, 0.65}, {0.63, 0.79}, {0.49, 0.84}, {0.31, 0.77}}};
    case 4: return {{{0.62, 0.82}, {0.62, 0.18}, {0.28, 0.62}, {0.76, 0.62}}};
    case 5: return {{{0.69, 0.19}, {0.36, 0.19}, {0.33, 0.47}, {0.53, 0.43}, {0.68, 0.53}, {0.70, 0.69}, {0.60, 0.81}, {0.44, 0.84}, {0.30, 0.77}}};
    case 6: return {{{0.64, 0.18}, {0.46, 0.28}, {0.35, 0.46}, {0.33, 0.66}}, ellipse(0.50, 0.66, 0.17, 0.17)};
    case 7: return {{{0.28, 0.19}, {0.72, 0.19}, {0.58, 0.45}, {0.46, 0.82}}};
    case 8: return {ellipse(0.5, 0.33, 0.15, 0.14), ellipse(0.5, 0.66, 0.18, 0.17)};
    case 9: return {ellipse(0.5, 0.36, 0.16, 0.16), {{0.66, 0.36}, {0.64, 0.60}, {0.56, 0.82}}};
    default: break;
  }
  throw Error("glyph: digit out of range");
}

double segment_distance(Point p, Point a, Point b) {
  const double vx = b.first - a.first, vy = b.second - a.second;
  const double wx = p.first - a.first, wy = p.second - a.second;
  const double len2 = vx * vx + vy * vy;
  const double t = len2 > 0 ? std::clamp((wx * vx + wy * vy) / len2, 0.0, 1.0) : 0.0;
  const double dx = wx - t * vx, dy = wy - t * vy;
  return std::sqrt(dx * dx + dy * dy);
}

void render_digit(int digit, Rng& rng, std::size_t size, double* out) {
  const double angle = rng.uniform(-0.2, 0.2);
  const double scale = rng.uniform(0.85, 1.1);
  const double shear = rng.uniform(-0.15, 0.15);
  const double tx = rng.uniform(-0.06, 0.06), ty = rng.uniform(-0.05, 0.05);
  const double half_width = rng.uniform(0.035, 0.06);
  const double ink = rng.uniform(0.85, 1.0);
  const double ca = std::cos(angle), sa = std::sin(angle);

  std::vector<Stroke> strokes = glyph(digit);
  for (Stroke& s : strokes) {
    for (Point& p : s) {
      const double x = p.first - 0.5 + rng.uniform(-0.015, 0.015) + shear * (p.second - 0.5);
      const double y = p.second - 0.5 + rng.uniform(-0.015, 0.015);
      p = {0.5 + tx + scale * (ca * x - sa * y), 0.5 + ty + scale * (sa * x + ca * y)};
    }
  }
  const double soft = 0.6 / static_cast<double>(size);
  for (std::size_t py = 0; py < size; ++py) {
    for (std::size_t px = 0; px < size; ++px) {
      const Point p{(px + 0.5) / size, (py + 0.5) / size};
      double d = 1e9;
      for (const Stroke& s : strokes)
        for (std::size_t i = 0; i + 1 < s.size(); ++i) d = std::min(d, segment_distance(p, s[i], s[i + 1]));
      out[py * size + px] = ink / (1.0 + std::exp((d - half_width) / soft));
    }
  }
}

std::vector<int> shuffled_cycle(std::size_t n, std::size_t classes, Rng& rng) {
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % classes);
  rng.shuffle(labels);
  return labels;
}

}  // namespace

LabeledDataset synthetic_digits(std::size_t n, std::uint64_t seed, std::size_t size) {
  if (size < 8) throw ConfigError("synthetic_digits: image size must be at least 8");
  Rng rng(seed);
  LabeledDataset out;
  out.name = "synthetic_digits";
  out.num_classes = 10;
  out.labels = shuffled_cycle(n, 10, rng);
  Tensor images(Shape{n, 1, size, size});
  for (std::size_t i = 0; i < n; ++i) render_digit(out.labels[i], rng, size, images.data().data() + i * size * size);
  out.images = std::move(images);
  return out;
}

LabeledDataset synthetic_blobs(std::size_t n, std::size_t num_classes, Shape image_shape, std::uint64_t seed,
                               double noise) {
  if (image_shape.size() != 3 || shape_numel(image_shape) == 0 || num_classes == 0) {
    throw ConfigError("synthetic_blobs: image shape must be (C, H, W) and classes positive");
  }
  const std::size_t c = image_shape[0], h = image_shape[1], w = image_shape[2], per = c * h * w;
  Rng rng(seed);
  std::vector<Tensor> prototypes;
  for (std::size_t k = 0; k < num_classes; ++k) {
    Tensor proto(image_shape);
    for (int bump = 0; bump < 3; ++bump) {
      const double cy = rng.uniform(0.2, 0.8) * h, cx = rng.uniform(0.2, 0.8) * w;
      const double sigma = rng.uniform(0.1, 0.25) * static_cast<double>(std::max(h, w));
      const double amp = rng.uniform(0.4, 0.8);
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double tint = rng.uniform(0.5, 1.0);
        for (std::size_t y = 0; y < h; ++y)
          for (std::size_t x = 0; x < w; ++x) {
            const double r2 = (y + 0.5 - cy) * (y + 0.5 - cy) + (x + 0.5 - cx) * (x + 0.5 - cx);
            proto[(ch * h + y) * w + x] += amp * tint * std::exp(-r2 / (2 * sigma * sigma));
          }
      }
    }
    for (double& v : proto.data()) v = std::clamp(v, 0.0, 1.0);
    prototypes.push_back(std::move(proto));
  }
  LabeledDataset out;
  out.name = "synthetic_blobs";
  out.num_classes = num_classes;
  out.labels = shuffled_cycle(n, num_classes, rng);
  Shape s{n};
  s.insert(s.end(), image_shape.begin(), image_shape.end());
  Tensor images(s);
  for (std::size_t i = 0; i < n; ++i) {
    const Tensor& p = prototypes[static_cast<std::size_t>(out.labels[i])];
    for (std::size_t j = 0; j < per; ++j) images[i * per + j] = std::clamp(p[j] + noise * rng.normal(), 0.0, 1.0);
  }
  out.images = std::move(images);
  return out;
}

}  // namespace dragd
