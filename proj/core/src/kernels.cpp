#include "kernels.hpp"

#include <algorithm>
#include <cmath>

#include "dragd/error.hpp"

namespace dragd::kernels {
namespace {

using Index = std::ptrdiff_t;

// Output columns ox for which ix = ox * stride + k - pad lies in [0, extent).
struct ColumnRange {
  Index first;
  Index last;  // exclusive
};

ColumnRange valid_range(Index extent, Index out_extent, Index k, Index stride, Index pad) {
  Index first = 0;
  if (pad > k) first = (pad - k + stride - 1) / stride;
  Index last = (extent - 1 + pad - k);
  last = last < 0 ? 0 : last / stride + 1;
  return {first, std::min(last, out_extent)};
}

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(what) + " expects rank " + std::to_string(rank) + ", got " + shape_str(t.shape()));
  }
}

}  // namespace

Shape conv2d_output_shape(const Shape& x, const Shape& w, ag::Conv2dGeometry geo) {
  if (x.size() != 4 || w.size() != 4) {
    throw ShapeError("conv2d expects rank-4 input and weight, got " + shape_str(x) + " and " + shape_str(w));
  }
  if (x[1] != w[1]) {
    throw ShapeError("conv2d input channels " + std::to_string(x[1]) + " != weight channels " + std::to_string(w[1]));
  }
  if (geo.stride == 0) throw ShapeError("conv2d stride must be positive");
  if (x[2] + 2 * geo.pad < w[2] || x[3] + 2 * geo.pad < w[3]) {
    throw ShapeError("conv2d kernel " + shape_str(w) + " larger than padded input " + shape_str(x));
  }
  return {x[0], w[0], (x[2] + 2 * geo.pad - w[2]) / geo.stride + 1, (x[3] + 2 * geo.pad - w[3]) / geo.stride + 1};
}

Tensor conv2d(const Tensor& x, const Tensor& w, ag::Conv2dGeometry geo) {
  const Shape os = conv2d_output_shape(x.shape(), w.shape(), geo);
  Tensor out(os);
  const Index n_batch = static_cast<Index>(x.dim(0)), cin = static_cast<Index>(x.dim(1));
  const Index h = static_cast<Index>(x.dim(2)), wd = static_cast<Index>(x.dim(3));
  const Index cout = static_cast<Index>(w.dim(0)), kh = static_cast<Index>(w.dim(2)), kw = static_cast<Index>(w.dim(3));
  const Index oh = static_cast<Index>(os[2]), ow = static_cast<Index>(os[3]);
  const Index s = static_cast<Index>(geo.stride), p = static_cast<Index>(geo.pad);
  const double* xd = x.data().data();
  const double* wdat = w.data().data();
  double* od = out.data().data();

  for (Index n = 0; n < n_batch; ++n) {
    for (Index o = 0; o < cout; ++o) {
      double* oplane = od + (n * cout + o) * oh * ow;
      for (Index c = 0; c < cin; ++c) {
        const double* xplane = xd + (n * cin + c) * h * wd;
        const double* wk = wdat + (o * cin + c) * kh * kw;
        for (Index ky = 0; ky < kh; ++ky) {
          for (Index oy = 0; oy < oh; ++oy) {
            const Index iy = oy * s + ky - p;
            if (iy < 0 || iy >= h) continue;
            const double* xrow = xplane + iy * wd;
            double* orow = oplane + oy * ow;
            for (Index kx = 0; kx < kw; ++kx) {
              const double wv = wk[ky * kw + kx];
              const ColumnRange r = valid_range(wd, ow, kx, s, p);
              for (Index ox = r.first; ox < r.last; ++ox) orow[ox] += wv * xrow[ox * s + kx - p];
            }
          }
        }
      }
    }
  }
  return out;
}

Tensor conv2d_input_grad(const Tensor& dy, const Tensor& w, ag::Conv2dGeometry geo, const Shape& input_shape) {
  const Shape os = conv2d_output_shape(input_shape, w.shape(), geo);
  if (dy.shape() != os) {
    throw ShapeError("conv2d_input_grad: upstream " + shape_str(dy.shape()) + " does not match output " + shape_str(os));
  }
  Tensor dx(input_shape);
  const Index n_batch = static_cast<Index>(input_shape[0]), cin = static_cast<Index>(input_shape[1]);
  const Index h = static_cast<Index>(input_shape[2]), wd = static_cast<Index>(input_shape[3]);
  const Index cout = static_cast<Index>(w.dim(0)), kh = static_cast<Index>(w.dim(2)), kw = static_cast<Index>(w.dim(3));
  const Index oh = static_cast<Index>(os[2]), ow = static_cast<Index>(os[3]);
  const Index s = static_cast<Index>(geo.stride), p = static_cast<Index>(geo.pad);
  const double* gd = dy.data().data();
  const double* wdat = w.data().data();
  double* xd = dx.data().data();

  for (Index n = 0; n < n_batch; ++n) {
    for (Index c = 0; c < cin; ++c) {
      double* xplane = xd + (n * cin + c) * h * wd;
      for (Index o = 0; o < cout; ++o) {
        const double* gplane = gd + (n * cout + o) * oh * ow;
        const double* wk = wdat + (o * cin + c) * kh * kw;
        for (Index ky = 0; ky < kh; ++ky) {
          for (Index oy = 0; oy < oh; ++oy) {
            const Index iy = oy * s + ky - p;
            if (iy < 0 || iy >= h) continue;
            double* xrow = xplane + iy * wd;
            const double* grow = gplane + oy * ow;
            for (Index kx = 0; kx < kw; ++kx) {
              const double wv = wk[ky * kw + kx];
              const ColumnRange r = valid_range(wd, ow, kx, s, p);
              for (Index ox = r.first; ox < r.last; ++ox) xrow[ox * s + kx - p] += wv * grow[ox];
            }
          }
        }
      }
    }
  }
  return dx;
}

Tensor conv2d_weight_grad(const Tensor& x, const Tensor& dy, ag::Conv2dGeometry geo, const Shape& weight_shape) {
  const Shape os = conv2d_output_shape(x.shape(), weight_shape, geo);
  if (dy.shape() != os) {
    throw ShapeError("conv2d_weight_grad: upstream " + shape_str(dy.shape()) + " does not match output " +
                     shape_str(os));
  }
  Tensor dw(weight_shape);
  const Index n_batch = static_cast<Index>(x.dim(0)), cin = static_cast<Index>(x.dim(1));
  const Index h = static_cast<Index>(x.dim(2)), wd = static_cast<Index>(x.dim(3));
  const Index cout = static_cast<Index>(weight_shape[0]);
  const Index kh = static_cast<Index>(weight_shape[2]), kw = static_cast<Index>(weight_shape[3]);
  const Index oh = static_cast<Index>(os[2]), ow = static_cast<Index>(os[3]);
  const Index s = static_cast<Index>(geo.stride), p = static_cast<Index>(geo.pad);
  const double* xd = x.data().data();
  const double* gd = dy.data().data();
  double* wdat = dw.data().data();

  for (Index o = 0; o < cout; ++o) {
    for (Index c = 0; c < cin; ++c) {
      double* wk = wdat + (o * cin + c) * kh * kw;
      for (Index ky = 0; ky < kh; ++ky) {
        for (Index kx = 0; kx < kw; ++kx) {
          const ColumnRange r = valid_range(wd, ow, kx, s, p);
          double acc = 0.0;
          for (Index n = 0; n < n_batch; ++n) {
            const double* xplane = xd + (n * cin + c) * h * wd;
            const double* gplane = gd + (n * cout + o) * oh * ow;
            for (Index oy = 0; oy < oh; ++oy) {
              const Index iy = oy * s + ky - p;
              if (iy < 0 || iy >= h) continue;
              const double* xrow = xplane + iy * wd;
              const double* grow = gplane + oy * ow;
              for (Index ox = r.first; ox < r.last; ++ox) acc += xrow[ox * s + kx - p] * grow[ox];
            }
          }
          wk[ky * kw + kx] = acc;
        }
      }
    }
  }
  return dw;
}

Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t n = trans_a ? a.dim(1) : a.dim(0);
  const std::size_t k = trans_a ? a.dim(0) : a.dim(1);
  const std::size_t kb = trans_b ? b.dim(1) : b.dim(0);
  const std::size_t m = trans_b ? b.dim(0) : b.dim(1);
  if (k != kb) {
    throw ShapeError("matmul inner dimensions differ: " + shape_str(a.shape()) + (trans_a ? "^T" : "") + " x " +
                     shape_str(b.shape()) + (trans_b ? "^T" : ""));
  }
  // Strides of the logical (row, col) views.
  const std::size_t a_i = trans_a ? 1 : a.dim(1), a_p = trans_a ? a.dim(1) : 1;
  const std::size_t b_p = trans_b ? 1 : b.dim(1), b_j = trans_b ? b.dim(1) : 1;
  Tensor out(Shape{n, m});
  const double* ad = a.data().data();
  const double* bd = b.data().data();
  double* od = out.data().data();
  if (!trans_b) {
    for (std::size_t i = 0; i < n; ++i) {
      double* orow = od + i * m;
      for (std::size_t p = 0; p < k; ++p) {
        const double av = ad[i * a_i + p * a_p];
        const double* brow = bd + p * b_p;
        for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
      }
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) {
        double acc = 0.0;
        for (std::size_t p = 0; p < k; ++p) acc += ad[i * a_i + p * a_p] * bd[j * b_j + p];
        od[i * m + j] = acc;
      }
    }
  }
  return out;
}

Tensor log_softmax_rows(const Tensor& logits) {
  require_rank(logits, 2, "log_softmax");
  const std::size_t rows = logits.dim(0), cols = logits.dim(1);
  Tensor out(logits.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = logits.data().data() + r * cols;
    double* o = out.data().data() + r * cols;
    const double mx = *std::max_element(in, in + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += std::exp(in[c] - mx);
    const double lz = mx + std::log(z);
    for (std::size_t c = 0; c < cols; ++c) o[c] = in[c] - lz;
  }
  return out;
}

Tensor softmax_rows(const Tensor& logits) {
  Tensor out = log_softmax_rows(logits);
  for (double& v : out.data()) v = std::exp(v);
  return out;
}

}  // namespace dragd::kernels
