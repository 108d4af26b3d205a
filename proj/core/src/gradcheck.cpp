#include "dragd/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>
#include <tuple>

#include "dragd/error.hpp"
#include "dragd/gradients.hpp"
#include "dragd/random.hpp"

namespace dragd {

GradCheckResult compare_with_central_differences(const std::function<double(const Tensor&)>& f, const Tensor& at,
                                                 const Tensor& analytic, double step,
                                                 std::span<const std::size_t> coords) {
  if (!(step > 0.0)) throw ConfigError("grad_check: step must be positive");
  if (analytic.shape() != at.shape()) {
    throw ShapeError("grad_check: analytic gradient " + shape_str(analytic.shape()) + " vs point " +
                     shape_str(at.shape()));
  }
  std::vector<std::size_t> all;
  if (coords.empty()) {
    all.resize(at.numel());
    std::iota(all.begin(), all.end(), std::size_t{0});
    coords = all;
  }
  GradCheckResult result;
  Tensor probe = at;
  for (std::size_t i : coords) {
    if (i >= at.numel()) throw ConfigError("grad_check: coordinate out of range");
    const double x0 = probe[i];
    probe[i] = x0 + step;
    const double up = f(probe);
    probe[i] = x0 - step;
    const double down = f(probe);
    probe[i] = x0;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw Error("grad_check: non-finite function value near coordinate " + std::to_string(i));
    }
    const double central = (up - down) / (2.0 * step);
    const double err = std::abs(analytic[i] - central) / std::max(1e-8, std::abs(central));
    if (!std::isfinite(analytic[i])) throw Error("grad_check: non-finite analytic gradient at " + std::to_string(i));
    if (err > result.max_rel_error || result.coords_checked == 0) {
      result.max_rel_error = err;
      result.worst_coord = i;
    }
    ++result.coords_checked;
  }
  return result;
}

GradCheckResult grad_check_detailed(const ScalarFn& f, const Tensor& at, double step,
                                    std::span<const std::size_t> coords) {
  const ag::Var x(at, true);
  const ag::Var y = f(x);
  if (y.value().numel() != 1) throw ShapeError("grad_check: function must return a scalar");
  if (!y.value().all_finite()) throw Error("grad_check: non-finite function value at the check point");
  const Tensor analytic = ag::grad(y, std::span<const ag::Var>(&x, 1))[0].value();
  const auto value = [&](const Tensor& t) { return f(ag::Var(t, true)).value().item(); };
  return compare_with_central_differences(value, at, analytic, step, coords);
}

double grad_check(const ScalarFn& f, const Tensor& at, double step) {
  return grad_check_detailed(f, at, step).max_rel_error;
}

std::vector<std::size_t> sample_coords(std::size_t n, std::size_t count, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (count == 0 || count >= n) return idx;
  Rng rng(seed);
  rng.shuffle(idx);
  idx.resize(count);
  std::sort(idx.begin(), idx.end());
  return idx;
}

std::vector<CheckOutcome> run_checks(std::span<const CheckCase> cases) {
  std::vector<CheckOutcome> out;
  for (const CheckCase& c : cases) {
    CheckOutcome o{c.name, 0.0, c.tolerance, false, {}};
    try {
      o.max_rel_error = grad_check(c.f, c.at, c.step);
      o.passed = o.max_rel_error < c.tolerance;
    } catch (const std::exception& e) {
      o.error = e.what();
      o.max_rel_error = std::numeric_limits<double>::infinity();
    }
    out.push_back(std::move(o));
  }
  return out;
}

namespace {

using ag::Var;

struct PrimitiveSpec {
  std::string name;
  std::vector<Shape> operands;
  std::function<double(Rng&, std::size_t operand)> init;
  std::function<Var(const std::vector<Var>&)> op;
  int max_order = 2;
};

ag::IndexList range_index(std::size_t begin, std::size_t n) {
  auto v = std::make_shared<std::vector<std::size_t>>(n);
  std::iota(v->begin(), v->end(), begin);
  return v;
}

// All operands live in one flat leaf so bilinear ops get genuine
// second-order terms.
std::vector<Var> unpack(const Var& x, const std::vector<Shape>& shapes) {
  std::vector<Var> parts;
  std::size_t at = 0;
  for (const Shape& s : shapes) {
    const std::size_t n = shape_numel(s);
    parts.push_back(ag::gather(x, range_index(at, n), s));
    at += n;
  }
  return parts;
}

Tensor random_tensor(const Shape& s, Rng& rng, double lo, double hi) {
  Tensor t(s);
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

double uniform_pm1(Rng& rng, std::size_t) { return rng.uniform(-1.0, 1.0); }

// Magnitudes in [0.2, 1] with random sign keep ReLU kinks out of reach.
double away_from_zero(Rng& rng, std::size_t) {
  const double m = rng.uniform(0.2, 1.0);
  return rng.uniform() < 0.5 ? -m : m;
}

std::vector<PrimitiveSpec> primitive_specs() {
  using S = Shape;
  const ag::Conv2dGeometry s1p1{1, 1}, s2p2{2, 2};
  std::vector<PrimitiveSpec> v;
  v.push_back({"add", {S{2, 3}, S{2, 3}}, uniform_pm1, [](auto& p) { return ag::mul(ag::add(p[0], p[1]), p[0]); }});
  v.push_back({"sub", {S{2, 3}, S{2, 3}}, uniform_pm1, [](auto& p) { return ag::mul(ag::sub(p[0], p[1]), p[1]); }});
  v.push_back({"mul", {S{2, 3}, S{2, 3}}, uniform_pm1, [](auto& p) { return ag::mul(p[0], p[1]); }});
  v.push_back({"square", {S{5}}, uniform_pm1, [](auto& p) { return ag::square(p[0]); }});
  v.push_back({"affine", {S{4}}, uniform_pm1, [](auto& p) { return ag::square(ag::affine(p[0], -1.7, 0.3)); }});
  v.push_back({"rsqrt", {S{4}}, [](Rng& r, std::size_t) { return r.uniform(0.5, 2.0); },
               [](auto& p) { return ag::rsqrt(p[0]); }});
  v.push_back({"sum", {S{2, 2}}, uniform_pm1, [](auto& p) { return ag::square(ag::sum(p[0])); }});
  v.push_back({"broadcast", {S{}, S{3}}, uniform_pm1,
               [](auto& p) { return ag::mul(ag::broadcast(p[0], S{3}), p[1]); }});
  v.push_back({"flatten", {S{2, 3}}, uniform_pm1, [](auto& p) { return ag::square(ag::reshape(p[0], S{3, 2})); }});
  for (int ta = 0; ta < 2; ++ta) {
    for (int tb = 0; tb < 2; ++tb) {
      const S a = ta ? S{4, 3} : S{3, 4};
      const S b = tb ? S{2, 4} : S{4, 2};
      v.push_back({"matmul" + std::string(ta ? "^T" : "") + std::string(tb ? "*B^T" : "*B"), {a, b}, uniform_pm1,
                   [ta, tb](auto& p) { return ag::matmul(p[0], p[1], ta != 0, tb != 0); }});
    }
  }
  v.push_back({"conv2d", {S{2, 2, 5, 5}, S{3, 2, 3, 3}}, uniform_pm1,
               [s1p1](auto& p) { return ag::conv2d(p[0], p[1], s1p1); }});
  v.push_back({"conv2d[stride2]", {S{1, 2, 6, 6}, S{2, 2, 5, 5}}, uniform_pm1,
               [s2p2](auto& p) { return ag::conv2d(p[0], p[1], s2p2); }});
  v.push_back({"conv2d_input_grad", {S{2, 3, 3, 3}, S{3, 2, 5, 5}}, uniform_pm1,
               [s2p2](auto& p) { return ag::conv2d_input_grad(p[0], p[1], s2p2, S{2, 2, 6, 6}); }});
  v.push_back({"conv2d_weight_grad", {S{2, 2, 5, 5}, S{2, 3, 5, 5}}, uniform_pm1,
               [s1p1](auto& p) { return ag::conv2d_weight_grad(p[0], p[1], s1p1, S{3, 2, 3, 3}); }});
  v.push_back({"bias_add", {S{2, 3, 2, 2}, S{3}}, uniform_pm1,
               [](auto& p) { return ag::square(ag::bias_add(p[0], p[1])); }});
  v.push_back({"bias_reduce", {S{2, 3, 2, 2}}, uniform_pm1, [](auto& p) { return ag::square(ag::bias_reduce(p[0])); }});
  v.push_back({"sigmoid", {S{2, 4}}, [](Rng& r, std::size_t) { return r.uniform(-3.0, 3.0); },
               [](auto& p) { return ag::sigmoid(p[0]); }});
  v.push_back({"relu", {S{2, 5}}, away_from_zero, [](auto& p) { return ag::square(ag::relu(p[0])); }});
  v.push_back({"relu_mask", {S{2, 5}, S{2, 5}}, away_from_zero,
               [](auto& p) { return ag::mul(ag::relu_mask(p[0], p[1]), p[0]); }});
  v.push_back({"avg_pool", {S{1, 2, 4, 4}}, uniform_pm1, [](auto& p) { return ag::square(ag::avg_pool(p[0], 2)); }});
  v.push_back({"avg_pool_grad", {S{1, 2, 2, 2}}, uniform_pm1,
               [](auto& p) { return ag::square(ag::avg_pool_grad(p[0], 2, S{1, 2, 4, 4})); }});
  v.push_back({"max_pool", {S{1, 2, 4, 4}}, nullptr, [](auto& p) { return ag::square(ag::max_pool(p[0], 2)); }});
  v.push_back({"gather", {S{6}}, uniform_pm1, [](auto& p) {
                 auto idx = std::make_shared<std::vector<std::size_t>>(std::vector<std::size_t>{4, 0, 4, 2});
                 return ag::square(ag::gather(p[0], idx, S{2, 2}));
               }});
  v.push_back({"scatter", {S{4}}, uniform_pm1, [](auto& p) {
                 auto idx = std::make_shared<std::vector<std::size_t>>(std::vector<std::size_t>{1, 3, 1, 0});
                 return ag::square(ag::scatter(p[0], idx, S{5}));
               }});
  v.push_back({"softmax", {S{2, 4}}, uniform_pm1, [](auto& p) { return ag::softmax(p[0]); }, 1});
  // Targets are probability rows; the logits rule relies on that, so each
  // operand is varied with the other held fixed.
  const Var probs(Tensor(S{3, 4}, {0.1, 0.2, 0.3, 0.4, 1.0, 0.0, 0.0, 0.0, 0.25, 0.25, 0.25, 0.25}));
  const Var logits(Tensor(S{3, 4}, {0.3, -1.2, 0.8, 0.1, -0.5, 1.5, 0.2, -0.9, 1.1, 0.4, -0.3, 0.6}));
  v.push_back({"softmax_cross_entropy", {S{3, 4}}, [](Rng& r, std::size_t) { return r.uniform(-2.0, 2.0); },
               [probs](auto& p) { return ag::softmax_cross_entropy(p[0], probs); }});
  v.push_back({"softmax_cross_entropy[targets]", {S{3, 4}}, [](Rng& r, std::size_t) { return r.uniform(0.0, 0.5); },
               [logits](auto& p) { return ag::softmax_cross_entropy(logits, p[0]); }, 1});
  v.push_back({"softmax_cross_entropy_grad", {S{3, 4}, S{3, 4}, S{}},
               [](Rng& r, std::size_t k) { return k == 1 ? r.uniform(0.0, 0.5) : r.uniform(-2.0, 2.0); },
               [](auto& p) { return ag::softmax_cross_entropy_grad(p[0], p[1], p[2]); }, 1});
  return v;
}

Tensor initial_point(const PrimitiveSpec& spec, Rng& rng) {
  std::size_t total = 0;
  for (const Shape& s : spec.operands) total += shape_numel(s);
  Tensor at(Shape{total});
  if (!spec.init) {
    // Distinct, well-separated values so no max is contested by a probe.
    std::vector<double> vals(total);
    for (std::size_t i = 0; i < total; ++i) vals[i] = 0.1 * static_cast<double>(i) - 0.8;
    rng.shuffle(vals);
    at = Tensor(Shape{total}, std::move(vals));
    return at;
  }
  std::size_t i = 0;
  for (std::size_t k = 0; k < spec.operands.size(); ++k)
    for (std::size_t j = 0; j < shape_numel(spec.operands[k]); ++j) at[i++] = spec.init(rng, k);
  return at;
}

}  // namespace

std::vector<CheckCase> primitive_cases(std::uint64_t seed) {
  std::vector<CheckCase> cases;
  Rng rng(seed);
  for (const PrimitiveSpec& spec : primitive_specs()) {
    const Tensor at = initial_point(spec, rng);
    const Shape out_shape = spec.op(unpack(Var(at), spec.operands)).shape();
    const Var w1(random_tensor(out_shape, rng, -1.0, 1.0));
    const Var w2(random_tensor(at.shape(), rng, -1.0, 1.0));
    auto operands = spec.operands;
    auto op = spec.op;
    ScalarFn first = [operands, op, w1](const Var& x) { return ag::sum(ag::mul(op(unpack(x, operands)), w1)); };
    cases.push_back({spec.name, first, at, 1e-5, 1e-5});
    if (spec.max_order >= 2) {
      ScalarFn second = [first, w2](const Var& x) {
        const Var g = ag::grad(first(x), std::span<const Var>(&x, 1), true)[0];
        return ag::sum(ag::mul(g, w2));
      };
      cases.push_back({spec.name + "''", second, at, 1e-5, 1e-5});
    }
  }
  return cases;
}

std::vector<ModelCheckConfig> random_model_configs(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<ModelCheckConfig> out;
  for (std::size_t i = 0; i < n; ++i) {
    ModelCheckConfig c;
    switch (i % 3) {
      case 0: c.spec = {Arch::mlp, 1, 8, 8, 4, 0.25}; break;
      case 1: c.spec = {Arch::lenet_small, 1, 12, 12, 10, 0.5}; break;
      default: c.spec = {Arch::convmini, 3, 8, 8, 10, 0.125}; break;
    }
    c.seed = rng.next_u64();
    c.batch = 1 + rng.below(4);
    out.push_back(c);
  }
  return out;
}

namespace {

struct Batch {
  Tensor inputs;
  Tensor labels;
};

Batch random_batch(const ModelCheckConfig& c, std::uint64_t seed) {
  Rng rng(seed);
  Shape s{c.batch};
  const Shape in = c.spec.input_shape();
  s.insert(s.end(), in.begin(), in.end());
  Batch b{random_tensor(s, rng, 0.0, 1.0), Tensor(Shape{c.batch})};
  for (std::size_t i = 0; i < c.batch; ++i) b.labels[i] = static_cast<double>(rng.below(c.spec.num_classes));
  return b;
}

}  // namespace

namespace {

using LD = long double;

// (N, C, H, W) activations held as long doubles.
struct LdMap {
  std::vector<LD> v;
  Shape shape;
};

LdMap ld_conv(const LdMap& x, const LD* w, const LD* b, const Shape& ws, ag::Conv2dGeometry g) {
  const std::size_t n = x.shape[0], c = x.shape[1], h = x.shape[2], wd = x.shape[3];
  const std::size_t o = ws[0], kh = ws[2], kw = ws[3];
  const std::size_t oh = (h + 2 * g.pad - kh) / g.stride + 1, ow = (wd + 2 * g.pad - kw) / g.stride + 1;
  LdMap y{std::vector<LD>(n * o * oh * ow), {n, o, oh, ow}};
  for (std::size_t in = 0; in < n; ++in)
    for (std::size_t io = 0; io < o; ++io)
      for (std::size_t r = 0; r < oh; ++r)
        for (std::size_t q = 0; q < ow; ++q) {
          LD acc = b[io];
          for (std::size_t ic = 0; ic < c; ++ic)
            for (std::size_t a = 0; a < kh; ++a)
              for (std::size_t e = 0; e < kw; ++e) {
                const std::ptrdiff_t yy = static_cast<std::ptrdiff_t>(r * g.stride + a) - static_cast<std::ptrdiff_t>(g.pad);
                const std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(q * g.stride + e) - static_cast<std::ptrdiff_t>(g.pad);
                if (yy < 0 || xx < 0 || yy >= static_cast<std::ptrdiff_t>(h) || xx >= static_cast<std::ptrdiff_t>(wd)) continue;
                acc += x.v[((in * c + ic) * h + static_cast<std::size_t>(yy)) * wd + static_cast<std::size_t>(xx)] *
                       w[((io * c + ic) * kh + a) * kw + e];
              }
          y.v[((in * o + io) * oh + r) * ow + q] = acc;
        }
  return y;
}

LdMap ld_pool(const LdMap& x, std::size_t k, bool take_max) {
  const std::size_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3];
  const std::size_t oh = h / k, ow = w / k;
  LdMap y{std::vector<LD>(n * c * oh * ow), {n, c, oh, ow}};
  for (std::size_t p = 0; p < n * c; ++p)
    for (std::size_t r = 0; r < oh; ++r)
      for (std::size_t q = 0; q < ow; ++q) {
        LD acc = take_max ? -std::numeric_limits<LD>::infinity() : 0.0L;
        for (std::size_t a = 0; a < k; ++a)
          for (std::size_t e = 0; e < k; ++e) {
            const LD v = x.v[(p * h + r * k + a) * w + q * k + e];
            acc = take_max ? std::max(acc, v) : acc + v;
          }
        y.v[(p * oh + r) * ow + q] = take_max ? acc : acc / static_cast<LD>(k * k);
      }
  return y;
}

}  // namespace

long double reference_loss(const Model& model, std::span<const long double> params, const Tensor& inputs,
                           const Tensor& labels) {
  if (params.size() != model.layout.dim()) throw ShapeError("reference_loss: parameter vector length mismatch");
  const Tensor targets = targets_from_labels(labels, model.spec.num_classes);
  const auto slots = model.layout.slots();
  LdMap h{{inputs.data().begin(), inputs.data().end()}, inputs.shape()};
  const std::size_t n = inputs.dim(0);
  for (const LayerDesc& d : model.layers) {
    switch (d.kind) {
      case LayerKind::conv: {
        const ParamSlot& ws = slots[d.weight_slot];
        h = ld_conv(h, params.data() + ws.offset, params.data() + slots[d.weight_slot + 1].offset, ws.shape, d.geometry);
        break;
      }
      case LayerKind::dense: {
        const ParamSlot& ws = slots[d.weight_slot];
        const LD* w = params.data() + ws.offset;
        const LD* b = params.data() + slots[d.weight_slot + 1].offset;
        const std::size_t out = ws.shape[0], in = ws.shape[1];
        LdMap y{std::vector<LD>(n * out), {n, out}};
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t o = 0; o < out; ++o) {
            LD acc = b[o];
            for (std::size_t i = 0; i < in; ++i) acc += h.v[r * in + i] * w[o * in + i];
            y.v[r * out + o] = acc;
          }
        h = std::move(y);
        break;
      }
      case LayerKind::sigmoid:
        for (LD& v : h.v) v = 1.0L / (1.0L + std::exp(-v));
        break;
      case LayerKind::relu:
        for (LD& v : h.v) v = std::max(v, 0.0L);
        break;
      case LayerKind::max_pool: h = ld_pool(h, d.pool, true); break;
      case LayerKind::avg_pool: h = ld_pool(h, d.pool, false); break;
      case LayerKind::flatten: h.shape = {n, h.v.size() / n}; break;
    }
  }
  const std::size_t classes = h.shape[1];
  LD total = 0.0L;
  for (std::size_t r = 0; r < n; ++r) {
    LD top = h.v[r * classes];
    for (std::size_t c = 1; c < classes; ++c) top = std::max(top, h.v[r * classes + c]);
    LD z = 0.0L;
    for (std::size_t c = 0; c < classes; ++c) z += std::exp(h.v[r * classes + c] - top);
    const LD lse = top + std::log(z);
    for (std::size_t c = 0; c < classes; ++c) total -= static_cast<LD>(targets[r * classes + c]) * (h.v[r * classes + c] - lse);
  }
  return total / static_cast<LD>(n);
}

GradCheckResult check_param_grad(const ModelCheckConfig& config, double step, std::size_t coords) {
  if (!(step > 0.0)) throw ConfigError("grad_check: step must be positive");
  const Model model = build_model(config.spec, config.seed);
  const Batch b = random_batch(config, derive_seed(config.seed, "batch"));
  const FlatGradient g = param_grad(model, b.inputs, b.labels);
  std::vector<LD> probe(model.params.begin(), model.params.end());
  GradCheckResult result;
  for (std::size_t i : sample_coords(probe.size(), coords, derive_seed(config.seed, "coords"))) {
    const LD x0 = probe[i];
    probe[i] = x0 + step;
    const LD up = reference_loss(model, probe, b.inputs, b.labels);
    probe[i] = x0 - step;
    const LD down = reference_loss(model, probe, b.inputs, b.labels);
    probe[i] = x0;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw Error("grad_check: non-finite function value near coordinate " + std::to_string(i));
    }
    const double central = static_cast<double>((up - down) / (2.0L * step));
    const double err = std::abs(g.values[i] - central) / std::max(1e-8, std::abs(central));
    if (err > result.max_rel_error || result.coords_checked == 0) {
      result.max_rel_error = err;
      result.worst_coord = i;
    }
    ++result.coords_checked;
  }
  return result;
}

GradCheckResult check_data_grad(const ModelCheckConfig& config, double step, std::size_t coords) {
  const Model model = build_model(config.spec, config.seed);
  const Batch truth = random_batch(config, derive_seed(config.seed, "batch"));
  const Batch virt = random_batch(config, derive_seed(config.seed, "virtual"));
  const FlatGradient target = param_grad(model, truth.inputs, truth.labels);
  const std::unique_ptr<bool[]> mask = std::make_unique<bool[]>(config.batch);
  std::fill(mask.get(), mask.get() + config.batch, true);
  const MatchEvaluation ev = evaluate_match(model, virt.inputs, VirtualLabels{truth.labels, false}, target,
                                            std::span<const bool>(mask.get(), config.batch));
  const auto f = [&](const Tensor& x) { return match_loss(model, x, truth.labels, target); };
  const auto idx = sample_coords(virt.inputs.numel(), coords, derive_seed(config.seed, "pixels"));
  return compare_with_central_differences(f, virt.inputs, ev.input_grad, step, idx);
}

double SuiteReport::max_rel_error() const {
  double m = 0.0;
  for (const CheckOutcome& o : outcomes) m = std::max(m, o.max_rel_error);
  return m;
}

bool SuiteReport::passed() const {
  return std::all_of(outcomes.begin(), outcomes.end(), [](const CheckOutcome& o) { return o.passed; });
}

std::vector<std::string> SuiteReport::failures() const {
  std::vector<std::string> names;
  for (const CheckOutcome& o : outcomes)
    if (!o.passed) names.push_back(o.name);
  return names;
}

std::vector<SuiteReport> run_engine_suites(const EngineCheckOptions& options) {
  std::vector<SuiteReport> suites;
  const std::vector<CheckCase> cases = primitive_cases(derive_seed(options.seed, "primitives"));
  std::vector<CheckCase> first, second;
  for (const CheckCase& c : cases) (c.name.ends_with("''") ? second : first).push_back(c);
  suites.push_back({"primitives (first order)", run_checks(first), 1e-5});
  suites.push_back({"primitives (second order)", run_checks(second), 1e-5});

  const auto configs = random_model_configs(options.model_configs, derive_seed(options.seed, "models"));
  SuiteReport pg{"param_grad vs finite differences", {}, 1e-4};
  SuiteReport dg{"match-loss data gradient vs finite differences", {}, 1e-3};
  for (const ModelCheckConfig& c : configs) {
    const std::string name = to_string(c.spec.name) + "/batch" + std::to_string(c.batch);
    for (auto [suite, check, step] : {std::tuple{&pg, &check_param_grad, 1e-5}, std::tuple{&dg, &check_data_grad, 1e-5}}) {
      CheckOutcome o{name, 0.0, suite->tolerance, false, {}};
      try {
        o.max_rel_error = check(c, step, options.coords_per_config).max_rel_error;
        o.passed = o.max_rel_error < suite->tolerance;
      } catch (const std::exception& e) {
        o.error = e.what();
        o.max_rel_error = std::numeric_limits<double>::infinity();
      }
      suite->outcomes.push_back(std::move(o));
    }
  }
  suites.push_back(std::move(pg));
  suites.push_back(std::move(dg));
  return suites;
}

}  // namespace dragd
