#include "dragd/attack.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <memory>

#include <spdlog/spdlog.h>

#include "dragd/error.hpp"
#include "dragd/random.hpp"

namespace dragd {

std::string to_string(AttackMode v) {
  switch (v) {
    case AttackMode::dragd: return "dragd";
    case AttackMode::dragdp: return "dragdp";
    case AttackMode::dlg_baseline: return "dlg_baseline";
  }
  return "?";
}

std::string to_string(InitKind v) {
  switch (v) {
    case InitKind::uniform_noise: return "uniform_noise";
    case InitKind::public_prior: return "public_prior";
    case InitKind::cpl_tile: return "cpl_tile";
  }
  return "?";
}

std::string to_string(Optimizer v) { return v == Optimizer::gd ? "gd" : "adam"; }
std::string to_string(MatchLoss v) { return v == MatchLoss::squared_l2 ? "squared_l2" : "cosine"; }

AttackMode attack_mode_from_string(const std::string& s) {
  if (s == "dragd") return AttackMode::dragd;
  if (s == "dragdp") return AttackMode::dragdp;
  if (s == "dlg_baseline") return AttackMode::dlg_baseline;
  throw ConfigError("unknown attack mode '" + s + "' (expected dragd, dragdp or dlg_baseline)");
}

InitKind init_kind_from_string(const std::string& s) {
  if (s == "uniform_noise") return InitKind::uniform_noise;
  if (s == "public_prior") return InitKind::public_prior;
  if (s == "cpl_tile") return InitKind::cpl_tile;
  throw ConfigError("unknown init '" + s + "' (expected uniform_noise, public_prior or cpl_tile)");
}

Optimizer optimizer_from_string(const std::string& s) {
  if (s == "gd") return Optimizer::gd;
  if (s == "adam") return Optimizer::adam;
  throw ConfigError("unknown optimizer '" + s + "' (expected gd or adam)");
}

MatchLoss match_loss_from_string(const std::string& s) {
  if (s == "squared_l2") return MatchLoss::squared_l2;
  if (s == "cosine") return MatchLoss::cosine;
  throw ConfigError("unknown match loss '" + s + "' (expected squared_l2 or cosine)");
}

void AttackConfig::validate() const {
  if (!(eta_r > 0.0) || !(eta_f > 0.0)) throw ConfigError("attack: learning rates must be positive");
  if (iterations == 0) throw ConfigError("attack: iterations must be at least 1");
  if (mode == AttackMode::dragdp && init != InitKind::public_prior) {
    throw ConfigError("attack: dragdp requires init = public_prior");
  }
}

Tensor init_virtual(const Shape& batch_shape, std::span<const int> labels, InitKind init,
                    const LabeledDataset* public_pool, std::uint64_t seed) {
  if (batch_shape.size() != 4) throw ShapeError("init_virtual: expected (N, C, H, W), got " + shape_str(batch_shape));
  const std::size_t n = batch_shape[0], c = batch_shape[1], h = batch_shape[2], w = batch_shape[3];
  if (labels.size() != n) throw ShapeError("init_virtual: label count does not match batch size");
  Rng rng(seed);
  Tensor out(batch_shape);
  switch (init) {
    case InitKind::uniform_noise:
      for (double& v : out.data()) v = rng.uniform();
      break;
    case InitKind::cpl_tile: {
      const std::size_t qh = (h + 1) / 2, qw = (w + 1) / 2;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t ch = 0; ch < c; ++ch) {
          std::vector<double> quad(qh * qw);
          for (double& v : quad) v = rng.uniform();
          for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) out[((i * c + ch) * h + y) * w + x] = quad[(y % qh) * qw + x % qw];
        }
      break;
    }
    case InitKind::public_prior: {
      if (public_pool == nullptr || public_pool->size() == 0) {
        throw ConfigError("init_virtual: public_prior needs a non-empty public pool");
      }
      const Shape want{c, h, w};
      if (public_pool->image_shape() != want) {
        throw ShapeError("init_virtual: public pool images are " + shape_str(public_pool->image_shape()) +
                         ", virtual images are " + shape_str(want));
      }
      std::map<int, std::vector<std::size_t>> by_label;
      std::vector<std::size_t> order(public_pool->size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      rng.shuffle(order);
      for (std::size_t i : order) by_label[public_pool->labels[i]].push_back(i);
      std::vector<char> used(public_pool->size(), 0);
      const std::size_t per = c * h * w;
      for (std::size_t i = 0; i < n; ++i) {
        std::size_t pick = public_pool->size();
        auto& bucket = by_label[labels[i]];
        while (!bucket.empty() && used[bucket.back()]) bucket.pop_back();
        if (!bucket.empty()) {
          pick = bucket.back();
          bucket.pop_back();
        } else {
          for (std::size_t j : order)
            if (!used[j]) {
              pick = j;
              break;
            }
          if (pick == public_pool->size()) throw ConfigError("init_virtual: public pool is smaller than the batch");
          spdlog::warn("init_virtual: public pool has no unused sample of label {}; using label {}", labels[i],
                       public_pool->labels[pick]);
        }
        used[pick] = 1;
        std::copy_n(public_pool->images.data().begin() + static_cast<std::ptrdiff_t>(pick * per), per,
                    out.data().begin() + static_cast<std::ptrdiff_t>(i * per));
      }
      break;
    }
  }
  return out;
}

namespace {

using Clock = std::chrono::steady_clock;

struct StageOutcome {
  Tensor images;
  std::optional<Tensor> label_logits;
  std::vector<double> losses;
};

class Adam {
 public:
  explicit Adam(std::size_t n) : m_(n, 0.0), v_(n, 0.0) {}
  double step(std::size_t i, double g, double lr) {
    m_[i] = b1 * m_[i] + (1 - b1) * g;
    v_[i] = b2 * v_[i] + (1 - b2) * g * g;
    const double mh = m_[i] / (1 - c1_), vh = v_[i] / (1 - c2_);
    return lr * mh / (std::sqrt(vh) + 1e-8);
  }
  void tick() {
    p1_ *= b1;
    p2_ *= b2;
    c1_ = p1_;
    c2_ = p2_;
  }

 private:
  static constexpr double b1 = 0.9, b2 = 0.999;
  std::vector<double> m_, v_;
  double p1_ = 1.0, p2_ = 1.0, c1_ = 0.0, c2_ = 0.0;
};

// Gradient matching over `images`; rows with mask false never change.
StageOutcome run_stage(const Model& model, const FlatGradient& target, Tensor images, std::span<const int> labels,
                       std::span<const bool> mask, const AttackConfig& config, double eta, std::uint64_t seed,
                       int stage) {
  const std::size_t n = images.dim(0), per = images.numel() / std::max<std::size_t>(n, 1);
  const std::size_t classes = model.spec.num_classes;
  StageOutcome out;
  VirtualLabels vl;
  if (config.labels_known) {
    vl.values = Tensor(Shape{n});
    for (std::size_t i = 0; i < n; ++i) vl.values[i] = labels[i];
  } else {
    Rng rng(seed);
    vl.soft = true;
    vl.values = Tensor(Shape{n, classes});
    for (double& v : vl.values.data()) v = rng.normal();
  }
  Adam adam_x(images.numel()), adam_y(vl.values.numel());
  out.losses.reserve(config.iterations);
  for (std::size_t t = 0; t < config.iterations; ++t) {
    const MatchEvaluation ev = evaluate_match(model, images, vl, target, mask, config.match_loss);
    if (!std::isfinite(ev.loss) || !ev.input_grad.all_finite()) {
      throw DivergenceError(std::string(stage == 1 ? "step I" : "step II") + ": match loss became non-finite at iteration " + std::to_string(t) +
                            " (learning rate " + std::to_string(eta) + " is likely too high)");
    }
    out.losses.push_back(ev.loss);
    adam_x.tick();
    adam_y.tick();
    for (std::size_t r = 0; r < n; ++r) {
      if (!mask[r]) continue;
      for (std::size_t k = r * per; k < (r + 1) * per; ++k) {
        const double g = ev.input_grad[k];
        double x = images[k] - (config.optimizer == Optimizer::adam ? adam_x.step(k, g, eta) : eta * g);
        if (config.clamp_pixels) x = std::clamp(x, 0.0, 1.0);
        images[k] = x;
      }
      if (ev.label_grad) {
        for (std::size_t k = r * classes; k < (r + 1) * classes; ++k) {
          const double g = (*ev.label_grad)[k];
          vl.values[k] -= config.optimizer == Optimizer::adam ? adam_y.step(k, g, eta) : eta * g;
        }
      }
    }
    if (config.observer) config.observer(stage, t, images);
  }
  out.images = std::move(images);
  if (vl.soft) out.label_logits = vl.values;
  return out;
}

std::vector<int> argmax_rows(const Tensor& logits) {
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  std::vector<int> out(n);
  for (std::size_t r = 0; r < n; ++r) {
    const auto row = logits.data().subspan(r * c, c);
    out[r] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

Shape batch_shape(std::size_t n, const Shape& image_shape) {
  Shape s{n};
  s.insert(s.end(), image_shape.begin(), image_shape.end());
  return s;
}

std::unique_ptr<bool[]> make_mask(std::size_t n, std::size_t leading_true, bool rest) {
  auto m = std::make_unique<bool[]>(n);
  for (std::size_t i = 0; i < n; ++i) m[i] = i < leading_true ? true : rest;
  return m;
}

}  // namespace

AttackState reconstruct_remaining(const CapturedPair& pair, const AttackConfig& config,
                                  std::span<const int> remaining_labels, const Shape& image_shape,
                                  const Tensor* start) {
  config.validate();
  const std::size_t n = remaining_labels.size();
  if (n == 0) throw ConfigError("reconstruct_remaining: the remaining set is empty");
  const Shape shape = batch_shape(n, image_shape);
  if (start && start->shape() != shape) throw ShapeError("reconstruct_remaining: start must be " + shape_str(shape));
  const Tensor init =
      start ? *start : init_virtual(shape, remaining_labels, InitKind::uniform_noise, nullptr, derive_seed(config.seed, "n_r"));
  const auto mask = make_mask(n, n, true);
  StageOutcome s = run_stage(pair.theta_u, pair.g_post, init, remaining_labels, std::span<const bool>(mask.get(), n),
                             config, config.eta_r, derive_seed(config.seed, "labels_r"), 1);
  AttackState state;
  state.n_r.images = std::move(s.images);
  state.n_r.labels = s.label_logits ? argmax_rows(*s.label_logits)
                                    : std::vector<int>(remaining_labels.begin(), remaining_labels.end());
  state.loss_step1 = std::move(s.losses);
  return state;
}

AttackState reconstruct_forgotten(const CapturedPair& pair, const AttackConfig& config, AttackState state,
                                  std::span<const int> forgotten_labels, const LabeledDataset* public_pool,
                                  const Tensor* start) {
  config.validate();
  const std::size_t nf = forgotten_labels.size();
  const std::size_t nr = state.n_r.size();
  if (nf == 0) throw ConfigError("reconstruct_forgotten: the forgotten set is empty");
  Shape image_shape = state.n_r.images.shape();
  image_shape.erase(image_shape.begin());
  const Shape shape = batch_shape(nf, image_shape);
  if (start && start->shape() != shape) throw ShapeError("reconstruct_forgotten: start must be " + shape_str(shape));
  const Tensor nf_init =
      start ? *start : init_virtual(shape, forgotten_labels, config.init, public_pool, derive_seed(config.seed, "n_f"));
  const Tensor parts[] = {nf_init, state.n_r.images};
  const Tensor joint = nr > 0 ? concat_rows(parts) : nf_init;
  std::vector<int> labels(forgotten_labels.begin(), forgotten_labels.end());
  labels.insert(labels.end(), state.n_r.labels.begin(), state.n_r.labels.end());
  const auto mask = make_mask(nf + nr, nf, !config.freeze_part);
  StageOutcome s = run_stage(pair.theta_star, pair.g_pre, joint, labels, std::span<const bool>(mask.get(), nf + nr),
                             config, config.eta_f, derive_seed(config.seed, "labels_f"), 2);
  state.n_f.images = s.images.rows(0, nf);
  if (nr > 0) state.n_r.images = s.images.rows(nf, nf + nr);
  if (s.label_logits) {
    const std::vector<int> all = argmax_rows(*s.label_logits);
    state.n_f.labels.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(nf));
  } else {
    state.n_f.labels.assign(forgotten_labels.begin(), forgotten_labels.end());
  }
  state.loss_step2 = std::move(s.losses);
  return state;
}

AttackState dlg_baseline(const CapturedPair& pair, const AttackConfig& config, std::span<const int> labels,
                         const Shape& image_shape) {
  config.validate();
  const std::size_t n = labels.size();
  if (n == 0) throw ConfigError("dlg_baseline: empty batch");
  const InitKind init = config.init == InitKind::cpl_tile ? InitKind::cpl_tile : InitKind::uniform_noise;
  const Tensor x0 = init_virtual(batch_shape(n, image_shape), labels, init, nullptr, derive_seed(config.seed, "dlg"));
  const auto mask = make_mask(n, n, true);
  StageOutcome s = run_stage(pair.theta_star, pair.g_pre, x0, labels, std::span<const bool>(mask.get(), n), config,
                             config.eta_f, derive_seed(config.seed, "labels_dlg"), 2);
  AttackState state;
  state.n_f.images = std::move(s.images);
  state.n_f.labels = s.label_logits ? argmax_rows(*s.label_logits) : std::vector<int>(labels.begin(), labels.end());
  state.loss_step2 = std::move(s.losses);
  return state;
}

SetScores score_reconstruction(const VirtualBatch& recon, const LabeledDataset& truth) {
  SetScores s;
  s.perm = align_batches(recon.images, truth.images, recon.labels, truth.labels);
  s.images = score_batch(recon.images, truth.images, s.perm);
  s.mean = mean_score(s.images);
  return s;
}

AttackResult run_attack(const CapturedPair& pair, const AttackConfig& config, const UnlearnScenario& scenario,
                        bool ground_truth, const LabeledDataset* public_pool, const AttackState* step1) {
  config.validate();
  const bool two_stage = config.mode != AttackMode::dlg_baseline;
  scenario.validate(two_stage);
  const Shape image_shape = scenario.full_set.image_shape();
  AttackResult result;
  if (!two_stage) {
    const auto t0 = Clock::now();
    result.state = dlg_baseline(pair, config, scenario.full_set.labels, image_shape);
    result.seconds_step2 = std::chrono::duration<double>(Clock::now() - t0).count();
    result.iterations_step2 = result.state.loss_step2.size();
    if (ground_truth) result.forgotten = score_reconstruction(result.state.n_f, scenario.full_set);
    return result;
  }
  const LabeledDataset rest = scenario.remaining();
  const LabeledDataset gone = scenario.forgotten();
  const auto t0 = Clock::now();
  AttackState state = step1 ? *step1 : reconstruct_remaining(pair, config, rest.labels, image_shape);
  if (state.n_r.size() != rest.size()) throw ConfigError("run_attack: Step-I state does not match |D_r|");
  const auto t1 = Clock::now();
  state = reconstruct_forgotten(pair, config, std::move(state), gone.labels, public_pool);
  const auto t2 = Clock::now();
  result.state = std::move(state);
  result.seconds_step1 = std::chrono::duration<double>(t1 - t0).count();
  result.seconds_step2 = std::chrono::duration<double>(t2 - t1).count();
  result.iterations_step1 = result.state.loss_step1.size();
  result.iterations_step2 = result.state.loss_step2.size();
  if (ground_truth) {
    result.remaining = score_reconstruction(result.state.n_r, rest);
    result.forgotten = score_reconstruction(result.state.n_f, gone);
  }
  return result;
}

}  // namespace dragd
