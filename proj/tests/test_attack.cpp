#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include <gtest/gtest.h>

#include "dragd/attack.hpp"
#include "dragd/error.hpp"
#include "dragd/random.hpp"

namespace {

using namespace dragd;

constexpr double kStill = 1e-9;

Tensor image_at(const Tensor& batch, std::size_t i) { return batch.rows(i, i + 1); }

TEST(Init, UniformNoiseIsInUnitIntervalWithMeanHalf) {
  const std::vector<int> labels(100, 0);
  const Tensor x = init_virtual({100, 1, 10, 10}, labels, InitKind::uniform_noise, nullptr, 3);
  double sum = 0;
  for (double v : x.data()) {
    ASSERT_GE(v, 0.0);
    ASSERT_LE(v, 1.0);
    sum += v;
  }
  EXPECT_NEAR(sum / static_cast<double>(x.numel()), 0.5, 0.02);
  EXPECT_EQ(x, init_virtual({100, 1, 10, 10}, labels, InitKind::uniform_noise, nullptr, 3));
}

TEST(Init, CplTilesOneQuadrant) {
  for (const Shape& s : {Shape{3, 2, 28, 28}, Shape{2, 1, 7, 9}}) {
    const std::vector<int> labels(s[0], 1);
    const Tensor x = init_virtual(s, labels, InitKind::cpl_tile, nullptr, 5);
    const std::size_t h = s[2], w = s[3], qh = (h + 1) / 2, qw = (w + 1) / 2;
    for (std::size_t p = 0; p < s[0] * s[1]; ++p)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t q = 0; q < w; ++q)
          ASSERT_EQ(x[(p * h + y) * w + q], x[(p * h + y % qh) * w + q % qw]);
  }
}

TEST(Init, PublicPriorDrawsLabelMatchedRowsWithoutReplacement) {
  const LabeledDataset pool = synthetic_blobs(40, 4, {1, 6, 6}, 1, 0.3);
  const std::vector<int> labels{2, 2, 0, 3, 1, 2};
  const Tensor x = init_virtual({6, 1, 6, 6}, labels, InitKind::public_prior, &pool, 7);
  std::set<std::size_t> used;
  for (std::size_t i = 0; i < 6; ++i) {
    std::size_t found = pool.size();
    for (std::size_t j = 0; j < pool.size(); ++j)
      if (image_at(pool.images, j) == image_at(x, i)) found = j;
    ASSERT_LT(found, pool.size()) << "row " << i << " is not a pool image";
    EXPECT_EQ(pool.labels[found], labels[i]);
    EXPECT_TRUE(used.insert(found).second);
  }
}

TEST(Init, PublicPriorFallsBackWhenLabelIsMissing) {
  LabeledDataset pool = synthetic_blobs(6, 2, {1, 4, 4}, 2, 0.3);
  const std::vector<int> labels{9, 9};
  const Tensor x = init_virtual({2, 1, 4, 4}, labels, InitKind::public_prior, &pool, 1);
  EXPECT_NE(image_at(x, 0), image_at(x, 1));
  EXPECT_THROW(init_virtual({7, 1, 4, 4}, std::vector<int>(7, 0), InitKind::public_prior, &pool, 1), ConfigError);
  EXPECT_THROW(init_virtual({1, 1, 4, 4}, std::vector<int>{0}, InitKind::public_prior, nullptr, 1), ConfigError);
  EXPECT_THROW(init_virtual({1, 1, 5, 4}, std::vector<int>{0}, InitKind::public_prior, &pool, 1), ShapeError);
}

TEST(AttackConfig, Validation) {
  AttackConfig c;
  c.mode = AttackMode::dragdp;
  EXPECT_THROW(c.validate(), ConfigError);
  c.init = InitKind::public_prior;
  EXPECT_NO_THROW(c.validate());
  c.iterations = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = AttackConfig{};
  c.eta_f = -1;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(attack_mode_from_string("dragdx"), ConfigError);
  EXPECT_EQ(init_kind_from_string(to_string(InitKind::cpl_tile)), InitKind::cpl_tile);
}

// Two-logit linear model on a single pixel: z = w x + b.
Model scalar_model(double w0, double w1, double b0, double b1) {
  Model m;
  m.spec = {Arch::mlp, 1, 1, 1, 2, 1.0};
  m.layout.append("w", {2, 1});
  m.layout.append("b", {2});
  m.layers = {{LayerKind::flatten, 0, {}, 0}, {LayerKind::dense, 0, {}, 0}};
  m.params = {w0, w1, b0, b1};
  return m;
}

// d/dx of sum_k (e_k x - tw_k)^2 + (e_k - tb_k)^2 with e = softmax(w x + b) - onehot(0).
double scalar_match_derivative(const std::vector<double>& p, const std::vector<double>& t, double x) {
  const double z0 = p[0] * x + p[2], z1 = p[1] * x + p[3];
  const double m = std::max(z0, z1);
  const double e0x = std::exp(z0 - m), e1x = std::exp(z1 - m);
  const double p0 = e0x / (e0x + e1x), p1 = e1x / (e0x + e1x);
  const double e[2] = {p0 - 1.0, p1};
  const double wbar = p0 * p[0] + p1 * p[1];
  const double de[2] = {p0 * (p[0] - wbar), p1 * (p[1] - wbar)};
  double d = 0;
  for (int k = 0; k < 2; ++k) {
    d += 2 * (e[k] * x - t[k]) * (de[k] * x + e[k]);
    d += 2 * (e[k] - t[2 + k]) * de[k];
  }
  return d;
}

TEST(Attack, GradientDescentFollowsClosedFormRecursion) {
  const Model m = scalar_model(0.8, -0.5, 0.1, -0.2);
  const std::vector<double> target{-0.3, 0.25, -0.4, 0.35};
  CapturedPair pair{m, m, {target, m.layout}, {target, m.layout}};
  AttackConfig c;
  c.optimizer = Optimizer::gd;
  c.clamp_pixels = false;
  c.iterations = 25;
  c.eta_r = 0.2;
  std::vector<double> seen;
  c.observer = [&](int stage, std::size_t, const Tensor& b) {
    EXPECT_EQ(stage, 1);
    seen.push_back(b[0]);
  };
  const Tensor start(Shape{1, 1, 1, 1}, 0.7);
  const std::vector<int> labels{0};
  reconstruct_remaining(pair, c, labels, {1, 1, 1}, &start);
  ASSERT_EQ(seen.size(), 25u);
  double x = 0.7;
  for (std::size_t t = 0; t < 25; ++t) {
    x -= 0.2 * scalar_match_derivative(m.params, target, x);
    EXPECT_NEAR(seen[t], x, 1e-12) << "iteration " << t;
  }
}

// Lightly trained MLP on blobs with a retrain-free scenario.
class SmallAttack : public ::testing::Test {
 protected:
  static constexpr std::size_t kTotal = 8;

  void build(std::vector<std::size_t> forget, std::uint64_t seed) {
    const LabeledDataset train = synthetic_blobs(64, 4, {1, 8, 8}, seed, 0.3);
    const Model m0 = build_model({Arch::mlp, 1, 8, 8, 4, 0.5}, seed);
    FedConfig fc;
    fc.clients = 4;
    fc.rounds = 1;
    fc.batch_size = 16;
    fc.seed = seed;
    const Model star = train_federated(m0, train, dirichlet_partition(train, 4, 0.5, seed), fc);
    std::vector<std::size_t> lead(kTotal);
    std::iota(lead.begin(), lead.end(), std::size_t{0});
    scenario = {train.subset(lead), std::move(forget), UnlearnMode::simulated};
    pair = capture_pair(star, star, scenario);
    pool = synthetic_blobs(32, 4, {1, 8, 8}, seed + 100, 0.3);
  }

  AttackConfig preset() const {
    AttackConfig c;
    c.optimizer = Optimizer::adam;
    c.iterations = 60;
    c.seed = 11;
    return c;
  }

  UnlearnScenario scenario;
  CapturedPair pair;
  LabeledDataset pool;
};

// Largest per-iteration pixel movement of a run, through the observer.
struct MovementProbe {
  Tensor prev;
  double worst = 0;
  void attach(AttackConfig& c) {
    c.observer = [this](int, std::size_t, const Tensor& b) {
      worst = std::max(worst, max_abs_diff(b, prev));
      prev = b;
    };
  }
};

TEST_F(SmallAttack, StepOneIsStationaryAtTheTruth) {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    build({1, 4, 6}, seed);
    const LabeledDataset rest = scenario.remaining();
    AttackConfig c = preset();
    c.optimizer = Optimizer::gd;
    MovementProbe probe{rest.images};
    probe.attach(c);
    const AttackState s = reconstruct_remaining(pair, c, rest.labels, rest.image_shape(), &rest.images);
    EXPECT_LT(s.loss_step1.front(), 1e-12);
    EXPECT_LT(probe.worst, kStill);
  }
}

TEST_F(SmallAttack, StepTwoIsStationaryAtTheTruth) {
  for (const auto& forget : {std::vector<std::size_t>{0, 1, 2}, std::vector<std::size_t>{2, 5, 7}}) {
    build(forget, 2);
    const LabeledDataset rest = scenario.remaining(), gone = scenario.forgotten();
    AttackConfig c = preset();
    c.optimizer = Optimizer::gd;
    c.freeze_part = false;
    MovementProbe probe{concat_rows(std::vector<Tensor>{gone.images, rest.images})};
    probe.attach(c);
    AttackState s;
    s.n_r = {rest.images, rest.labels};
    s = reconstruct_forgotten(pair, c, std::move(s), gone.labels, nullptr, &gone.images);
    EXPECT_LT(s.loss_step2.front(), 1e-12);
    EXPECT_LT(probe.worst, kStill);
  }
}

TEST_F(SmallAttack, AdamIsStillOnlyWhenTheResidualIsExactlyZero) {
  // With D_f in the leading rows the virtual batch reproduces g_pre bit for
  // bit; Adam then sees a zero gradient and never moves.
  build({0, 1, 2}, 2);
  const LabeledDataset rest = scenario.remaining(), gone = scenario.forgotten();
  AttackConfig c = preset();
  MovementProbe probe{concat_rows(std::vector<Tensor>{gone.images, rest.images})};
  probe.attach(c);
  AttackState s;
  s.n_r = {rest.images, rest.labels};
  s = reconstruct_forgotten(pair, c, std::move(s), gone.labels, nullptr, &gone.images);
  EXPECT_EQ(s.loss_step2.front(), 0.0);
  EXPECT_EQ(probe.worst, 0.0);
}

TEST_F(SmallAttack, FrozenRowsAreBitwiseUnchanged) {
  build({0, 3}, 3);
  const LabeledDataset rest = scenario.remaining(), gone = scenario.forgotten();
  AttackConfig c = preset();
  c.iterations = 20;
  AttackState s = reconstruct_remaining(pair, c, rest.labels, rest.image_shape());
  const Tensor nr = s.n_r.images;
  const AttackState frozen = reconstruct_forgotten(pair, c, s, gone.labels, nullptr);
  EXPECT_EQ(frozen.n_r.images, nr);
  EXPECT_EQ(frozen.loss_step1, s.loss_step1);
  c.freeze_part = false;
  const AttackState joint = reconstruct_forgotten(pair, c, s, gone.labels, nullptr);
  EXPECT_NE(joint.n_r.images, nr);
}

TEST_F(SmallAttack, ClampKeepsEveryIterateInUnitInterval) {
  build({1, 2}, 4);
  AttackConfig c = preset();
  c.optimizer = Optimizer::gd;
  c.eta_r = c.eta_f = 50.0;
  c.iterations = 15;
  double lo = 1, hi = 0;
  c.observer = [&](int, std::size_t, const Tensor& b) {
    for (double v : b.data()) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  };
  run_attack(pair, c, scenario, false);
  EXPECT_GE(lo, 0.0);
  EXPECT_LE(hi, 1.0);
}

TEST_F(SmallAttack, BatchSizesFollowTheScenario) {
  build({0, 2, 5}, 5);
  AttackConfig c = preset();
  c.iterations = 3;
  const AttackResult r = run_attack(pair, c, scenario, true);
  EXPECT_EQ(r.state.n_r.size(), 5u);
  EXPECT_EQ(r.state.n_f.size(), 3u);
  EXPECT_EQ(r.state.n_r.images.shape(), (Shape{5, 1, 8, 8}));
  EXPECT_EQ(r.state.n_f.images.shape(), (Shape{3, 1, 8, 8}));
  EXPECT_EQ(r.iterations_step1, 3u);
  EXPECT_EQ(r.iterations_step2, 3u);
  ASSERT_TRUE(r.remaining && r.forgotten);
  EXPECT_EQ(r.remaining->images.size(), 5u);
  c.mode = AttackMode::dlg_baseline;
  const AttackResult d = run_attack(pair, c, scenario, true);
  EXPECT_EQ(d.state.n_f.size(), kTotal);
  EXPECT_TRUE(d.state.loss_step1.empty());
  EXPECT_FALSE(d.remaining.has_value());
  EXPECT_EQ(d.forgotten->images.size(), kTotal);
}

TEST_F(SmallAttack, RunsAreDeterministic) {
  build({1, 6}, 6);
  for (AttackMode mode : {AttackMode::dragd, AttackMode::dragdp, AttackMode::dlg_baseline}) {
    AttackConfig c = preset();
    c.iterations = 10;
    c.mode = mode;
    if (mode == AttackMode::dragdp) c.init = InitKind::public_prior;
    const AttackResult a = run_attack(pair, c, scenario, false, &pool);
    const AttackResult b = run_attack(pair, c, scenario, false, &pool);
    EXPECT_EQ(a.state.n_f.images, b.state.n_f.images);
    EXPECT_EQ(a.state.n_r.images, b.state.n_r.images);
    EXPECT_EQ(a.state.loss_step2, b.state.loss_step2);
  }
}

TEST_F(SmallAttack, ReusedStepOneMatchesRecomputation) {
  build({2, 3}, 7);
  AttackConfig c = preset();
  c.iterations = 10;
  const AttackResult full = run_attack(pair, c, scenario, false);
  const LabeledDataset rest = scenario.remaining();
  const AttackState s1 = reconstruct_remaining(pair, c, rest.labels, rest.image_shape());
  const AttackResult reused = run_attack(pair, c, scenario, false, nullptr, &s1);
  EXPECT_EQ(full.state.n_f.images, reused.state.n_f.images);
}

TEST_F(SmallAttack, PublicPriorEqualToTruthReconstructsForgottenSet) {
  build({0, 4, 5}, 8);
  const LabeledDataset gone = scenario.forgotten();
  AttackConfig c = preset();
  c.mode = AttackMode::dragdp;
  c.init = InitKind::public_prior;
  c.optimizer = Optimizer::gd;
  c.iterations = 300;
  const AttackResult r = run_attack(pair, c, scenario, true, &gone);
  EXPECT_GT(r.forgotten->mean.ssim, 0.999);
}

TEST_F(SmallAttack, StepTwoShrinksItsObjective) {
  build({0, 1, 3, 4, 6, 7}, 9);
  AttackConfig c = preset();
  c.iterations = 300;
  const AttackResult r = run_attack(pair, c, scenario, false);
  EXPECT_LT(r.state.loss_step2.back(), 0.1 * r.state.loss_step2.front());
}

TEST_F(SmallAttack, SoftLabelsYieldFiniteLossesAndValidClasses) {
  build({1, 5}, 10);
  AttackConfig c = preset();
  c.labels_known = false;
  c.iterations = 10;
  const AttackResult r = run_attack(pair, c, scenario, false);
  for (double l : r.state.loss_step2) EXPECT_TRUE(std::isfinite(l));
  for (int y : r.state.n_f.labels) EXPECT_TRUE(y >= 0 && y < 4);
}

TEST_F(SmallAttack, NonFiniteObjectiveRaisesDivergence) {
  build({1}, 11);
  pair.g_post.values[0] = std::numeric_limits<double>::quiet_NaN();
  const LabeledDataset rest = scenario.remaining();
  EXPECT_THROW(reconstruct_remaining(pair, preset(), rest.labels, rest.image_shape()), DivergenceError);
}

TEST_F(SmallAttack, DragdpWithoutPoolIsRejected) {
  build({1}, 12);
  AttackConfig c = preset();
  c.mode = AttackMode::dragdp;
  c.init = InitKind::public_prior;
  EXPECT_THROW(run_attack(pair, c, scenario, false, nullptr), ConfigError);
  const LabeledDataset rest = scenario.remaining();
  const Tensor wrong(Shape{1, 1, 8, 8}, 0.5);
  EXPECT_THROW(reconstruct_remaining(pair, preset(), rest.labels, rest.image_shape(), &wrong), ShapeError);
}

TEST(Attack, TwoImageMlpMatchConverges) {
  const LabeledDataset d = synthetic_digits(2, 3, 12);
  const Model m = build_model({Arch::mlp, 1, 12, 12, 10, 1.0}, 3);
  const UnlearnScenario s{d, {0}, UnlearnMode::simulated};
  const CapturedPair pair = capture_pair(m, m, s);
  AttackConfig c;
  c.optimizer = Optimizer::adam;
  c.iterations = 300;
  c.eta_f = 0.05;
  const AttackState r = dlg_baseline(pair, c, d.labels, {1, 12, 12});
  EXPECT_LT(r.loss_step2.back(), 1e-3 * r.loss_step2.front());
}

}  // namespace
