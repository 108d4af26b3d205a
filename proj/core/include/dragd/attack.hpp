#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dragd/dataio.hpp"
#include "dragd/fedsim.hpp"
#include "dragd/gradients.hpp"
#include "dragd/metrics.hpp"

namespace dragd {

enum class AttackMode { dragd, dragdp, dlg_baseline };
enum class InitKind { uniform_noise, public_prior, cpl_tile };
enum class Optimizer { gd, adam };

std::string to_string(AttackMode v);
std::string to_string(InitKind v);
std::string to_string(Optimizer v);
std::string to_string(MatchLoss v);
AttackMode attack_mode_from_string(const std::string& s);
InitKind init_kind_from_string(const std::string& s);
Optimizer optimizer_from_string(const std::string& s);
MatchLoss match_loss_from_string(const std::string& s);

struct AttackConfig {
  double eta_r = 0.05;
  double eta_f = 0.05;
  std::size_t iterations = 300;
  AttackMode mode = AttackMode::dragd;
  bool freeze_part = true;
  InitKind init = InitKind::uniform_noise;
  bool clamp_pixels = true;
  /// When false, per-row label logits are optimised jointly with the pixels.
  bool labels_known = true;
  /// gd applies x -= eta * grad. adam (beta 0.9/0.999, eps 1e-8) uses eta
  /// as its step size.
  Optimizer optimizer = Optimizer::gd;
  MatchLoss match_loss = MatchLoss::squared_l2;
  std::uint64_t seed = 0;
  /// Called after every update with the stage (1 or 2), the iteration and
  /// the whole virtual batch of that stage.
  std::function<void(int stage, std::size_t iter, const Tensor& batch)> observer;

  /// Throws ConfigError: rates must be positive, iterations >= 1, and dragdp
  /// requires public_prior initialisation.
  void validate() const;
};

struct VirtualBatch {
  Tensor images{Shape{0, 1, 1, 1}};
  std::vector<int> labels;
  std::size_t size() const { return labels.size(); }
};

struct AttackState {
  VirtualBatch n_r;
  VirtualBatch n_f;
  /// One entry per iteration: the match loss at the iterate before its update.
  std::vector<double> loss_step1;
  std::vector<double> loss_step2;
};

/// Seeded initial virtual images of `batch_shape` (N, C, H, W).
///   uniform_noise  pixels uniform in [0, 1]
///   public_prior   label-matched pool rows drawn without replacement; a
///                  missing label falls back to any unused row (warning)
///   cpl_tile       one noise quadrant copied into all four quadrants
Tensor init_virtual(const Shape& batch_shape, std::span<const int> labels, InitKind init,
                    const LabeledDataset* public_pool, std::uint64_t seed);

/// Step I: matches g_post at theta_u with a virtual copy of D_r, starting
/// from `start` when given and from seeded uniform noise otherwise.
AttackState reconstruct_remaining(const CapturedPair& pair, const AttackConfig& config,
                                  std::span<const int> remaining_labels, const Shape& image_shape,
                                  const Tensor* start = nullptr);

/// Step II: matches g_pre at theta_star with the batch (N_f, N_r), N_f in
/// the leading rows. Only the N_f rows move unless freeze_part is off.
/// `start` replaces the configured N_f initialisation.
AttackState reconstruct_forgotten(const CapturedPair& pair, const AttackConfig& config, AttackState state,
                                  std::span<const int> forgotten_labels, const LabeledDataset* public_pool,
                                  const Tensor* start = nullptr);

/// Single-stage match of g_pre at theta_star over a batch the size of D.
/// The reconstruction is returned in n_f and the losses in loss_step2.
AttackState dlg_baseline(const CapturedPair& pair, const AttackConfig& config, std::span<const int> labels,
                         const Shape& image_shape);

struct SetScores {
  std::vector<std::size_t> perm;  // recon[i] is scored against truth[perm[i]]
  std::vector<ImageScore> images;
  ImageScore mean;
};

/// Aligns within label groups, then scores every image.
SetScores score_reconstruction(const VirtualBatch& recon, const LabeledDataset& truth);

struct AttackResult {
  AttackState state;
  std::optional<SetScores> remaining;  // N_r vs D_r
  std::optional<SetScores> forgotten;  // N_f vs D_f (vs D for the baseline)
  double seconds_step1 = 0.0;
  double seconds_step2 = 0.0;
  std::size_t iterations_step1 = 0;
  std::size_t iterations_step2 = 0;
};

/// Runs the configured mode end to end. `step1` reuses an earlier Step-I
/// state instead of recomputing it. Scores are filled when `ground_truth`
/// is given.
AttackResult run_attack(const CapturedPair& pair, const AttackConfig& config, const UnlearnScenario& scenario,
                        bool ground_truth, const LabeledDataset* public_pool = nullptr,
                        const AttackState* step1 = nullptr);

}  // namespace dragd
