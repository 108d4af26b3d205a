#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dragd/dataio.hpp"
#include "dragd/model.hpp"

namespace dragd {

struct FedConfig {
  std::size_t clients = 10;
  std::size_t rounds = 1;
  std::size_t local_epochs = 1;
  double local_lr = 0.05;
  /// Upper bound; a client whose shard is smaller uses its whole shard.
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;

  /// Throws ConfigError unless every field is positive (rounds may be 0).
  void validate() const;
};

enum class UnlearnMode { simulated, retrain };

std::string to_string(UnlearnMode mode);
UnlearnMode unlearn_mode_from_string(const std::string& name);

/// The attacked set D = D_f + D_r and which of its rows are forgotten.
struct UnlearnScenario {
  LabeledDataset full_set;
  std::vector<std::size_t> forget_indices;  // sorted, unique
  UnlearnMode mode = UnlearnMode::simulated;

  std::vector<std::size_t> remaining_indices() const;
  LabeledDataset forgotten() const;
  LabeledDataset remaining() const;
  /// Throws ConfigError for out-of-range or duplicate indices, and for an
  /// empty remaining set when `need_remaining` is set.
  void validate(bool need_remaining) const;
};

struct CapturedPair {
  Model theta_star;
  Model theta_u;
  FlatGradient g_pre;   // at theta_star over D_f + D_r
  FlatGradient g_post;  // at theta_u over D_r
};

/// Seed of one client's local training in one round.
std::uint64_t client_round_seed(std::uint64_t seed, std::size_t round, std::size_t client);

/// Minibatch SGD over `indices` of `data`: each epoch visits the indices in
/// a fresh seeded shuffle, in steps of min(batch_size, |indices|) with a
/// shorter final step when the count does not divide evenly.
std::vector<double> local_sgd(const Model& start, const LabeledDataset& data, std::span<const std::size_t> indices,
                              std::size_t epochs, double lr, std::size_t batch_size, std::uint64_t seed);

/// FedAvg from model0: every round each non-empty client runs local_sgd from
/// the round's global parameters, then the server takes the uniform mean of
/// the client vectors in client order. Empty shards are skipped with a
/// warning.
Model train_federated(const Model& model0, const LabeledDataset& train, const Partition& partition,
                      const FedConfig& config);

/// Unlearned model. `train` must hold scenario.full_set in its leading
/// rows, so forget indices address both. retrain reruns train_federated
/// from model0 with the forgotten rows dropped from every shard; simulated
/// returns theta_star.
Model unlearn(const Model& model0, const Model& theta_star, const LabeledDataset& train, const Partition& partition,
              const UnlearnScenario& scenario, const FedConfig& config);

/// Full-batch mean gradients at the final models.
CapturedPair capture_pair(const Model& theta_star, const Model& theta_u, const UnlearnScenario& scenario);

/// Writes theta_star.bin, theta_u.bin, g_pre.bin, g_post.bin (each with a
/// .manifest sidecar) and pair.json recording shapes, seeds and mode.
void save_pair(const CapturedPair& pair, const UnlearnScenario& scenario, const FedConfig& config,
               const std::filesystem::path& dir);
CapturedPair load_pair(const std::filesystem::path& dir);

/// Fraction of rows whose argmax logit equals the label.
double accuracy(const Model& model, const LabeledDataset& data);

}  // namespace dragd
