#include "dragd/fedsim.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "dragd/error.hpp"
#include "dragd/gradients.hpp"
#include "dragd/random.hpp"

namespace dragd {

void FedConfig::validate() const {
  if (clients == 0) throw ConfigError("fed: clients must be positive");
  if (local_epochs == 0) throw ConfigError("fed: local_epochs must be positive");
  if (batch_size == 0) throw ConfigError("fed: batch_size must be positive");
  if (!(local_lr > 0.0)) throw ConfigError("fed: local_lr must be positive");
}

std::string to_string(UnlearnMode mode) { return mode == UnlearnMode::simulated ? "simulated" : "retrain"; }

UnlearnMode unlearn_mode_from_string(const std::string& name) {
  if (name == "simulated") return UnlearnMode::simulated;
  if (name == "retrain") return UnlearnMode::retrain;
  throw ConfigError("unknown unlearning mode '" + name + "' (expected simulated or retrain)");
}

std::vector<std::size_t> UnlearnScenario::remaining_indices() const {
  std::vector<std::size_t> out;
  const std::set<std::size_t> f(forget_indices.begin(), forget_indices.end());
  for (std::size_t i = 0; i < full_set.size(); ++i)
    if (!f.contains(i)) out.push_back(i);
  return out;
}

LabeledDataset UnlearnScenario::forgotten() const { return full_set.subset(forget_indices); }

LabeledDataset UnlearnScenario::remaining() const { return full_set.subset(remaining_indices()); }

void UnlearnScenario::validate(bool need_remaining) const {
  for (std::size_t i = 0; i < forget_indices.size(); ++i) {
    if (forget_indices[i] >= full_set.size()) {
      throw ConfigError("forget index " + std::to_string(forget_indices[i]) + " outside a set of " +
                        std::to_string(full_set.size()));
    }
    if (i > 0 && forget_indices[i] <= forget_indices[i - 1]) {
      throw ConfigError("forget indices must be sorted and unique");
    }
  }
  if (need_remaining && forget_indices.size() >= full_set.size()) {
    throw ConfigError("the remaining set is empty; nothing is left to retrain on or reconstruct in the first stage");
  }
}

std::uint64_t client_round_seed(std::uint64_t seed, std::size_t round, std::size_t client) {
  return derive_seed(derive_seed(seed, "round", round), "client", client);
}

std::vector<double> local_sgd(const Model& start, const LabeledDataset& data, std::span<const std::size_t> indices,
                              std::size_t epochs, double lr, std::size_t batch_size, std::uint64_t seed) {
  std::vector<double> params = start.params;
  if (indices.empty()) return params;
  const std::size_t step = std::min(batch_size, indices.size());
  Rng rng(seed);
  std::vector<std::size_t> order(indices.begin(), indices.end());
  for (std::size_t e = 0; e < epochs; ++e) {
    rng.shuffle(order);
    for (std::size_t at = 0; at < order.size(); at += step) {
      const std::span<const std::size_t> batch(order.data() + at, std::min(step, order.size() - at));
      const LabeledDataset b = data.subset(batch);
      const FlatGradient g = param_grad(start.with_params(params), b.images, b.label_tensor());
      for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr * g.values[i];
    }
  }
  return params;
}

Model train_federated(const Model& model0, const LabeledDataset& train, const Partition& partition,
                      const FedConfig& config) {
  config.validate();
  for (const auto& shard : partition.clients)
    for (std::size_t i : shard)
      if (i >= train.size()) throw ConfigError("partition index " + std::to_string(i) + " outside the training set");
  Model global = model0;
  for (std::size_t r = 0; r < config.rounds; ++r) {
    std::vector<double> sum(global.params.size(), 0.0);
    std::size_t participants = 0;
    for (std::size_t k = 0; k < partition.clients.size(); ++k) {
      const auto& shard = partition.clients[k];
      if (shard.empty()) {
        spdlog::warn("round {}: client {} has no data and is skipped", r, k);
        continue;
      }
      const std::vector<double> local = local_sgd(global, train, shard, config.local_epochs, config.local_lr,
                                                  config.batch_size, client_round_seed(config.seed, r, k));
      for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += local[i];
      ++participants;
    }
    if (participants == 0) {
      spdlog::warn("round {}: no client has data; global model unchanged", r);
      continue;
    }
    for (double& v : sum) v /= static_cast<double>(participants);
    global = global.with_params(std::move(sum));
  }
  return global;
}

Model unlearn(const Model& model0, const Model& theta_star, const LabeledDataset& train, const Partition& partition,
              const UnlearnScenario& scenario, const FedConfig& config) {
  scenario.validate(scenario.mode == UnlearnMode::retrain);
  if (scenario.mode == UnlearnMode::simulated) return theta_star;
  if (train.size() < scenario.full_set.size()) {
    throw ConfigError("unlearn: the training set must contain the attacked set in its leading rows");
  }
  const std::set<std::size_t> forget(scenario.forget_indices.begin(), scenario.forget_indices.end());
  Partition kept;
  for (const auto& shard : partition.clients) {
    auto& out = kept.clients.emplace_back();
    for (std::size_t i : shard)
      if (!forget.contains(i)) out.push_back(i);
  }
  return train_federated(model0, train, kept, config);
}

CapturedPair capture_pair(const Model& theta_star, const Model& theta_u, const UnlearnScenario& scenario) {
  if (!(theta_star.spec == theta_u.spec) || !(theta_star.layout == theta_u.layout)) {
    throw ConfigError("capture_pair: models differ in architecture");
  }
  scenario.validate(false);
  CapturedPair pair{theta_star, theta_u, {}, {}};
  pair.g_pre = param_grad(theta_star, scenario.full_set.images, scenario.full_set.label_tensor());
  const LabeledDataset rest = scenario.remaining();
  if (rest.size() > 0) {
    pair.g_post = param_grad(theta_u, rest.images, rest.label_tensor());
  } else {
    pair.g_post = FlatGradient{std::vector<double>(theta_u.layout.dim(), 0.0), theta_u.layout};
  }
  return pair;
}

void save_pair(const CapturedPair& pair, const UnlearnScenario& scenario, const FedConfig& config,
               const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_model(pair.theta_star, dir / "theta_star.bin");
  save_model(pair.theta_u, dir / "theta_u.bin");
  save_gradient(pair.g_pre, dir / "g_pre.bin");
  save_gradient(pair.g_post, dir / "g_post.bin");
  nlohmann::ordered_json j;
  j["mode"] = to_string(scenario.mode);
  j["arch"] = to_string(pair.theta_star.spec.name);
  j["input_shape"] = pair.theta_star.spec.input_shape();
  j["num_classes"] = pair.theta_star.spec.num_classes;
  j["dimension"] = pair.theta_star.layout.dim();
  j["full_set_size"] = scenario.full_set.size();
  j["forget_indices"] = scenario.forget_indices;
  j["labels"] = scenario.full_set.labels;
  j["model_seed"] = pair.theta_star.seed;
  j["fed"] = {{"clients", config.clients},       {"rounds", config.rounds},
              {"local_epochs", config.local_epochs}, {"local_lr", config.local_lr},
              {"batch_size", config.batch_size}, {"seed", config.seed}};
  j["files"] = {"theta_star.bin", "theta_u.bin", "g_pre.bin", "g_post.bin"};
  std::ofstream os(dir / "pair.json");
  if (!os) throw IoError("cannot write " + (dir / "pair.json").string());
  os << j.dump(2) << '\n';
}

CapturedPair load_pair(const std::filesystem::path& dir) {
  return CapturedPair{load_model(dir / "theta_star.bin"), load_model(dir / "theta_u.bin"),
                      load_gradient(dir / "g_pre.bin"), load_gradient(dir / "g_post.bin")};
}

double accuracy(const Model& model, const LabeledDataset& data) {
  if (data.size() == 0) return 0.0;
  std::size_t correct = 0;
  constexpr std::size_t chunk = 256;
  for (std::size_t at = 0; at < data.size(); at += chunk) {
    const std::size_t end = std::min(at + chunk, data.size());
    const Tensor logits = forward(model, data.images.rows(at, end));
    const std::size_t c = logits.dim(1);
    for (std::size_t r = 0; r < end - at; ++r) {
      const auto row = logits.data().subspan(r * c, c);
      const auto best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
      correct += best == data.labels[at + r];
    }
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

}  // namespace dragd
