#include <algorithm>
#include <cmath>
#include <numeric>

#include "dragd/dataio.hpp"
#include "dragd/error.hpp"
#include "dragd/random.hpp"

namespace dragd {
namespace {

// Dirichlet(alpha * 1_k) via normalised Gamma draws.
std::vector<double> dirichlet(std::size_t k, double alpha, Rng& rng) {
  std::vector<double> p(k);
  double total = 0.0;
  for (double& v : p) total += (v = rng.gamma(alpha));
  if (!(total > 0.0)) {
    // Every draw underflowed (tiny alpha); the limit is a single vertex.
    std::fill(p.begin(), p.end(), 0.0);
    p[rng.below(k)] = 1.0;
    return p;
  }
  for (double& v : p) v /= total;
  return p;
}

// Integer counts summing to n, proportional to p (largest remainder).
std::vector<std::size_t> apportion(std::size_t n, const std::vector<double>& p) {
  std::vector<std::size_t> counts(p.size());
  std::vector<std::pair<double, std::size_t>> rema;
  std::size_t used = 0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    const double exact = p[k] * static_cast<double>(n);
    counts[k] = static_cast<std::size_t>(std::floor(exact));
    used += counts[k];
    rema.emplace_back(exact - static_cast<double>(counts[k]), k);
  }
  std::stable_sort(rema.begin(), rema.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; used < n; ++i, ++used) ++counts[rema[i % rema.size()].second];
  return counts;
}

}  // namespace

Partition dirichlet_partition(std::span<const int> labels, std::size_t num_classes, std::size_t clients, double alpha,
                              std::uint64_t seed) {
  if (clients == 0) throw ConfigError("dirichlet_partition: need at least one client");
  if (!(alpha > 0.0)) throw ConfigError("dirichlet_partition: alpha must be positive");
  if (clients > labels.size()) {
    throw ConfigError("dirichlet_partition: " + std::to_string(clients) + " clients for only " +
                      std::to_string(labels.size()) + " samples");
  }
  Rng rng(seed);
  Partition out;
  out.clients.resize(clients);
  for (std::size_t c = 0; c < num_classes; ++c) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == static_cast<int>(c)) members.push_back(i);
    if (members.empty()) continue;
    rng.shuffle(members);
    const std::vector<std::size_t> counts = apportion(members.size(), dirichlet(clients, alpha, rng));
    std::size_t at = 0;
    for (std::size_t k = 0; k < clients; ++k) {
      out.clients[k].insert(out.clients[k].end(), members.begin() + static_cast<std::ptrdiff_t>(at),
                            members.begin() + static_cast<std::ptrdiff_t>(at + counts[k]));
      at += counts[k];
    }
  }
  for (auto& c : out.clients) std::sort(c.begin(), c.end());
  return out;
}

Partition dirichlet_partition(const LabeledDataset& data, std::size_t clients, double alpha, std::uint64_t seed) {
  return dirichlet_partition(data.labels, data.num_classes, clients, alpha, seed);
}

}  // namespace dragd
