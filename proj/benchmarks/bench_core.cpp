#include <algorithm>
#include <memory>
#include <vector>

#include <benchmark/benchmark.h>

#include "dragd/dataio.hpp"
#include "dragd/gradients.hpp"
#include "dragd/metrics.hpp"
#include "dragd/model.hpp"

namespace {

using namespace dragd;

const ArchSpec kLenet{Arch::lenet_small, 1, 28, 28, 10, 1.0};

void BM_ParamGrad(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Model m = build_model(kLenet, 1);
  const LabeledDataset d = synthetic_digits(n, 2);
  const Tensor y = d.label_tensor();
  for (auto _ : state) benchmark::DoNotOptimize(param_grad(m, d.images, y));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}
BENCHMARK(BM_ParamGrad)->Arg(4)->Arg(16)->Unit(benchmark::kMillisecond);

// One attack iteration: match loss plus its pixel gradient.
void BM_EvaluateMatch(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Model m = build_model(kLenet, 1);
  const LabeledDataset truth = synthetic_digits(n, 3), guess = synthetic_digits(n, 4);
  const FlatGradient target = param_grad(m, truth.images, truth.label_tensor());
  const VirtualLabels labels{one_hot(truth.labels, 10), false};
  const std::unique_ptr<bool[]> mask(new bool[n]);
  std::fill_n(mask.get(), n, true);
  for (auto _ : state) {
    benchmark::DoNotOptimize(evaluate_match(m, guess.images, labels, target, std::span<const bool>(mask.get(), n)));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}
BENCHMARK(BM_EvaluateMatch)->Arg(4)->Arg(16)->Unit(benchmark::kMillisecond);

void BM_Ssim(benchmark::State& state) {
  const auto size = static_cast<std::size_t>(state.range(0));
  const LabeledDataset a = synthetic_blobs(2, 2, {3, size, size}, 5, 0.2);
  const Tensor x = a.images.rows(0, 1).reshaped({3, size, size}), y = a.images.rows(1, 2).reshaped({3, size, size});
  for (auto _ : state) benchmark::DoNotOptimize(ssim(x, y));
}
BENCHMARK(BM_Ssim)->Arg(28)->Arg(32)->Arg(64);

void BM_AlignBatches(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const LabeledDataset r = synthetic_digits(n, 6), t = synthetic_digits(n, 7);
  for (auto _ : state) benchmark::DoNotOptimize(align_batches(r.images, t.images, r.labels, t.labels));
}
BENCHMARK(BM_AlignBatches)->Arg(16)->Arg(64);

}  // namespace

BENCHMARK_MAIN();
