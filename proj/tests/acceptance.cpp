// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
// Usage: acceptance [preset.json] [work_dir]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <spdlog/spdlog.h>

#include "dragd/attack.hpp"
#include "dragd/error.hpp"
#include "dragd/experiment.hpp"
#include "dragd/gradcheck.hpp"
#include "dragd/metrics.hpp"
#include "dragd/random.hpp"

namespace {

using namespace dragd;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

constexpr std::uint64_t kSeeds[] = {0, 1, 2};

struct Verdict {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& title, const Verdict& v, double seconds) {
  std::printf("%s  criterion %d: %s [%.1fs] %s\n", v.pass ? "PASS" : "FAIL", id, title.c_str(), seconds,
              v.detail.c_str());
  std::fflush(stdout);
  if (!v.pass) ++failures;
}

void check(int id, const std::string& title, const std::function<Verdict()>& body) {
  const auto t0 = Clock::now();
  Verdict v;
  try {
    v = body();
  } catch (const std::exception& e) {
    v = {false, std::string("threw: ") + e.what()};
  }
  report(id, title, v, std::chrono::duration<double>(Clock::now() - t0).count());
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

bool same_bits(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(double)) == 0;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------

Verdict engine_oracle() {
  EngineCheckOptions o;
  o.seed = 0;
  o.model_configs = 100;
  o.coords_per_config = 64;
  const auto suites = run_engine_suites(o);
  double first = 0, second = 0;
  bool ok = true;
  std::string failed;
  for (const auto& s : suites) {
    if (s.name.starts_with("param_grad")) first = s.max_rel_error();
    if (s.name.starts_with("match-loss")) second = s.max_rel_error();
    if (!s.passed()) {
      ok = false;
      failed += " " + s.name;
    }
  }
  ok = ok && first < 1e-4 && second < 1e-3;
  return {ok, "param_grad max rel " + fmt(first) + " (< 1e-4), data grad max rel " + fmt(second) + " (< 1e-3)" +
                  (failed.empty() ? "" : "; failing suites:" + failed)};
}

struct Prepared {
  UnlearnScenario scenario;
  CapturedPair pair;
};

// The run pipeline up to the captured gradients, with the run's own seeds.
Prepared prepare(const ExperimentConfig& c) {
  const RunSeeds seeds = RunSeeds::from_master(c.seed);
  const ExperimentData d = prepare_data(c);
  const Model m0 = build_model(c.arch, seeds.model);
  const Partition part = dirichlet_partition(d.train, c.fed.clients, c.dirichlet_alpha, seeds.partition);
  FedConfig fed = c.fed;
  fed.seed = seeds.fl;
  UnlearnScenario s{d.full_set, d.forget_indices, c.unlearn_mode};
  const Model star = train_federated(m0, d.train, part, fed);
  const Model u = unlearn(m0, star, d.train, part, s, fed);
  CapturedPair pair = capture_pair(star, u, s);
  return {std::move(s), std::move(pair)};
}

Verdict stationarity(const ExperimentConfig& preset) {
  double worst_loss = 0, worst_move = 0;
  for (std::uint64_t k = 0; k < 10; ++k) {
    ExperimentConfig c = preset;
    c.seed = 1000 + k;
    const Prepared p = prepare(c);
    const LabeledDataset rest = p.scenario.remaining(), gone = p.scenario.forgotten();
    AttackConfig a = c.attack;
    a.optimizer = Optimizer::gd;
    a.iterations = 50;
    a.freeze_part = false;  // both N_f and N_r are free to move
    Tensor prev = rest.images;
    a.observer = [&](int stage, std::size_t t, const Tensor& b) {
      if (stage == 2 && t == 0) prev = concat_rows(std::vector<Tensor>{gone.images, rest.images});
      worst_move = std::max(worst_move, max_abs_diff(b, prev));
      prev = b;
    };
    AttackState s = reconstruct_remaining(p.pair, a, rest.labels, rest.image_shape(), &rest.images);
    worst_loss = std::max(worst_loss, s.loss_step1.front());
    s.n_r = {rest.images, rest.labels};
    s = reconstruct_forgotten(p.pair, a, std::move(s), gone.labels, nullptr, &gone.images);
    worst_loss = std::max(worst_loss, s.loss_step2.front());
  }
  return {worst_loss < 1e-12 && worst_move < 1e-9,
          "10 scenarios: max initial loss " + fmt(worst_loss) + " (< 1e-12), max per-iteration movement " +
              fmt(worst_move) + " (< 1e-9)"};
}

struct MatrixRun {
  std::uint64_t seed;
  fs::path dir;
  RunOutcome outcome;
};

std::vector<MatrixRun> matrix;

void run_matrix(const ExperimentConfig& preset, const fs::path& work) {
  for (std::uint64_t seed : kSeeds) {
    ExperimentConfig c = preset;
    c.seed = seed;
    c.modes = {"dlg", "dragd", "dragdp", "cpl", "dragd_nonfixed"};
    c.output_dir = work / ("seed" + std::to_string(seed));
    fs::remove_all(c.output_dir);
    matrix.push_back({seed, c.output_dir, run_experiment(c)});
  }
}

Verdict freeze_exactness() {
  if (matrix.empty()) return {false, "no runs"};
  std::size_t checked = 0;
  for (const auto& r : matrix)
    for (const auto& [mode, state] : r.outcome.states) {
      if (mode == "dlg" || mode.ends_with("_nonfixed")) continue;
      ++checked;
      if (!same_bits(state.n_r.images, r.outcome.step1.n_r.images)) {
        return {false, "seed " + std::to_string(r.seed) + " mode " + mode + ": N_r changed in Step II"};
      }
    }
  return {checked > 0, std::to_string(checked) + " frozen runs, N_r bit-identical across Step II"};
}

// Median over seeds of one summary row's metric.
double median_of(const std::string& mode, double ImageScore::*field) {
  std::vector<double> v;
  for (const auto& r : matrix)
    for (const auto& row : r.outcome.rows)
      if (row.mode == mode) v.push_back(row.score.*field);
  if (v.size() != matrix.size()) throw Error("missing summary rows for mode " + mode);
  return median(v);
}

Verdict table_ordering() {
  const double part = median_of("part", &ImageScore::mse), dragdp = median_of("dragdp", &ImageScore::mse),
               dragd = median_of("dragd", &ImageScore::mse), dlg = median_of("dlg", &ImageScore::mse);
  const double part_ssim = median_of("part", &ImageScore::ssim);
  const bool order = part < dragdp && dragdp < dragd && dragd < dlg;
  return {order && part_ssim >= 0.95,
          "median MSE Part " + fmt(part) + " < DRAGDP " + fmt(dragdp) + " < DRAGD " + fmt(dragd) + " < DLG " +
              fmt(dlg) + (order ? " holds" : " violated") + "; SSIM(Part) " + fmt(part_ssim) + " (>= 0.95)" +
              "; SSIM DRAGDP " + fmt(median_of("dragdp", &ImageScore::ssim)) + ", DRAGD " +
              fmt(median_of("dragd", &ImageScore::ssim)) + ", DLG " + fmt(median_of("dlg", &ImageScore::ssim))};
}

Verdict fixed_vs_nonfixed() {
  const double fixed = median_of("dragd", &ImageScore::mse), free = median_of("dragd_nonfixed", &ImageScore::mse);
  return {fixed < free, "median D_f MSE fixed " + fmt(fixed) + " < non-fixed " + fmt(free)};
}

Verdict prior_ablation() {
  const double dragdp = median_of("dragdp", &ImageScore::mse), cpl = median_of("cpl", &ImageScore::mse),
               dragd = median_of("dragd", &ImageScore::mse);
  const bool ok = dragdp < cpl && (cpl <= dragd || cpl <= 1.1 * dragd);
  return {ok, "median D_f MSE DRAGDP " + fmt(dragdp) + " < CPL " + fmt(cpl) + ", CPL vs DRAGD " + fmt(dragd) +
                  " (<= or within 10%)"};
}

Verdict metrics_suite() {
  Rng rng(2024);
  bool ok = std::abs(psnr_from_mse(0.01) - 20.0) < 1e-9;
  Tensor a(Shape{1, 28, 28});
  for (double& v : a.data()) v = rng.uniform();
  ok = ok && ssim(a, a) == 1.0 && mse(a, a) == 0.0;
  std::size_t worse = 0;
  for (int trial = 0; trial < 50; ++trial) {
    Tensor r(Shape{6, 1, 8, 8}), t(Shape{6, 1, 8, 8});
    for (double& v : r.data()) v = rng.uniform();
    for (double& v : t.data()) v = rng.uniform();
    const std::vector<int> labels(6, 0);
    const auto cost = [&](const std::vector<std::size_t>& p) {
      double s = 0;
      for (std::size_t i = 0; i < 6; ++i) s += mse(r.rows(i, i + 1), t.rows(p[i], p[i] + 1));
      return s;
    };
    const double got = cost(align_batches(r, t, labels, labels));
    std::vector<std::size_t> p{0, 1, 2, 3, 4, 5};
    double best = got;
    do best = std::min(best, cost(p));
    while (std::next_permutation(p.begin(), p.end()));
    if (got > best + 1e-12) ++worse;
  }
  return {ok && worse == 0, "psnr/ssim/mse examples " + std::string(ok ? "hold" : "FAIL") + "; alignment worse than brute force in " +
                                std::to_string(worse) + " of 50 trials"};
}

Verdict partition_suite() {
  Rng rng(77);
  std::size_t bad = 0;
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 20 + rng.below(480), k = 1 + rng.below(20);
    const double alpha = std::pow(10.0, rng.uniform(-2.0, 2.0));
    std::vector<int> labels(n);
    for (int& y : labels) y = static_cast<int>(rng.below(10));
    const Partition p = dirichlet_partition(labels, 10, k, alpha, rng.next_u64());
    std::vector<int> seen(n, 0);
    bool ok = p.clients.size() == k;
    for (const auto& c : p.clients)
      for (std::size_t i : c) ok = ok && i < n && ++seen[i] == 1;
    ok = ok && std::all_of(seen.begin(), seen.end(), [](int s) { return s == 1; });
    bad += !ok;
  }
  // alpha = 1e6: every client close to 100 per label (within 5%).
  std::vector<int> labels(10000);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i % 10);
  double worst = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Partition p = dirichlet_partition(labels, 10, 10, 1e6, seed);
    for (const auto& c : p.clients) {
      std::vector<double> hist(10, 0);
      for (std::size_t i : c) hist[static_cast<std::size_t>(labels[i])] += 1;
      for (double h : hist) worst = std::max(worst, std::abs(h - 100.0) / 100.0);
    }
  }
  return {bad == 0 && worst <= 0.05, std::to_string(bad) + " of 200 triples violate disjointness/conservation; " +
                                          "alpha=1e6 worst deviation from uniform " + fmt(100 * worst) + "%"};
}

Verdict determinism(const ExperimentConfig& preset, const fs::path& work) {
  if (matrix.empty()) return {false, "no runs"};
  const MatrixRun& first = matrix.front();
  ExperimentConfig c = preset;
  c.seed = first.seed;
  c.modes = {"dlg", "dragd", "dragdp", "cpl", "dragd_nonfixed"};
  c.output_dir = work / "repeat";
  fs::remove_all(c.output_dir);
  run_experiment(c);
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(first.dir)) {
    if (e.path().extension() != ".csv") continue;
    const fs::path rel = fs::relative(e.path(), first.dir);
    ++files;
    if (slurp(e.path()) != slurp(c.output_dir / rel)) return {false, rel.string() + " differs"};
  }
  return {files > 0, std::to_string(files) + " CSV files byte-identical"};
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_level(spdlog::level::err);
  const fs::path preset_path = argc > 1 ? fs::path(argv[1]) : fs::path(DRAGD_PRESET_DIR) / "mnist_fig2.json";
  const fs::path work = argc > 2 ? fs::path(argv[2]) : fs::temp_directory_path() / "dragd_acceptance";
  ExperimentConfig preset;
  try {
    preset = load_experiment_config(preset_path);
  } catch (const std::exception& e) {
    std::printf("FAIL  cannot load preset %s: %s\n", preset_path.string().c_str(), e.what());
    return 1;
  }
  const DatasetSpec& ds = preset.dataset;
  const bool file_backed = ds.source == "idx" || ds.source == "cifar10" || ds.source == "image_dir";
  const bool present = ds.source == "idx" ? fs::exists(ds.images) && fs::exists(ds.labels) : fs::exists(ds.dir);
  const std::string source = !file_backed ? ds.source : present ? ds.source : ds.fallback + " (fallback for " + ds.source + ")";
  std::printf("info  preset %s, data %s, work dir %s\n", preset_path.string().c_str(), source.c_str(),
              work.string().c_str());

  check(1, "gradient-engine oracle over 100 configurations", engine_oracle);
  check(2, "stationarity at the ground truth", [&] { return stationarity(preset); });

  const auto t0 = Clock::now();
  std::string matrix_error;
  try {
    run_matrix(preset, work);
  } catch (const std::exception& e) {
    matrix_error = e.what();
  }
  const double matrix_seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  std::printf("info  test matrix: %zu seeds, %.1fs%s\n", matrix.size(), matrix_seconds,
              matrix_error.empty() ? "" : (", error: " + matrix_error).c_str());

  check(3, "freeze exactness across Step II", freeze_exactness);
  check(4, "digit benchmark ordering and Part fidelity (median of 3 seeds)", table_ordering);
  check(5, "fixed vs non-fixed Part", fixed_vs_nonfixed);
  check(6, "public prior vs tiled initialisation", prior_ablation);
  check(7, "metrics suite", metrics_suite);
  check(8, "partition suite", partition_suite);
  check(9, "determinism of the digit benchmark", [&] { return determinism(preset, work); });

  std::printf("%s  %d criterion(s) failed\n", failures ? "FAIL" : "PASS", failures);
  return failures ? 1 : 0;
}
