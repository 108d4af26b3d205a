#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dragd/autograd.hpp"
#include "dragd/model.hpp"
#include "dragd/tensor.hpp"

namespace dragd {

/// Scalar function of one tensor argument, built from engine primitives.
using ScalarFn = std::function<ag::Var(const ag::Var&)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_coord = 0;
  std::size_t coords_checked = 0;
};

/// Relative error |analytic - central| / max(1e-8, |central|), maximised over
/// `coords` (every coordinate when empty). Throws Error on a non-finite
/// function value and ConfigError for step <= 0.
GradCheckResult compare_with_central_differences(const std::function<double(const Tensor&)>& f, const Tensor& at,
                                                 const Tensor& analytic, double step,
                                                 std::span<const std::size_t> coords = {});

/// Checks the engine's gradient of `f` at `at` against central differences.
GradCheckResult grad_check_detailed(const ScalarFn& f, const Tensor& at, double step,
                                    std::span<const std::size_t> coords = {});
double grad_check(const ScalarFn& f, const Tensor& at, double step);

/// `count` distinct coordinates of [0, n), sorted; all of them when count
/// is 0 or >= n.
std::vector<std::size_t> sample_coords(std::size_t n, std::size_t count, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Named check suites

struct CheckCase {
  std::string name;
  ScalarFn f;
  Tensor at;
  double step = 1e-6;
  double tolerance = 1e-6;
};

struct CheckOutcome {
  std::string name;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
  std::string error;  // set when evaluation threw
};

std::vector<CheckOutcome> run_checks(std::span<const CheckCase> cases);

/// First- and second-order checks for every primitive, named "<op>" and
/// "<op>''". Second-order cases differentiate the recorded backward pass.
std::vector<CheckCase> primitive_cases(std::uint64_t seed);

/// A randomized small model plus batch size used by the model-level checks.
struct ModelCheckConfig {
  ArchSpec spec;
  std::uint64_t seed = 0;
  std::size_t batch = 1;
};

/// `n` configurations cycling through the architectures at desk-scale input
/// sizes with batch sizes 1..4.
std::vector<ModelCheckConfig> random_model_configs(std::size_t n, std::uint64_t seed);

/// Mean softmax cross-entropy evaluated with plain loops in long double,
/// independent of the engine. Labels as accepted by forward_loss.
long double reference_loss(const Model& model, std::span<const long double> params, const Tensor& inputs,
                           const Tensor& labels);

/// param_grad against central differences of reference_loss over the
/// parameters, on `coords` sampled coordinates (all when 0). The extended
/// precision keeps difference roundoff well below the smallest gradient
/// entries of the deeper architectures.
GradCheckResult check_param_grad(const ModelCheckConfig& config, double step, std::size_t coords);

/// Pixel gradient of the squared-L2 match loss (second-order path) against
/// central differences of the match loss value.
GradCheckResult check_data_grad(const ModelCheckConfig& config, double step, std::size_t coords);

struct SuiteReport {
  std::string name;
  std::vector<CheckOutcome> outcomes;
  double tolerance = 0.0;

  double max_rel_error() const;
  bool passed() const;
  std::vector<std::string> failures() const;
};

struct EngineCheckOptions {
  std::uint64_t seed = 0;
  std::size_t model_configs = 6;
  std::size_t coords_per_config = 64;
};

/// Primitive first/second-order suites plus model-level param_grad and
/// match-loss data-gradient suites.
std::vector<SuiteReport> run_engine_suites(const EngineCheckOptions& options);

}  // namespace dragd
