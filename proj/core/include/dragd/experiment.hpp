#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dragd/attack.hpp"
#include "dragd/dataio.hpp"
#include "dragd/fedsim.hpp"
#include "dragd/metrics.hpp"
#include "dragd/model.hpp"

namespace dragd {

/// Where images come from.
///   synthetic_digits  generated 0-9 glyphs (image_size square, 1 channel)
///   synthetic_blobs   generated class blobs (channels x image_size square)
///   idx               MNIST-style pair: `images` and `labels`
///   cifar10           binary batches in `dir`
///   image_dir         one subfolder per class in `dir`
/// A file-backed source whose paths are missing falls back to `fallback`
/// (a synthetic source) with a warning; without a fallback it is an error.
struct DatasetSpec {
  std::string source = "synthetic_digits";
  std::filesystem::path images;
  std::filesystem::path labels;
  std::filesystem::path dir;
  std::string fallback;
  std::size_t image_size = 28;
  std::size_t channels = 1;
  std::size_t classes = 10;
  double noise = 0.1;  // synthetic_blobs only
  /// Rows of the loaded data forming the attacked set; drawn at random when empty.
  std::vector<std::size_t> subset;
};

/// Attack modes a run can request. Step I is shared by every two-stage mode.
///   dlg              single-stage baseline over all of D
///   dragd            noise-initialised N_f, frozen N_r
///   dragdp           N_f from the public pool, frozen N_r
///   cpl              quadrant-tiled noise N_f, frozen N_r
///   dragd_nonfixed   as dragd but N_r keeps moving in Step II
///   dragdp_nonfixed  as dragdp but N_r keeps moving in Step II
const std::vector<std::string>& known_modes();

struct ExperimentConfig {
  std::string name = "experiment";
  DatasetSpec dataset;
  ArchSpec arch;
  FedConfig fed;
  double dirichlet_alpha = 0.1;
  /// Training rows beyond the attacked set.
  std::size_t train_extra = 144;
  /// Rows of the public pool, disjoint from all training rows.
  std::size_t public_size = 64;
  std::size_t total = 16;  // |D|
  std::size_t part = 4;    // |D_r|
  UnlearnMode unlearn_mode = UnlearnMode::simulated;
  AttackConfig attack;
  std::vector<std::string> modes{"dlg", "dragd", "dragdp"};
  std::filesystem::path output_dir = "runs/experiment";
  std::uint64_t seed = 0;

  /// Throws ConfigError describing the first problem found, including
  /// missing input files that have no fallback.
  void validate() const;
};

/// Sub-seeds of a run, each derive_seed(seed, tag) with the tag named after
/// the field.
struct RunSeeds {
  std::uint64_t data, forget, model, partition, fl, attack, publ;
  static RunSeeds from_master(std::uint64_t seed);
};

/// Parses a JSON config. Relative dataset paths resolve against `base_dir`;
/// output_dir stays relative to the working directory. Unknown
/// keys are rejected and the result is validated.
ExperimentConfig parse_experiment_config(std::string_view json_text, const std::filesystem::path& base_dir = {});
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
/// Fully resolved config as pretty-printed JSON; parses back to an equal config.
std::string config_to_json(const ExperimentConfig& config);

/// The attacked set, training data (attacked set in the leading rows) and
/// public pool of a run.
struct ExperimentData {
  LabeledDataset full_set;
  LabeledDataset train;
  LabeledDataset public_pool;
  std::vector<std::size_t> forget_indices;
};
ExperimentData prepare_data(const ExperimentConfig& config);

/// One line of the comparison table.
struct SummaryRow {
  std::string method;  // DLG, Part, DRAGD, ...
  std::string mode;    // run mode that produced it
  std::string target;  // D, D_r or D_f
  ImageScore score;
};

struct RunOutcome {
  std::vector<SummaryRow> rows;
  CapturedPair pair;
  double train_accuracy = 0.0;
  /// The shared Step-I state (empty when only dlg ran) and each mode's final state.
  AttackState step1;
  std::vector<std::pair<std::string, AttackState>> states;
};

/// train -> unlearn -> capture -> attack(s) -> metrics. Writes into
/// config.output_dir:
///   manifest.json            config echo, seeds, files, timings
///   pair/                    captured models and gradients
///   truth.pgm                the attacked set (.ppm for colour data)
///   <mode>/loss.csv          iter,loss_step1,loss_step2
///   <mode>/metrics.csv       index,set,mse,psnr,ssim
///   <mode>/recon_f.pgm, recon_r.pgm
///   summary.csv              method,mode,target,mse,psnr,ssim
/// Everything except manifest timings is a function of the config alone.
RunOutcome run_experiment(const ExperimentConfig& config);

/// Display name of the summary row a mode produces.
std::string method_name(const std::string& mode);

/// Reads summary.csv of a run directory, keeping the metric text verbatim.
struct SummaryText {
  std::string method, mode, target, mse, psnr, ssim;
};
std::vector<SummaryText> read_summary(const std::filesystem::path& run_dir);

/// Method x metric table with direction markers. Rows are DLG, Part,
/// DRAGD, DRAGDP, then any others in file order. Throws IoError listing
/// every missing artifact.
std::string format_report(const std::filesystem::path& run_dir);

}  // namespace dragd
