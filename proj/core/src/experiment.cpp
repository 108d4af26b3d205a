#include "dragd/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "dragd/error.hpp"
#include "dragd/random.hpp"

namespace dragd {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

const std::vector<std::string>& known_modes() {
  static const std::vector<std::string> modes{"dlg", "dragd", "dragdp", "cpl", "dragd_nonfixed", "dragdp_nonfixed"};
  return modes;
}

std::string method_name(const std::string& mode) {
  if (mode == "dlg") return "DLG";
  if (mode == "part") return "Part";
  if (mode == "dragd") return "DRAGD";
  if (mode == "dragdp") return "DRAGDP";
  if (mode == "cpl") return "CPL";
  if (mode == "dragd_nonfixed") return "DRAGD-nonfixed";
  if (mode == "dragdp_nonfixed") return "DRAGDP-nonfixed";
  throw ConfigError("unknown mode '" + mode + "'");
}

RunSeeds RunSeeds::from_master(std::uint64_t seed) {
  return {derive_seed(seed, "data"),      derive_seed(seed, "forget"), derive_seed(seed, "model"),
          derive_seed(seed, "partition"), derive_seed(seed, "fl"),     derive_seed(seed, "attack"),
          derive_seed(seed, "public")};
}

namespace {

bool is_synthetic(const std::string& source) { return source == "synthetic_digits" || source == "synthetic_blobs"; }

bool is_known_source(const std::string& source) {
  return is_synthetic(source) || source == "idx" || source == "cifar10" || source == "image_dir";
}

// Paths a file-backed source needs, with the ones that do not exist.
std::vector<std::string> missing_inputs(const DatasetSpec& d) {
  std::vector<std::string> missing;
  auto need = [&](const fs::path& p, const char* key) {
    if (p.empty()) {
      missing.push_back(std::string("dataset.") + key + " (not set)");
    } else if (!fs::exists(p)) {
      missing.push_back(p.string());
    }
  };
  if (d.source == "idx") {
    need(d.images, "images");
    need(d.labels, "labels");
  } else if (d.source == "cifar10" || d.source == "image_dir") {
    need(d.dir, "dir");
  }
  return missing;
}

std::string join(const std::vector<std::string>& v, const char* sep) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? sep : "") + v[i];
  return out;
}

// Source actually used after applying the fallback rule.
std::string effective_source(const DatasetSpec& d) {
  if (is_synthetic(d.source) || missing_inputs(d).empty()) return d.source;
  return d.fallback;
}

}  // namespace

void ExperimentConfig::validate() const {
  if (!is_known_source(dataset.source)) throw ConfigError("dataset.source: unknown source '" + dataset.source + "'");
  if (!dataset.fallback.empty() && !is_synthetic(dataset.fallback)) {
    throw ConfigError("dataset.fallback must be synthetic_digits or synthetic_blobs");
  }
  if (const auto missing = missing_inputs(dataset); !missing.empty() && dataset.fallback.empty()) {
    throw ConfigError("dataset inputs not found: " + join(missing, ", "));
  }
  if (dataset.image_size == 0) throw ConfigError("dataset.image_size must be positive");
  if (dataset.channels != 1 && dataset.channels != 3) throw ConfigError("dataset.channels must be 1 or 3");
  if (dataset.classes < 2) throw ConfigError("dataset.classes must be at least 2");
  if (total == 0) throw ConfigError("scenario.total must be positive");
  if (part >= total) throw ConfigError("scenario.part must be smaller than scenario.total (|D_f| >= 1)");
  if (!dataset.subset.empty()) {
    if (dataset.subset.size() != total) throw ConfigError("dataset.subset must list exactly scenario.total rows");
    if (std::set<std::size_t>(dataset.subset.begin(), dataset.subset.end()).size() != total) {
      throw ConfigError("dataset.subset has duplicate rows");
    }
  }
  if (!(dirichlet_alpha > 0.0)) throw ConfigError("fed.dirichlet_alpha must be positive");
  fed.validate();
  if (fed.clients > total + train_extra) throw ConfigError("fed.clients exceeds the number of training rows");
  if (unlearn_mode == UnlearnMode::retrain && part == 0) throw ConfigError("retrain mode needs a non-empty D_r");
  AttackConfig probe = attack;
  probe.mode = AttackMode::dragd;
  probe.init = InitKind::uniform_noise;
  probe.validate();
  if (modes.empty()) throw ConfigError("modes: at least one mode is required");
  std::set<std::string> seen;
  for (const std::string& m : modes) {
    if (std::find(known_modes().begin(), known_modes().end(), m) == known_modes().end()) {
      throw ConfigError("modes: unknown mode '" + m + "' (known: " + join(known_modes(), ", ") + ")");
    }
    if (!seen.insert(m).second) throw ConfigError("modes: '" + m + "' listed twice");
    if ((m == "dragdp" || m == "dragdp_nonfixed") && public_size == 0) {
      throw ConfigError("modes: " + m + " needs public_size > 0");
    }
    if (m != "dlg" && part == 0) throw ConfigError("modes: " + m + " needs a non-empty D_r (scenario.part >= 1)");
  }
  if (output_dir.empty()) throw ConfigError("output_dir must be set");
}

// ---------------------------------------------------------------------------
// JSON

namespace {

void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
      throw ConfigError(where + ": unknown key '" + key + "'");
    }
  }
}

template <class T>
void take(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

void take_path(const json& j, const char* key, fs::path& out, const fs::path& base, const std::string& where) {
  std::string s;
  take(j, key, s, where);
  if (s.empty()) return;
  out = fs::path(s);
  if (out.is_relative() && !base.empty()) out = base / out;
}

template <class E, class F>
void take_enum(const json& j, const char* key, E& out, F from_string, const std::string& where) {
  std::string s;
  take(j, key, s, where);
  if (!s.empty()) out = from_string(s);
}

}  // namespace

ExperimentConfig parse_experiment_config(std::string_view json_text, const fs::path& base_dir) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  check_keys(j, "config", {"name", "dataset", "model", "fed", "scenario", "attack", "modes", "output_dir", "seed"});
  ExperimentConfig c;
  take(j, "name", c.name, "config");
  take(j, "seed", c.seed, "config");
  take_path(j, "output_dir", c.output_dir, {}, "config");  // relative to the working directory
  if (j.contains("modes")) take(j, "modes", c.modes, "config");

  if (j.contains("dataset")) {
    const json& d = j["dataset"];
    check_keys(d, "dataset",
               {"source", "images", "labels", "dir", "fallback", "image_size", "channels", "classes", "noise", "subset",
                "train_extra", "public_size"});
    take(d, "source", c.dataset.source, "dataset");
    take_path(d, "images", c.dataset.images, base_dir, "dataset");
    take_path(d, "labels", c.dataset.labels, base_dir, "dataset");
    take_path(d, "dir", c.dataset.dir, base_dir, "dataset");
    take(d, "fallback", c.dataset.fallback, "dataset");
    take(d, "image_size", c.dataset.image_size, "dataset");
    take(d, "channels", c.dataset.channels, "dataset");
    take(d, "classes", c.dataset.classes, "dataset");
    take(d, "noise", c.dataset.noise, "dataset");
    take(d, "subset", c.dataset.subset, "dataset");
    take(d, "train_extra", c.train_extra, "dataset");
    take(d, "public_size", c.public_size, "dataset");
  }
  if (j.contains("model")) {
    const json& m = j["model"];
    check_keys(m, "model", {"arch", "width_scale"});
    take_enum(m, "arch", c.arch.name, arch_from_string, "model");
    take(m, "width_scale", c.arch.width_scale, "model");
  }
  if (j.contains("fed")) {
    const json& f = j["fed"];
    check_keys(f, "fed", {"clients", "rounds", "local_epochs", "local_lr", "batch_size", "dirichlet_alpha"});
    take(f, "clients", c.fed.clients, "fed");
    take(f, "rounds", c.fed.rounds, "fed");
    take(f, "local_epochs", c.fed.local_epochs, "fed");
    take(f, "local_lr", c.fed.local_lr, "fed");
    take(f, "batch_size", c.fed.batch_size, "fed");
    take(f, "dirichlet_alpha", c.dirichlet_alpha, "fed");
  }
  if (j.contains("scenario")) {
    const json& s = j["scenario"];
    check_keys(s, "scenario", {"total", "part", "mode"});
    take(s, "total", c.total, "scenario");
    take(s, "part", c.part, "scenario");
    take_enum(s, "mode", c.unlearn_mode, unlearn_mode_from_string, "scenario");
  }
  if (j.contains("attack")) {
    const json& a = j["attack"];
    check_keys(a, "attack",
               {"eta_r", "eta_f", "iterations", "optimizer", "clamp_pixels", "labels_known", "match_loss"});
    take(a, "eta_r", c.attack.eta_r, "attack");
    take(a, "eta_f", c.attack.eta_f, "attack");
    take(a, "iterations", c.attack.iterations, "attack");
    take_enum(a, "optimizer", c.attack.optimizer, optimizer_from_string, "attack");
    take(a, "clamp_pixels", c.attack.clamp_pixels, "attack");
    take(a, "labels_known", c.attack.labels_known, "attack");
    take_enum(a, "match_loss", c.attack.match_loss, match_loss_from_string, "attack");
  }
  c.arch.channels = c.dataset.channels;
  c.arch.height = c.arch.width = c.dataset.image_size;
  c.arch.num_classes = c.dataset.classes;
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_experiment_config(ss.str(), path.parent_path());
}

namespace {

json config_json(const ExperimentConfig& c) {
  json j;
  j["name"] = c.name;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir.string();
  j["modes"] = c.modes;
  json d;
  d["source"] = c.dataset.source;
  if (!c.dataset.images.empty()) d["images"] = c.dataset.images.string();
  if (!c.dataset.labels.empty()) d["labels"] = c.dataset.labels.string();
  if (!c.dataset.dir.empty()) d["dir"] = c.dataset.dir.string();
  if (!c.dataset.fallback.empty()) d["fallback"] = c.dataset.fallback;
  d["image_size"] = c.dataset.image_size;
  d["channels"] = c.dataset.channels;
  d["classes"] = c.dataset.classes;
  d["noise"] = c.dataset.noise;
  if (!c.dataset.subset.empty()) d["subset"] = c.dataset.subset;
  d["train_extra"] = c.train_extra;
  d["public_size"] = c.public_size;
  j["dataset"] = d;
  j["model"] = {{"arch", to_string(c.arch.name)}, {"width_scale", c.arch.width_scale}};
  j["fed"] = {{"clients", c.fed.clients},       {"rounds", c.fed.rounds},
              {"local_epochs", c.fed.local_epochs}, {"local_lr", c.fed.local_lr},
              {"batch_size", c.fed.batch_size}, {"dirichlet_alpha", c.dirichlet_alpha}};
  j["scenario"] = {{"total", c.total}, {"part", c.part}, {"mode", to_string(c.unlearn_mode)}};
  j["attack"] = {{"eta_r", c.attack.eta_r},
                 {"eta_f", c.attack.eta_f},
                 {"iterations", c.attack.iterations},
                 {"optimizer", to_string(c.attack.optimizer)},
                 {"clamp_pixels", c.attack.clamp_pixels},
                 {"labels_known", c.attack.labels_known},
                 {"match_loss", to_string(c.attack.match_loss)}};
  return j;
}

}  // namespace

std::string config_to_json(const ExperimentConfig& config) { return config_json(config).dump(2); }

// ---------------------------------------------------------------------------
// Data

namespace {

LabeledDataset load_source(const ExperimentConfig& c, const std::string& source, std::size_t need,
                           std::uint64_t seed) {
  const DatasetSpec& d = c.dataset;
  if (source == "synthetic_digits") return synthetic_digits(need, seed, d.image_size);
  if (source == "synthetic_blobs") {
    return synthetic_blobs(need, d.classes, Shape{d.channels, d.image_size, d.image_size}, seed, d.noise);
  }
  LabeledDataset data;
  if (source == "idx") {
    data = load_idx(d.images, d.labels);
  } else if (source == "cifar10") {
    data = load_cifar10_binary(d.dir);
  } else {
    data = load_image_dir(d.dir, d.image_size, d.channels);
  }
  const Shape want{d.channels, d.image_size, d.image_size};
  if (data.image_shape() != want) {
    throw ConfigError("dataset images are " + shape_str(data.image_shape()) + " but the config expects " +
                      shape_str(want));
  }
  if (data.num_classes > d.classes) {
    throw ConfigError("dataset has " + std::to_string(data.num_classes) + " classes, config allows " +
                      std::to_string(d.classes));
  }
  data.num_classes = d.classes;
  return data;
}

}  // namespace

ExperimentData prepare_data(const ExperimentConfig& c) {
  const RunSeeds seeds = RunSeeds::from_master(c.seed);
  const std::size_t need = c.total + c.train_extra;
  const std::string source = effective_source(c.dataset);
  if (source != c.dataset.source) {
    spdlog::warn("dataset inputs for '{}' not found ({}); falling back to {}", c.dataset.source,
                 join(missing_inputs(c.dataset), ", "), source);
  }
  ExperimentData out;
  if (is_synthetic(source)) {
    // The public pool is generated independently, so it never shares a row with training data.
    const LabeledDataset pool = load_source(c, source, need, seeds.data);
    std::vector<std::size_t> order(need);
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (!c.dataset.subset.empty()) {
      for (std::size_t i : c.dataset.subset)
        if (i >= need) throw ConfigError("dataset.subset row " + std::to_string(i) + " outside the generated data");
      std::set<std::size_t> chosen(c.dataset.subset.begin(), c.dataset.subset.end());
      order = c.dataset.subset;
      for (std::size_t i = 0; i < need; ++i)
        if (!chosen.contains(i)) order.push_back(i);
    }
    out.train = pool.subset(order);
    if (c.public_size > 0) out.public_pool = load_source(c, source, c.public_size, seeds.publ);
  } else {
    const LabeledDataset pool = load_source(c, source, 0, seeds.data);
    const std::size_t want = need + c.public_size;
    if (pool.size() < want) {
      throw ConfigError("dataset has " + std::to_string(pool.size()) + " rows; the run needs " + std::to_string(want));
    }
    std::vector<std::size_t> rest(pool.size());
    std::iota(rest.begin(), rest.end(), std::size_t{0});
    std::vector<std::size_t> order;
    if (!c.dataset.subset.empty()) {
      for (std::size_t i : c.dataset.subset)
        if (i >= pool.size()) throw ConfigError("dataset.subset row " + std::to_string(i) + " outside the dataset");
      std::set<std::size_t> chosen(c.dataset.subset.begin(), c.dataset.subset.end());
      order = c.dataset.subset;
      std::erase_if(rest, [&](std::size_t i) { return chosen.contains(i); });
    }
    Rng rng(seeds.data);
    rng.shuffle(rest);
    order.insert(order.end(), rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(want - order.size()));
    out.train = pool.subset(std::span(order).first(need));
    if (c.public_size > 0) out.public_pool = pool.subset(std::span(order).subspan(need));
  }
  out.train.name = source;
  std::vector<std::size_t> lead(c.total);
  std::iota(lead.begin(), lead.end(), std::size_t{0});
  out.full_set = out.train.subset(lead);

  std::vector<std::size_t> idx = lead;
  Rng rng(seeds.forget);
  rng.shuffle(idx);
  out.forget_indices.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(c.total - c.part));
  std::sort(out.forget_indices.begin(), out.forget_indices.end());
  return out;
}

// ---------------------------------------------------------------------------
// Run

namespace {

struct ModeSetup {
  AttackMode mode;
  InitKind init;
  bool freeze;
};

ModeSetup mode_setup(const std::string& m) {
  if (m == "dlg") return {AttackMode::dlg_baseline, InitKind::uniform_noise, true};
  if (m == "dragd") return {AttackMode::dragd, InitKind::uniform_noise, true};
  if (m == "dragdp") return {AttackMode::dragdp, InitKind::public_prior, true};
  if (m == "cpl") return {AttackMode::dragd, InitKind::cpl_tile, true};
  if (m == "dragd_nonfixed") return {AttackMode::dragd, InitKind::uniform_noise, false};
  if (m == "dragdp_nonfixed") return {AttackMode::dragdp, InitKind::public_prior, false};
  throw ConfigError("unknown mode '" + m + "'");
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  os << text;
  if (!os) throw IoError("write failed: " + path.string());
}

std::string loss_csv(const AttackState& s) {
  std::string out = "iter,loss_step1,loss_step2\n";
  const std::size_t n = std::max(s.loss_step1.size(), s.loss_step2.size());
  for (std::size_t t = 0; t < n; ++t) {
    out += std::to_string(t) + ',';
    if (t < s.loss_step1.size()) out += format_metric(s.loss_step1[t]);
    out += ',';
    if (t < s.loss_step2.size()) out += format_metric(s.loss_step2[t]);
    out += '\n';
  }
  return out;
}

void append_metrics(std::string& out, const SetScores& scores, const char* set) {
  for (std::size_t i = 0; i < scores.images.size(); ++i) {
    const ImageScore& s = scores.images[i];
    out += std::to_string(i) + ',' + set + ',' + format_metric(s.mse) + ',' + format_metric(s.psnr) + ',' +
           format_metric(s.ssim) + '\n';
  }
}

std::size_t grid_cols(std::size_t n) { return std::min<std::size_t>(n, 8); }

// Reconstructions reordered so that row i sits beside truth row i.
Tensor aligned(const Tensor& recon, const std::vector<std::size_t>& perm) {
  Tensor out(recon.shape());
  const std::size_t per = recon.row_size();
  for (std::size_t i = 0; i < perm.size(); ++i)
    std::copy_n(recon.data().begin() + static_cast<std::ptrdiff_t>(i * per), per,
                out.data().begin() + static_cast<std::ptrdiff_t>(perm[i] * per));
  return out;
}

}  // namespace

RunOutcome run_experiment(const ExperimentConfig& config) {
  config.validate();
  const RunSeeds seeds = RunSeeds::from_master(config.seed);
  // Everything that can fail on bad input happens before the first write.
  const ExperimentData data = prepare_data(config);
  data.train.validate();

  const auto t_start = std::chrono::steady_clock::now();
  FedConfig fed = config.fed;
  fed.seed = seeds.fl;
  const Model model0 = build_model(config.arch, seeds.model);
  const Partition partition = dirichlet_partition(data.train, fed.clients, config.dirichlet_alpha, seeds.partition);
  const Model theta_star = train_federated(model0, data.train, partition, fed);
  const UnlearnScenario scenario{data.full_set, data.forget_indices, config.unlearn_mode};
  const Model theta_u = unlearn(model0, theta_star, data.train, partition, scenario, fed);
  RunOutcome outcome;
  outcome.pair = capture_pair(theta_star, theta_u, scenario);
  outcome.train_accuracy = accuracy(theta_star, data.train);
  const double fl_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  spdlog::info("{}: federated training done, accuracy {:.3f} on {} rows", config.name, outcome.train_accuracy,
               data.train.size());

  const fs::path out = config.output_dir;
  const std::string ext = config.dataset.channels == 3 ? ".ppm" : ".pgm";
  fs::create_directories(out);
  save_pair(outcome.pair, scenario, fed, out / "pair");
  write_image_grid(data.full_set.images, out / ("truth" + ext), grid_cols(config.total));

  AttackConfig base = config.attack;
  base.seed = seeds.attack;
  std::optional<AttackState> step1;
  std::optional<SetScores> part_scores;
  double step1_seconds = 0.0;
  const bool any_two_stage =
      std::any_of(config.modes.begin(), config.modes.end(), [](const std::string& m) { return m != "dlg"; });
  const LabeledDataset rest = scenario.remaining();
  if (any_two_stage) {
    const auto t0 = std::chrono::steady_clock::now();
    step1 = reconstruct_remaining(outcome.pair, base, rest.labels, data.full_set.image_shape());
    step1_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    part_scores = score_reconstruction(step1->n_r, rest);
    outcome.step1 = *step1;
    outcome.rows.push_back({"Part", "part", "D_r", part_scores->mean});
    spdlog::info("{}: Step I done, D_r MSE {}", config.name, format_metric(part_scores->mean.mse));
  }

  json modes_json = json::object();
  for (const std::string& m : config.modes) {
    const ModeSetup setup = mode_setup(m);
    AttackConfig ac = base;
    ac.mode = setup.mode;
    ac.init = setup.init;
    ac.freeze_part = setup.freeze;
    const AttackResult r = run_attack(outcome.pair, ac, scenario, true, &data.public_pool,
                                      setup.mode == AttackMode::dlg_baseline ? nullptr : &*step1);
    const bool dlg = setup.mode == AttackMode::dlg_baseline;
    const fs::path dir = out / m;
    fs::create_directories(dir);
    write_text(dir / "loss.csv", loss_csv(r.state));
    std::string metrics = "index,set,mse,psnr,ssim\n";
    if (!dlg) append_metrics(metrics, *r.remaining, "D_r");
    append_metrics(metrics, *r.forgotten, dlg ? "D" : "D_f");
    write_text(dir / "metrics.csv", metrics);
    write_image_grid(aligned(r.state.n_f.images, r.forgotten->perm), dir / ("recon_f" + ext), grid_cols(r.state.n_f.size()));
    if (!dlg) {
      write_image_grid(aligned(r.state.n_r.images, r.remaining->perm), dir / ("recon_r" + ext),
                       grid_cols(r.state.n_r.size()));
    }
    outcome.rows.push_back({method_name(m), m, dlg ? "D" : "D_f", r.forgotten->mean});
    outcome.states.push_back({m, r.state});
    spdlog::info("{}: {} done, {} MSE {} SSIM {}", config.name, m, dlg ? "D" : "D_f",
                 format_metric(r.forgotten->mean.mse), format_metric(r.forgotten->mean.ssim));
    json files = {"loss.csv", "metrics.csv", "recon_f" + ext};
    if (!dlg) files.push_back("recon_r" + ext);
    modes_json[m] = {{"method", method_name(m)},
                     {"attack_mode", to_string(ac.mode)},
                     {"init", to_string(ac.init)},
                     {"freeze_part", ac.freeze_part},
                     {"files", files},
                     {"iterations_step1", dlg ? 0 : step1->loss_step1.size()},
                     {"iterations_step2", r.iterations_step2},
                     {"seconds_step2", r.seconds_step2}};
  }

  std::string summary = "method,mode,target,mse,psnr,ssim\n";
  for (const SummaryRow& row : outcome.rows) {
    summary += row.method + ',' + row.mode + ',' + row.target + ',' + format_metric(row.score.mse) + ',' +
               format_metric(row.score.psnr) + ',' + format_metric(row.score.ssim) + '\n';
  }
  write_text(out / "summary.csv", summary);

  json manifest;
  manifest["config"] = config_json(config);
  manifest["dataset_source"] = data.train.name;
  manifest["seeds"] = {{"master", config.seed},   {"data", seeds.data},         {"forget", seeds.forget},
                       {"model", seeds.model},    {"partition", seeds.partition}, {"fl", seeds.fl},
                       {"attack", seeds.attack},  {"public", seeds.publ}};
  manifest["forget_indices"] = data.forget_indices;
  manifest["train_accuracy"] = outcome.train_accuracy;
  manifest["pair"] = "pair/pair.json";
  manifest["modes"] = modes_json;
  manifest["summary"] = "summary.csv";
  manifest["timings"] = {{"federated_seconds", fl_seconds}, {"step1_seconds", step1_seconds}};
  write_text(out / "manifest.json", manifest.dump(2) + "\n");
  return outcome;
}

// ---------------------------------------------------------------------------
// Report

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

std::vector<SummaryText> read_summary(const fs::path& run_dir) {
  const fs::path path = run_dir / "summary.csv";
  std::ifstream is(path);
  if (!is) throw IoError("cannot read " + path.string());
  std::string line;
  std::getline(is, line);
  if (line != "method,mode,target,mse,psnr,ssim") throw IoError(path.string() + ": unexpected header '" + line + "'");
  std::vector<SummaryText> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 6) throw IoError(path.string() + ": malformed row '" + line + "'");
    for (std::size_t i = 3; i < 6; ++i) parse_metric(f[i]);
    rows.push_back({f[0], f[1], f[2], f[3], f[4], f[5]});
  }
  return rows;
}

std::string format_report(const fs::path& run_dir) {
  std::vector<std::string> missing;
  if (!fs::is_directory(run_dir)) throw IoError("run directory not found: " + run_dir.string());
  json manifest;
  const fs::path mpath = run_dir / "manifest.json";
  if (!fs::exists(mpath)) {
    missing.push_back("manifest.json");
  } else {
    std::ifstream is(mpath);
    try {
      manifest = json::parse(is);
    } catch (const json::exception& e) {
      throw IoError("invalid manifest " + mpath.string() + ": " + e.what());
    }
  }
  if (!fs::exists(run_dir / "summary.csv")) missing.push_back("summary.csv");
  if (manifest.contains("modes")) {
    for (const auto& [mode, info] : manifest["modes"].items()) {
      for (const auto& f : info.value("files", json::array())) {
        const std::string rel = mode + "/" + f.get<std::string>();
        if (!fs::exists(run_dir / rel)) missing.push_back(rel);
      }
    }
  }
  if (!missing.empty()) throw IoError("incomplete run in " + run_dir.string() + "; missing: " + join(missing, ", "));

  std::vector<SummaryText> rows = read_summary(run_dir);
  const std::vector<std::string> order{"DLG", "Part", "DRAGD", "DRAGDP"};
  std::stable_sort(rows.begin(), rows.end(), [&](const SummaryText& a, const SummaryText& b) {
    const auto rank = [&](const std::string& m) {
      return static_cast<std::size_t>(std::find(order.begin(), order.end(), m) - order.begin());
    };
    return rank(a.method) < rank(b.method);
  });

  std::vector<std::vector<std::string>> cells{{"Method", "Target", "MSE ↓", "PSNR ↑", "SSIM ↑"}};
  for (const auto& r : rows) cells.push_back({r.method, r.target, r.mse, r.psnr, r.ssim});
  // Column widths count code points so the arrows do not skew alignment.
  const auto width = [](const std::string& s) {
    return static_cast<std::size_t>(std::count_if(s.begin(), s.end(), [](char c) { return (c & 0xC0) != 0x80; }));
  };
  std::vector<std::size_t> w(5, 0);
  for (const auto& row : cells)
    for (std::size_t i = 0; i < 5; ++i) w[i] = std::max(w[i], width(row[i]));
  std::string out;
  if (manifest.contains("config")) out += "run: " + manifest["config"].value("name", std::string("?")) + "\n";
  for (std::size_t r = 0; r < cells.size(); ++r) {
    for (std::size_t i = 0; i < 5; ++i) {
      out += cells[r][i];
      out += i + 1 < 5 ? std::string(w[i] - width(cells[r][i]) + 2, ' ') : "\n";
    }
    if (r == 0) {
      for (std::size_t i = 0; i < 5; ++i) out += std::string(w[i], '-') + (i + 1 < 5 ? "  " : "\n");
    }
  }
  return out;
}

}  // namespace dragd
