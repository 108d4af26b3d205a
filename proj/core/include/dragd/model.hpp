#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dragd/autograd.hpp"
#include "dragd/tensor.hpp"

namespace dragd {

// ---------------------------------------------------------------------------
// Parameter layout

struct ParamSlot {
  std::string name;
  Shape shape;
  std::size_t offset = 0;
  std::size_t size() const { return shape_numel(shape); }
  friend bool operator==(const ParamSlot&, const ParamSlot&) = default;
};

/// Ordered named slices of a flat parameter vector. Offsets partition
/// [0, dim()) exactly.
class ParamLayout {
 public:
  ParamLayout() = default;
  /// Appends a slot directly after the last one.
  void append(std::string name, Shape shape);
  /// Builds from explicit slots, verifying the partition invariant.
  static ParamLayout from_slots(std::vector<ParamSlot> slots);

  std::span<const ParamSlot> slots() const noexcept { return slots_; }
  std::size_t dim() const noexcept { return dim_; }

  friend bool operator==(const ParamLayout&, const ParamLayout&) = default;

 private:
  std::vector<ParamSlot> slots_;
  std::size_t dim_ = 0;
};

/// Flat gradient (or parameter) vector annotated with its layout.
struct FlatGradient {
  std::vector<double> values;
  ParamLayout layout;
};

// ---------------------------------------------------------------------------
// Architectures

enum class Arch { mlp, lenet_small, convmini };

std::string to_string(Arch arch);
Arch arch_from_string(const std::string& name);

struct ArchSpec {
  Arch name = Arch::lenet_small;
  std::size_t channels = 1;
  std::size_t height = 28;
  std::size_t width = 28;
  std::size_t num_classes = 10;
  double width_scale = 1.0;

  Shape input_shape() const { return {channels, height, width}; }
  friend bool operator==(const ArchSpec&, const ArchSpec&) = default;
};

enum class LayerKind { conv, dense, sigmoid, relu, max_pool, avg_pool, flatten };

struct LayerDesc {
  LayerKind kind;
  std::size_t weight_slot = 0;  // conv/dense: slot of the weight; bias follows
  ag::Conv2dGeometry geometry{};
  std::size_t pool = 0;
};

/// Parameters plus the wiring that turns them into a forward map. Immutable
/// once built; two models from the same (spec, seed) are bit-identical.
struct Model {
  ArchSpec spec;
  ParamLayout layout;
  std::vector<LayerDesc> layers;
  std::vector<double> params;
  std::uint64_t seed = 0;

  /// Copy with a different parameter vector of the same layout.
  Model with_params(std::vector<double> values) const;
};

/// Wires `spec` and draws every weight and bias uniformly from
/// [-1/sqrt(fan_in), 1/sqrt(fan_in)] using `seed`.
///
///   mlp          flatten, dense(32 * scale), sigmoid, dense(classes)
///   lenet_small  three 5x5 conv layers with 12 * scale channels, strides
///                2, 2, 1 and padding 2, each followed by sigmoid, then dense
///   convmini     seven 3x3 conv layers (64 * scale channels, padding 1) with
///                ReLU and 2x2 max pools after the third and fifth, then dense
///
/// Throws ShapeError for an input shape the architecture cannot take.
Model build_model(const ArchSpec& spec, std::uint64_t seed);

/// Number of parameters `build_model(spec, ·)` produces.
std::size_t parameter_count(const ArchSpec& spec);

/// Human-readable description of each layer, recorded in model manifests.
std::vector<std::string> describe_layers(const Model& model);

/// Graph-level forward map. `params` holds one Var per layout slot.
ag::Var forward(const Model& model, std::span<const ag::Var> params, const ag::Var& inputs);

/// Logits (batch, num_classes) for inputs (batch, C, H, W).
Tensor forward(const Model& model, const Tensor& inputs);

/// Splits a flat vector into per-slot tensors.
std::vector<Tensor> unflatten(std::span<const double> values, const ParamLayout& layout);

// ---------------------------------------------------------------------------
// Serialization: little-endian u64 element count followed by raw
// little-endian doubles, plus a text manifest at `<path>.manifest`.

void write_flat_binary(const std::filesystem::path& path, std::span<const double> values);
std::vector<double> read_flat_binary(const std::filesystem::path& path);

void write_layout_manifest(const std::filesystem::path& path, const ParamLayout& layout,
                           const std::vector<std::string>& header_lines = {});
ParamLayout read_layout_manifest(const std::filesystem::path& path);

void save_model(const Model& model, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);

void save_gradient(const FlatGradient& grad, const std::filesystem::path& path);
FlatGradient load_gradient(const std::filesystem::path& path);

}  // namespace dragd
