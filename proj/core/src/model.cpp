#include "dragd/model.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <sstream>

#include "dragd/error.hpp"
#include "dragd/random.hpp"

namespace dragd {

void ParamLayout::append(std::string name, Shape shape) {
  const std::size_t n = shape_numel(shape);
  slots_.push_back({std::move(name), std::move(shape), dim_});
  dim_ += n;
}

ParamLayout ParamLayout::from_slots(std::vector<ParamSlot> slots) {
  ParamLayout out;
  for (ParamSlot& s : slots) {
    if (s.offset != out.dim_) {
      throw ShapeError("layout slot '" + s.name + "' starts at " + std::to_string(s.offset) + ", expected " +
                       std::to_string(out.dim_));
    }
    out.append(std::move(s.name), std::move(s.shape));
  }
  return out;
}

std::string to_string(Arch arch) {
  switch (arch) {
    case Arch::mlp: return "mlp";
    case Arch::lenet_small: return "lenet_small";
    case Arch::convmini: return "convmini";
  }
  return "?";
}

Arch arch_from_string(const std::string& name) {
  if (name == "mlp") return Arch::mlp;
  if (name == "lenet_small") return Arch::lenet_small;
  if (name == "convmini") return Arch::convmini;
  throw ConfigError("unknown architecture '" + name + "' (expected mlp, lenet_small or convmini)");
}

Model Model::with_params(std::vector<double> values) const {
  if (values.size() != layout.dim()) {
    throw ShapeError("parameter vector of length " + std::to_string(values.size()) + " for a model of dimension " +
                     std::to_string(layout.dim()));
  }
  Model m = *this;
  m.params = std::move(values);
  return m;
}

namespace {

std::size_t scaled(std::size_t base, double scale) {
  const auto v = static_cast<std::size_t>(std::lround(static_cast<double>(base) * scale));
  return v == 0 ? 1 : v;
}

std::size_t conv_out(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
  return (in + 2 * pad - k) / stride + 1;
}

// Builder that tracks the activation shape while appending layers.
class Wiring {
 public:
  explicit Wiring(const ArchSpec& spec) : c_(spec.channels), h_(spec.height), w_(spec.width) {}

  void conv(const std::string& name, std::size_t out, std::size_t k, std::size_t stride, std::size_t pad) {
    if (h_ + 2 * pad < k || w_ + 2 * pad < k) {
      throw ShapeError("layer " + name + ": " + std::to_string(k) + "x" + std::to_string(k) +
                       " kernel does not fit activation " + std::to_string(h_) + "x" + std::to_string(w_));
    }
    LayerDesc d{LayerKind::conv, model.layout.slots().size(), {stride, pad}, 0};
    model.layout.append(name + ".weight", {out, c_, k, k});
    model.layout.append(name + ".bias", {out});
    model.layers.push_back(d);
    fan_in_.push_back(c_ * k * k);
    fan_in_.push_back(c_ * k * k);
    c_ = out;
    h_ = conv_out(h_, k, stride, pad);
    w_ = conv_out(w_, k, stride, pad);
  }

  void dense(const std::string& name, std::size_t out) {
    if (!flat_) flatten();
    LayerDesc d{LayerKind::dense, model.layout.slots().size(), {}, 0};
    model.layout.append(name + ".weight", {out, c_});
    model.layout.append(name + ".bias", {out});
    model.layers.push_back(d);
    fan_in_.push_back(c_);
    fan_in_.push_back(c_);
    c_ = out;
  }

  void flatten() {
    model.layers.push_back({LayerKind::flatten, 0, {}, 0});
    c_ = c_ * h_ * w_;
    h_ = w_ = 1;
    flat_ = true;
  }

  void activation(LayerKind kind) { model.layers.push_back({kind, 0, {}, 0}); }

  void pool(LayerKind kind, std::size_t k) {
    model.layers.push_back({kind, 0, {}, k});
    h_ /= k;
    w_ /= k;
  }

  std::span<const std::size_t> fan_in() const { return fan_in_; }
  Model model;

 private:
  std::size_t c_, h_, w_;
  bool flat_ = false;
  std::vector<std::size_t> fan_in_;
};

Wiring wire(const ArchSpec& spec) {
  if (spec.channels == 0 || spec.height == 0 || spec.width == 0 || spec.num_classes == 0) {
    throw ShapeError("input shape " + shape_str(spec.input_shape()) + " and class count " +
                     std::to_string(spec.num_classes) + " must be positive");
  }
  if (!(spec.width_scale > 0.0)) throw ConfigError("width_scale must be positive");
  Wiring w(spec);
  switch (spec.name) {
    case Arch::mlp: {
      w.dense("fc1", scaled(32, spec.width_scale));
      w.activation(LayerKind::sigmoid);
      w.dense("fc2", spec.num_classes);
      break;
    }
    case Arch::lenet_small: {
      if (spec.height < 8 || spec.width < 8) {
        throw ShapeError("lenet_small needs inputs of at least 8x8, got " + shape_str(spec.input_shape()));
      }
      const std::size_t ch = scaled(12, spec.width_scale);
      w.conv("conv1", ch, 5, 2, 2);
      w.activation(LayerKind::sigmoid);
      w.conv("conv2", ch, 5, 2, 2);
      w.activation(LayerKind::sigmoid);
      w.conv("conv3", ch, 5, 1, 2);
      w.activation(LayerKind::sigmoid);
      w.dense("fc", spec.num_classes);
      break;
    }
    case Arch::convmini: {
      if (spec.height < 4 || spec.width < 4 || spec.height % 4 || spec.width % 4) {
        throw ShapeError("convmini needs height and width divisible by 4, got " + shape_str(spec.input_shape()));
      }
      const std::size_t ch = scaled(64, spec.width_scale);
      for (int i = 1; i <= 7; ++i) {
        w.conv("conv" + std::to_string(i), ch, 3, 1, 1);
        w.activation(LayerKind::relu);
        if (i == 3 || i == 5) w.pool(LayerKind::max_pool, 2);
      }
      w.dense("fc", spec.num_classes);
      break;
    }
  }
  w.model.spec = spec;
  return w;
}

}  // namespace

Model build_model(const ArchSpec& spec, std::uint64_t seed) {
  Wiring w = wire(spec);
  Model m = std::move(w.model);
  m.seed = seed;
  m.params.resize(m.layout.dim());
  Rng rng(seed);
  const auto fan = w.fan_in();
  for (std::size_t s = 0; s < m.layout.slots().size(); ++s) {
    const ParamSlot& slot = m.layout.slots()[s];
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan[s]));
    for (std::size_t i = 0; i < slot.size(); ++i) m.params[slot.offset + i] = rng.uniform(-bound, bound);
  }
  return m;
}

std::size_t parameter_count(const ArchSpec& spec) { return wire(spec).model.layout.dim(); }

std::vector<std::string> describe_layers(const Model& model) {
  std::vector<std::string> out;
  const auto slots = model.layout.slots();
  for (const LayerDesc& d : model.layers) {
    std::ostringstream os;
    switch (d.kind) {
      case LayerKind::conv: {
        const Shape& ws = slots[d.weight_slot].shape;
        os << "conv " << slots[d.weight_slot].name << " in=" << ws[1] << " out=" << ws[0] << " kernel=" << ws[2] << "x"
           << ws[3] << " stride=" << d.geometry.stride << " pad=" << d.geometry.pad;
        break;
      }
      case LayerKind::dense: {
        const Shape& ws = slots[d.weight_slot].shape;
        os << "dense " << slots[d.weight_slot].name << " in=" << ws[1] << " out=" << ws[0];
        break;
      }
      case LayerKind::sigmoid: os << "sigmoid"; break;
      case LayerKind::relu: os << "relu"; break;
      case LayerKind::max_pool: os << "max_pool " << d.pool << "x" << d.pool; break;
      case LayerKind::avg_pool: os << "avg_pool " << d.pool << "x" << d.pool; break;
      case LayerKind::flatten: os << "flatten"; break;
    }
    out.push_back(os.str());
  }
  return out;
}

ag::Var forward(const Model& model, std::span<const ag::Var> params, const ag::Var& inputs) {
  const Shape& in = inputs.shape();
  const Shape want = model.spec.input_shape();
  if (in.size() != 4 || in[1] != want[0] || in[2] != want[1] || in[3] != want[2]) {
    throw ShapeError("model expects inputs (batch, " + std::to_string(want[0]) + ", " + std::to_string(want[1]) + ", " +
                     std::to_string(want[2]) + "), got " + shape_str(in));
  }
  if (params.size() != model.layout.slots().size()) {
    throw ShapeError("model has " + std::to_string(model.layout.slots().size()) + " parameter tensors, got " +
                     std::to_string(params.size()));
  }
  ag::Var h = inputs;
  const std::size_t batch = in[0];
  for (const LayerDesc& d : model.layers) {
    switch (d.kind) {
      case LayerKind::conv:
        h = ag::bias_add(ag::conv2d(h, params[d.weight_slot], d.geometry), params[d.weight_slot + 1]);
        break;
      case LayerKind::dense:
        h = ag::bias_add(ag::matmul(h, params[d.weight_slot], false, true), params[d.weight_slot + 1]);
        break;
      case LayerKind::sigmoid: h = ag::sigmoid(h); break;
      case LayerKind::relu: h = ag::relu(h); break;
      case LayerKind::max_pool: h = ag::max_pool(h, d.pool); break;
      case LayerKind::avg_pool: h = ag::avg_pool(h, d.pool); break;
      case LayerKind::flatten: h = ag::reshape(h, {batch, h.value().numel() / batch}); break;
    }
  }
  return h;
}

std::vector<Tensor> unflatten(std::span<const double> values, const ParamLayout& layout) {
  if (values.size() != layout.dim()) {
    throw ShapeError("flat vector of length " + std::to_string(values.size()) + " does not match layout dimension " +
                     std::to_string(layout.dim()));
  }
  std::vector<Tensor> out;
  out.reserve(layout.slots().size());
  for (const ParamSlot& s : layout.slots()) {
    out.emplace_back(s.shape, std::vector<double>(values.begin() + static_cast<std::ptrdiff_t>(s.offset),
                                                  values.begin() + static_cast<std::ptrdiff_t>(s.offset + s.size())));
  }
  return out;
}

Tensor forward(const Model& model, const Tensor& inputs) {
  std::vector<ag::Var> params;
  for (Tensor& t : unflatten(model.params, model.layout)) params.emplace_back(std::move(t));
  return forward(model, params, ag::Var(inputs)).value();
}

// ---------------------------------------------------------------------------

namespace {

void put_u64(std::ostream& os, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 8);
}

std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

std::filesystem::path manifest_path(const std::filesystem::path& p) {
  std::filesystem::path m = p;
  m += ".manifest";
  return m;
}

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

void write_flat_binary(const std::filesystem::path& path, std::span<const double> values) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  put_u64(os, values.size());
  for (double v : values) put_u64(os, std::bit_cast<std::uint64_t>(v));
  if (!os) throw IoError("write to " + path.string() + " failed");
}

std::vector<double> read_flat_binary(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (bytes.size() < 8) throw FormatError(path.string() + ": missing element-count header", bytes.size());
  const std::uint64_t n = get_u64(bytes.data());
  if (bytes.size() != 8 + 8 * n) {
    throw FormatError(path.string() + ": header declares " + std::to_string(n) + " values but file holds " +
                          std::to_string((bytes.size() - 8) / 8),
                      bytes.size());
  }
  std::vector<double> out(n);
  for (std::uint64_t i = 0; i < n; ++i) out[i] = std::bit_cast<double>(get_u64(bytes.data() + 8 + 8 * i));
  return out;
}

void write_layout_manifest(const std::filesystem::path& path, const ParamLayout& layout,
                           const std::vector<std::string>& header_lines) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  for (const std::string& l : header_lines) os << l << '\n';
  os << "dim " << layout.dim() << '\n';
  for (const ParamSlot& s : layout.slots()) {
    os << "param " << s.name << ' ';
    for (std::size_t i = 0; i < s.shape.size(); ++i) os << (i ? "," : "") << s.shape[i];
    if (s.shape.empty()) os << "scalar";
    os << ' ' << s.offset << '\n';
  }
}

ParamLayout read_layout_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  std::vector<ParamSlot> slots;
  std::string line;
  std::size_t declared = 0;
  bool has_dim = false;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "dim") {
      ls >> declared;
      has_dim = true;
    } else if (key == "param") {
      ParamSlot s;
      std::string dims;
      ls >> s.name >> dims >> s.offset;
      if (!ls) throw IoError(path.string() + ": malformed line '" + line + "'");
      if (dims != "scalar") {
        std::istringstream ds(dims);
        std::string tok;
        while (std::getline(ds, tok, ',')) s.shape.push_back(std::stoul(tok));
      }
      slots.push_back(std::move(s));
    }
  }
  ParamLayout layout = ParamLayout::from_slots(std::move(slots));
  if (has_dim && declared != layout.dim()) {
    throw ShapeError(path.string() + ": declared dim " + std::to_string(declared) + " but slots cover " +
                     std::to_string(layout.dim()));
  }
  return layout;
}

void save_model(const Model& model, const std::filesystem::path& path) {
  write_flat_binary(path, model.params);
  const ArchSpec& s = model.spec;
  std::vector<std::string> header{
      "# dragd model parameters",
      "arch " + to_string(s.name),
      "input " + std::to_string(s.channels) + " " + std::to_string(s.height) + " " + std::to_string(s.width),
      "classes " + std::to_string(s.num_classes),
      "width_scale " + fmt_double(s.width_scale),
      "seed " + std::to_string(model.seed),
  };
  for (const std::string& l : describe_layers(model)) header.push_back("layer " + l);
  write_layout_manifest(manifest_path(path), model.layout, header);
}

Model load_model(const std::filesystem::path& path) {
  std::ifstream is(manifest_path(path));
  if (!is) throw IoError("cannot open " + manifest_path(path).string());
  ArchSpec spec;
  std::uint64_t seed = 0;
  std::string line;
  bool has_arch = false;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "arch") {
      std::string name;
      ls >> name;
      spec.name = arch_from_string(name);
      has_arch = true;
    } else if (key == "input") {
      ls >> spec.channels >> spec.height >> spec.width;
    } else if (key == "classes") {
      ls >> spec.num_classes;
    } else if (key == "width_scale") {
      ls >> spec.width_scale;
    } else if (key == "seed") {
      ls >> seed;
    }
  }
  if (!has_arch) throw IoError(manifest_path(path).string() + ": no 'arch' line");
  Model m = build_model(spec, seed);
  if (read_layout_manifest(manifest_path(path)) != m.layout) {
    throw ShapeError(manifest_path(path).string() + ": layout does not match the declared architecture");
  }
  return m.with_params(read_flat_binary(path));
}

void save_gradient(const FlatGradient& grad, const std::filesystem::path& path) {
  write_flat_binary(path, grad.values);
  write_layout_manifest(manifest_path(path), grad.layout, {"# dragd flat gradient"});
}

FlatGradient load_gradient(const std::filesystem::path& path) {
  FlatGradient g{read_flat_binary(path), read_layout_manifest(manifest_path(path))};
  if (g.values.size() != g.layout.dim()) {
    throw ShapeError(path.string() + ": " + std::to_string(g.values.size()) + " values for layout dimension " +
                     std::to_string(g.layout.dim()));
  }
  return g;
}

}  // namespace dragd
