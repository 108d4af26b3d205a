#include "dragd/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <spdlog/spdlog.h>

#include "dragd/error.hpp"

namespace dragd {
namespace fs = std::filesystem;

Shape LabeledDataset::image_shape() const {
  const Shape& s = images.shape();
  return Shape(s.begin() + 1, s.end());
}

LabeledDataset LabeledDataset::subset(std::span<const std::size_t> indices) const {
  std::vector<Tensor> rows;
  LabeledDataset out;
  out.num_classes = num_classes;
  out.name = name;
  Shape s = images.shape();
  s[0] = indices.size();
  std::vector<double> data;
  const std::size_t rs = images.row_size();
  data.reserve(indices.size() * rs);
  for (std::size_t i : indices) {
    if (i >= size()) throw ShapeError("subset index " + std::to_string(i) + " out of range for " + std::to_string(size()) + " samples");
    const auto src = images.data().subspan(i * rs, rs);
    data.insert(data.end(), src.begin(), src.end());
    out.labels.push_back(labels[i]);
  }
  out.images = Tensor(std::move(s), std::move(data));
  return out;
}

Tensor LabeledDataset::label_tensor(std::span<const std::size_t> indices) const {
  if (indices.empty()) {
    Tensor t(Shape{labels.size()});
    for (std::size_t i = 0; i < labels.size(); ++i) t[i] = labels[i];
    return t;
  }
  Tensor t(Shape{indices.size()});
  for (std::size_t i = 0; i < indices.size(); ++i) t[i] = labels.at(indices[i]);
  return t;
}

void LabeledDataset::validate() const {
  if (images.rank() != 4 || images.dim(0) != labels.size()) {
    throw ShapeError("dataset '" + name + "': images " + shape_str(images.shape()) + " vs " +
                     std::to_string(labels.size()) + " labels");
  }
  for (double v : images.data()) {
    if (!(v >= 0.0 && v <= 1.0)) throw Error("dataset '" + name + "': pixel value " + std::to_string(v) + " outside [0, 1]");
  }
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= num_classes) {
      throw Error("dataset '" + name + "': label " + std::to_string(l) + " outside [0, " + std::to_string(num_classes) + ")");
    }
  }
}

LabeledDataset concat(const LabeledDataset& a, const LabeledDataset& b) {
  if (a.size() == 0) return b;
  if (b.size() == 0) return a;
  const Tensor parts[] = {a.images, b.images};
  LabeledDataset out;
  out.images = concat_rows(parts);
  out.labels = a.labels;
  out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
  out.num_classes = std::max(a.num_classes, b.num_classes);
  out.name = a.name;
  return out;
}

std::size_t Partition::total() const {
  std::size_t n = 0;
  for (const auto& c : clients) n += c.size();
  return n;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

void write_bytes(const fs::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("write to " + path.string() + " failed");
}

std::uint32_t be32(std::span<const std::uint8_t> b, std::size_t at, const char* what) {
  if (at + 4 > b.size()) throw FormatError(std::string(what) + ": truncated header", b.size());
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) | (std::uint32_t{b[at + 2]} << 8) | b[at + 3];
}

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

std::uint8_t quantize(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

LabeledDataset parse_idx(std::span<const std::uint8_t> image_bytes, std::span<const std::uint8_t> label_bytes) {
  constexpr std::uint32_t kImageMagic = 0x00000803, kLabelMagic = 0x00000801;
  if (be32(image_bytes, 0, "idx images") != kImageMagic) throw FormatError("idx images: bad magic number", 0);
  if (be32(label_bytes, 0, "idx labels") != kLabelMagic) throw FormatError("idx labels: bad magic number", 0);
  const std::size_t n = be32(image_bytes, 4, "idx images");
  const std::size_t rows = be32(image_bytes, 8, "idx images");
  const std::size_t cols = be32(image_bytes, 12, "idx images");
  const std::size_t nl = be32(label_bytes, 4, "idx labels");
  if (n != nl) throw FormatError("idx: " + std::to_string(n) + " images but " + std::to_string(nl) + " labels", 4);
  const std::size_t need = 16 + n * rows * cols;
  if (image_bytes.size() < need) throw FormatError("idx images: truncated pixel data", image_bytes.size());
  if (label_bytes.size() < 8 + n) throw FormatError("idx labels: truncated label data", label_bytes.size());

  LabeledDataset out;
  out.name = "idx";
  Tensor images(Shape{n, 1, rows, cols});
  for (std::size_t i = 0; i < n * rows * cols; ++i) images[i] = image_bytes[16 + i] / 255.0;
  out.images = std::move(images);
  out.labels.resize(n);
  std::size_t max_label = 0;
  for (std::size_t i = 0; i < n; ++i) {
    out.labels[i] = label_bytes[8 + i];
    max_label = std::max<std::size_t>(max_label, label_bytes[8 + i]);
  }
  out.num_classes = std::max<std::size_t>(10, max_label + 1);
  return out;
}

LabeledDataset load_idx(const fs::path& images_path, const fs::path& labels_path) {
  const auto img = read_bytes(images_path);
  const auto lab = read_bytes(labels_path);
  try {
    LabeledDataset d = parse_idx(img, lab);
    d.name = images_path.filename().string();
    return d;
  } catch (const FormatError& e) {
    throw FormatError(images_path.string() + ": " + e.what(), e.offset());
  }
}

void write_idx(const LabeledDataset& data, const fs::path& images_path, const fs::path& labels_path) {
  const Shape s = data.images.shape();
  if (s.size() != 4 || s[1] != 1) throw ShapeError("write_idx expects single-channel images, got " + shape_str(s));
  std::vector<std::uint8_t> img, lab;
  put_be32(img, 0x00000803);
  put_be32(img, static_cast<std::uint32_t>(s[0]));
  put_be32(img, static_cast<std::uint32_t>(s[2]));
  put_be32(img, static_cast<std::uint32_t>(s[3]));
  for (double v : data.images.data()) img.push_back(quantize(v));
  put_be32(lab, 0x00000801);
  put_be32(lab, static_cast<std::uint32_t>(s[0]));
  for (int l : data.labels) lab.push_back(static_cast<std::uint8_t>(l));
  write_bytes(images_path, img);
  write_bytes(labels_path, lab);
}

LabeledDataset parse_cifar10_records(std::span<const std::uint8_t> bytes) {
  constexpr std::size_t kRecord = 1 + 3 * 32 * 32;
  if (bytes.empty() || bytes.size() % kRecord != 0) {
    throw FormatError("cifar-10: file is not a whole number of 3073-byte records",
                      bytes.size() - bytes.size() % kRecord);
  }
  const std::size_t n = bytes.size() / kRecord;
  LabeledDataset out;
  out.name = "cifar10";
  Tensor images(Shape{n, 3, 32, 32});
  out.labels.resize(n);
  for (std::size_t r = 0; r < n; ++r) {
    const std::uint8_t* rec = bytes.data() + r * kRecord;
    if (rec[0] > 9) throw FormatError("cifar-10: label byte " + std::to_string(rec[0]) + " out of range", r * kRecord);
    out.labels[r] = rec[0];
    for (std::size_t i = 0; i < 3072; ++i) images[r * 3072 + i] = rec[1 + i] / 255.0;
  }
  out.images = std::move(images);
  return out;
}

LabeledDataset load_cifar10_binary(const fs::path& dir) {
  static const char* kFiles[] = {"data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin",
                                 "data_batch_4.bin", "data_batch_5.bin", "test_batch.bin"};
  LabeledDataset all;
  all.name = "cifar10";
  for (const char* f : kFiles) {
    const fs::path p = dir / f;
    if (!fs::exists(p)) throw IoError("cifar-10: missing batch file " + p.string());
    const auto bytes = read_bytes(p);
    try {
      all = concat(all, parse_cifar10_records(bytes));
    } catch (const FormatError& e) {
      throw FormatError(p.string() + ": " + e.what(), e.offset());
    }
  }
  all.name = "cifar10";
  return all;
}

// ---------------------------------------------------------------------------
// PNM

namespace {

// Skips whitespace and '#' comments in a PNM header.
std::size_t skip_space(std::span<const std::uint8_t> b, std::size_t at) {
  while (at < b.size()) {
    if (b[at] == '#') {
      while (at < b.size() && b[at] != '\n') ++at;
    } else if (std::isspace(b[at])) {
      ++at;
    } else {
      break;
    }
  }
  return at;
}

std::size_t read_uint(std::span<const std::uint8_t> b, std::size_t& at) {
  at = skip_space(b, at);
  if (at >= b.size() || !std::isdigit(b[at])) throw FormatError("pnm: expected a number in the header", at);
  std::size_t v = 0;
  while (at < b.size() && std::isdigit(b[at])) v = v * 10 + (b[at++] - '0');
  return v;
}

}  // namespace

Tensor read_pnm(const fs::path& path) {
  const auto b = read_bytes(path);
  if (b.size() < 2 || b[0] != 'P' || (b[1] != '5' && b[1] != '6')) throw FormatError(path.string() + ": not a binary P5/P6 file", 0);
  const std::size_t channels = b[1] == '5' ? 1 : 3;
  std::size_t at = 2;
  const std::size_t w = read_uint(b, at), h = read_uint(b, at), maxval = read_uint(b, at);
  if (maxval == 0 || maxval > 255) throw FormatError(path.string() + ": unsupported maxval " + std::to_string(maxval), at);
  if (w == 0 || h == 0) throw FormatError(path.string() + ": empty image", at);
  ++at;  // single whitespace before raster
  if (b.size() < at + w * h * channels) throw FormatError(path.string() + ": truncated raster", b.size());
  Tensor img(Shape{channels, h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < channels; ++c)
        img[(c * h + y) * w + x] = b[at + (y * w + x) * channels + c] / static_cast<double>(maxval);
  return img;
}

void write_pnm(const Tensor& image, const fs::path& path) {
  if (image.rank() != 3 || (image.dim(0) != 1 && image.dim(0) != 3)) {
    throw ShapeError("write_pnm expects (1|3, H, W), got " + shape_str(image.shape()));
  }
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  std::string header = std::string(c == 1 ? "P5" : "P6") + "\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  std::vector<std::uint8_t> bytes(header.begin(), header.end());
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t k = 0; k < c; ++k) bytes.push_back(quantize(image[(k * h + y) * w + x]));
  write_bytes(path, bytes);
}

void write_image_grid(const Tensor& images, const fs::path& path, std::size_t cols) {
  if (images.rank() != 4 || images.dim(0) == 0) throw ShapeError("write_image_grid expects (N, C, H, W), got " + shape_str(images.shape()));
  if (cols == 0) throw ShapeError("write_image_grid: cols must be positive");
  const std::size_t n = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
  cols = std::min(cols, n);
  const std::size_t rows = (n + cols - 1) / cols;
  const std::size_t gh = rows * h + rows + 1, gw = cols * w + cols + 1;
  Tensor grid(Shape{c, gh, gw}, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t oy = 1 + (i / cols) * (h + 1), ox = 1 + (i % cols) * (w + 1);
    for (std::size_t k = 0; k < c; ++k)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
          grid[(k * gh + oy + y) * gw + ox + x] = std::clamp(images[((i * c + k) * h + y) * w + x], 0.0, 1.0);
  }
  write_pnm(grid, path);
}

Tensor resize_bilinear(const Tensor& image, std::size_t out_h, std::size_t out_w) {
  if (image.rank() != 3) throw ShapeError("resize_bilinear expects (C, H, W), got " + shape_str(image.shape()));
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (h == out_h && w == out_w) return image;
  Tensor out(Shape{c, out_h, out_w});
  const double sy = static_cast<double>(h) / static_cast<double>(out_h);
  const double sx = static_cast<double>(w) / static_cast<double>(out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(h - 1));
    const std::size_t y0 = static_cast<std::size_t>(fy), y1 = std::min(y0 + 1, h - 1);
    const double ty = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < out_w; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(w - 1));
      const std::size_t x0 = static_cast<std::size_t>(fx), x1 = std::min(x0 + 1, w - 1);
      const double tx = fx - static_cast<double>(x0);
      for (std::size_t k = 0; k < c; ++k) {
        const double* p = image.data().data() + k * h * w;
        const double top = p[y0 * w + x0] * (1 - tx) + p[y0 * w + x1] * tx;
        const double bot = p[y1 * w + x0] * (1 - tx) + p[y1 * w + x1] * tx;
        out[(k * out_h + y) * out_w + x] = top * (1 - ty) + bot * ty;
      }
    }
  }
  return out;
}

namespace {

Tensor convert_channels(const Tensor& img, std::size_t channels) {
  const std::size_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
  if (c == channels) return img;
  Tensor out(Shape{channels, h, w});
  if (c == 1) {
    for (std::size_t k = 0; k < channels; ++k)
      std::copy(img.data().begin(), img.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(k * h * w));
  } else {
    // ITU-R BT.601 luma
    for (std::size_t i = 0; i < h * w; ++i) out[i] = 0.299 * img[i] + 0.587 * img[h * w + i] + 0.114 * img[2 * h * w + i];
  }
  return out;
}

}  // namespace

LabeledDataset load_image_dir(const fs::path& dir, std::size_t target_size, std::size_t channels) {
  if (channels != 1 && channels != 3) throw ConfigError("load_image_dir: channels must be 1 or 3");
  if (!fs::is_directory(dir)) throw IoError("image directory " + dir.string() + " does not exist");
  std::vector<fs::path> classes;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory()) classes.push_back(e.path());
  std::sort(classes.begin(), classes.end());

  std::vector<Tensor> images;
  LabeledDataset out;
  out.name = dir.filename().string();
  for (std::size_t label = 0; label < classes.size(); ++label) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(classes[label]))
      if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const fs::path& f : files) {
      try {
        Tensor img = convert_channels(read_pnm(f), channels);
        images.push_back(resize_bilinear(img, target_size, target_size).reshaped({1, channels, target_size, target_size}));
        out.labels.push_back(static_cast<int>(label));
      } catch (const Error& e) {
        spdlog::warn("skipping unreadable image {}: {}", f.string(), e.what());
      }
    }
  }
  if (images.empty()) throw IoError("no readable images under " + dir.string());
  out.images = concat_rows(images);
  out.num_classes = std::max<std::size_t>(classes.size(), 1);
  return out;
}

}  // namespace dragd
