#include "e2em/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>
#include <random>

#include "binary_io.hpp"
#include "e2em/errors.hpp"

namespace e2em {

namespace {

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;
constexpr std::size_t kCifarSide = 32;
constexpr std::size_t kCifarRecord = 1 + 3 * kCifarSide * kCifarSide;

std::string hex32(std::uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "0x%08X", v);
  return buf;
}

std::uint8_t to_byte(double x) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(x, 0.0, 1.0) * 255.0));
}

}  // namespace

void Dataset::validate() const {
  if (labels.empty()) throw ValidationError("dataset '" + name + "' is empty");
  if (images.rank() != 4 || images.dim(0) != labels.size()) {
    throw ValidationError("dataset '" + name + "': images " +
                          (images.empty() ? std::string("missing") : shape_to_string(images.shape())) + " for " +
                          std::to_string(labels.size()) + " labels");
  }
  for (std::size_t y : labels) {
    if (y >= classes) throw ValidationError("dataset '" + name + "': label " + std::to_string(y) + " out of range");
  }
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out{name, images.gather_rows(indices), {}, classes};
  for (std::size_t i : indices) out.labels.push_back(labels.at(i));
  return out;
}

// ---------------------------------------------------------------------------
// IDX

Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                 std::size_t classes) {
  const auto img = io::read_file(images_path);
  io::Reader r(img, "IDX images " + images_path.string());
  const std::uint32_t magic = r.u32_be("magic");
  if (magic != kIdxImagesMagic) r.fail("bad magic " + hex32(magic) + " (expected " + hex32(kIdxImagesMagic) + ")", 0);
  const std::size_t n = r.u32_be("image count");
  const std::size_t rows = r.u32_be("row count");
  const std::size_t cols = r.u32_be("column count");
  if (n == 0 || rows == 0 || cols == 0) {
    r.fail("zero dimension (" + std::to_string(n) + "x" + std::to_string(rows) + "x" + std::to_string(cols) + ")", 4);
  }
  r.need(n * rows * cols, "pixels");
  Tensor images({n, rows, cols, 1});
  for (auto& v : images.data()) v = static_cast<double>(r.u8("pixel")) / 255.0;
  if (r.remaining() != 0) r.fail(std::to_string(r.remaining()) + " trailing bytes", r.offset());

  const auto lab = io::read_file(labels_path);
  io::Reader l(lab, "IDX labels " + labels_path.string());
  const std::uint32_t lmagic = l.u32_be("magic");
  if (lmagic != kIdxLabelsMagic) {
    l.fail("bad magic " + hex32(lmagic) + " (expected " + hex32(kIdxLabelsMagic) + ")", 0);
  }
  const std::size_t count = l.u32_be("label count");
  if (count != n) {
    l.fail("label count " + std::to_string(count) + " does not match image count " + std::to_string(n), 4);
  }
  l.need(count, "labels");
  Dataset d{images_path.stem().string(), std::move(images), {}, classes};
  d.labels.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t at = l.offset();
    const std::uint8_t y = l.u8("label");
    if (y >= classes) {
      throw ValidationError(l.what() + ": label " + std::to_string(y) + " at offset " + std::to_string(at) +
                            " out of range for " + std::to_string(classes) + " classes");
    }
    d.labels.push_back(y);
  }
  if (l.remaining() != 0) l.fail(std::to_string(l.remaining()) + " trailing bytes", l.offset());
  return d;
}

void write_idx(const Dataset& data, const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path) {
  data.validate();
  if (data.channels() != 1) throw ContractError("write_idx: IDX images are single-channel");
  io::Writer w;
  w.u32_be(kIdxImagesMagic);
  w.u32_be(static_cast<std::uint32_t>(data.size()));
  w.u32_be(static_cast<std::uint32_t>(data.height()));
  w.u32_be(static_cast<std::uint32_t>(data.width()));
  for (double v : data.images.data()) w.u8(to_byte(v));
  io::write_file(images_path, w.buffer());

  io::Writer l;
  l.u32_be(kIdxLabelsMagic);
  l.u32_be(static_cast<std::uint32_t>(data.size()));
  for (std::size_t y : data.labels) l.u8(static_cast<std::uint8_t>(y));
  io::write_file(labels_path, l.buffer());
}

// ---------------------------------------------------------------------------
// CIFAR-10

Dataset load_cifar10_binary(std::span<const std::filesystem::path> paths) {
  if (paths.empty()) throw ContractError("load_cifar10_binary: no files given");
  std::vector<std::vector<std::uint8_t>> files;
  std::size_t total = 0;
  for (const auto& p : paths) {
    files.push_back(io::read_file(p));
    const std::size_t len = files.back().size();
    if (len == 0 || len % kCifarRecord != 0) {
      throw FormatError("CIFAR-10 file " + p.string() + ": length " + std::to_string(len) +
                        " is not a positive multiple of " + std::to_string(kCifarRecord));
    }
    total += len / kCifarRecord;
  }
  constexpr std::size_t plane = kCifarSide * kCifarSide;
  Dataset d{paths[0].stem().string(), Tensor({total, kCifarSide, kCifarSide, 3}), {}, 10};
  d.labels.reserve(total);
  std::size_t sample = 0;
  for (std::size_t f = 0; f < files.size(); ++f) {
    const auto& bytes = files[f];
    for (std::size_t rec = 0; rec < bytes.size() / kCifarRecord; ++rec, ++sample) {
      const std::uint8_t* p = bytes.data() + rec * kCifarRecord;
      if (p[0] >= 10) {
        throw ValidationError("CIFAR-10 file " + paths[f].string() + ": record " + std::to_string(rec) +
                              " (offset " + std::to_string(rec * kCifarRecord) + ") has label " +
                              std::to_string(p[0]) + ", expected 0-9");
      }
      d.labels.push_back(p[0]);
      double* out = d.images.data().data() + sample * plane * 3;
      for (std::size_t px = 0; px < plane; ++px)
        for (std::size_t ch = 0; ch < 3; ++ch) out[px * 3 + ch] = static_cast<double>(p[1 + ch * plane + px]) / 255.0;
    }
  }
  return d;
}

void write_cifar10_binary(const Dataset& data, const std::filesystem::path& path) {
  data.validate();
  if (data.height() != kCifarSide || data.width() != kCifarSide || data.channels() != 3 || data.classes > 10) {
    throw ContractError("write_cifar10_binary: expects 32x32x3 images with at most 10 classes");
  }
  constexpr std::size_t plane = kCifarSide * kCifarSide;
  io::Writer w;
  for (std::size_t i = 0; i < data.size(); ++i) {
    w.u8(static_cast<std::uint8_t>(data.labels[i]));
    const double* img = data.images.data().data() + i * plane * 3;
    for (std::size_t ch = 0; ch < 3; ++ch)
      for (std::size_t px = 0; px < plane; ++px) w.u8(to_byte(img[px * 3 + ch]));
  }
  io::write_file(path, w.buffer());
}

// ---------------------------------------------------------------------------
// Splits

std::vector<std::size_t> FoldAssignment::members(std::size_t f) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < fold.size(); ++i)
    if (fold[i] == f) out.push_back(i);
  return out;
}

std::vector<std::size_t> FoldAssignment::complement(std::size_t f) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < fold.size(); ++i)
    if (fold[i] != f) out.push_back(i);
  return out;
}

FoldAssignment kfold_split(std::size_t n, std::size_t k, std::uint64_t seed) {
  if (k < 2 || k > n) {
    throw ContractError("kfold_split: need 2 <= k <= N, got k=" + std::to_string(k) + ", N=" + std::to_string(n));
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  FoldAssignment a{k, std::vector<std::size_t>(n)};
  for (std::size_t pos = 0; pos < n; ++pos) a.fold[order[pos]] = pos % k;
  return a;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> ratio_split(std::size_t n, double train_fraction,
                                                                          std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ContractError("ratio_split: fraction must lie in (0, 1)");
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
  if (n_train == 0 || n_train >= n) throw ContractError("ratio_split: both parts must be non-empty");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  return {std::vector<std::size_t>(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train)),
          std::vector<std::size_t>(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end())};
}

// ---------------------------------------------------------------------------
// Resampling

namespace {

double lerp(double a, double b, double t) { return a + (b - a) * t; }

std::size_t reflect(std::ptrdiff_t i, std::size_t n) {
  if (n == 1) return 0;
  const auto period = static_cast<std::ptrdiff_t>(2 * n);
  std::ptrdiff_t m = i % period;
  if (m < 0) m += period;
  if (m >= static_cast<std::ptrdiff_t>(n)) m = period - 1 - m;
  return static_cast<std::size_t>(m);
}

/// Bilinear sample of an [H x W x ch] image at fractional (y, x) with
/// reflect padding, written into `out` (ch values).
void sample_bilinear(const double* img, std::size_t h, std::size_t w, std::size_t ch, double y, double x, double* out) {
  const double fy0 = std::floor(y), fx0 = std::floor(x);
  const double ty = y - fy0, tx = x - fx0;
  const auto y0 = static_cast<std::ptrdiff_t>(fy0), x0 = static_cast<std::ptrdiff_t>(fx0);
  const std::size_t ya = reflect(y0, h), yb = reflect(y0 + 1, h);
  const std::size_t xa = reflect(x0, w), xb = reflect(x0 + 1, w);
  for (std::size_t c = 0; c < ch; ++c) {
    const double top = lerp(img[(ya * w + xa) * ch + c], img[(ya * w + xb) * ch + c], tx);
    const double bottom = lerp(img[(yb * w + xa) * ch + c], img[(yb * w + xb) * ch + c], tx);
    out[c] = lerp(top, bottom, ty);
  }
}

void require_image(std::string_view op, const Tensor& image) {
  if (image.rank() != 3) {
    throw DimensionError(std::string(op) + ": expected one image [H x W x ch], got " + shape_to_string(image.shape()));
  }
}

void require_batch(std::string_view op, const Tensor& images) {
  if (images.rank() != 4) {
    throw DimensionError(std::string(op) + ": expected images [b x H x W x ch], got " + shape_to_string(images.shape()));
  }
}

}  // namespace

Tensor upsample(const Tensor& images, std::size_t height, std::size_t width, Resample method) {
  require_batch("upsample", images);
  const std::size_t b = images.dim(0), h = images.dim(1), w = images.dim(2), ch = images.dim(3);
  if (height < h || width < w) {
    throw ContractError("upsample: target " + std::to_string(height) + "x" + std::to_string(width) +
                        " is smaller than source " + std::to_string(h) + "x" + std::to_string(w));
  }
  if (height == h && width == w) return images;
  Tensor out({b, height, width, ch});
  const double* src = images.data().data();
  double* dst = out.data().data();
  auto coord = [](std::size_t o, std::size_t in, std::size_t outn) {
    return outn == 1 ? 0.0 : static_cast<double>(o) * static_cast<double>(in - 1) / static_cast<double>(outn - 1);
  };
  for (std::size_t n = 0; n < b; ++n) {
    const double* img = src + n * h * w * ch;
    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t x = 0; x < width; ++x) {
        double* o = dst + ((n * height + y) * width + x) * ch;
        if (method == Resample::Nearest) {
          const std::size_t sy = y * h / height, sx = x * w / width;
          for (std::size_t c = 0; c < ch; ++c) o[c] = img[(sy * w + sx) * ch + c];
          continue;
        }
        const double fy = coord(y, h, height), fx = coord(x, w, width);
        const auto y0 = static_cast<std::size_t>(fy), x0 = static_cast<std::size_t>(fx);
        const std::size_t y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
        const double ty = fy - static_cast<double>(y0), tx = fx - static_cast<double>(x0);
        for (std::size_t c = 0; c < ch; ++c) {
          const double top = lerp(img[(y0 * w + x0) * ch + c], img[(y0 * w + x1) * ch + c], tx);
          const double bottom = lerp(img[(y1 * w + x0) * ch + c], img[(y1 * w + x1) * ch + c], tx);
          o[c] = lerp(top, bottom, ty);
        }
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Augmentation

void AugmentConfig::validate() const {
  for (double v : {rotation_deg, width_shift, height_shift, shear, zoom, channel_shift}) {
    if (!(v >= 0.0)) throw ConfigError("augment: ranges must be non-negative");
  }
  if (zoom >= 1.0) throw ConfigError("augment: zoom range must be below 1");
  if (crops == 0) throw ConfigError("augment: crop count must be at least 1");
  if (crop == 0 || crop > pre_crop) throw ConfigError("augment: crop resolution must lie in [1, pre-crop resolution]");
}

AugmentConfig AugmentConfig::none() {
  AugmentConfig c;
  c.rotation_deg = c.width_shift = c.height_shift = c.shear = c.zoom = c.channel_shift = 0.0;
  c.horizontal_flip = c.vertical_flip = false;
  return c;
}

Tensor apply_affine(const Tensor& image, const AffineParams& p) {
  require_image("apply_affine", image);
  if (!(p.zoom_x > 0.0 && p.zoom_y > 0.0)) throw ContractError("apply_affine: zoom must be positive");
  const std::size_t h = image.dim(0), w = image.dim(1), ch = image.dim(2);
  const double th = p.rotation_deg * std::numbers::pi / 180.0;
  const double cs = std::cos(th), sn = std::sin(th);
  // Forward map M = R * Shear * Zoom acting on (x, y) about the centre.
  const double m00 = cs * p.zoom_x, m01 = (cs * p.shear - sn) * p.zoom_y;
  const double m10 = sn * p.zoom_x, m11 = (sn * p.shear + cs) * p.zoom_y;
  const double det = m00 * m11 - m01 * m10;
  const double i00 = m11 / det, i01 = -m01 / det, i10 = -m10 / det, i11 = m00 / det;
  const double cy = (static_cast<double>(h) - 1.0) / 2.0, cx = (static_cast<double>(w) - 1.0) / 2.0;

  Tensor out({h, w, ch});
  const double* src = image.data().data();
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double dx = static_cast<double>(x) - cx - p.shift_x;
      const double dy = static_cast<double>(y) - cy - p.shift_y;
      const double sx = i00 * dx + i01 * dy + cx;
      const double sy = i10 * dx + i11 * dy + cy;
      sample_bilinear(src, h, w, ch, sy, sx, out.data().data() + (y * w + x) * ch);
    }
  }
  return out;
}

Tensor geometric_augment(const Tensor& image, const AugmentConfig& cfg, Rng& rng) {
  require_image("geometric_augment", image);
  cfg.validate();
  const std::size_t h = image.dim(0), w = image.dim(1), ch = image.dim(2);
  auto uniform = [&](double range) {
    if (range == 0.0) return 0.0;
    return std::uniform_real_distribution<double>(-range, range)(rng);
  };
  AffineParams p;
  p.rotation_deg = uniform(cfg.rotation_deg);
  p.shift_x = uniform(cfg.width_shift) * static_cast<double>(w);
  p.shift_y = uniform(cfg.height_shift) * static_cast<double>(h);
  p.shear = uniform(cfg.shear);
  p.zoom_x = 1.0 + uniform(cfg.zoom);
  p.zoom_y = 1.0 + uniform(cfg.zoom);
  const bool identity = p.rotation_deg == 0.0 && p.shift_x == 0.0 && p.shift_y == 0.0 && p.shear == 0.0 &&
                        p.zoom_x == 1.0 && p.zoom_y == 1.0;
  Tensor out = identity ? image : apply_affine(image, p);

  std::bernoulli_distribution coin(0.5);
  if (cfg.horizontal_flip && coin(rng)) {
    Tensor f = out;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        for (std::size_t c = 0; c < ch; ++c) f[(y * w + x) * ch + c] = out[(y * w + (w - 1 - x)) * ch + c];
    out = std::move(f);
  }
  if (cfg.vertical_flip && coin(rng)) {
    Tensor f = out;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        for (std::size_t c = 0; c < ch; ++c) f[(y * w + x) * ch + c] = out[((h - 1 - y) * w + x) * ch + c];
    out = std::move(f);
  }
  if (cfg.channel_shift > 0.0) {
    for (std::size_t c = 0; c < ch; ++c) {
      const double shift = uniform(cfg.channel_shift);
      for (std::size_t px = 0; px < h * w; ++px) out[px * ch + c] += shift;
    }
  }
  for (auto& v : out.data()) v = std::clamp(v, 0.0, 1.0);
  return out;
}

Tensor augment_batch(const Tensor& images, const AugmentConfig& cfg, Rng& rng) {
  require_batch("augment_batch", images);
  Tensor out(images.shape());
  const Shape one{images.dim(1), images.dim(2), images.dim(3)};
  const std::size_t stride = images.row_width();
  for (std::size_t i = 0; i < images.dim(0); ++i) {
    const Tensor aug = geometric_augment(images.rows(i, i + 1).reshaped(one), cfg, rng);
    std::copy(aug.data().begin(), aug.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(i * stride));
  }
  return out;
}

Tensor random_crop(const Tensor& image, std::size_t height, std::size_t width, Rng& rng) {
  require_image("random_crop", image);
  const std::size_t h = image.dim(0), w = image.dim(1), ch = image.dim(2);
  if (height == 0 || width == 0 || height > h || width > w) {
    throw ContractError("random_crop: crop " + std::to_string(height) + "x" + std::to_string(width) +
                        " does not fit image " + std::to_string(h) + "x" + std::to_string(w));
  }
  const std::size_t oy = std::uniform_int_distribution<std::size_t>(0, h - height)(rng);
  const std::size_t ox = std::uniform_int_distribution<std::size_t>(0, w - width)(rng);
  Tensor out({height, width, ch});
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x)
      for (std::size_t c = 0; c < ch; ++c) out[(y * width + x) * ch + c] = image[((oy + y) * w + ox + x) * ch + c];
  return out;
}

Tensor single_pass_predict(const Classifier& model, const Tensor& images, const AugmentConfig& cfg) {
  require_batch("single_pass_predict", images);
  return model.predict(upsample(images, cfg.crop, cfg.crop));
}

Tensor tta_predict(const Classifier& model, const Tensor& images, const AugmentConfig& cfg, Rng& rng) {
  require_batch("tta_predict", images);
  cfg.validate();
  if (cfg.crops == 1) return single_pass_predict(model, images, cfg);
  if (cfg.pre_crop < images.dim(1) || cfg.pre_crop < images.dim(2)) {
    throw ContractError("tta_predict: pre-crop resolution " + std::to_string(cfg.pre_crop) +
                        " is smaller than the images");
  }
  const std::size_t b = images.dim(0), ch = images.dim(3);
  const Tensor big = upsample(images, cfg.pre_crop, cfg.pre_crop);
  const Shape one{cfg.pre_crop, cfg.pre_crop, ch};
  const std::size_t crop_size = cfg.crop * cfg.crop * ch;
  std::vector<Tensor> crops(cfg.crops, Tensor({b, cfg.crop, cfg.crop, ch}));
  for (std::size_t i = 0; i < b; ++i) {
    const Tensor img = big.rows(i, i + 1).reshaped(one);
    for (std::size_t j = 0; j < cfg.crops; ++j) {
      const Tensor c = random_crop(img, cfg.crop, cfg.crop, rng);
      std::copy(c.data().begin(), c.data().end(), crops[j].data().begin() + static_cast<std::ptrdiff_t>(i * crop_size));
    }
  }
  // Running mean, so identical crop predictions average to themselves exactly.
  Tensor mean;
  for (std::size_t j = 0; j < crops.size(); ++j) {
    const Tensor p = model.predict(crops[j]);
    if (j == 0) {
      mean = p;
      continue;
    }
    for (std::size_t k = 0; k < p.size(); ++k) mean[k] += (p[k] - mean[k]) / static_cast<double>(j + 1);
  }
  return mean;
}

Tensor random_crop_tta(const Classifier& model, const Tensor& image, const AugmentConfig& cfg, Rng& rng) {
  require_image("random_crop_tta", image);
  Shape batched{1};
  batched.insert(batched.end(), image.shape().begin(), image.shape().end());
  const Tensor p = tta_predict(model, image.reshaped(batched), cfg, rng);
  return p.reshaped({p.size()});
}

// ---------------------------------------------------------------------------
// Synthetic data

Dataset make_synthetic_dataset(const SyntheticConfig& cfg) {
  if (cfg.samples == 0 || cfg.classes < 2 || cfg.height == 0 || cfg.width == 0 || cfg.channels == 0 ||
      cfg.blobs_per_class == 0) {
    throw ConfigError("synthetic dataset: sizes must be positive and classes at least 2");
  }
  struct Blob {
    double y, x, radius;
    std::vector<double> colour;
  };
  const double h = static_cast<double>(cfg.height), w = static_cast<double>(cfg.width);
  Rng pattern_rng(cfg.pattern_seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<std::vector<Blob>> prototypes(cfg.classes);
  for (auto& blobs : prototypes) {
    for (std::size_t k = 0; k < cfg.blobs_per_class; ++k) {
      Blob b{0.15 * h + 0.7 * h * unit(pattern_rng), 0.15 * w + 0.7 * w * unit(pattern_rng),
             0.08 * std::min(h, w) + 0.12 * std::min(h, w) * unit(pattern_rng), {}};
      for (std::size_t c = 0; c < cfg.channels; ++c) b.colour.push_back(0.4 + 0.6 * unit(pattern_rng));
      blobs.push_back(std::move(b));
    }
  }

  Rng rng(cfg.seed);
  std::uniform_real_distribution<double> jitter(-cfg.jitter, cfg.jitter);
  std::uniform_real_distribution<double> brightness(0.7, 1.0);
  std::normal_distribution<double> noise(0.0, cfg.noise);
  Dataset d{"synthetic", Tensor({cfg.samples, cfg.height, cfg.width, cfg.channels}), {}, cfg.classes};
  for (std::size_t i = 0; i < cfg.samples; ++i) {
    const std::size_t label = std::uniform_int_distribution<std::size_t>(0, cfg.classes - 1)(rng);
    d.labels.push_back(label);
    const double dy = jitter(rng), dx = jitter(rng), gain = brightness(rng);
    double* img = d.images.data().data() + i * cfg.height * cfg.width * cfg.channels;
    for (std::size_t y = 0; y < cfg.height; ++y) {
      for (std::size_t x = 0; x < cfg.width; ++x) {
        for (std::size_t c = 0; c < cfg.channels; ++c) {
          double v = 0.0;
          for (const Blob& b : prototypes[label]) {
            const double ry = (static_cast<double>(y) - b.y - dy) / b.radius;
            const double rx = (static_cast<double>(x) - b.x - dx) / b.radius;
            v += gain * b.colour[c] * std::exp(-0.5 * (ry * ry + rx * rx));
          }
          if (cfg.noise > 0.0) v += noise(rng);
          img[(y * cfg.width + x) * cfg.channels + c] = std::clamp(v, 0.0, 1.0);
        }
      }
    }
  }
  return d;
}

}  // namespace e2em
