#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "e2em/data.hpp"
#include "e2em/errors.hpp"
#include "e2em/ops.hpp"
#include "oracles.hpp"

using namespace e2em;
using oracle::random_tensor;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("e2em_data_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_bytes(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void push_be(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 3; i >= 0; --i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::vector<std::uint8_t> idx_images(std::uint32_t n, std::uint32_t rows, std::uint32_t cols, std::uint8_t fill = 0) {
  std::vector<std::uint8_t> b;
  push_be(b, 0x803);
  push_be(b, n);
  push_be(b, rows);
  push_be(b, cols);
  b.insert(b.end(), std::size_t{n} * rows * cols, fill);
  return b;
}

std::vector<std::uint8_t> idx_labels(std::uint32_t n, std::uint8_t label = 0) {
  std::vector<std::uint8_t> b;
  push_be(b, 0x801);
  push_be(b, n);
  b.insert(b.end(), n, label);
  return b;
}

template <class E, class F>
std::string error_of(F&& f) {
  try {
    f();
  } catch (const E& e) {
    return e.what();
  }
  ADD_FAILURE() << "expected exception";
  return {};
}

Tensor image_hw(std::size_t h, std::size_t w, std::initializer_list<double> values) {
  return Tensor({h, w, 1}, std::vector<double>(values));
}

/// Global average pool followed by a dense softmax layer.
class PoolClassifier final : public Classifier {
 public:
  PoolClassifier(std::size_t channels, std::size_t classes, Rng& rng) : classes_(classes) {
    params_.add("w", random_tensor({channels, classes}, rng, -2.0, 2.0));
  }
  ParameterSet& parameters() override { return params_; }
  const ParameterSet& parameters() const override { return params_; }
  std::size_t classes() const override { return classes_; }
  Var forward(Tape& tape, std::span<const Var> params, const Tensor& inputs, Mode, Rng&) const override {
    return softmax_rows(matmul(global_avg_pool(tape.constant(inputs)), params[0]));
  }

 private:
  ParameterSet params_;
  std::size_t classes_;
};

}  // namespace

// ---------------------------------------------------------------------------
// IDX

TEST(Idx, OneSampleHasExpectedShape) {
  const auto dir = temp_dir("idx_one");
  auto img = idx_images(1, 28, 28);
  img[16] = 255;
  write_bytes(dir / "img", img);
  write_bytes(dir / "lbl", idx_labels(1, 7));
  const Dataset d = load_idx(dir / "img", dir / "lbl");
  EXPECT_EQ(d.images.shape(), (Shape{1, 28, 28, 1}));
  EXPECT_EQ(d.labels, std::vector<std::size_t>{7});
  EXPECT_EQ(d.classes, 10u);
  EXPECT_EQ(d.images[0], 1.0);
  EXPECT_EQ(d.images[1], 0.0);
}

TEST(Idx, LabelCountMismatchNamesBothCounts) {
  const auto dir = temp_dir("idx_count");
  write_bytes(dir / "img", idx_images(3, 2, 2));
  write_bytes(dir / "lbl", idx_labels(4));
  const std::string msg = error_of<FormatError>([&] { load_idx(dir / "img", dir / "lbl"); });
  EXPECT_NE(msg.find('3'), std::string::npos) << msg;
  EXPECT_NE(msg.find('4'), std::string::npos) << msg;
  EXPECT_NE(msg.find("count"), std::string::npos) << msg;
}

TEST(Idx, RejectsBadMagicTruncationAndTrailingBytes) {
  const auto dir = temp_dir("idx_bad");
  write_bytes(dir / "lbl", idx_labels(2));

  auto swapped = idx_images(2, 2, 2);
  swapped[3] = 0x01;
  write_bytes(dir / "img", swapped);
  EXPECT_NE(error_of<FormatError>([&] { load_idx(dir / "img", dir / "lbl"); }).find("magic"), std::string::npos);

  auto truncated = idx_images(2, 2, 2);
  truncated.pop_back();
  write_bytes(dir / "img", truncated);
  const std::string msg = error_of<FormatError>([&] { load_idx(dir / "img", dir / "lbl"); });
  EXPECT_NE(msg.find("truncated"), std::string::npos) << msg;
  EXPECT_NE(msg.find("expected 24 bytes, file has 23"), std::string::npos) << msg;

  auto trailing = idx_images(2, 2, 2);
  trailing.push_back(0);
  write_bytes(dir / "img", trailing);
  EXPECT_THROW(load_idx(dir / "img", dir / "lbl"), FormatError);

  write_bytes(dir / "img", idx_images(2, 2, 2));
  write_bytes(dir / "lbl", idx_images(2, 2, 2));
  EXPECT_THROW(load_idx(dir / "img", dir / "lbl"), FormatError);
}

TEST(Idx, LabelOutOfRangeIsValidationError) {
  const auto dir = temp_dir("idx_label");
  write_bytes(dir / "img", idx_images(2, 2, 2));
  write_bytes(dir / "lbl", idx_labels(2, 10));
  EXPECT_THROW(load_idx(dir / "img", dir / "lbl"), ValidationError);
  EXPECT_NO_THROW(load_idx(dir / "img", dir / "lbl", 11));
}

TEST(Idx, MissingFileIsFormatError) {
  const auto dir = temp_dir("idx_missing");
  EXPECT_THROW(load_idx(dir / "nope", dir / "nope2"), FormatError);
}

TEST(Idx, RoundTripPreservesBytes) {
  Rng rng(3);
  Dataset d{"rt", Tensor({5, 4, 3, 1}), {0, 1, 2, 9, 4}, 10};
  std::uniform_int_distribution<int> byte(0, 255);
  for (auto& v : d.images.data()) v = byte(rng) / 255.0;
  const auto dir = temp_dir("idx_rt");
  write_idx(d, dir / "img", dir / "lbl");
  const Dataset back = load_idx(dir / "img", dir / "lbl");
  EXPECT_EQ(back.labels, d.labels);
  EXPECT_EQ(back.images.shape(), d.images.shape());
  EXPECT_LT(max_abs_diff(back.images, d.images), 1e-15);
  write_idx(back, dir / "img2", dir / "lbl2");
  EXPECT_EQ(read_bytes(dir / "img"), read_bytes(dir / "img2"));
  EXPECT_EQ(read_bytes(dir / "lbl"), read_bytes(dir / "lbl2"));
}

// ---------------------------------------------------------------------------
// CIFAR-10

TEST(Cifar, ZeroRecordGivesZeroImage) {
  const auto dir = temp_dir("cifar_zero");
  write_bytes(dir / "b.bin", std::vector<std::uint8_t>(3073, 0));
  const fs::path paths[] = {dir / "b.bin"};
  const Dataset d = load_cifar10_binary(paths);
  EXPECT_EQ(d.images.shape(), (Shape{1, 32, 32, 3}));
  EXPECT_EQ(d.labels, std::vector<std::size_t>{0});
  EXPECT_EQ(d.classes, 10u);
  for (double v : d.images.data()) EXPECT_EQ(v, 0.0);
}

TEST(Cifar, ChannelPlanarPixelsBecomeInterleaved) {
  const auto dir = temp_dir("cifar_layout");
  std::vector<std::uint8_t> rec(3073);
  rec[0] = 6;
  for (std::size_t i = 1; i < rec.size(); ++i) rec[i] = static_cast<std::uint8_t>((i * 7) % 256);
  write_bytes(dir / "b.bin", rec);
  const fs::path paths[] = {dir / "b.bin"};
  const Dataset d = load_cifar10_binary(paths);
  EXPECT_EQ(d.labels[0], 6u);
  for (std::size_t y = 0; y < 32; ++y)
    for (std::size_t x = 0; x < 32; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        ASSERT_EQ(d.images[(y * 32 + x) * 3 + c], rec[1 + c * 1024 + y * 32 + x] / 255.0);
}

TEST(Cifar, RejectsBadLengthAndLabel) {
  const auto dir = temp_dir("cifar_bad");
  write_bytes(dir / "short.bin", std::vector<std::uint8_t>(3072, 0));
  const fs::path short_path[] = {dir / "short.bin"};
  EXPECT_NE(error_of<FormatError>([&] { load_cifar10_binary(short_path); }).find("3073"), std::string::npos);

  std::vector<std::uint8_t> two(2 * 3073, 0);
  two[3073] = 10;
  write_bytes(dir / "label.bin", two);
  const fs::path label_path[] = {dir / "label.bin"};
  const std::string msg = error_of<ValidationError>([&] { load_cifar10_binary(label_path); });
  EXPECT_NE(msg.find("record 1"), std::string::npos) << msg;
}

TEST(Cifar, ConcatenatesBatchesAndRoundTrips) {
  Rng rng(5);
  Dataset d{"c", Tensor({3, 32, 32, 3}), {1, 9, 0}, 10};
  std::uniform_int_distribution<int> byte(0, 255);
  for (auto& v : d.images.data()) v = byte(rng) / 255.0;
  const auto dir = temp_dir("cifar_rt");
  write_cifar10_binary(d, dir / "a.bin");
  write_cifar10_binary(d.subset(std::vector<std::size_t>{2}), dir / "b.bin");
  const fs::path paths[] = {dir / "a.bin", dir / "b.bin"};
  const Dataset back = load_cifar10_binary(paths);
  EXPECT_EQ(back.labels, (std::vector<std::size_t>{1, 9, 0, 0}));
  EXPECT_LT(max_abs_diff(back.images.rows(0, 3), d.images), 1e-15);
  EXPECT_EQ(back.images.rows(3, 4), d.images.rows(2, 3));
}

// ---------------------------------------------------------------------------
// Splits

TEST(KFold, EvenAndRemainderSizes) {
  auto sizes = [](const FoldAssignment& a) {
    std::vector<std::size_t> s;
    for (std::size_t f = 0; f < a.k; ++f) s.push_back(a.members(f).size());
    std::sort(s.rbegin(), s.rend());
    return s;
  };
  EXPECT_EQ(sizes(kfold_split(10, 5, 1)), (std::vector<std::size_t>{2, 2, 2, 2, 2}));
  EXPECT_EQ(sizes(kfold_split(11, 5, 1)), (std::vector<std::size_t>{3, 2, 2, 2, 2}));
}

TEST(KFold, SameSeedSameAssignment) {
  EXPECT_EQ(kfold_split(100, 5, 42).fold, kfold_split(100, 5, 42).fold);
  EXPECT_NE(kfold_split(100, 5, 42).fold, kfold_split(100, 5, 43).fold);
}

TEST(KFold, InvalidKIsContractError) {
  EXPECT_THROW(kfold_split(4, 5, 0), ContractError);
  EXPECT_THROW(kfold_split(4, 1, 0), ContractError);
  EXPECT_NO_THROW(kfold_split(4, 4, 0));
}

TEST(KFold, PartitionPropertyOverRandomSizes) {
  Rng rng(11);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = std::uniform_int_distribution<std::size_t>(2, 60)(rng);
    const std::size_t k = std::uniform_int_distribution<std::size_t>(2, n)(rng);
    const FoldAssignment a = kfold_split(n, k, rng());
    ASSERT_EQ(a.fold.size(), n);
    std::vector<int> seen(n, 0);
    std::size_t lo = n, hi = 0;
    for (std::size_t f = 0; f < k; ++f) {
      const auto m = a.members(f);
      lo = std::min(lo, m.size());
      hi = std::max(hi, m.size());
      for (std::size_t i : m) ++seen[i];
      const auto comp = a.complement(f);
      ASSERT_EQ(m.size() + comp.size(), n);
    }
    ASSERT_TRUE(std::all_of(seen.begin(), seen.end(), [](int s) { return s == 1; }));
    ASSERT_LE(hi - lo, 1u);
  }
}

TEST(RatioSplit, DisjointCover) {
  const auto [train, val] = ratio_split(50, 0.8, 9);
  EXPECT_EQ(train.size(), 40u);
  EXPECT_EQ(val.size(), 10u);
  std::set<std::size_t> all(train.begin(), train.end());
  all.insert(val.begin(), val.end());
  EXPECT_EQ(all.size(), 50u);
  EXPECT_THROW(ratio_split(50, 1.0, 9), ContractError);
  EXPECT_THROW(ratio_split(2, 0.1, 9), ContractError);
}

// ---------------------------------------------------------------------------
// Upsampling

TEST(Upsample, NearestDuplicatesIntoBlocks) {
  const Tensor src({1, 2, 2, 1}, std::vector<double>{1, 2, 3, 4});
  const Tensor out = upsample(src, 4, 4, Resample::Nearest);
  const std::vector<double> expected{1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4};
  EXPECT_EQ(out.values(), expected);
}

TEST(Upsample, IdentitySizeAndConstantImages) {
  Rng rng(2);
  const Tensor src = random_tensor({2, 3, 4, 2}, rng, 0.0, 1.0);
  EXPECT_EQ(upsample(src, 3, 4), src);
  EXPECT_EQ(upsample(src, 3, 4, Resample::Nearest), src);
  const Tensor c({1, 5, 3, 3}, 0.37);
  for (auto method : {Resample::Nearest, Resample::Bilinear}) {
    const Tensor big = upsample(c, 17, 23, method);
    EXPECT_EQ(big.shape(), (Shape{1, 17, 23, 3}));
    for (double v : big.data()) ASSERT_EQ(v, 0.37);
  }
}

TEST(Upsample, BilinearMatchesWeightedOracle) {
  Rng rng(4);
  const std::size_t h = 3, w = 4, H = 7, W = 9;
  const Tensor src = random_tensor({1, h, w, 1}, rng, 0.0, 1.0);
  const Tensor out = upsample(src, H, W);
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      const double fy = y * (h - 1.0) / (H - 1.0), fx = x * (w - 1.0) / (W - 1.0);
      double expected = 0.0;
      for (std::size_t sy = 0; sy < h; ++sy)
        for (std::size_t sx = 0; sx < w; ++sx) {
          const double wy = std::max(0.0, 1.0 - std::abs(fy - sy)), wx = std::max(0.0, 1.0 - std::abs(fx - sx));
          expected += wy * wx * src[sy * w + sx];
        }
      ASSERT_NEAR(out[y * W + x], expected, 1e-12);
    }
  }
  EXPECT_EQ(out[0], src[0]);
  EXPECT_EQ(out[H * W - 1], src[h * w - 1]);
}

TEST(Upsample, DownscaleIsContractError) {
  EXPECT_THROW(upsample(Tensor({1, 4, 4, 1}), 3, 4), ContractError);
  EXPECT_THROW(upsample(Tensor({4, 4, 1}), 8, 8), DimensionError);
}

// ---------------------------------------------------------------------------
// Affine warps and augmentation

TEST(Affine, IdentityParamsReturnImage) {
  Rng rng(6);
  const Tensor img = random_tensor({5, 7, 2}, rng, 0.0, 1.0);
  EXPECT_LT(max_abs_diff(apply_affine(img, {}), img), 1e-15);
}

TEST(Affine, FullTurnIsIdentity) {
  Rng rng(7);
  const Tensor img = random_tensor({9, 11, 3}, rng, 0.0, 1.0);
  AffineParams p;
  p.rotation_deg = 360.0;
  EXPECT_LT(max_abs_diff(apply_affine(img, p), img), 1e-6);
}

TEST(Affine, QuarterTurnPermutesPixels) {
  Rng rng(8);
  const std::size_t n = 6;
  const Tensor img = random_tensor({n, n, 1}, rng, 0.0, 1.0);
  AffineParams p;
  p.rotation_deg = 90.0;
  const Tensor out = apply_affine(img, p);
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) ASSERT_NEAR(out[y * n + x], img[(n - 1 - x) * n + y], 1e-12);
}

TEST(Affine, IntegerShiftUsesReflectPadding) {
  const Tensor img = image_hw(1, 4, {1, 2, 3, 4});
  AffineParams p;
  p.shift_x = 2.0;
  // out[x] = in[x - 2] with reflection: in[-2] = in[1], in[-1] = in[0].
  const Tensor out = apply_affine(img, p);
  const std::vector<double> expected{2, 1, 1, 2};
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(out[i], expected[i], 1e-12);
}

TEST(Affine, ZoomMagnifiesAboutCentre) {
  const Tensor img = image_hw(1, 5, {0, 1, 2, 3, 4});
  AffineParams p;
  p.zoom_x = 2.0;
  const Tensor out = apply_affine(img, p);
  const std::vector<double> expected{1, 1.5, 2, 2.5, 3};
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(out[i], expected[i], 1e-12);
}

TEST(Augment, NoneIsIdentity) {
  Rng rng(9);
  const Tensor img = random_tensor({6, 6, 3}, rng, 0.0, 1.0);
  for (int i = 0; i < 5; ++i) EXPECT_EQ(geometric_augment(img, AugmentConfig::none(), rng), img);
}

TEST(Augment, HorizontalFlipSwapsColumns) {
  const Tensor img = image_hw(1, 2, {0.25, 0.75});
  AugmentConfig cfg = AugmentConfig::none();
  cfg.horizontal_flip = true;
  const Tensor flipped = image_hw(1, 2, {0.75, 0.25});
  int flips = 0, keeps = 0;
  Rng rng(10);
  for (int i = 0; i < 64; ++i) {
    const Tensor out = geometric_augment(img, cfg, rng);
    if (out == flipped) {
      ++flips;
    } else {
      ASSERT_EQ(out, img);
      ++keeps;
    }
  }
  EXPECT_GT(flips, 0);
  EXPECT_GT(keeps, 0);
}

TEST(Augment, VerticalFlipSwapsRows) {
  const Tensor img = image_hw(2, 1, {0.25, 0.75});
  AugmentConfig cfg = AugmentConfig::none();
  cfg.vertical_flip = true;
  Rng rng(12);
  bool seen = false;
  for (int i = 0; i < 32 && !seen; ++i) seen = geometric_augment(img, cfg, rng) == image_hw(2, 1, {0.75, 0.25});
  EXPECT_TRUE(seen);
}

TEST(Augment, OutputStaysInUnitRangeAndIsSeeded) {
  AugmentConfig strong;
  strong.rotation_deg = 45;
  strong.width_shift = strong.height_shift = 0.3;
  strong.shear = 0.4;
  strong.zoom = 0.3;
  strong.channel_shift = 0.5;
  strong.vertical_flip = true;
  Rng data_rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor img = random_tensor({8, 9, 3}, data_rng, 0.0, 1.0);
    Rng a(trial), b(trial);
    const Tensor out = geometric_augment(img, strong, a);
    ASSERT_EQ(out.shape(), img.shape());
    for (double v : out.data()) ASSERT_TRUE(v >= 0.0 && v <= 1.0) << v;
    ASSERT_EQ(out, geometric_augment(img, strong, b));
  }
}

TEST(Augment, BatchKeepsShape) {
  Rng rng(14);
  const Tensor batch = random_tensor({4, 6, 6, 1}, rng, 0.0, 1.0);
  const Tensor out = augment_batch(batch, AugmentConfig{}, rng);
  EXPECT_EQ(out.shape(), batch.shape());
  EXPECT_EQ(augment_batch(batch, AugmentConfig::none(), rng), batch);
}

TEST(Augment, ConfigValidation) {
  AugmentConfig c;
  c.rotation_deg = -1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = AugmentConfig{};
  c.crop = 600;
  EXPECT_THROW(c.validate(), ConfigError);
  c = AugmentConfig{};
  c.crops = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_EQ(AugmentConfig{}.crops, 3u);
  EXPECT_EQ(AugmentConfig{}.pre_crop, 540u);
  EXPECT_EQ(AugmentConfig{}.crop, 501u);
}

// ---------------------------------------------------------------------------
// Crops and test-time augmentation

TEST(RandomCrop, WindowIsASubImage) {
  Rng rng(15);
  const std::size_t h = 7, w = 6;
  Tensor img({h, w, 1});
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<double>(i);
  std::set<double> corners;
  for (int t = 0; t < 100; ++t) {
    const Tensor c = random_crop(img, 3, 4, rng);
    const auto origin = static_cast<std::size_t>(c[0]);
    const std::size_t oy = origin / w, ox = origin % w;
    ASSERT_LE(oy, h - 3);
    ASSERT_LE(ox, w - 4);
    for (std::size_t y = 0; y < 3; ++y)
      for (std::size_t x = 0; x < 4; ++x) ASSERT_EQ(c[y * 4 + x], img[(oy + y) * w + ox + x]);
    corners.insert(c[0]);
  }
  EXPECT_EQ(corners.size(), 5u * 3u);
  EXPECT_THROW(random_crop(img, 8, 2, rng), ContractError);
}

TEST(Tta, ConstantImageMatchesSinglePass) {
  Rng rng(16);
  PoolClassifier model(3, 4, rng);
  AugmentConfig cfg;
  cfg.pre_crop = 24;
  cfg.crop = 17;
  const Tensor img({1, 10, 10, 3}, std::vector<double>(300, 0.0));
  Tensor constant = img;
  for (std::size_t i = 0; i < constant.size(); ++i) constant[i] = 0.1 + 0.3 * static_cast<double>(i % 3);
  const Tensor single = single_pass_predict(model, constant, cfg);
  EXPECT_EQ(tta_predict(model, constant, cfg, rng), single);
  const Tensor one = constant.rows(0, 1).reshaped({10, 10, 3});
  EXPECT_EQ(random_crop_tta(model, one, cfg, rng), single.reshaped({4}));
}

TEST(Tta, AveragesCropProbabilities) {
  Rng rng(17);
  PoolClassifier model(1, 3, rng);
  AugmentConfig cfg;
  cfg.pre_crop = 12;
  cfg.crop = 5;
  const Tensor images = random_tensor({3, 8, 8, 1}, rng, 0.0, 1.0);
  Rng a(99), b(99);
  const Tensor out = tta_predict(model, images, cfg, a);
  ASSERT_EQ(out.shape(), (Shape{3, 3}));
  const Tensor big = upsample(images, 12, 12);
  std::vector<Tensor> crops;
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < cfg.crops; ++j)
      crops.push_back(random_crop(big.rows(i, i + 1).reshaped({12, 12, 1}), 5, 5, b));
  for (std::size_t i = 0; i < 3; ++i) {
    double row = 0.0;
    for (std::size_t k = 0; k < 3; ++k) {
      double expected = 0.0;
      for (std::size_t j = 0; j < cfg.crops; ++j)
        expected += model.predict(crops[i * cfg.crops + j].reshaped({1, 5, 5, 1}))[k] / 3.0;
      EXPECT_NEAR(out[i * 3 + k], expected, 1e-12);
      row += out[i * 3 + k];
    }
    EXPECT_NEAR(row, 1.0, 1e-12);
  }
}

TEST(Tta, SingleCropIsSinglePassAndBadSizesFail) {
  Rng rng(18);
  PoolClassifier model(1, 2, rng);
  const Tensor images = random_tensor({2, 6, 6, 1}, rng, 0.0, 1.0);
  AugmentConfig cfg;
  cfg.crops = 1;
  cfg.pre_crop = 10;
  cfg.crop = 8;
  EXPECT_EQ(tta_predict(model, images, cfg, rng), single_pass_predict(model, images, cfg));
  cfg.crops = 2;
  cfg.pre_crop = 5;
  cfg.crop = 5;
  EXPECT_THROW(tta_predict(model, images, cfg, rng), ContractError);
  cfg.crops = 0;
  EXPECT_THROW(tta_predict(model, images, cfg, rng), ConfigError);
}

// ---------------------------------------------------------------------------
// Synthetic data

TEST(Synthetic, ValidDeterministicAndInRange) {
  SyntheticConfig cfg;
  cfg.samples = 60;
  const Dataset a = make_synthetic_dataset(cfg);
  EXPECT_NO_THROW(a.validate());
  EXPECT_EQ(a.images.shape(), (Shape{60, 12, 12, 1}));
  for (double v : a.images.data()) ASSERT_TRUE(v >= 0.0 && v <= 1.0);
  const Dataset b = make_synthetic_dataset(cfg);
  EXPECT_EQ(a.images, b.images);
  EXPECT_EQ(a.labels, b.labels);
  std::set<std::size_t> classes(a.labels.begin(), a.labels.end());
  EXPECT_EQ(classes.size(), 4u);
}

TEST(Synthetic, NoiselessSamplesOfOneClassShareTheirPrototype) {
  SyntheticConfig cfg;
  cfg.samples = 30;
  cfg.noise = 0.0;
  cfg.jitter = 0.0;
  const Dataset d = make_synthetic_dataset(cfg);
  // Without jitter or noise, same-class samples differ only by a gain factor.
  for (std::size_t i = 0; i < d.size(); ++i) {
    for (std::size_t j = i + 1; j < d.size(); ++j) {
      if (d.labels[i] != d.labels[j]) continue;
      const Tensor a = d.images.rows(i, i + 1), b = d.images.rows(j, j + 1);
      std::size_t peak = 0;
      for (std::size_t k = 1; k < a.size(); ++k)
        if (a[k] > a[peak]) peak = k;
      if (a[peak] >= 1.0 || b[peak] >= 1.0) continue;
      const double ratio = b[peak] / a[peak];
      for (std::size_t k = 0; k < a.size(); ++k) {
        if (a[k] < 1.0 && b[k] < 1.0) {
          ASSERT_NEAR(b[k], ratio * a[k], 1e-9);
        }
      }
    }
  }
}

TEST(Synthetic, SubsetAndValidate) {
  const Dataset d = make_synthetic_dataset(SyntheticConfig{});
  const std::vector<std::size_t> idx{3, 1};
  const Dataset s = d.subset(idx);
  EXPECT_EQ(s.labels, (std::vector<std::size_t>{d.labels[3], d.labels[1]}));
  EXPECT_EQ(s.images.rows(0, 1), d.images.rows(3, 4));
  Dataset bad = s;
  bad.labels[0] = 99;
  EXPECT_THROW(bad.validate(), ValidationError);
  EXPECT_THROW((Dataset{"e", Tensor(), {}, 2}.validate()), ValidationError);
}
