#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "e2em/classifier.hpp"

namespace e2em {

/// Images [N x H x W x ch] with pixel values in [0, 1] and integer labels.
struct Dataset {
  std::string name;
  Tensor images;
  std::vector<std::size_t> labels;
  std::size_t classes = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t height() const { return images.dim(1); }
  std::size_t width() const { return images.dim(2); }
  std::size_t channels() const { return images.dim(3); }
  /// Throws ValidationError unless shapes agree, N > 0 and labels < classes.
  void validate() const;
  Dataset subset(std::span<const std::size_t> indices) const;
};

/// Big-endian IDX pair: images (magic 0x00000803, dims N, rows, cols) and
/// labels (magic 0x00000801, dim N). Pixels are scaled by 1/255.
Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                 std::size_t classes = 10);
/// Writes a single-channel dataset as an IDX pair (pixels rounded to bytes).
void write_idx(const Dataset& data, const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path);

/// Concatenation of CIFAR-10 binary batches: 3073-byte records of one label
/// byte and 3072 channel-planar pixels (32x32 red, green, blue).
Dataset load_cifar10_binary(std::span<const std::filesystem::path> paths);
void write_cifar10_binary(const Dataset& data, const std::filesystem::path& path);

struct FoldAssignment {
  std::size_t k = 0;
  std::vector<std::size_t> fold;  // fold index per sample

  std::vector<std::size_t> members(std::size_t f) const;
  std::vector<std::size_t> complement(std::size_t f) const;
};

/// Seeded shuffle, then round-robin assignment to k folds.
FoldAssignment kfold_split(std::size_t n, std::size_t k, std::uint64_t seed);

/// Seeded shuffle, then the first round(fraction * n) indices train and the
/// rest validate. Both parts are non-empty.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> ratio_split(std::size_t n, double train_fraction,
                                                                          std::uint64_t seed);

enum class Resample { Nearest, Bilinear };

/// Enlarges [b x H x W x ch] images to [b x h x w x ch]. Bilinear sampling
/// aligns corners: output pixel y maps to y * (H - 1) / (h - 1).
Tensor upsample(const Tensor& images, std::size_t height, std::size_t width, Resample method = Resample::Bilinear);

struct AugmentConfig {
  double rotation_deg = 15.0;
  double width_shift = 0.1;   // fraction of width
  double height_shift = 0.1;  // fraction of height
  double shear = 0.1;         // shear factor
  double zoom = 0.1;          // scale drawn from [1 - zoom, 1 + zoom]
  bool horizontal_flip = true;
  bool vertical_flip = false;
  double channel_shift = 0.05;

  /// 1 = single pass on the full image resized to the crop resolution;
  /// more = that many random crops of the pre-crop image.
  std::size_t crops = 3;
  std::size_t pre_crop = 540;
  std::size_t crop = 501;

  void validate() const;
  /// Config with every geometric range zero and flips off.
  static AugmentConfig none();
};

/// Deterministic affine warp about the image centre, bilinear sampling with
/// reflect padding. Zoom > 1 magnifies.
struct AffineParams {
  double rotation_deg = 0.0;
  double shift_x = 0.0;  // pixels
  double shift_y = 0.0;
  double shear = 0.0;
  double zoom_x = 1.0;
  double zoom_y = 1.0;
};
Tensor apply_affine(const Tensor& image, const AffineParams& p);

/// Randomly transformed copy of one [H x W x ch] image. Values stay in [0, 1].
Tensor geometric_augment(const Tensor& image, const AugmentConfig& cfg, Rng& rng);
/// Applies geometric_augment to every image of a batch.
Tensor augment_batch(const Tensor& images, const AugmentConfig& cfg, Rng& rng);

/// Crop [h x w] at a uniformly drawn top-left offset of one [H x W x ch] image.
Tensor random_crop(const Tensor& image, std::size_t height, std::size_t width, Rng& rng);

/// Model probabilities for images resized straight to the crop resolution.
Tensor single_pass_predict(const Classifier& model, const Tensor& images, const AugmentConfig& cfg);

/// Test-time augmentation over a batch [b x H x W x ch]: upsample to the
/// pre-crop resolution, take cfg.crops random crops per image and average
/// the model's probabilities. cfg.crops == 1 is the single pass.
Tensor tta_predict(const Classifier& model, const Tensor& images, const AugmentConfig& cfg, Rng& rng);
/// Single image [H x W x ch] -> averaged probabilities [c].
Tensor random_crop_tta(const Classifier& model, const Tensor& image, const AugmentConfig& cfg, Rng& rng);

/// Procedural image classification data for tests and desk-scale runs: each
/// class is a fixed random arrangement of Gaussian blobs, samples jitter the
/// blobs' position and brightness and add pixel noise.
struct SyntheticConfig {
  std::size_t samples = 400;
  std::size_t height = 12;
  std::size_t width = 12;
  std::size_t channels = 1;
  std::size_t classes = 4;
  std::size_t blobs_per_class = 3;
  double jitter = 1.0;  // max positional jitter in pixels
  double noise = 0.1;   // pixel noise stddev
  std::uint64_t pattern_seed = 7;  // fixes the class prototypes
  std::uint64_t seed = 1;          // draws the samples
};
Dataset make_synthetic_dataset(const SyntheticConfig& cfg);

}  // namespace e2em
