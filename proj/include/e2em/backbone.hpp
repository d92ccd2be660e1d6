#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "e2em/classifier.hpp"
#include "e2em/rnn.hpp"

namespace e2em {

struct ConvStage {
  std::size_t filters = 16;
  std::size_t kernel = 3;
  std::size_t stride = 2;
};

/// Small convolutional feature extractor: each stage is a "same"-padded
/// convolution with bias followed by leaky ReLU.
struct BackboneConfig {
  std::size_t height = 28;
  std::size_t width = 28;
  std::size_t channels = 1;
  std::vector<ConvStage> stages{{16, 3, 2}, {32, 3, 2}, {64, 3, 2}};
  double leaky_slope = 0.1;

  /// Width d of the pooled feature vector (last stage's filter count).
  std::size_t feature_width() const;
  /// Throws ConfigError when a stage would receive a map smaller than its
  /// stride, or on zero sizes.
  void validate() const;
};

enum class HeadVariant { Std, Rnn, Lstm, Gru, BiLstm };

std::string_view head_variant_name(HeadVariant v);
/// Case-insensitive: STD, RNN, LSTM, GRU, BiLSTM.
std::optional<HeadVariant> head_variant_from_name(std::string_view name);

struct HeadConfig {
  HeadVariant variant = HeadVariant::Std;
  /// Recurrent output width. BiLSTM splits it evenly between directions.
  std::size_t rnn_units = 2048;
  double noise_stddev = 0.1;
  std::size_t fc_neurons = 1024;
  std::size_t classes = 10;
  double leaky_slope = 0.1;

  void validate() const;
};

struct ConvLayer {
  Tensor kernel;  // [k x k x cin x cout]
  Tensor bias;    // [cout]
};

std::vector<ConvLayer> make_backbone_params(const BackboneConfig& cfg, Rng& rng);

/// [b x H x W x ch] -> [b x h' x w' x f]. `layers` holds (kernel, bias)
/// pairs per stage.
Var backbone_forward(const BackboneConfig& cfg, std::span<const Var> layers, Var images);
Tensor backbone_forward(const BackboneConfig& cfg, std::span<const ConvLayer> layers, const Tensor& images);

/// Adds i.i.d. N(0, stddev^2) noise in train mode; identity otherwise. The
/// gradient passes through unchanged.
Var gaussian_noise(Var x, double stddev, Mode mode, Rng& rng);
Tensor gaussian_noise(const Tensor& x, double stddev, Mode mode, Rng& rng);

/// Backbone -> global pooling -> [reshape + recurrent cell] -> Gaussian noise
/// -> dense + leaky ReLU -> dense -> softmax.
class SingleModel : public Classifier {
 public:
  SingleModel(BackboneConfig backbone, HeadConfig head, Rng& rng);

  ParameterSet& parameters() override { return params_; }
  const ParameterSet& parameters() const override { return params_; }
  std::size_t classes() const override { return head_.classes; }
  Var forward(Tape& tape, std::span<const Var> params, const Tensor& images, Mode mode, Rng& rng) const override;

  const BackboneConfig& backbone() const { return backbone_; }
  const HeadConfig& head() const { return head_; }
  /// Width of the vector entering the noise layer.
  std::size_t head_input_width() const;

 private:
  BackboneConfig backbone_;
  HeadConfig head_;
  ParameterSet params_;
  std::vector<std::size_t> conv_;  // kernel, bias, kernel, bias, ...
  std::optional<CellWeights<std::size_t>> cell_;
  std::optional<BiWeights<std::size_t>> bi_;
  std::size_t fc_w_ = 0, fc_b_ = 0, out_w_ = 0, out_b_ = 0;
};

}  // namespace e2em
