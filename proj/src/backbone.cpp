#include "e2em/backbone.hpp"

#include <algorithm>
#include <cctype>
#include <random>
#include <string>

#include "e2em/errors.hpp"
#include "e2em/ops.hpp"

namespace e2em {

std::size_t BackboneConfig::feature_width() const { return stages.empty() ? channels : stages.back().filters; }

void BackboneConfig::validate() const {
  if (height == 0 || width == 0 || channels == 0) throw ConfigError("backbone: input resolution must be positive");
  if (!(leaky_slope >= 0.0 && leaky_slope < 1.0)) throw ConfigError("backbone: leaky slope must lie in [0, 1)");
  std::size_t h = height, w = width;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const ConvStage& s = stages[i];
    if (s.filters == 0 || s.kernel == 0 || s.stride == 0) {
      throw ConfigError("backbone: stage " + std::to_string(i) + " has a zero filter count, kernel or stride");
    }
    if (h < s.stride || w < s.stride) {
      throw ConfigError("backbone: resolution " + std::to_string(height) + "x" + std::to_string(width) +
                        " is too small for " + std::to_string(stages.size()) + " stages (stage " + std::to_string(i) +
                        " receives " + std::to_string(h) + "x" + std::to_string(w) + " with stride " +
                        std::to_string(s.stride) + ")");
    }
    h = conv_same_output(h, s.stride);
    w = conv_same_output(w, s.stride);
  }
}

std::string_view head_variant_name(HeadVariant v) {
  switch (v) {
    case HeadVariant::Std: return "STD";
    case HeadVariant::Rnn: return "RNN";
    case HeadVariant::Lstm: return "LSTM";
    case HeadVariant::Gru: return "GRU";
    case HeadVariant::BiLstm: return "BiLSTM";
  }
  return "?";
}

std::optional<HeadVariant> head_variant_from_name(std::string_view name) {
  std::string upper(name);
  std::transform(upper.begin(), upper.end(), upper.begin(), [](unsigned char ch) { return std::toupper(ch); });
  for (HeadVariant v : {HeadVariant::Std, HeadVariant::Rnn, HeadVariant::Lstm, HeadVariant::Gru, HeadVariant::BiLstm}) {
    std::string candidate(head_variant_name(v));
    std::transform(candidate.begin(), candidate.end(), candidate.begin(),
                   [](unsigned char ch) { return std::toupper(ch); });
    if (candidate == upper) return v;
  }
  return std::nullopt;
}

void HeadConfig::validate() const {
  if (!(noise_stddev >= 0.0)) throw ConfigError("head: noise stddev must be non-negative");
  if (fc_neurons == 0) throw ConfigError("head: fc neurons must be positive");
  if (classes < 2) throw ConfigError("head: class count must be at least 2");
  if (!(leaky_slope >= 0.0 && leaky_slope < 1.0)) throw ConfigError("head: leaky slope must lie in [0, 1)");
  if (variant != HeadVariant::Std && rnn_units == 0) throw ConfigError("head: rnn units must be positive");
  if (variant == HeadVariant::BiLstm && rnn_units % 2 != 0) {
    throw ConfigError("head: BiLSTM needs an even unit count (split between directions), got " +
                      std::to_string(rnn_units));
  }
}

std::vector<ConvLayer> make_backbone_params(const BackboneConfig& cfg, Rng& rng) {
  cfg.validate();
  std::vector<ConvLayer> layers;
  std::size_t cin = cfg.channels;
  for (const ConvStage& s : cfg.stages) {
    const std::size_t area = s.kernel * s.kernel;
    layers.push_back({glorot_uniform({s.kernel, s.kernel, cin, s.filters}, area * cin, area * s.filters, rng),
                      Tensor::zeros({s.filters})});
    cin = s.filters;
  }
  return layers;
}

namespace {

void check_images(const BackboneConfig& cfg, const Shape& shape) {
  if (shape.size() != 4 || shape[1] != cfg.height || shape[2] != cfg.width || shape[3] != cfg.channels) {
    throw DimensionError("backbone: expected images [b x " + std::to_string(cfg.height) + "x" +
                         std::to_string(cfg.width) + "x" + std::to_string(cfg.channels) + "], got " +
                         shape_to_string(shape));
  }
}

}  // namespace

Var backbone_forward(const BackboneConfig& cfg, std::span<const Var> layers, Var images) {
  cfg.validate();
  check_images(cfg, images.shape());
  if (layers.size() != 2 * cfg.stages.size()) {
    throw ContractError("backbone: expected " + std::to_string(2 * cfg.stages.size()) + " stage tensors, got " +
                        std::to_string(layers.size()));
  }
  Var x = images;
  for (std::size_t i = 0; i < cfg.stages.size(); ++i) {
    x = leaky_relu(add_bias(conv2d(x, layers[2 * i], cfg.stages[i].stride), layers[2 * i + 1]), cfg.leaky_slope);
  }
  return x;
}

Tensor backbone_forward(const BackboneConfig& cfg, std::span<const ConvLayer> layers, const Tensor& images) {
  Tape tape;
  std::vector<Var> vars;
  for (const ConvLayer& l : layers) {
    vars.push_back(tape.constant(l.kernel));
    vars.push_back(tape.constant(l.bias));
  }
  return backbone_forward(cfg, vars, tape.constant(images)).value();
}

namespace {

Tensor sample_noise(const Shape& shape, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor noise(shape);
  for (auto& v : noise.data()) v = dist(rng);
  return noise;
}

}  // namespace

Var gaussian_noise(Var x, double stddev, Mode mode, Rng& rng) {
  if (!(stddev >= 0.0)) throw ConfigError("gaussian_noise: stddev must be non-negative");
  if (mode == Mode::Eval || stddev == 0.0) return x;
  return add_const(x, sample_noise(x.shape(), stddev, rng));
}

Tensor gaussian_noise(const Tensor& x, double stddev, Mode mode, Rng& rng) {
  if (!(stddev >= 0.0)) throw ConfigError("gaussian_noise: stddev must be non-negative");
  if (mode == Mode::Eval || stddev == 0.0) return x;
  Tensor out = sample_noise(x.shape(), stddev, rng);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += x[i];
  return out;
}

SingleModel::SingleModel(BackboneConfig backbone, HeadConfig head, Rng& rng)
    : backbone_(std::move(backbone)), head_(head) {
  backbone_.validate();
  head_.validate();
  const auto layers = make_backbone_params(backbone_, rng);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::string prefix = "backbone.conv" + std::to_string(i);
    conv_.push_back(params_.add(prefix + ".kernel", layers[i].kernel));
    conv_.push_back(params_.add(prefix + ".bias", layers[i].bias));
  }
  const std::size_t d = backbone_.feature_width();
  switch (head_.variant) {
    case HeadVariant::Std: break;
    case HeadVariant::Rnn: cell_ = register_cell(params_, "head.rnn", make_cell_params(CellKind::Rnn, d, head_.rnn_units, rng)); break;
    case HeadVariant::Lstm: cell_ = register_cell(params_, "head.rnn", make_cell_params(CellKind::Lstm, d, head_.rnn_units, rng)); break;
    case HeadVariant::Gru: cell_ = register_cell(params_, "head.rnn", make_cell_params(CellKind::Gru, d, head_.rnn_units, rng)); break;
    case HeadVariant::BiLstm: {
      const BiParams bi = make_bi_params(CellKind::Lstm, d, head_.rnn_units / 2, rng);
      bi_ = BiWeights<std::size_t>{register_cell(params_, "head.rnn.forward", bi.forward),
                                   register_cell(params_, "head.rnn.backward", bi.backward)};
      break;
    }
  }
  const std::size_t w = head_input_width(), fc = head_.fc_neurons, c = head_.classes;
  fc_w_ = params_.add("head.fc.w", glorot_uniform({w, fc}, w, fc, rng));
  fc_b_ = params_.add("head.fc.b", Tensor::zeros({fc}));
  out_w_ = params_.add("head.out.w", glorot_uniform({fc, c}, fc, c, rng));
  out_b_ = params_.add("head.out.b", Tensor::zeros({c}));
}

std::size_t SingleModel::head_input_width() const {
  return head_.variant == HeadVariant::Std ? backbone_.feature_width() : head_.rnn_units;
}

Var SingleModel::forward(Tape& tape, std::span<const Var> params, const Tensor& images, Mode mode, Rng& rng) const {
  if (params.size() != params_.size()) throw ContractError("SingleModel: parameter count mismatch");
  std::vector<Var> layers;
  for (std::size_t i : conv_) layers.push_back(params[i]);
  Var x = global_avg_pool(backbone_forward(backbone_, layers, tape.constant(images)));
  const std::size_t b = images.dim(0);
  if (cell_) {
    const Var seq = run_sequence(bind_cell(*cell_, params), reshape_to_sequence(x), false);
    x = reshape(seq, {b, head_.rnn_units});
  } else if (bi_) {
    const BiWeights<Var> w{bind_cell(bi_->forward, params), bind_cell(bi_->backward, params)};
    x = reshape(bidirectional_forward(w, reshape_to_sequence(x)), {b, head_.rnn_units});
  }
  x = gaussian_noise(x, head_.noise_stddev, mode, rng);
  x = leaky_relu(add_bias(matmul(x, params[fc_w_]), params[fc_b_]), head_.leaky_slope);
  return softmax_rows(add_bias(matmul(x, params[out_w_]), params[out_b_]));
}

}  // namespace e2em
