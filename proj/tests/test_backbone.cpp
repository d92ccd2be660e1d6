#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "e2em/backbone.hpp"
#include "e2em/errors.hpp"
#include "e2em/gradcheck.hpp"
#include "e2em/ops.hpp"
#include "oracles.hpp"

using namespace e2em;
using oracle::random_tensor;

namespace {

BackboneConfig tiny_backbone(std::size_t side = 8) {
  BackboneConfig cfg;
  cfg.height = cfg.width = side;
  cfg.channels = 1;
  cfg.stages = {{2, 3, 2}, {3, 3, 2}};
  return cfg;
}

HeadConfig tiny_head(HeadVariant v, std::size_t classes = 2) {
  HeadConfig h;
  h.variant = v;
  h.rnn_units = 4;
  h.fc_neurons = 5;
  h.classes = classes;
  h.noise_stddev = 0.1;
  return h;
}

const HeadVariant kVariants[] = {HeadVariant::Std, HeadVariant::Rnn, HeadVariant::Lstm, HeadVariant::Gru,
                                 HeadVariant::BiLstm};

}  // namespace

TEST(Backbone, OneStageShape) {
  BackboneConfig cfg;
  cfg.height = cfg.width = 8;
  cfg.stages = {{4, 3, 2}};
  Rng rng(1);
  const auto layers = make_backbone_params(cfg, rng);
  EXPECT_EQ(backbone_forward(cfg, layers, Tensor({1, 8, 8, 1}, 0.5)).shape(), (Shape{1, 4, 4, 4}));
}

TEST(Backbone, ZeroKernelsGiveZeroFeatures) {
  BackboneConfig cfg = tiny_backbone();
  Rng rng(2);
  auto layers = make_backbone_params(cfg, rng);
  for (auto& l : layers) l.kernel = Tensor::zeros(l.kernel.shape());
  const Tensor out = backbone_forward(cfg, layers, random_tensor({2, 8, 8, 1}, rng));
  EXPECT_EQ(out.shape(), (Shape{2, 2, 2, 3}));
  for (double v : out.data()) EXPECT_EQ(v, 0.0);
}

TEST(Backbone, ResolutionTooSmallForStages) {
  BackboneConfig cfg;
  cfg.height = cfg.width = 2;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg.height = cfg.width = 4;  // 4 -> 2 -> 1, third stage sees 1x1
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg.height = cfg.width = 5;  // 5 -> 3 -> 2 -> 1
  EXPECT_NO_THROW(cfg.validate());
  EXPECT_EQ(cfg.feature_width(), 64u);
}

TEST(Backbone, RejectsWrongImageShape) {
  BackboneConfig cfg = tiny_backbone();
  Rng rng(3);
  const auto layers = make_backbone_params(cfg, rng);
  EXPECT_THROW(backbone_forward(cfg, layers, Tensor({1, 8, 7, 1})), DimensionError);
}

TEST(Backbone, GradientThroughTwoStages) {
  BackboneConfig cfg = tiny_backbone();
  Rng rng(4);
  std::vector<Tensor> params;
  for (const auto& l : make_backbone_params(cfg, rng)) {
    params.push_back(l.kernel);
    params.push_back(random_tensor(l.bias.shape(), rng, -0.1, 0.1));
  }
  params.push_back(random_tensor({2, 8, 8, 1}, rng));
  const auto r = finite_difference_check(
      [&](Tape&, std::span<const Var> p) {
        const Var feats = backbone_forward(cfg, p.first(4), p[4]);
        return sum(tanh(global_avg_pool(feats)));
      },
      params);
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(GlobalPool, Examples) {
  Tape tape;
  EXPECT_EQ(global_avg_pool(tape.constant(Tensor({1, 2, 2, 1}, {1, 3, 5, 7}))).value().item(), 4.0);
  Rng rng(5);
  const Tensor v = random_tensor({1, 1, 1, 6}, rng);
  EXPECT_EQ(global_avg_pool(tape.constant(v)).value().values(), v.values());
  const Tensor c = global_avg_pool(tape.constant(Tensor({2, 3, 5, 2}, 1.25))).value();
  for (double x : c.data()) EXPECT_DOUBLE_EQ(x, 1.25);
}

TEST(GaussianNoise, EvalAndZeroStddevAreIdentity) {
  Rng rng(6);
  const Tensor x = random_tensor({3, 4}, rng);
  EXPECT_EQ(gaussian_noise(x, 0.1, Mode::Eval, rng), x);
  EXPECT_EQ(gaussian_noise(x, 0.0, Mode::Train, rng), x);
  EXPECT_NE(gaussian_noise(x, 0.1, Mode::Train, rng), x);
  EXPECT_THROW(gaussian_noise(x, -0.1, Mode::Eval, rng), ConfigError);
}

TEST(GaussianNoise, SampleStatistics) {
  Rng rng(7);
  const std::size_t n = 100000;
  const Tensor y = gaussian_noise(Tensor::zeros({n}), 0.1, Mode::Train, rng);
  const double mean = std::accumulate(y.data().begin(), y.data().end(), 0.0) / n;
  double ss = 0.0;
  for (double v : y.data()) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / (n - 1));
  EXPECT_LT(std::abs(mean), 3.0 * 0.1 / std::sqrt(static_cast<double>(n)));
  EXPECT_NEAR(sd, 0.1, 0.005);
}

TEST(GaussianNoise, GradientPassesThrough) {
  Rng rng(8);
  Tape tape;
  const Var x = tape.leaf(random_tensor({2, 3}, rng));
  tape.backward(sum(gaussian_noise(x, 0.5, Mode::Train, rng)));
  for (double g : tape.gradient(x).data()) EXPECT_EQ(g, 1.0);
}

TEST(HeadVariantNames, RoundTrip) {
  for (HeadVariant v : kVariants) EXPECT_EQ(head_variant_from_name(head_variant_name(v)), v);
  EXPECT_EQ(head_variant_from_name("bilstm"), HeadVariant::BiLstm);
  EXPECT_FALSE(head_variant_from_name("transformer").has_value());
}

TEST(HeadConfig, Defaults) {
  HeadConfig h;
  EXPECT_EQ(h.fc_neurons, 1024u);
  EXPECT_EQ(h.rnn_units, 2048u);
  EXPECT_DOUBLE_EQ(h.noise_stddev, 0.1);
  h.noise_stddev = -1;
  EXPECT_THROW(h.validate(), ConfigError);
}

TEST(SingleModel, StdUsesConfiguredFcWidth) {
  Rng rng(9);
  BackboneConfig cfg = tiny_backbone();
  HeadConfig head;
  head.classes = 3;
  const SingleModel m(cfg, head, rng);
  const auto& p = m.parameters();
  EXPECT_EQ(p.value(*p.find("head.fc.w")).shape(), (Shape{3, 1024}));
  EXPECT_FALSE(p.find("head.rnn.w_h").has_value());
}

TEST(SingleModel, BiLstmSplitsUnitsPerDirection) {
  Rng rng(10);
  HeadConfig head = tiny_head(HeadVariant::BiLstm);
  head.rnn_units = 2048;
  head.fc_neurons = 8;
  const SingleModel m(tiny_backbone(), head, rng);
  const auto& p = m.parameters();
  EXPECT_EQ(p.value(*p.find("head.rnn.forward.w_fh")).shape(), (Shape{1024, 1024}));
  EXPECT_EQ(p.value(*p.find("head.rnn.backward.w_ox")).shape(), (Shape{3, 1024}));
  EXPECT_EQ(p.value(*p.find("head.fc.w")).shape(), (Shape{2048, 8}));
}

TEST(SingleModel, OutputsAreRowStochasticForEveryVariant) {
  Rng rng(11);
  const Tensor images = random_tensor({3, 8, 8, 1}, rng, 0.0, 1.0);
  for (HeadVariant v : kVariants) {
    const SingleModel m(tiny_backbone(), tiny_head(v, 4), rng);
    const Tensor p = m.predict(images);
    ASSERT_EQ(p.shape(), (Shape{3, 4})) << head_variant_name(v);
    for (std::size_t r = 0; r < 3; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < 4; ++c) {
        EXPECT_GE(p.at(r, c), 0.0);
        s += p.at(r, c);
      }
      EXPECT_NEAR(s, 1.0, 1e-9);
    }
    EXPECT_EQ(m.predict(images), p) << "eval forward must be deterministic";
  }
}

TEST(SingleModel, TrainModeIsStochasticEvalIsNot) {
  Rng rng(12);
  const SingleModel m(tiny_backbone(), tiny_head(HeadVariant::Gru), rng);
  const Tensor images = random_tensor({2, 8, 8, 1}, rng, 0.0, 1.0);
  auto run = [&](Mode mode, std::uint64_t seed) {
    Tape tape;
    Rng r(seed);
    return m.forward(tape, m.parameters().bind(tape), images, mode, r).value();
  };
  EXPECT_NE(run(Mode::Train, 1), run(Mode::Train, 2));
  EXPECT_EQ(run(Mode::Eval, 1), run(Mode::Eval, 2));
  EXPECT_EQ(run(Mode::Eval, 1), m.predict(images));
}

TEST(SingleModel, EndToEndGradientForEveryVariant) {
  Rng rng(13);
  const Tensor images = random_tensor({2, 8, 8, 1}, rng, 0.0, 1.0);
  const Tensor target = one_hot(std::vector<std::size_t>{0, 1}, 2);
  for (HeadVariant v : kVariants) {
    const SingleModel m(tiny_backbone(), tiny_head(v), rng);
    std::vector<Tensor> params;
    for (std::size_t i = 0; i < m.parameters().size(); ++i) {
      const Tensor& t = m.parameters().value(i);
      // Non-zero biases so that no pre-activation sits exactly on a kink.
      params.push_back(t.rank() == 1 ? random_tensor(t.shape(), rng, -0.2, 0.2) : t);
    }
    const auto r = finite_difference_check(
        [&](Tape& tape, std::span<const Var> p) {
          Rng noise(99);  // identical noise draw in every evaluation
          return cross_entropy(m.forward(tape, p, images, Mode::Train, noise), target);
        },
        params);
    EXPECT_LT(r.max_rel_error, 1e-4) << head_variant_name(v) << " worst param "
                                     << m.parameters().name(r.worst_param);
  }
}
