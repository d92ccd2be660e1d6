#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "e2em/errors.hpp"
#include "e2em/gradcheck.hpp"
#include "e2em/ops.hpp"
#include "oracles.hpp"

using namespace e2em;
using oracle::random_tensor;

namespace {

Tensor eval_unary(Var (*op)(Var), const Tensor& x) {
  Tape tape;
  return op(tape.constant(x)).value();
}

}  // namespace

TEST(Tensor, ShapeInvariants) {
  Tensor t({2, 3});
  EXPECT_EQ(t.size(), 6u);
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), DimensionError);
  EXPECT_THROW(Tensor({2, 0}), DimensionError);
  EXPECT_THROW(t.reshaped({4, 2}), DimensionError);
}

TEST(Tensor, ReshapePreservesOrder) {
  std::mt19937_64 rng(1);
  const Tensor t = random_tensor({3, 4, 5}, rng);
  const Tensor r = t.reshaped({5, 12});
  EXPECT_EQ(r.values(), t.values());
  EXPECT_EQ(r.shape(), (Shape{5, 12}));
}

TEST(MatMul, IdentityAndHandArithmetic) {
  Tape tape;
  auto out = matmul(tape.constant(Tensor::identity(2)), tape.constant(Tensor::matrix({{3}, {4}})));
  EXPECT_EQ(out.value(), Tensor::matrix({{3}, {4}}));
  auto dot = matmul(tape.constant(Tensor::matrix({{1, 2}})), tape.constant(Tensor::matrix({{3}, {4}})));
  EXPECT_EQ(dot.value().item(), 11.0);
}

TEST(MatMul, ShapeMismatchNamesBothShapes) {
  Tape tape;
  try {
    matmul(tape.constant(Tensor({2, 3})), tape.constant(Tensor({4, 2})));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos);
    EXPECT_NE(msg.find("[4x2]"), std::string::npos);
  }
}

TEST(MatMul, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(7);
  const std::vector<Tensor> params{random_tensor({3, 4}, rng), random_tensor({4, 2}, rng)};
  const Tensor weights = random_tensor({3, 2}, rng);
  const auto r = finite_difference_check(
      [&](Tape& t, std::span<const Var> p) { return sum(mul(matmul(p[0], p[1]), t.constant(weights))); }, params,
      1e-5);
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(Elementwise, Examples) {
  EXPECT_EQ(eval_unary(sigmoid, Tensor::scalar(0.0)).item(), 0.5);
  EXPECT_EQ(eval_unary(e2em::tanh, Tensor::scalar(0.0)).item(), 0.0);
  Tape tape;
  EXPECT_DOUBLE_EQ(leaky_relu(tape.constant(Tensor::scalar(-1.0)), 0.2).value().item(), -0.2);
  EXPECT_EQ(leaky_relu(tape.constant(Tensor::scalar(3.0)), 0.2).value().item(), 3.0);
  EXPECT_EQ(leaky_relu(tape.constant(Tensor::scalar(0.0)), 0.2).value().item(), 0.0);
}

TEST(Elementwise, ShapeMismatch) {
  Tape tape;
  auto a = tape.constant(Tensor({2, 2}));
  auto b = tape.constant(Tensor({4}));
  EXPECT_THROW(add(a, b), DimensionError);
  EXPECT_THROW(mul(a, b), DimensionError);
  EXPECT_THROW(sub(a, b), DimensionError);
  EXPECT_THROW(add_bias(a, tape.constant(Tensor({3}))), DimensionError);
}

TEST(Softmax, Examples) {
  Tape tape;
  auto uniform = softmax_rows(tape.constant(Tensor::matrix({{0, 0, 0}}))).value();
  for (double v : uniform.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
  auto analytic = softmax_rows(tape.constant(Tensor::matrix({{std::log(2.0), 0}}))).value();
  EXPECT_NEAR(analytic[0], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(analytic[1], 1.0 / 3.0, 1e-15);
  auto big = softmax_rows(tape.constant(Tensor::matrix({{1000, 0}}))).value();
  EXPECT_TRUE(big.all_finite());
  EXPECT_NEAR(big[0], 1.0, 1e-15);
  EXPECT_NEAR(big[1], 0.0, 1e-15);
}

TEST(Softmax, RejectsNonFinite) {
  Tape tape;
  EXPECT_THROW(softmax_rows(tape.constant(Tensor::matrix({{NAN, 0}}))), NumericError);
  EXPECT_THROW(softmax_rows(tape.constant(Tensor::matrix({{INFINITY, 0}}))), NumericError);
}

TEST(Softmax, RowsAreDistributions) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    std::uniform_int_distribution<std::size_t> dim(1, 8);
    const Tensor z = random_tensor({dim(rng), dim(rng)}, rng, -30.0, 30.0);
    Tape tape;
    const Tensor p = softmax_rows(tape.constant(z)).value();
    const std::size_t c = z.dim(1);
    for (std::size_t r = 0; r < z.dim(0); ++r) {
      double total = 0.0;
      for (std::size_t j = 0; j < c; ++j) {
        EXPECT_GE(p[r * c + j], 0.0);
        EXPECT_LE(p[r * c + j], 1.0);
        total += p[r * c + j];
      }
      EXPECT_NEAR(total, 1.0, 1e-9);
    }
  }
}

TEST(CrossEntropy, Examples) {
  Tape tape;
  EXPECT_EQ(cross_entropy(tape.constant(Tensor::matrix({{1, 0, 0}})), Tensor::matrix({{1, 0, 0}})).value().item(),
            0.0);
  const Tensor third = Tensor::matrix({{1.0 / 3, 1.0 / 3, 1.0 / 3}});
  EXPECT_NEAR(cross_entropy(tape.constant(third), Tensor::matrix({{0, 0, 1}})).value().item(), std::log(3.0), 1e-12);
}

TEST(CrossEntropy, MatchesScalarLoop) {
  std::mt19937_64 rng(11);
  Tape tape;
  const Tensor p = softmax_rows(tape.constant(random_tensor({4, 3}, rng))).value();
  const std::vector<std::size_t> labels{2, 0, 1, 1};
  double expected = 0.0;
  for (std::size_t r = 0; r < 4; ++r) expected += -std::log(std::max(p[r * 3 + labels[r]], 1e-12));
  expected /= 4.0;
  EXPECT_NEAR(cross_entropy(tape.constant(p), one_hot(labels, 3)).value().item(), expected, 1e-15);
}

TEST(CrossEntropy, RejectsNonOneHotTarget) {
  Tape tape;
  auto p = tape.constant(Tensor::matrix({{0.5, 0.5}}));
  EXPECT_THROW(cross_entropy(p, Tensor::matrix({{0.5, 0.5}})), ValidationError);
  EXPECT_THROW(cross_entropy(p, Tensor::matrix({{1, 1}})), ValidationError);
  EXPECT_THROW(cross_entropy(p, Tensor::matrix({{0, 0}})), ValidationError);
}

TEST(Backward, SumGivesOnes) {
  Tape tape;
  auto w = tape.leaf(Tensor({2, 3, 2}, 0.7));
  tape.backward(sum(w));
  for (double g : tape.gradient(w).data()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, SigmoidAtZero) {
  Tape tape;
  auto w = tape.leaf(Tensor::scalar(0.0));
  tape.backward(sigmoid(w));
  EXPECT_EQ(tape.gradient(w).item(), 0.25);
}

TEST(Backward, RejectsNonScalarLoss) {
  Tape tape;
  auto w = tape.leaf(Tensor({2}));
  EXPECT_THROW(tape.backward(w), ContractError);
}

TEST(Backward, RepeatedCallsDoNotAccumulate) {
  Tape tape;
  auto w = tape.leaf(Tensor::vector({1, 2}));
  auto loss = sum(mul(w, w));
  tape.backward(loss);
  const Tensor first = tape.gradient(w);
  tape.backward(loss);
  EXPECT_EQ(tape.gradient(w), first);
  EXPECT_EQ(first, Tensor::vector({2, 4}));
}

TEST(Backward, DeterministicAcrossRuns) {
  std::mt19937_64 rng(5);
  const std::vector<Tensor> params{random_tensor({3, 4}, rng), random_tensor({4, 4}, rng)};
  const Tensor target = one_hot(std::vector<std::size_t>{0, 3, 1}, 4);
  ScalarGraph f = [&](Tape&, std::span<const Var> p) {
    return cross_entropy(softmax_rows(tanh(matmul(p[0], p[1]))), target);
  };
  EXPECT_EQ(analytic_gradients(f, params), analytic_gradients(f, params));
}

TEST(FiniteDifference, Examples) {
  const std::vector<Tensor> at3{Tensor::scalar(3.0)};
  auto square = [](Tape&, std::span<const Var> p) { return sum(mul(p[0], p[0])); };
  const auto r = finite_difference_check(square, at3, 1e-5);
  EXPECT_NEAR(r.numeric, 6.0, 1e-6);
  EXPECT_LT(r.max_rel_error, 1e-6);

  auto constant = [](Tape& t, std::span<const Var>) { return t.constant(Tensor::scalar(4.0)); };
  const auto c = finite_difference_check(constant, at3, 1e-5);
  EXPECT_EQ(c.analytic, 0.0);
  EXPECT_EQ(c.numeric, 0.0);
}

TEST(FiniteDifference, DenseSoftmaxCrossEntropy) {
  std::mt19937_64 rng(21);
  const Tensor x = random_tensor({5, 4}, rng);
  const Tensor target = one_hot(std::vector<std::size_t>{0, 1, 2, 0, 1}, 3);
  const std::vector<Tensor> params{random_tensor({4, 3}, rng), random_tensor({3}, rng)};
  const auto r = finite_difference_check(
      [&](Tape& t, std::span<const Var> p) {
        return cross_entropy(softmax_rows(add_bias(matmul(t.constant(x), p[0]), p[1])), target);
      },
      params, 1e-5);
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(FiniteDifference, RejectsBadStepAndNonFinite) {
  const std::vector<Tensor> p{Tensor::scalar(1.0)};
  auto f = [](Tape&, std::span<const Var> v) { return sum(v[0]); };
  EXPECT_THROW(finite_difference_check(f, p, 0.0), ContractError);
  EXPECT_THROW(finite_difference_check(f, p, 0.1), ContractError);
  auto nan = [](Tape& t, std::span<const Var>) { return t.constant(Tensor::scalar(NAN)); };
  EXPECT_THROW(finite_difference_check(nan, p, 1e-5), NumericError);
}

TEST(FiniteDifference, SignFlipIsDetected) {
  std::mt19937_64 rng(2);
  const std::vector<Tensor> p{random_tensor({2, 3}, rng)};
  auto f = [](Tape&, std::span<const Var> v) { return sum(tanh(v[0])); };
  EXPECT_LT(finite_difference_check(f, p, 1e-5).max_rel_error, 1e-6);
  EXPECT_GT(finite_difference_check(f, p, 1e-5, OpKind::Tanh).max_rel_error, 1e-2);
}

// Every recorded op, random shapes and values in [-2, 2].
TEST(FiniteDifference, PropertyOverAllOps) {
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<std::size_t> dim(1, 4);
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t b = dim(rng), k = dim(rng), n = dim(rng);
    const Tensor mask = random_tensor({b, n}, rng);
    const Tensor noise = random_tensor({b, n}, rng);
    std::vector<std::size_t> labels(b);
    for (auto& l : labels) l = std::uniform_int_distribution<std::size_t>(0, n + k - 1)(rng);
    const Tensor target = one_hot(labels, n + k);
    const std::vector<Tensor> params{random_tensor({b, k}, rng), random_tensor({k, n}, rng), random_tensor({n}, rng),
                                     random_tensor({b, n}, rng), random_tensor({b, k}, rng)};
    const auto r = finite_difference_check(
        [&](Tape&, std::span<const Var> p) {
          Var h = add_bias(matmul(p[0], p[1]), p[2]);
          h = add(sigmoid(h), mul(tanh(p[3]), affine(h, 0.5, -0.25)));
          h = sub(leaky_relu(h, 0.2), mul_const(p[3], mask));
          h = add_const(h, noise);
          const Var parts[] = {h, leaky_relu(p[4], 0.1)};
          Var joined = concat_cols(parts);
          Var seq = reshape(joined, {b, 1, n + k});
          Var step = slice_time(seq, 0);
          const Var steps[] = {step, step};
          Var back = slice_time(stack_time(steps), 1);
          Var probs = softmax_rows(back);
          return add(cross_entropy(probs, target), sum(slice_cols(back, 0, 1)));
        },
        params, 1e-5);
    EXPECT_LT(r.max_rel_error, 1e-4) << "trial " << trial;
  }
}

TEST(FiniteDifference, ConvAndPooling) {
  std::mt19937_64 rng(4);
  for (std::size_t stride : {1u, 2u}) {
    const std::vector<Tensor> params{random_tensor({2, 5, 4, 2}, rng), random_tensor({3, 3, 2, 3}, rng)};
    const auto r = finite_difference_check(
        [&](Tape&, std::span<const Var> p) { return sum(tanh(global_avg_pool(conv2d(p[0], p[1], stride)))); },
        params, 1e-5);
    EXPECT_LT(r.max_rel_error, 1e-4) << "stride " << stride;
  }
}

TEST(Conv2d, SameShapesAndKnownValue) {
  Tape tape;
  auto x = tape.constant(Tensor({1, 8, 8, 1}, 1.0));
  auto k = tape.constant(Tensor({3, 3, 1, 4}, 1.0));
  auto y = conv2d(x, k, 2);
  EXPECT_EQ(y.shape(), (Shape{1, 4, 4, 4}));
  // Output (0,0) sees rows/cols 0..2 of the input (padding goes bottom/right).
  EXPECT_EQ(y.value()[0], 9.0);
  // Last output column reaches col 8, which is padding.
  EXPECT_EQ(y.value()[(0 * 4 + 3) * 4], 6.0);
}

TEST(GlobalAvgPool, Mean) {
  Tape tape;
  auto x = tape.constant(Tensor({1, 2, 2, 1}, std::vector<double>{1, 3, 5, 7}));
  EXPECT_EQ(global_avg_pool(x).value().item(), 4.0);
}
