#include "e2em/gradsuite.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <set>

#include "e2em/backbone.hpp"
#include "e2em/ensemble.hpp"
#include "e2em/errors.hpp"
#include "e2em/ops.hpp"
#include "e2em/rnn.hpp"

namespace e2em {

namespace {

Tensor uniform(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

std::vector<std::size_t> random_labels(std::size_t n, std::size_t classes, Rng& rng) {
  std::vector<std::size_t> labels(n);
  std::uniform_int_distribution<std::size_t> dist(0, classes - 1);
  for (auto& l : labels) l = dist(rng);
  return labels;
}

struct Case {
  std::string name;
  ScalarGraph graph;
  std::vector<Tensor> params;
};

/// sum(v * w) for a fixed random weight, so no gradient is trivially uniform.
Var weighted_sum(Var v, const Tensor& w) { return sum(mul_const(v, w)); }

std::vector<Case> isolated_cases(Rng& rng) {
  std::vector<Case> cases;
  auto weights = [&](Shape s) { return uniform(std::move(s), rng); };

  cases.push_back({"sum", [](Tape&, std::span<const Var> p) { return sum(p[0]); }, {uniform({2, 3}, rng)}});
  {
    const Tensor target = one_hot(random_labels(3, 4, rng), 4);
    cases.push_back({"cross_entropy",
                     [target](Tape&, std::span<const Var> p) { return cross_entropy(softmax_rows(p[0]), target); },
                     {uniform({3, 4}, rng, -2.0, 2.0)}});
    const Tensor w = weights({3, 4});
    cases.push_back({"mul_const",
                     [target, w](Tape&, std::span<const Var> p) {
                       return cross_entropy(softmax_rows(mul_const(p[0], w)), target);
                     },
                     {uniform({3, 4}, rng, -2.0, 2.0)}});
  }

  using Unary = std::function<Var(Var)>;
  auto unary = [&](std::string name, Shape in, Shape out, Unary op, double lo = -1.0, double hi = 1.0) {
    const Tensor w = weights(std::move(out));
    cases.push_back({std::move(name), [op, w](Tape&, std::span<const Var> p) { return weighted_sum(op(p[0]), w); },
                     {uniform(std::move(in), rng, lo, hi)}});
  };
  unary("sigmoid", {3, 2}, {3, 2}, [](Var x) { return sigmoid(x); }, -3.0, 3.0);
  unary("tanh", {3, 2}, {3, 2}, [](Var x) { return tanh(x); }, -2.0, 2.0);
  unary("leaky_relu", {4, 3}, {4, 3}, [](Var x) { return leaky_relu(x, 0.2); }, -2.0, 2.0);
  for (auto& v : cases.back().params[0].data()) v = v < 0.0 ? std::min(v, -0.01) : std::max(v, 0.01);
  unary("affine", {2, 3}, {2, 3}, [](Var x) { return affine(x, -1.5, 0.25); });
  unary("softmax_rows", {3, 4}, {3, 4}, [](Var x) { return softmax_rows(x); }, -2.0, 2.0);
  unary("slice_cols", {3, 5}, {3, 2}, [](Var x) { return slice_cols(x, 1, 3); });
  unary("reshape", {2, 6}, {2, 3, 2}, [](Var x) { return reshape(x, {2, 3, 2}); });
  unary("slice_time", {2, 3, 4}, {2, 4}, [](Var x) { return slice_time(x, 1); });
  unary("global_avg_pool", {2, 3, 4, 2}, {2, 2}, [](Var x) { return global_avg_pool(x); });
  {
    const Tensor c = uniform({2, 3}, rng);
    unary("add_const", {2, 3}, {2, 3}, [c](Var x) { return add_const(x, c); });
  }

  using Binary = std::function<Var(Var, Var)>;
  auto binary = [&](std::string name, Shape a, Shape b, Shape out, Binary op) {
    const Tensor w = weights(std::move(out));
    cases.push_back({std::move(name),
                     [op, w](Tape&, std::span<const Var> p) { return weighted_sum(op(p[0], p[1]), w); },
                     {uniform(std::move(a), rng), uniform(std::move(b), rng)}});
  };
  binary("matmul", {3, 4}, {4, 2}, {3, 2}, [](Var a, Var b) { return matmul(a, b); });
  binary("add", {2, 3}, {2, 3}, {2, 3}, [](Var a, Var b) { return add(a, b); });
  binary("sub", {2, 3}, {2, 3}, {2, 3}, [](Var a, Var b) { return sub(a, b); });
  binary("mul", {2, 3}, {2, 3}, {2, 3}, [](Var a, Var b) { return mul(a, b); });
  binary("add_bias", {3, 4}, {4}, {3, 4}, [](Var a, Var b) { return add_bias(a, b); });
  binary("concat_cols", {2, 3}, {2, 2}, {2, 5}, [](Var a, Var b) {
    const Var parts[] = {a, b};
    return concat_cols(parts);
  });
  binary("stack_time", {2, 3}, {2, 3}, {2, 2, 3}, [](Var a, Var b) {
    const Var steps[] = {a, b};
    return stack_time(steps);
  });
  for (std::size_t stride : {1u, 2u}) {
    binary("conv2d/stride" + std::to_string(stride), {2, 5, 4, 2}, {3, 3, 2, 3},
           {2, conv_same_output(5, stride), conv_same_output(4, stride), 3},
           [stride](Var x, Var k) { return conv2d(x, k, stride); });
  }
  return cases;
}

/// A cell over a short sequence, from the zero state and then from a given
/// state, with the input sequence and initial state checked too.
Case cell_case(CellKind kind, Rng& rng) {
  const std::size_t b = 2, t = 3, d = 3, u = 4;
  ParameterSet set;
  const auto idx = register_cell(set, "cell", make_cell_params(kind, d, u, rng));
  const std::size_t seq_i = set.add("seq", uniform({b, t, d}, rng));
  const std::size_t h0_i = set.add("h0", uniform({b, u}, rng));
  const std::size_t c0_i = set.add("c0", uniform({b, u}, rng));
  const Tensor w = uniform({b, t, u}, rng);
  const Tensor w2 = uniform({b, u}, rng);
  std::vector<Tensor> params(set.values().begin(), set.values().end());
  return {std::string("cell/") + std::string(cell_kind_name(kind)),
          [=](Tape&, std::span<const Var> p) {
            const CellWeights<Var> cell = bind_cell(idx, p);
            const Var from_zero = run_sequence(cell, p[seq_i], false);
            CellState s{p[h0_i], std::holds_alternative<LstmWeights<Var>>(cell) ? std::optional<Var>(p[c0_i])
                                                                                  : std::nullopt};
            s = cell_step(cell, slice_time(p[seq_i], 0), s);
            Var loss = add(weighted_sum(from_zero, w), weighted_sum(*s.h, w2));
            if (s.c) loss = add(loss, weighted_sum(*s.c, w2));
            return loss;
          },
          std::move(params)};
}

Case bidirectional_case(CellKind kind, Rng& rng) {
  const std::size_t b = 2, t = 3, d = 2, u = 3, c = 3;
  ParameterSet set;
  const BiParams bi = make_bi_params(kind, d, u, rng);
  const BiWeights<std::size_t> idx{register_cell(set, "fw", bi.forward), register_cell(set, "bw", bi.backward)};
  const auto proj = register_weights(set, "proj", make_bi_projection(u, c, rng));
  const std::size_t seq_i = set.add("seq", uniform({b, t, d}, rng));
  const Tensor target = one_hot(random_labels(b, c, rng), c);
  const Tensor w = uniform({b, t, 2 * u}, rng);
  std::vector<Tensor> params(set.values().begin(), set.values().end());
  return {std::string("bidirectional/") + std::string(cell_kind_name(kind)),
          [=](Tape&, std::span<const Var> p) {
            const BiWeights<Var> cells{bind_cell(idx.forward, p), bind_cell(idx.backward, p)};
            const Var out = bidirectional_forward(cells, p[seq_i]);
            const Var last = slice_time(out, t - 1);
            const Var probs = project_bidirectional(bind_weights(proj, p), slice_cols(last, 0, u),
                                                    slice_cols(last, u, 2 * u));
            return add(weighted_sum(out, w), cross_entropy(probs, target));
          },
          std::move(params)};
}

Case model_case(HeadVariant variant, Rng& rng) {
  BackboneConfig backbone;
  backbone.height = 6;
  backbone.width = 5;
  backbone.channels = 2;
  backbone.stages = {{2, 3, 2}, {3, 3, 1}};
  HeadConfig head;
  head.variant = variant;
  head.rnn_units = 4;
  head.fc_neurons = 5;
  head.classes = 3;
  head.noise_stddev = 0.1;
  auto model = std::make_shared<SingleModel>(backbone, head, rng);
  const Tensor images = uniform({2, 6, 5, 2}, rng, 0.0, 1.0);
  const Tensor target = one_hot(random_labels(2, 3, rng), 3);
  const std::uint64_t noise_seed = rng();
  std::vector<Tensor> params(model->parameters().values().begin(), model->parameters().values().end());
  return {"model/" + std::string(head_variant_name(variant)),
          [=](Tape& tape, std::span<const Var> p) {
            Rng noise(noise_seed);
            return cross_entropy(model->forward(tape, p, images, Mode::Train, noise), target);
          },
          std::move(params)};
}

Case meta_head_case(Rng& rng) {
  E2EHeadConfig cfg;
  cfg.members = 3;
  cfg.classes = 3;
  cfg.hidden = 6;
  cfg.dropout_rate = 0.3;
  auto head = std::make_shared<E2EHead>(cfg, rng);
  const Tensor inputs = uniform({4, 9}, rng, 0.0, 1.0);
  const Tensor target = one_hot(random_labels(4, 3, rng), 3);
  const std::uint64_t mask_seed = rng();
  std::vector<Tensor> params(head->parameters().values().begin(), head->parameters().values().end());
  return {"meta_head",
          [=](Tape& tape, std::span<const Var> p) {
            Rng mask(mask_seed);
            return cross_entropy(head->forward(tape, p, inputs, Mode::Train, mask), target);
          },
          std::move(params)};
}

/// Smallest |input| over all leaky ReLU nodes of the case (infinity if none).
/// Central differences straddling the kink are meaningless.
double kink_margin(const Case& c) {
  Tape tape;
  std::vector<Var> leaves;
  for (const auto& p : c.params) leaves.push_back(tape.leaf(p));
  c.graph(tape, leaves);
  double margin = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < tape.size(); ++i) {
    if (tape.kind(i) != OpKind::LeakyRelu) continue;
    for (double v : tape.value(tape.inputs(i).at(0)).data()) margin = std::min(margin, std::abs(v));
  }
  return margin;
}

/// Redraws a random case until it keeps clear of leaky ReLU kinks.
template <class Make>
Case smooth_case(Make make, Rng& rng) {
  for (int attempt = 0; attempt < 1000; ++attempt) {
    Case c = make(rng);
    if (kink_margin(c) > 1e-3) return c;
  }
  throw NumericError("gradient suite: could not draw a case away from leaky ReLU kinks");
}

std::vector<OpKind> ops_of(const Case& c) {
  Tape tape;
  std::vector<Var> leaves;
  for (const auto& p : c.params) leaves.push_back(tape.leaf(p));
  c.graph(tape, leaves);
  std::set<OpKind> kinds;
  for (std::size_t i = 0; i < tape.size(); ++i) {
    const OpKind k = tape.kind(i);
    if (k != OpKind::Leaf && k != OpKind::Constant) kinds.insert(k);
  }
  return {kinds.begin(), kinds.end()};
}

}  // namespace

bool GradSuiteReport::passed() const {
  return std::all_of(cases.begin(), cases.end(), [](const GradSuiteCase& c) { return c.passed; });
}

std::vector<OpKind> GradSuiteReport::suspects() const {
  std::set<OpKind> candidates, cleared;
  bool first = true;
  for (const auto& c : cases) {
    if (c.passed) {
      cleared.insert(c.ops.begin(), c.ops.end());
      continue;
    }
    const std::set<OpKind> ops(c.ops.begin(), c.ops.end());
    if (first) {
      candidates = ops;
      first = false;
    } else {
      std::erase_if(candidates, [&](OpKind k) { return !ops.contains(k); });
    }
  }
  std::vector<OpKind> out;
  for (OpKind k : candidates)
    if (!cleared.contains(k)) out.push_back(k);
  return out;
}

GradSuiteReport run_gradient_suite(std::uint64_t seed, std::optional<OpKind> fault, double tolerance) {
  Rng rng(seed);
  std::vector<Case> cases = isolated_cases(rng);
  for (CellKind k : {CellKind::Rnn, CellKind::Lstm, CellKind::Gru}) cases.push_back(cell_case(k, rng));
  for (CellKind k : {CellKind::Rnn, CellKind::Lstm, CellKind::Gru}) cases.push_back(bidirectional_case(k, rng));
  for (HeadVariant v : {HeadVariant::Std, HeadVariant::Rnn, HeadVariant::Lstm, HeadVariant::Gru, HeadVariant::BiLstm})
    cases.push_back(smooth_case([v](Rng& r) { return model_case(v, r); }, rng));
  cases.push_back(smooth_case(meta_head_case, rng));

  GradSuiteReport report;
  report.tolerance = tolerance;
  for (const Case& c : cases) {
    GradSuiteCase out{c.name, ops_of(c), finite_difference_check(c.graph, c.params, 1e-5, fault), false};
    out.passed = out.result.max_rel_error < tolerance;
    for (OpKind k : out.ops) {
      auto [it, inserted] = report.per_op.emplace(k, out.result.max_rel_error);
      if (!inserted) it->second = std::max(it->second, out.result.max_rel_error);
    }
    report.cases.push_back(std::move(out));
  }
  return report;
}

std::string format_gradient_report(const GradSuiteReport& report) {
  std::string out;
  char line[256];
  out += "op                    max_rel_error\n";
  for (const auto& [op, err] : report.per_op) {
    std::snprintf(line, sizeof line, "%-21s %.3e\n", std::string(op_name(op)).c_str(), err);
    out += line;
  }
  out += "\ncase                  max_rel_error  status\n";
  for (const auto& c : report.cases) {
    std::snprintf(line, sizeof line, "%-21s %.3e      %s\n", c.name.c_str(), c.result.max_rel_error,
                  c.passed ? "ok" : "FAIL");
    out += line;
  }
  if (report.passed()) {
    std::snprintf(line, sizeof line, "\nall %zu checks below %.0e\n", report.cases.size(), report.tolerance);
    out += line;
  } else {
    out += "\nFAILED; suspect op(s):";
    for (OpKind k : report.suspects()) out += " " + std::string(op_name(k));
    out += "\n";
  }
  return out;
}

}  // namespace e2em
