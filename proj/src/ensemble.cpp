#include "e2em/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "binary_io.hpp"
#include "e2em/errors.hpp"
#include "e2em/ops.hpp"

namespace e2em {

namespace {

constexpr std::string_view kBatchMagic = "E2EMBTCH";

void require_same_shapes(std::string_view op, std::span<const Tensor> ts) {
  if (ts.empty()) throw ContractError(std::string(op) + ": needs at least one input");
  for (const Tensor& t : ts) {
    if (t.shape() != ts[0].shape()) {
      throw DimensionError(std::string(op) + ": shape " + shape_to_string(t.shape()) + " does not match " +
                           shape_to_string(ts[0].shape()));
    }
  }
}

}  // namespace

Tensor concat_distributions(std::span<const Tensor> ds) {
  require_same_shapes("concat_distributions", ds);
  const Tensor& first = ds[0];
  if (first.rank() != 1 && first.rank() != 2) {
    throw DimensionError("concat_distributions: expected [c] or [b x c], got " + shape_to_string(first.shape()));
  }
  const std::size_t n = ds.size();
  const std::size_t rows = first.rank() == 1 ? 1 : first.dim(0);
  const std::size_t c = first.rank() == 1 ? first.dim(0) : first.dim(1);
  Tensor out(first.rank() == 1 ? Shape{n * c} : Shape{rows, n * c});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t i = 0; i < c; ++i) out[r * n * c + j * c + i] = ds[j][r * c + i];
  return out;
}

std::vector<Tensor> split_distributions(const Tensor& stacked, std::size_t n) {
  if (n == 0) throw ContractError("split_distributions: n must be positive");
  const bool vec = stacked.rank() == 1;
  const std::size_t width = vec ? stacked.dim(0) : stacked.dim(1);
  if (stacked.rank() > 2 || width % n != 0) {
    throw DimensionError("split_distributions: width of " + shape_to_string(stacked.shape()) +
                         " is not a multiple of " + std::to_string(n));
  }
  const std::size_t rows = vec ? 1 : stacked.dim(0), c = width / n;
  std::vector<Tensor> out;
  for (std::size_t j = 0; j < n; ++j) {
    Tensor t(vec ? Shape{c} : Shape{rows, c});
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t i = 0; i < c; ++i) t[r * c + i] = stacked[r * width + j * c + i];
    out.push_back(std::move(t));
  }
  return out;
}

Tensor avg_ensemble(std::span<const Tensor> preds) {
  require_same_shapes("avg_ensemble", preds);
  Tensor out(preds[0].shape());
  for (const Tensor& p : preds)
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += p[i];
  const double n = static_cast<double>(preds.size());
  for (auto& v : out.data()) v /= n;
  return out;
}

Tensor prune(const Tensor& a, std::size_t keep) {
  if (a.rank() != 2) throw DimensionError("prune: expected [b x c], got " + shape_to_string(a.shape()));
  if (keep == 0) throw ContractError("prune: keep must be at least 1");
  if (!a.all_finite()) throw NumericError("prune: input contains NaN or infinite entries");
  const std::size_t b = a.dim(0), c = a.dim(1);
  Tensor out({b, c});
  std::vector<std::size_t> order(c);
  for (std::size_t r = 0; r < b; ++r) {
    const double* row = a.data().data() + r * c;
    if (keep == 1) {
      std::size_t best = 0;
      for (std::size_t i = 1; i < c; ++i)
        if (row[i] > row[best]) best = i;
      out[r * c + best] = row[best];
      continue;
    }
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return row[x] > row[y]; });
    for (std::size_t k = 0; k < std::min(keep, c); ++k) out[r * c + order[k]] = row[order[k]];
  }
  return out;
}

Tensor ext_softmax_ensemble(std::span<const Tensor> preds, std::size_t keep) {
  require_same_shapes("ext_softmax_ensemble", preds);
  std::vector<Tensor> pruned;
  pruned.reserve(preds.size());
  for (const Tensor& p : preds) pruned.push_back(prune(p, keep));
  return avg_ensemble(pruned);
}

namespace {

void check_rate(double rate) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout: rate must lie in [0, 1)");
}

Tensor dropout_mask(const Shape& shape, double rate, Rng& rng) {
  std::bernoulli_distribution drop(rate);
  const double scale = 1.0 / (1.0 - rate);
  Tensor mask(shape);
  for (auto& m : mask.data()) m = drop(rng) ? 0.0 : scale;
  return mask;
}

}  // namespace

Var dropout(Var x, double rate, Mode mode, Rng& rng) {
  check_rate(rate);
  if (mode == Mode::Eval || rate == 0.0) return x;
  return mul_const(x, dropout_mask(x.shape(), rate, rng));
}

Tensor dropout(const Tensor& x, double rate, Mode mode, Rng& rng) {
  check_rate(rate);
  if (mode == Mode::Eval || rate == 0.0) return x;
  Tensor out = dropout_mask(x.shape(), rate, rng);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= x[i];
  return out;
}

void E2EHeadConfig::validate() const {
  if (members == 0 || classes < 2) throw ConfigError("meta-head: need at least one member and two classes");
  if (hidden == 0) throw ConfigError("meta-head: hidden width must be positive");
  if (!(leaky_slope > 0.0 && leaky_slope < 1.0)) throw ConfigError("meta-head: leaky slope must lie in (0, 1)");
  check_rate(dropout_rate);
}

E2EHead::E2EHead(E2EHeadConfig cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  const std::size_t in = cfg_.input_width(), h = cfg_.hidden, c = cfg_.classes;
  params_.add("meta.theta1", glorot_uniform({in, h}, in, h, rng));
  if (cfg_.hidden_bias) params_.add("meta.bias1", Tensor::zeros({h}));
  params_.add("meta.theta2", glorot_uniform({h, c}, h, c, rng));
  params_.add("meta.bias2", Tensor::zeros({c}));
}

Var E2EHead::forward(Tape& tape, std::span<const Var> params, const Tensor& stacked, Mode mode, Rng& rng) const {
  if (params.size() != params_.size()) throw ContractError("E2EHead: parameter count mismatch");
  if (stacked.rank() != 2 || stacked.dim(1) != cfg_.input_width()) {
    throw DimensionError("E2EHead: expected inputs [b x " + std::to_string(cfg_.input_width()) + "], got " +
                         shape_to_string(stacked.shape()));
  }
  std::size_t i = 0;
  Var mu = matmul(tape.constant(stacked), params[i++]);
  if (cfg_.hidden_bias) mu = add_bias(mu, params[i++]);
  Var eta = dropout(leaky_relu(mu, cfg_.leaky_slope), cfg_.dropout_rate, mode, rng);
  const Var theta2 = params[i++];
  return softmax_rows(add_bias(matmul(eta, theta2), params[i]));
}

void EnsembleBatch::validate() const {
  if (members == 0 || classes == 0) throw ValidationError("ensemble batch: members and classes must be positive");
  if (inputs.rank() != 2 || inputs.dim(1) != members * classes) {
    throw DimensionError("ensemble batch: expected width " + std::to_string(members * classes) + ", inputs are " +
                         shape_to_string(inputs.shape()));
  }
  if (inputs.dim(0) != labels.size()) {
    throw ValidationError("ensemble batch: " + std::to_string(inputs.dim(0)) + " rows but " +
                          std::to_string(labels.size()) + " labels");
  }
  for (std::size_t y : labels)
    if (y >= classes) throw ValidationError("ensemble batch: label " + std::to_string(y) + " out of range");
}

EnsembleBatch build_ensemble_batch(std::span<const Classifier* const> members, const Tensor& inputs,
                                   std::vector<std::size_t> labels) {
  if (members.empty()) throw ContractError("build_ensemble_batch: no members");
  std::vector<Tensor> preds;
  for (const Classifier* m : members) preds.push_back(m->predict(inputs));
  EnsembleBatch batch{members.size(), members[0]->classes(), concat_distributions(preds), std::move(labels)};
  batch.validate();
  return batch;
}

void save_ensemble_batch(const EnsembleBatch& batch, const std::filesystem::path& path) {
  batch.validate();
  io::Writer w;
  w.bytes(kBatchMagic);
  w.u32_le(static_cast<std::uint32_t>(batch.members));
  w.u32_le(static_cast<std::uint32_t>(batch.classes));
  w.u32_le(static_cast<std::uint32_t>(batch.size()));
  for (double v : batch.inputs.data()) w.f32_le(static_cast<float>(v));
  for (std::size_t y : batch.labels) w.u32_le(static_cast<std::uint32_t>(y));
  io::write_file(path, w.buffer());
}

EnsembleBatch load_ensemble_batch(const std::filesystem::path& path) {
  const auto data = io::read_file(path);
  io::Reader r(data, "ensemble batch " + path.string());
  if (r.bytes(kBatchMagic.size(), "magic") != kBatchMagic) r.fail("bad magic", 0);
  EnsembleBatch batch;
  batch.members = r.u32_le("member count");
  batch.classes = r.u32_le("class count");
  const std::size_t count = r.u32_le("sample count");
  if (batch.members == 0 || batch.classes == 0 || count == 0) r.fail("zero member, class or sample count", 8);
  const std::size_t width = batch.members * batch.classes;
  r.need(count * width * 4 + count * 4, "table and labels");
  Tensor inputs({count, width});
  for (auto& v : inputs.data()) v = r.f32_le("table");
  batch.inputs = std::move(inputs);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t at = r.offset();
    const std::uint32_t y = r.u32_le("label");
    if (y >= batch.classes) r.fail("label " + std::to_string(y) + " out of range", at);
    batch.labels.push_back(y);
  }
  if (r.remaining() != 0) r.fail(std::to_string(r.remaining()) + " trailing bytes", r.offset());
  return batch;
}

std::vector<std::pair<std::size_t, std::size_t>> redundant_members(std::span<const Tensor> preds, double tolerance) {
  require_same_shapes("redundant_members", preds);
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t i = 0; i < preds.size(); ++i)
    for (std::size_t j = i + 1; j < preds.size(); ++j)
      if (max_abs_diff(preds[i], preds[j]) <= tolerance) out.emplace_back(i, j);
  return out;
}

std::size_t count_disagreements(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("count_disagreements: " + shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape()));
  }
  const auto x = argmax_rows(a), y = argmax_rows(b);
  std::size_t n = 0;
  for (std::size_t i = 0; i < x.size(); ++i) n += x[i] != y[i];
  return n;
}

}  // namespace e2em
