#include "e2em/optim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <random>

#include "binary_io.hpp"
#include "e2em/errors.hpp"
#include "e2em/metrics.hpp"
#include "e2em/ops.hpp"

namespace e2em {

AdamState make_adam_state(std::span<const Tensor> params, double lr, double decay, AdamConfig cfg, DecayTick tick) {
  if (!(lr > 0.0)) throw ConfigError("adam: learning rate must be positive");
  if (!(decay >= 0.0)) throw ConfigError("adam: decay must be non-negative");
  if (!(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0 && cfg.beta2 >= 0.0 && cfg.beta2 < 1.0 && cfg.epsilon > 0.0)) {
    throw ConfigError("adam: betas must lie in [0, 1) and epsilon must be positive");
  }
  AdamState s;
  s.lr = lr;
  s.cfg = cfg;
  s.decay = decay;
  s.tick = tick;
  for (const Tensor& p : params) {
    s.m.push_back(Tensor::zeros(p.shape()));
    s.v.push_back(Tensor::zeros(p.shape()));
  }
  return s;
}

double decayed_lr(const AdamState& s) { return s.lr / (1.0 + s.decay * static_cast<double>(s.iterations)); }

void adam_step(AdamState& s, std::span<Tensor> params, std::span<const Tensor> grads) {
  if (params.size() != grads.size() || params.size() != s.m.size()) {
    throw ContractError("adam_step: " + std::to_string(params.size()) + " parameters, " +
                        std::to_string(grads.size()) + " gradients, optimizer tracks " + std::to_string(s.m.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].shape() != params[i].shape() || s.m[i].shape() != params[i].shape()) {
      throw DimensionError("adam_step: gradient " + std::to_string(i) + " has shape " +
                           shape_to_string(grads[i].shape()) + ", parameter has " +
                           shape_to_string(params[i].shape()));
    }
    if (!grads[i].all_finite()) {
      throw NumericError("adam_step: gradient " + std::to_string(i) + " is not finite; step aborted");
    }
  }
  const double b1 = s.cfg.beta1, b2 = s.cfg.beta2, eps = s.cfg.epsilon;
  const std::size_t t = s.t + 1;
  const double td = static_cast<double>(t);
  const double lr_t = decayed_lr(s) * std::sqrt(1.0 - std::pow(b2, td)) / (1.0 - std::pow(b1, td));
  for (std::size_t i = 0; i < params.size(); ++i) {
    double* w = params[i].data().data();
    double* m = s.m[i].data().data();
    double* v = s.v[i].data().data();
    const double* g = grads[i].data().data();
    for (std::size_t k = 0; k < params[i].size(); ++k) {
      m[k] = b1 * m[k] + (1.0 - b1) * g[k];
      v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
      w[k] -= lr_t * m[k] / (std::sqrt(v[k]) + eps);
    }
  }
  s.t = t;
  if (s.tick == DecayTick::PerStep) ++s.iterations;
}

void adam_end_epoch(AdamState& s) {
  if (s.tick == DecayTick::PerEpoch) ++s.iterations;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr std::string_view kCkptMagic = "E2EMCKPT";

double f32(double x) { return round_to_float(x); }

Tensor rounded(const Tensor& t) {
  Tensor out = t;
  for (auto& x : out.data()) x = f32(x);
  return out;
}

bool reserved_name(std::string_view name) { return name.starts_with("meta/") || name.starts_with("adam/"); }

/// Counters go to disk as (low 16 bits, high 16 bits) pairs, exact in f32.
void push_counter(std::vector<double>& out, std::size_t v) {
  if (v > 0xFFFFFFFFull) throw ContractError("checkpoint: counter exceeds 32 bits");
  out.push_back(static_cast<double>(v & 0xFFFF));
  out.push_back(static_cast<double>(v >> 16));
}

std::size_t pop_counter(const Tensor& t, std::size_t at) {
  return static_cast<std::size_t>(t[at]) | (static_cast<std::size_t>(t[at + 1]) << 16);
}

}  // namespace

Checkpoint capture_checkpoint(const ParameterSet& params, const AdamState* optimizer, double val_accuracy,
                              double val_loss, std::size_t stage, std::size_t epoch) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (reserved_name(params.name(i))) throw ContractError("checkpoint: reserved parameter name " + params.name(i));
  }
  Checkpoint c;
  c.params = params.rounded_to_float();
  c.val_accuracy = f32(val_accuracy);
  c.val_loss = f32(val_loss);
  c.stage = stage;
  c.epoch = epoch;
  if (optimizer) {
    AdamState a = *optimizer;
    a.lr = f32(a.lr);
    a.cfg = {f32(a.cfg.beta1), f32(a.cfg.beta2), f32(a.cfg.epsilon)};
    a.decay = f32(a.decay);
    for (auto& m : a.m) m = rounded(m);
    for (auto& v : a.v) v = rounded(v);
    c.optimizer = std::move(a);
  }
  return c;
}

void restore_checkpoint(const Checkpoint& ckpt, ParameterSet& target) {
  for (std::size_t i = 0; i < target.size(); ++i) {
    const auto j = ckpt.params.find(target.name(i));
    if (!j) throw DimensionError("checkpoint does not contain tensor '" + target.name(i) + "'");
    const Tensor& src = ckpt.params.value(*j);
    if (src.shape() != target.value(i).shape()) {
      throw DimensionError("shape mismatch for tensor '" + target.name(i) + "': checkpoint " +
                           shape_to_string(src.shape()) + ", model " + shape_to_string(target.value(i).shape()));
    }
  }
  for (std::size_t j = 0; j < ckpt.params.size(); ++j) {
    if (!target.find(ckpt.params.name(j))) {
      throw DimensionError("checkpoint tensor '" + ckpt.params.name(j) + "' has no counterpart in the model");
    }
  }
  for (std::size_t i = 0; i < target.size(); ++i) target.value(i) = ckpt.params.value(*ckpt.params.find(target.name(i)));
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::vector<std::pair<std::string, Tensor>> entries;
  for (std::size_t i = 0; i < ckpt.params.size(); ++i) entries.emplace_back(ckpt.params.name(i), ckpt.params.value(i));
  entries.emplace_back("meta/metrics", Tensor::vector({ckpt.val_accuracy, ckpt.val_loss}));
  std::vector<double> counters;
  push_counter(counters, ckpt.stage);
  push_counter(counters, ckpt.epoch);
  entries.emplace_back("meta/counters", Tensor({4}, counters));
  if (ckpt.optimizer) {
    const AdamState& a = *ckpt.optimizer;
    entries.emplace_back("adam/config", Tensor::vector({a.lr, a.cfg.beta1, a.cfg.beta2, a.cfg.epsilon, a.decay,
                                                        a.tick == DecayTick::PerEpoch ? 1.0 : 0.0}));
    std::vector<double> ac;
    push_counter(ac, a.t);
    push_counter(ac, a.iterations);
    entries.emplace_back("adam/counters", Tensor({4}, ac));
    if (a.m.size() != ckpt.params.size()) throw ContractError("checkpoint: optimizer moments do not match parameters");
    for (std::size_t i = 0; i < a.m.size(); ++i) {
      entries.emplace_back("adam/m/" + ckpt.params.name(i), a.m[i]);
      entries.emplace_back("adam/v/" + ckpt.params.name(i), a.v[i]);
    }
  }

  io::Writer w;
  w.bytes(kCkptMagic);
  w.u32_le(Checkpoint::kVersion);
  w.u32_le(static_cast<std::uint32_t>(entries.size()));
  for (const auto& [name, t] : entries) {
    if (name.empty() || name.size() > 0xFFFF) throw ContractError("checkpoint: invalid tensor name length");
    if (t.rank() > 0xFF) throw ContractError("checkpoint: rank too large for tensor " + name);
    w.u16_le(static_cast<std::uint16_t>(name.size()));
    w.bytes(name);
    w.u8(static_cast<std::uint8_t>(t.rank()));
    for (std::size_t d : t.shape()) w.u32_le(static_cast<std::uint32_t>(d));
    for (double x : t.data()) w.f32_le(static_cast<float>(x));
  }
  io::write_file(path, w.buffer());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto data = io::read_file(path);
  io::Reader r(data, "checkpoint " + path.string());
  if (r.bytes(kCkptMagic.size(), "magic") != kCkptMagic) r.fail("bad magic (not a checkpoint file)", 0);
  const std::uint32_t version = r.u32_le("version");
  if (version != Checkpoint::kVersion) {
    r.fail("unsupported version " + std::to_string(version) + " (expected " + std::to_string(Checkpoint::kVersion) + ")", 8);
  }
  const std::uint32_t count = r.u32_le("tensor count");

  std::vector<std::pair<std::string, Tensor>> entries;
  std::map<std::string, std::size_t, std::less<>> index;
  for (std::uint32_t e = 0; e < count; ++e) {
    const std::size_t start = r.offset();
    const std::uint16_t len = r.u16_le("name length");
    if (len == 0) r.fail("empty tensor name", start);
    std::string name = r.bytes(len, "tensor name");
    const std::size_t rank_at = r.offset();
    const std::uint8_t rank = r.u8("rank");
    if (rank == 0) r.fail("tensor '" + name + "' has rank 0", rank_at);
    Shape shape;
    for (std::uint8_t k = 0; k < rank; ++k) {
      const std::size_t dim_at = r.offset();
      const std::uint32_t d = r.u32_le("dimension");
      if (d == 0) r.fail("tensor '" + name + "' has a zero dimension", dim_at);
      shape.push_back(d);
    }
    const std::size_t n = shape_numel(shape);
    r.need(n * 4, "payload of '" + name + "'");
    Tensor t(shape);
    for (auto& x : t.data()) x = r.f32_le("payload");
    if (index.count(name)) r.fail("duplicate tensor '" + name + "'", start);
    index[name] = entries.size();
    entries.emplace_back(std::move(name), std::move(t));
  }
  if (r.remaining() != 0) r.fail(std::to_string(r.remaining()) + " trailing bytes after last tensor", r.offset());

  auto get = [&](std::string_view name, std::size_t expected) -> const Tensor& {
    const auto it = index.find(name);
    if (it == index.end()) throw FormatError(r.what() + ": missing tensor '" + std::string(name) + "'");
    const Tensor& t = entries[it->second].second;
    if (t.size() != expected) throw FormatError(r.what() + ": tensor '" + std::string(name) + "' has wrong size");
    return t;
  };

  Checkpoint c;
  for (const auto& [name, t] : entries)
    if (!reserved_name(name)) c.params.add(name, t);
  const Tensor& metrics = get("meta/metrics", 2);
  c.val_accuracy = metrics[0];
  c.val_loss = metrics[1];
  const Tensor& counters = get("meta/counters", 4);
  c.stage = pop_counter(counters, 0);
  c.epoch = pop_counter(counters, 2);
  if (index.count("adam/config")) {
    const Tensor& cfg = get("adam/config", 6);
    const Tensor& ac = get("adam/counters", 4);
    AdamState a;
    a.lr = cfg[0];
    a.cfg = {cfg[1], cfg[2], cfg[3]};
    a.decay = cfg[4];
    a.tick = cfg[5] != 0.0 ? DecayTick::PerEpoch : DecayTick::PerStep;
    a.t = pop_counter(ac, 0);
    a.iterations = pop_counter(ac, 2);
    for (std::size_t i = 0; i < c.params.size(); ++i) {
      a.m.push_back(get("adam/m/" + c.params.name(i), c.params.value(i).size()).reshaped(c.params.value(i).shape()));
      a.v.push_back(get("adam/v/" + c.params.name(i), c.params.value(i).size()).reshaped(c.params.value(i).shape()));
    }
    c.optimizer = std::move(a);
  }
  return c;
}

// ---------------------------------------------------------------------------
// Training

void TrainData::validate(std::size_t classes) const {
  if (train_y.empty() || train_x.empty() || train_x.dim(0) != train_y.size()) {
    throw ValidationError("training split: " + (train_x.empty() ? std::string("no inputs") : shape_to_string(train_x.shape())) +
                          " vs " + std::to_string(train_y.size()) + " labels");
  }
  if (val_y.empty() || val_x.empty() || val_x.dim(0) != val_y.size()) {
    throw ValidationError("a non-empty validation split is required for checkpoint selection");
  }
  for (const auto* ys : {&train_y, &val_y})
    for (std::size_t y : *ys)
      if (y >= classes) throw ValidationError("label " + std::to_string(y) + " out of range for " + std::to_string(classes) + " classes");
}

StagedPlan StagedPlan::standard() { return StagedPlan{{{1e-4, 40}, {1e-5, 15}, {1e-6, 15}}}; }

void StagedPlan::validate() const {
  if (stages.empty()) throw ConfigError("staged plan: no stages");
  for (std::size_t i = 0; i < stages.size(); ++i) {
    if (!(stages[i].lr > 0.0)) throw ConfigError("staged plan: stage " + std::to_string(i) + " rate must be positive");
    if (i > 0 && !(stages[i].lr < stages[i - 1].lr)) {
      throw ConfigError("staged plan: rates must strictly decrease (stage " + std::to_string(i) + ")");
    }
  }
}

Evaluation evaluate(const Classifier& model, const ParameterSet& params, const Tensor& x,
                    std::span<const std::size_t> y, std::size_t batch_size) {
  const Tensor preds = model.predict(params, x, batch_size);
  return {mean_cross_entropy(preds, y), accuracy(preds, y)};
}

StageResult run_stage(Classifier& model, const TrainData& data, const StageSpec& spec, std::size_t stage_index,
                      const TrainOptions& options, Rng& rng) {
  const std::size_t classes = model.classes();
  data.validate(classes);
  if (options.batch_size == 0) throw ConfigError("batch size must be positive");
  ParameterSet& params = model.parameters();
  const double decay =
      options.decay.value_or(spec.epochs > 0 ? spec.lr / static_cast<double>(spec.epochs) : 0.0);
  AdamState adam = make_adam_state(params.values(), spec.lr, decay, options.adam, options.tick);

  auto validate_now = [&] {
    return evaluate(model, params.rounded_to_float(), data.val_x, data.val_y, options.eval_batch);
  };
  const Evaluation initial = validate_now();
  StageResult result{capture_checkpoint(params, &adam, initial.accuracy, initial.loss, stage_index, 0), {}};
  double best_acc = initial.accuracy, best_loss = initial.loss;

  const std::size_t n = data.train_y.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::size_t iteration = 0, stale = 0;
  for (std::size_t epoch = 1; epoch <= spec.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t begin = 0; begin < n; begin += options.batch_size) {
      const std::size_t end = std::min(n, begin + options.batch_size);
      const std::span<const std::size_t> idx(order.data() + begin, end - begin);
      Tensor xb = data.train_x.gather_rows(idx);
      if (options.augment) xb = options.augment(xb, rng);
      std::vector<std::size_t> yb;
      for (std::size_t i : idx) yb.push_back(data.train_y[i]);

      Tape tape;
      const std::vector<Var> vars = params.bind(tape);
      const Var probs = model.forward(tape, vars, xb, Mode::Train, rng);
      const Var loss = cross_entropy(probs, one_hot(yb, classes));
      const double lv = loss.value().item();
      if (!std::isfinite(lv)) {
        throw NumericError("training diverged: loss is " + std::to_string(lv) + " at stage " +
                           std::to_string(stage_index) + ", epoch " + std::to_string(epoch) + ", iteration " +
                           std::to_string(iteration + 1) + " (lr " + std::to_string(decayed_lr(adam)) + ")");
      }
      tape.backward(loss);
      std::vector<Tensor> grads;
      grads.reserve(vars.size());
      for (const Var& v : vars) grads.push_back(tape.gradient(v));
      adam_step(adam, params.values(), grads);
      ++iteration;

      loss_sum += lv * static_cast<double>(idx.size());
      const auto arg = argmax_rows(probs.value());
      for (std::size_t k = 0; k < yb.size(); ++k) correct += arg[k] == yb[k];
    }
    adam_end_epoch(adam);

    const Evaluation ev = validate_now();
    const LogRow row{stage_index, epoch, iteration, decayed_lr(adam), loss_sum / static_cast<double>(n),
                     static_cast<double>(correct) / static_cast<double>(n), ev.loss, ev.accuracy};
    result.log.push_back(row);
    if (options.on_epoch) options.on_epoch(row);

    if (ev.accuracy > best_acc || (ev.accuracy == best_acc && ev.loss < best_loss)) {
      best_acc = ev.accuracy;
      best_loss = ev.loss;
      result.best = capture_checkpoint(params, &adam, ev.accuracy, ev.loss, stage_index, epoch);
      stale = 0;
    } else if (options.patience > 0 && ++stale >= options.patience) {
      break;
    }
  }
  return result;
}

StagedResult staged_train(Classifier& model, const TrainData& data, const StagedPlan& plan,
                          const TrainOptions& options, std::size_t first_stage) {
  plan.validate();
  if (first_stage >= plan.stages.size()) {
    throw ContractError("staged_train: first stage " + std::to_string(first_stage) + " beyond plan of " +
                        std::to_string(plan.stages.size()));
  }
  StagedResult out;
  for (std::size_t s = first_stage; s < plan.stages.size(); ++s) {
    if (!out.stage_best.empty()) restore_checkpoint(out.stage_best.back(), model.parameters());
    std::seed_seq seq{static_cast<std::uint32_t>(options.seed), static_cast<std::uint32_t>(options.seed >> 32),
                      static_cast<std::uint32_t>(s)};
    Rng rng(seq);
    StageResult r = run_stage(model, data, plan.stages[s], s, options, rng);
    out.log.insert(out.log.end(), r.log.begin(), r.log.end());
    out.stage_best.push_back(std::move(r.best));
  }
  // Each stage starts from the previous best, so the last stage's best is the
  // best overall.
  out.best = out.stage_best.back();
  restore_checkpoint(out.best, model.parameters());
  return out;
}

void write_training_log(const std::filesystem::path& path, std::span<const LogRow> rows) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  out << "stage,epoch,iteration,lr,train_loss,train_acc,val_loss,val_acc\n";
  char buf[512];
  for (const LogRow& r : rows) {
    std::snprintf(buf, sizeof buf, "%zu,%zu,%zu,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.stage, r.epoch, r.iteration, r.lr,
                  r.train_loss, r.train_acc, r.val_loss, r.val_acc);
    out << buf;
  }
}

}  // namespace e2em
