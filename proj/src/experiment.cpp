#include "e2em/experiment.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <memory>
#include <numeric>
#include <ostream>
#include <sstream>

#include "e2em/errors.hpp"
#include "e2em/metrics.hpp"

namespace e2em {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Value parsing and formatting

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(const std::string& s, char sep = ',') {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(trim(item));
  return out;
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

std::uint64_t parse_u64(const std::string& v) {
  const std::string t = trim(v);
  if (t.empty() || t[0] == '-') throw ConfigError("expected a non-negative integer, got '" + v + "'");
  char* end = nullptr;
  errno = 0;
  const unsigned long long x = std::strtoull(t.c_str(), &end, 10);
  if (errno != 0 || *end != '\0') throw ConfigError("expected a non-negative integer, got '" + v + "'");
  return x;
}

std::size_t parse_size(const std::string& v) { return static_cast<std::size_t>(parse_u64(v)); }

double parse_double(const std::string& v) {
  const std::string t = trim(v);
  char* end = nullptr;
  errno = 0;
  const double x = std::strtod(t.c_str(), &end);
  if (t.empty() || errno != 0 || *end != '\0' || !std::isfinite(x)) {
    throw ConfigError("expected a number, got '" + v + "'");
  }
  return x;
}

bool parse_bool(const std::string& v) {
  const std::string t = lower(trim(v));
  if (t == "true" || t == "1" || t == "yes" || t == "on") return true;
  if (t == "false" || t == "0" || t == "no" || t == "off") return false;
  throw ConfigError("expected true/false, got '" + v + "'");
}

HeadVariant parse_variant(const std::string& v) {
  if (auto h = head_variant_from_name(trim(v))) return *h;
  throw ConfigError("unknown head variant '" + v + "' (expected STD, RNN, LSTM, GRU or BiLSTM)");
}

std::vector<HeadVariant> parse_variants(const std::string& v) {
  std::vector<HeadVariant> out;
  for (const auto& item : split_list(v)) out.push_back(parse_variant(item));
  return out;
}

/// "1e-4:40,1e-5:15" -> stages.
StagedPlan parse_plan(const std::string& v) {
  StagedPlan plan;
  for (const auto& item : split_list(v)) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw ConfigError("plan stage '" + item + "' is not rate:epochs");
    plan.stages.push_back({parse_double(item.substr(0, colon)), parse_size(item.substr(colon + 1))});
  }
  return plan;
}

/// "16x3s2,32x3s2" -> filters x kernel, stride.
std::vector<ConvStage> parse_stages(const std::string& v) {
  std::vector<ConvStage> out;
  for (const auto& item : split_list(v)) {
    const auto x = item.find('x'), s = item.find('s');
    if (x == std::string::npos || s == std::string::npos || s < x) {
      throw ConfigError("conv stage '" + item + "' is not <filters>x<kernel>s<stride>");
    }
    out.push_back({parse_size(item.substr(0, x)), parse_size(item.substr(x + 1, s - x - 1)),
                   parse_size(item.substr(s + 1))});
  }
  return out;
}

std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::string fmt_bool(bool b) { return b ? "true" : "false"; }

std::string fmt_plan(const StagedPlan& p) {
  std::string out;
  for (const auto& s : p.stages) out += (out.empty() ? "" : ",") + fmt(s.lr) + ":" + std::to_string(s.epochs);
  return out;
}

std::string fmt_variants(const std::vector<HeadVariant>& vs) {
  std::string out;
  for (auto v : vs) out += (out.empty() ? "" : ",") + std::string(head_variant_name(v));
  return out;
}

std::string fmt_stages(const std::vector<ConvStage>& stages) {
  std::string out;
  for (const auto& s : stages) {
    out += (out.empty() ? "" : ",") + std::to_string(s.filters) + "x" + std::to_string(s.kernel) + "s" +
           std::to_string(s.stride);
  }
  return out;
}

std::string fmt_paths(const std::vector<fs::path>& ps) {
  std::string out;
  for (const auto& p : ps) out += (out.empty() ? "" : ",") + p.string();
  return out;
}

std::string dataset_kind_name(DatasetKind k) {
  switch (k) {
    case DatasetKind::Synthetic: return "synthetic";
    case DatasetKind::Idx: return "idx";
    case DatasetKind::Cifar10: return "cifar10";
  }
  return "?";
}

struct KeyDef {
  std::string name;
  std::string help;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

template <class Field>
KeyDef size_key(std::string name, std::string help, Field field) {
  return {std::move(name), std::move(help),
          [field](ExperimentConfig& c, const std::string& v) { field(c) = parse_size(v); },
          [field](const ExperimentConfig& c) { return std::to_string(field(c)); }};
}

template <class Field>
KeyDef u64_key(std::string name, std::string help, Field field) {
  return {std::move(name), std::move(help),
          [field](ExperimentConfig& c, const std::string& v) { field(c) = parse_u64(v); },
          [field](const ExperimentConfig& c) { return std::to_string(field(c)); }};
}

template <class Field>
KeyDef double_key(std::string name, std::string help, Field field) {
  return {std::move(name), std::move(help),
          [field](ExperimentConfig& c, const std::string& v) { field(c) = parse_double(v); },
          [field](const ExperimentConfig& c) { return fmt(field(c)); }};
}

template <class Field>
KeyDef bool_key(std::string name, std::string help, Field field) {
  return {std::move(name), std::move(help),
          [field](ExperimentConfig& c, const std::string& v) { field(c) = parse_bool(v); },
          [field](const ExperimentConfig& c) { return fmt_bool(field(c)); }};
}

#define E2EM_FIELD(expr) [](auto& c) -> auto& { return c.expr; }

const std::vector<KeyDef>& key_defs() {
  static const std::vector<KeyDef> defs = [] {
    std::vector<KeyDef> d;
    d.push_back({"dataset", "synthetic | idx | cifar10",
                 [](ExperimentConfig& c, const std::string& v) {
                   const std::string t = lower(trim(v));
                   if (t == "synthetic") c.data.kind = DatasetKind::Synthetic;
                   else if (t == "idx" || t == "fashion-mnist" || t == "mnist") c.data.kind = DatasetKind::Idx;
                   else if (t == "cifar10" || t == "cifar-10") c.data.kind = DatasetKind::Cifar10;
                   else throw ConfigError("unknown dataset '" + v + "' (expected synthetic, idx or cifar10)");
                 },
                 [](const ExperimentConfig& c) { return dataset_kind_name(c.data.kind); }});
    d.push_back({"data_dir", "directory holding the IDX or CIFAR-10 binary files",
                 [](ExperimentConfig& c, const std::string& v) { c.data.dir = trim(v); },
                 [](const ExperimentConfig& c) { return c.data.dir.string(); }});
    d.push_back(size_key("train_limit", "use only the first N training samples (0 = all)", E2EM_FIELD(data.train_limit)));
    d.push_back(size_key("test_limit", "use only the first N test samples (0 = all)", E2EM_FIELD(data.test_limit)));
    d.push_back(size_key("synthetic.samples", "synthetic training samples", E2EM_FIELD(data.synthetic.samples)));
    d.push_back(size_key("synthetic.test_samples", "synthetic test samples", E2EM_FIELD(data.synthetic_test_samples)));
    d.push_back(size_key("synthetic.height", "synthetic image height", E2EM_FIELD(data.synthetic.height)));
    d.push_back(size_key("synthetic.width", "synthetic image width", E2EM_FIELD(data.synthetic.width)));
    d.push_back(size_key("synthetic.channels", "synthetic image channels", E2EM_FIELD(data.synthetic.channels)));
    d.push_back(size_key("synthetic.classes", "synthetic class count", E2EM_FIELD(data.synthetic.classes)));
    d.push_back(size_key("synthetic.blobs", "blobs per synthetic class", E2EM_FIELD(data.synthetic.blobs_per_class)));
    d.push_back(double_key("synthetic.jitter", "max blob jitter in pixels", E2EM_FIELD(data.synthetic.jitter)));
    d.push_back(double_key("synthetic.noise", "pixel noise stddev", E2EM_FIELD(data.synthetic.noise)));
    d.push_back(u64_key("synthetic.pattern_seed", "seed of the class prototypes", E2EM_FIELD(data.synthetic.pattern_seed)));
    d.push_back(u64_key("synthetic.seed", "seed of the synthetic samples", E2EM_FIELD(data.synthetic.seed)));

    d.push_back(size_key("backbone.height", "model input height (0 = dataset)", E2EM_FIELD(backbone.height)));
    d.push_back(size_key("backbone.width", "model input width (0 = dataset)", E2EM_FIELD(backbone.width)));
    d.push_back(size_key("backbone.channels", "model input channels (0 = dataset)", E2EM_FIELD(backbone.channels)));
    d.push_back({"backbone.stages", "conv stages as <filters>x<kernel>s<stride>, comma separated",
                 [](ExperimentConfig& c, const std::string& v) { c.backbone.stages = parse_stages(v); },
                 [](const ExperimentConfig& c) { return fmt_stages(c.backbone.stages); }});
    d.push_back(double_key("backbone.leaky_slope", "leaky ReLU slope in the backbone", E2EM_FIELD(backbone.leaky_slope)));

    d.push_back({"head.variant", "STD | RNN | LSTM | GRU | BiLSTM",
                 [](ExperimentConfig& c, const std::string& v) { c.head.variant = parse_variant(v); },
                 [](const ExperimentConfig& c) { return std::string(head_variant_name(c.head.variant)); }});
    d.push_back(size_key("head.rnn_units", "recurrent units (BiLSTM: split over both directions)", E2EM_FIELD(head.rnn_units)));
    d.push_back(double_key("head.noise_stddev", "Gaussian noise stddev after the recurrent module", E2EM_FIELD(head.noise_stddev)));
    d.push_back(size_key("head.fc_neurons", "fully connected neurons before the classifier", E2EM_FIELD(head.fc_neurons)));
    d.push_back(size_key("head.classes", "class count (0 = dataset)", E2EM_FIELD(head.classes)));
    d.push_back(double_key("head.leaky_slope", "leaky ReLU slope of the fully connected layer", E2EM_FIELD(head.leaky_slope)));

    d.push_back({"plan", "training stages as rate:epochs, comma separated",
                 [](ExperimentConfig& c, const std::string& v) { c.plan = parse_plan(v); },
                 [](const ExperimentConfig& c) { return fmt_plan(c.plan); }});
    d.push_back(size_key("batch_size", "minibatch size", E2EM_FIELD(batch_size)));
    d.push_back({"decay", "learning-rate decay per tick, or 'auto' for rate / epochs",
                 [](ExperimentConfig& c, const std::string& v) {
                   if (lower(trim(v)) == "auto") c.decay.reset();
                   else c.decay = parse_double(v);
                 },
                 [](const ExperimentConfig& c) { return c.decay ? fmt(*c.decay) : std::string("auto"); }});
    d.push_back({"decay_tick", "step | epoch",
                 [](ExperimentConfig& c, const std::string& v) {
                   const std::string t = lower(trim(v));
                   if (t == "step") c.decay_tick = DecayTick::PerStep;
                   else if (t == "epoch") c.decay_tick = DecayTick::PerEpoch;
                   else throw ConfigError("decay_tick must be step or epoch, got '" + v + "'");
                 },
                 [](const ExperimentConfig& c) {
                   return std::string(c.decay_tick == DecayTick::PerStep ? "step" : "epoch");
                 }});
    d.push_back(size_key("patience", "epochs without improvement before a stage stops (0 = never)", E2EM_FIELD(patience)));
    d.push_back(size_key("eval_batch", "batch size for evaluation", E2EM_FIELD(eval_batch)));
    d.push_back(size_key("folds", "k for k-fold validation (0 or 1 = ratio split)", E2EM_FIELD(folds)));
    d.push_back(size_key("fold", "held-out fold index", E2EM_FIELD(fold)));
    d.push_back(double_key("val_fraction", "validation fraction of the ratio split", E2EM_FIELD(val_fraction)));

    d.push_back(size_key("repeats", "repeated trials per configuration", E2EM_FIELD(repeats)));
    d.push_back({"variants", "head variants compared by compare-rnn",
                 [](ExperimentConfig& c, const std::string& v) { c.variants = parse_variants(v); },
                 [](const ExperimentConfig& c) { return fmt_variants(c.variants); }});

    d.push_back(size_key("candidates", "level-1 models trained by e2e3m before top-3 selection", E2EM_FIELD(candidates)));
    d.push_back({"members", "level-1 checkpoint paths, comma separated",
                 [](ExperimentConfig& c, const std::string& v) {
                   c.member_checkpoints.clear();
                   for (const auto& p : split_list(v)) c.member_checkpoints.emplace_back(p);
                 },
                 [](const ExperimentConfig& c) { return fmt_paths(c.member_checkpoints); }});
    d.push_back({"member_variants", "head variant of each member checkpoint (empty = head.variant)",
                 [](ExperimentConfig& c, const std::string& v) { c.member_variants = parse_variants(v); },
                 [](const ExperimentConfig& c) { return fmt_variants(c.member_variants); }});
    d.push_back(bool_key("identical_members", "use one trained member three times (redundancy check)", E2EM_FIELD(identical_members)));
    d.push_back(size_key("meta.hidden", "meta-head hidden neurons", E2EM_FIELD(meta.hidden)));
    d.push_back(double_key("meta.leaky_slope", "meta-head leaky ReLU slope", E2EM_FIELD(meta.leaky_slope)));
    d.push_back(double_key("meta.dropout", "meta-head dropout rate", E2EM_FIELD(meta.dropout_rate)));
    d.push_back(bool_key("meta.hidden_bias", "bias on the meta-head hidden layer", E2EM_FIELD(meta.hidden_bias)));
    d.push_back({"meta_plan", "meta-head training stages as rate:epochs",
                 [](ExperimentConfig& c, const std::string& v) { c.meta_plan = parse_plan(v); },
                 [](const ExperimentConfig& c) { return fmt_plan(c.meta_plan); }});

    d.push_back(double_key("augment.rotation", "rotation range in degrees", E2EM_FIELD(augment.rotation_deg)));
    d.push_back(double_key("augment.width_shift", "horizontal shift range (fraction of width)", E2EM_FIELD(augment.width_shift)));
    d.push_back(double_key("augment.height_shift", "vertical shift range (fraction of height)", E2EM_FIELD(augment.height_shift)));
    d.push_back(double_key("augment.shear", "shear range", E2EM_FIELD(augment.shear)));
    d.push_back(double_key("augment.zoom", "zoom range", E2EM_FIELD(augment.zoom)));
    d.push_back(bool_key("augment.horizontal_flip", "random horizontal flips", E2EM_FIELD(augment.horizontal_flip)));
    d.push_back(bool_key("augment.vertical_flip", "random vertical flips", E2EM_FIELD(augment.vertical_flip)));
    d.push_back(double_key("augment.channel_shift", "additive channel shift range", E2EM_FIELD(augment.channel_shift)));
    d.push_back(size_key("augment.crops", "test-time crops (1 = single full-image pass)", E2EM_FIELD(augment.crops)));
    d.push_back(size_key("augment.pre_crop", "resolution images are upsampled to before cropping", E2EM_FIELD(augment.pre_crop)));
    d.push_back(size_key("augment.crop", "crop resolution (the model input when tta is on)", E2EM_FIELD(augment.crop)));
    d.push_back(bool_key("train_augment", "augment training batches", E2EM_FIELD(train_augment)));
    d.push_back(bool_key("tta", "random-crop test-time augmentation in ensemble-eval", E2EM_FIELD(tta)));

    d.push_back({"resume", "checkpoint to resume training from (continues at its stage + 1)",
                 [](ExperimentConfig& c, const std::string& v) {
                   if (trim(v).empty()) c.resume.reset();
                   else c.resume = fs::path(trim(v));
                 },
                 [](const ExperimentConfig& c) { return c.resume ? c.resume->string() : std::string(); }});
    d.push_back(u64_key("seed", "master seed", E2EM_FIELD(seed)));
    d.push_back({"out_dir", "run directory for all outputs",
                 [](ExperimentConfig& c, const std::string& v) { c.out_dir = trim(v); },
                 [](const ExperimentConfig& c) { return c.out_dir.string(); }});
    return d;
  }();
  return defs;
}

#undef E2EM_FIELD

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> out;
    for (const auto& d : key_defs()) out.push_back({d.name, d.help});
    return out;
  }();
  return keys;
}

void apply_setting(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  const std::string k = trim(key);
  for (const auto& d : key_defs()) {
    if (d.name != k) continue;
    try {
      d.set(cfg, value);
    } catch (const ConfigError& e) {
      throw ConfigError(k + ": " + e.what());
    }
    return;
  }
  throw ConfigError("unknown setting '" + k + "'");
}

void apply_config_text(ExperimentConfig& cfg, const std::string& text, const std::string& origin) {
  std::vector<std::string> errors;
  std::stringstream in(text);
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    const auto hash = line.find('#');
    const std::string body = trim(hash == std::string::npos ? line : line.substr(0, hash));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    const std::string where = origin + ":" + std::to_string(lineno) + ": ";
    if (eq == std::string::npos) {
      errors.push_back(where + "expected key = value");
      continue;
    }
    try {
      apply_setting(cfg, body.substr(0, eq), body.substr(eq + 1));
    } catch (const ConfigError& e) {
      errors.push_back(where + e.what());
    }
  }
  if (!errors.empty()) {
    std::string msg = std::to_string(errors.size()) + " configuration error(s):";
    for (const auto& e : errors) msg += "\n  " + e;
    throw ConfigError(msg);
  }
}

ExperimentConfig load_config_file(const fs::path& path, ExperimentConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  apply_config_text(base, ss.str(), path.string());
  return base;
}

std::string config_to_text(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& d : key_defs()) out += d.name + " = " + d.get(cfg) + "\n";
  return out;
}

std::vector<std::string> ExperimentConfig::problems() const {
  std::vector<std::string> out;
  auto check = [&](const std::string& what, auto&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      out.push_back(what + ": " + e.what());
    }
  };
  check("plan", [&] { plan.validate(); });
  check("meta_plan", [&] { meta_plan.validate(); });
  check("head", [&] {
    HeadConfig h = head;
    if (h.classes == 0) h.classes = 2;
    h.validate();
  });
  check("meta", [&] {
    E2EHeadConfig m = meta;
    m.members = 3;
    m.classes = 2;
    m.validate();
  });
  check("augment", [&] { augment.validate(); });
  if (backbone.stages.empty()) out.push_back("backbone.stages: at least one conv stage is required");
  for (const auto& s : backbone.stages) {
    if (s.filters == 0 || s.kernel == 0 || s.stride == 0) {
      out.push_back("backbone.stages: filters, kernel and stride must be positive");
      break;
    }
  }
  if (batch_size == 0) out.push_back("batch_size: must be positive");
  if (eval_batch == 0) out.push_back("eval_batch: must be positive");
  if (folds > 1 && fold >= folds) {
    out.push_back("fold: index " + std::to_string(fold) + " out of range for " + std::to_string(folds) + " folds");
  }
  if (folds <= 1 && !(val_fraction > 0.0 && val_fraction < 1.0)) out.push_back("val_fraction: must lie in (0, 1)");
  if (repeats == 0) out.push_back("repeats: must be at least 1");
  if (variants.empty()) out.push_back("variants: at least one head variant is required");
  if (candidates < 3) out.push_back("candidates: at least 3 level-1 models are required");
  if (!member_variants.empty() && member_variants.size() != member_checkpoints.size()) {
    out.push_back("member_variants: " + std::to_string(member_variants.size()) + " variants for " +
                  std::to_string(member_checkpoints.size()) + " member checkpoints");
  }
  for (const auto& p : member_checkpoints) {
    if (!fs::exists(p)) out.push_back("members: checkpoint " + p.string() + " does not exist");
  }
  if (resume && !fs::exists(*resume)) out.push_back("resume: checkpoint " + resume->string() + " does not exist");
  if (data.kind != DatasetKind::Synthetic && data.dir.empty()) out.push_back("data_dir: required for this dataset");
  if (data.kind == DatasetKind::Synthetic && (data.synthetic.samples == 0 || data.synthetic_test_samples == 0)) {
    out.push_back("synthetic: sample counts must be positive");
  }
  if (tta && (backbone.height != 0 && backbone.height != augment.crop)) {
    out.push_back("tta: backbone.height must equal augment.crop (or be 0)");
  }
  if (tta && (backbone.width != 0 && backbone.width != augment.crop)) {
    out.push_back("tta: backbone.width must equal augment.crop (or be 0)");
  }
  return out;
}

void ExperimentConfig::validate() const {
  const auto p = problems();
  if (p.empty()) return;
  std::string msg = std::to_string(p.size()) + " configuration error(s):";
  for (const auto& e : p) msg += "\n  " + e;
  throw ConfigError(msg);
}

// ---------------------------------------------------------------------------
// Data

namespace {

Dataset first_n(const Dataset& d, std::size_t limit) {
  if (limit == 0 || limit >= d.size()) return d;
  std::vector<std::size_t> idx(limit);
  std::iota(idx.begin(), idx.end(), 0);
  return d.subset(idx);
}

}  // namespace

LoadedData load_dataset(const DatasetSpec& spec) {
  LoadedData out;
  switch (spec.kind) {
    case DatasetKind::Synthetic: {
      out.train = make_synthetic_dataset(spec.synthetic);
      SyntheticConfig test = spec.synthetic;
      test.samples = spec.synthetic_test_samples;
      test.seed = spec.synthetic.seed ^ 0x9E3779B97F4A7C15ull;
      out.test = make_synthetic_dataset(test);
      out.train.name = "synthetic-train";
      out.test.name = "synthetic-test";
      break;
    }
    case DatasetKind::Idx:
      out.train = load_idx(spec.dir / "train-images-idx3-ubyte", spec.dir / "train-labels-idx1-ubyte");
      out.test = load_idx(spec.dir / "t10k-images-idx3-ubyte", spec.dir / "t10k-labels-idx1-ubyte");
      break;
    case DatasetKind::Cifar10: {
      std::vector<fs::path> batches;
      for (int i = 1; i <= 5; ++i) batches.push_back(spec.dir / ("data_batch_" + std::to_string(i) + ".bin"));
      out.train = load_cifar10_binary(batches);
      const fs::path test[] = {spec.dir / "test_batch.bin"};
      out.test = load_cifar10_binary(test);
      break;
    }
  }
  out.train = first_n(out.train, spec.train_limit);
  out.test = first_n(out.test, spec.test_limit);
  out.train.validate();
  out.test.validate();
  return out;
}

BackboneConfig resolve_backbone(const BackboneConfig& cfg, const Dataset& data) {
  BackboneConfig b = cfg;
  if (b.height == 0) b.height = data.height();
  if (b.width == 0) b.width = data.width();
  if (b.channels == 0) b.channels = data.channels();
  if (b.channels != data.channels()) {
    throw ConfigError("backbone.channels is " + std::to_string(b.channels) + " but the data has " +
                      std::to_string(data.channels()));
  }
  if (b.height < data.height() || b.width < data.width()) {
    throw ConfigError("model input " + std::to_string(b.height) + "x" + std::to_string(b.width) +
                      " is smaller than the data (" + std::to_string(data.height()) + "x" +
                      std::to_string(data.width()) + "); only upsampling is supported");
  }
  b.validate();
  return b;
}

Tensor fit_images(const Tensor& images, const BackboneConfig& backbone) {
  if (images.dim(1) == backbone.height && images.dim(2) == backbone.width) return images;
  return upsample(images, backbone.height, backbone.width);
}

Split make_split(const ExperimentConfig& cfg, const Dataset& train, const BackboneConfig& backbone) {
  Split s;
  if (cfg.folds > 1) {
    const FoldAssignment folds = kfold_split(train.size(), cfg.folds, cfg.seed);
    s.val_index = folds.members(cfg.fold);
    s.train_index = folds.complement(cfg.fold);
  } else {
    std::tie(s.train_index, s.val_index) = ratio_split(train.size(), 1.0 - cfg.val_fraction, cfg.seed);
  }
  const Dataset tr = train.subset(s.train_index), va = train.subset(s.val_index);
  s.data = TrainData{fit_images(tr.images, backbone), tr.labels, fit_images(va.images, backbone), va.labels};
  return s;
}

TrainOptions make_train_options(const ExperimentConfig& cfg, std::uint64_t seed) {
  TrainOptions o;
  o.batch_size = cfg.batch_size;
  o.decay = cfg.decay;
  o.tick = cfg.decay_tick;
  o.patience = cfg.patience;
  o.seed = seed;
  o.eval_batch = cfg.eval_batch;
  if (cfg.train_augment) {
    o.augment = [aug = cfg.augment](const Tensor& x, Rng& rng) { return augment_batch(x, aug, rng); };
  }
  return o;
}

RepeatStats repeat_stats(std::span<const double> values) {
  RepeatStats s;
  s.runs = values.size();
  if (values.empty()) return s;
  s.best = *std::max_element(values.begin(), values.end());
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - s.mean) * (v - s.mean);
  s.stddev = std::sqrt(var / static_cast<double>(values.size()));
  return s;
}

// ---------------------------------------------------------------------------
// Commands

namespace {

struct Prepared {
  LoadedData data;
  BackboneConfig backbone;
  std::size_t classes = 0;
  Split split;
  Tensor test_x;
};

Prepared prepare(const ExperimentConfig& cfg, std::ostream& log) {
  cfg.validate();
  Prepared p;
  p.data = load_dataset(cfg.data);
  BackboneConfig wanted = cfg.backbone;
  if (cfg.tta) {
    if (wanted.height == 0) wanted.height = cfg.augment.crop;
    if (wanted.width == 0) wanted.width = cfg.augment.crop;
  }
  p.backbone = resolve_backbone(wanted, p.data.train);
  p.classes = cfg.head.classes == 0 ? p.data.train.classes : cfg.head.classes;
  if (p.classes != p.data.train.classes) {
    throw ConfigError("head.classes is " + std::to_string(p.classes) + " but the dataset has " +
                      std::to_string(p.data.train.classes));
  }
  p.split = make_split(cfg, p.data.train, p.backbone);
  p.test_x = fit_images(p.data.test.images, p.backbone);
  log << "data: " << p.data.train.name << " " << p.data.train.size() << " train (" << p.split.train_index.size()
      << " fit / " << p.split.val_index.size() << " validation), " << p.data.test.name << " " << p.data.test.size()
      << " test, " << p.classes << " classes, input " << p.backbone.height << "x" << p.backbone.width << "x"
      << p.backbone.channels << "\n";
  return p;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  out << text;
}

void start_run_dir(const ExperimentConfig& cfg, const std::string& command) {
  fs::create_directories(cfg.out_dir);
  write_text(cfg.out_dir / "config.txt", "# " + command + "\n" + config_to_text(cfg));
}

std::string num(double x, int precision = 4) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*f", precision, x);
  return buf;
}

HeadConfig head_for(const ExperimentConfig& cfg, HeadVariant variant, std::size_t classes) {
  HeadConfig h = cfg.head;
  h.variant = variant;
  h.classes = classes;
  return h;
}

std::function<void(const LogRow&)> epoch_logger(std::ostream& log, std::string prefix) {
  return [&log, prefix = std::move(prefix)](const LogRow& r) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%s stage %zu epoch %zu lr %.3g train_loss %.4f train_acc %.4f val_loss %.4f val_acc %.4f\n",
                  prefix.c_str(), r.stage, r.epoch, r.lr, r.train_loss, r.train_acc, r.val_loss, r.val_acc);
    log << buf << std::flush;
  };
}

struct TrainedModel {
  std::unique_ptr<SingleModel> model;
  TrainRun run;
};

TrainedModel train_single(const ExperimentConfig& cfg, const Prepared& p, HeadVariant variant, std::uint64_t seed,
                          const fs::path& run_dir, std::ostream& log) {
  Rng init(seed);
  auto model = std::make_unique<SingleModel>(p.backbone, head_for(cfg, variant, p.classes), init);
  std::size_t first_stage = 0;
  if (cfg.resume) {
    const Checkpoint ckpt = load_checkpoint(*cfg.resume);
    restore_checkpoint(ckpt, model->parameters());
    first_stage = ckpt.stage + 1;
    log << "resuming from " << cfg.resume->string() << " at stage " << first_stage << "\n";
  }
  TrainOptions options = make_train_options(cfg, seed);
  options.on_epoch = epoch_logger(log, std::string(head_variant_name(variant)) + " seed " + std::to_string(seed));
  const StagedResult r = staged_train(*model, p.split.data, cfg.plan, options, first_stage);

  fs::create_directories(run_dir);
  write_training_log(run_dir / "train_log.csv", r.log);
  for (std::size_t i = 0; i < r.stage_best.size(); ++i) {
    save_checkpoint(r.stage_best[i], run_dir / ("stage" + std::to_string(first_stage + i) + "_best.ckpt"));
  }
  const fs::path best = run_dir / "best.ckpt";
  save_checkpoint(r.best, best);

  const Evaluation test = evaluate(*model, model->parameters(), p.test_x, p.data.test.labels, cfg.eval_batch);
  TrainRun run{variant, seed, r.best.val_accuracy, r.best.val_loss, test.accuracy, test.loss, best};
  log << head_variant_name(variant) << " seed " << seed << ": best val_acc " << num(run.val_accuracy)
      << " test_acc " << num(run.test_accuracy) << "\n";
  return {std::move(model), run};
}

std::string runs_csv(std::span<const TrainRun> runs) {
  std::string out = "variant,seed,val_accuracy,val_loss,test_accuracy,test_loss,checkpoint\n";
  for (const auto& r : runs) {
    out += std::string(head_variant_name(r.variant)) + "," + std::to_string(r.seed) + "," + fmt(r.val_accuracy) +
           "," + fmt(r.val_loss) + "," + fmt(r.test_accuracy) + "," + fmt(r.test_loss) + "," + r.checkpoint.string() +
           "\n";
  }
  return out;
}

std::unique_ptr<SingleModel> load_member(const ExperimentConfig& cfg, const Prepared& p, HeadVariant variant,
                                         const fs::path& path) {
  Rng unused(0);
  auto model = std::make_unique<SingleModel>(p.backbone, head_for(cfg, variant, p.classes), unused);
  restore_checkpoint(load_checkpoint(path), model->parameters());
  return model;
}

HeadVariant member_variant(const ExperimentConfig& cfg, std::size_t i) {
  return cfg.member_variants.empty() ? cfg.head.variant : cfg.member_variants.at(i);
}

}  // namespace

TrainReport cmd_train(const ExperimentConfig& cfg, std::ostream& log) {
  const Prepared p = prepare(cfg, log);
  start_run_dir(cfg, "train");
  TrainReport report;
  std::vector<double> acc;
  for (std::size_t r = 0; r < cfg.repeats; ++r) {
    const fs::path dir = cfg.out_dir / ("run" + std::to_string(r));
    report.runs.push_back(train_single(cfg, p, cfg.head.variant, cfg.seed + r, dir, log).run);
    acc.push_back(report.runs.back().test_accuracy);
  }
  report.test = repeat_stats(acc);
  write_text(cfg.out_dir / "runs.csv", runs_csv(report.runs));
  std::string summary = "command: train\nvariant: " + std::string(head_variant_name(cfg.head.variant)) +
                        "\nrepeats: " + std::to_string(cfg.repeats) + "\nbest_test_accuracy: " + fmt(report.test.best) +
                        "\nmean_test_accuracy: " + fmt(report.test.mean) +
                        "\nstddev_test_accuracy: " + fmt(report.test.stddev) + "\n";
  write_text(cfg.out_dir / "summary.txt", summary);
  log << "test accuracy: best " << num(report.test.best) << " mean " << num(report.test.mean) << " stddev "
      << num(report.test.stddev) << " over " << report.test.runs << " run(s)\n";
  return report;
}

CompareReport cmd_compare_rnn(const ExperimentConfig& cfg, std::ostream& log) {
  const Prepared p = prepare(cfg, log);
  start_run_dir(cfg, "compare-rnn");
  CompareReport report;
  for (HeadVariant v : cfg.variants) {
    std::vector<double> acc;
    for (std::size_t r = 0; r < cfg.repeats; ++r) {
      const fs::path dir = cfg.out_dir / lower(std::string(head_variant_name(v))) / ("run" + std::to_string(r));
      report.runs.push_back(train_single(cfg, p, v, cfg.seed + r, dir, log).run);
      acc.push_back(report.runs.back().test_accuracy);
    }
    report.rows.push_back({v, repeat_stats(acc), 0.0});
  }
  const auto baseline = std::find_if(report.rows.begin(), report.rows.end(),
                                     [](const CompareRow& r) { return r.variant == HeadVariant::Std; });
  const double base = baseline != report.rows.end() ? baseline->test.best : report.rows.front().test.best;
  for (auto& r : report.rows) r.delta_vs_std = r.test.best - base;

  std::string csv = "variant,best_test_accuracy,mean_test_accuracy,stddev_test_accuracy,runs,delta_vs_std\n";
  log << "\nvariant  best    mean    stddev  runs  delta_vs_STD\n";
  for (const auto& r : report.rows) {
    csv += std::string(head_variant_name(r.variant)) + "," + fmt(r.test.best) + "," + fmt(r.test.mean) + "," +
           fmt(r.test.stddev) + "," + std::to_string(r.test.runs) + "," + fmt(r.delta_vs_std) + "\n";
    char line[128];
    std::snprintf(line, sizeof line, "%-8s %.4f  %.4f  %.4f  %4zu  %+.4f\n",
                  std::string(head_variant_name(r.variant)).c_str(), r.test.best, r.test.mean, r.test.stddev,
                  r.test.runs, r.delta_vs_std);
    log << line;
  }
  write_text(cfg.out_dir / "comparison.csv", csv);
  write_text(cfg.out_dir / "runs.csv", runs_csv(report.runs));
  return report;
}

E2EReport cmd_e2e3m(const ExperimentConfig& cfg, std::ostream& log) {
  if (!cfg.member_checkpoints.empty() && cfg.member_checkpoints.size() < 3) {
    throw ContractError("e2e3m needs at least 3 level-1 members, got " +
                        std::to_string(cfg.member_checkpoints.size()));
  }
  const Prepared p = prepare(cfg, log);
  start_run_dir(cfg, "e2e3m");

  struct Candidate {
    std::string label;
    std::shared_ptr<SingleModel> model;
    Evaluation val;
  };
  std::vector<Candidate> pool;
  if (!cfg.member_checkpoints.empty()) {
    for (std::size_t i = 0; i < cfg.member_checkpoints.size(); ++i) {
      std::shared_ptr<SingleModel> m = load_member(cfg, p, member_variant(cfg, i), cfg.member_checkpoints[i]);
      const Evaluation val = evaluate(*m, m->parameters(), p.split.data.val_x, p.split.data.val_y, cfg.eval_batch);
      pool.push_back({cfg.member_checkpoints[i].string(), m, val});
    }
  } else {
    const std::size_t trained = cfg.identical_members ? 1 : cfg.candidates;
    for (std::size_t i = 0; i < trained; ++i) {
      const HeadVariant v = i < cfg.member_variants.size() ? cfg.member_variants[i] : cfg.head.variant;
      TrainedModel t = train_single(cfg, p, v, cfg.seed + i, cfg.out_dir / ("member" + std::to_string(i)), log);
      std::shared_ptr<SingleModel> m = std::move(t.model);
      pool.push_back({"member" + std::to_string(i), m, {t.run.val_loss, t.run.val_accuracy}});
    }
    if (cfg.identical_members) {
      pool.push_back(pool.front());
      pool.push_back(pool.front());
    }
  }
  // Top three by validation accuracy, lower loss on ties; stable for equal pairs.
  std::stable_sort(pool.begin(), pool.end(), [](const Candidate& a, const Candidate& b) {
    if (a.val.accuracy != b.val.accuracy) return a.val.accuracy > b.val.accuracy;
    return a.val.loss < b.val.loss;
  });
  pool.resize(3);

  std::vector<const Classifier*> members;
  for (const auto& c : pool) members.push_back(c.model.get());
  const EnsembleBatch train_batch = build_ensemble_batch(members, p.split.data.train_x, p.split.data.train_y);
  const EnsembleBatch val_batch = build_ensemble_batch(members, p.split.data.val_x, p.split.data.val_y);
  const EnsembleBatch test_batch = build_ensemble_batch(members, p.test_x, p.data.test.labels);
  save_ensemble_batch(train_batch, cfg.out_dir / "meta_train.bin");
  save_ensemble_batch(test_batch, cfg.out_dir / "meta_test.bin");

  E2EReport report;
  const std::vector<Tensor> train_preds = split_distributions(train_batch.inputs, 3);
  const std::vector<Tensor> test_preds = split_distributions(test_batch.inputs, 3);
  const auto redundant = redundant_members(train_preds);
  if (!redundant.empty()) {
    report.redundancy_warning = true;
    for (const auto& [i, j] : redundant) {
      log << "warning: members " << i << " and " << j
          << " produce identical predictions; combining redundant classifiers adds nothing\n";
    }
  }
  for (std::size_t i = 0; i < 3; ++i) {
    const double acc = accuracy(test_preds[i], p.data.test.labels);
    report.members.push_back({pool[i].label, pool[i].val.accuracy, pool[i].val.loss, acc});
    report.best_member_test_accuracy = std::max(report.best_member_test_accuracy, acc);
    log << "member " << pool[i].label << ": val_acc " << num(pool[i].val.accuracy) << " test_acc " << num(acc)
        << "\n";
  }

  E2EHeadConfig meta = cfg.meta;
  meta.members = 3;
  meta.classes = p.classes;
  Rng init(cfg.seed ^ 0xE2E3ull);
  E2EHead head(meta, init);
  TrainOptions options = make_train_options(cfg, cfg.seed ^ 0xE2E3ull);
  options.augment = nullptr;
  options.on_epoch = epoch_logger(log, "meta-head");
  const TrainData meta_data{train_batch.inputs, train_batch.labels, val_batch.inputs, val_batch.labels};
  const StagedResult r = staged_train(head, meta_data, cfg.meta_plan, options);
  write_training_log(cfg.out_dir / "meta_log.csv", r.log);
  save_checkpoint(r.best, cfg.out_dir / "meta_best.ckpt");

  report.e2e_test_accuracy = accuracy(head.predict(test_batch.inputs, cfg.eval_batch), test_batch.labels);
  report.avg_test_accuracy = accuracy(avg_ensemble(test_preds), test_batch.labels);
  report.ext_test_accuracy = accuracy(ext_softmax_ensemble(test_preds), test_batch.labels);
  report.meta_train_samples = train_batch.size();
  report.test_samples = test_batch.size();

  std::string summary = "command: e2e3m\n";
  for (std::size_t i = 0; i < 3; ++i) {
    summary += "member" + std::to_string(i) + ": " + report.members[i].label +
               " val_accuracy=" + fmt(report.members[i].val_accuracy) +
               " test_accuracy=" + fmt(report.members[i].test_accuracy) + "\n";
  }
  summary += "best_member_test_accuracy: " + fmt(report.best_member_test_accuracy) + "\n";
  summary += "e2e_test_accuracy: " + fmt(report.e2e_test_accuracy) + "\n";
  summary += "avg_test_accuracy: " + fmt(report.avg_test_accuracy) + "\n";
  summary += "ext_test_accuracy: " + fmt(report.ext_test_accuracy) + "\n";
  summary += "meta_train_samples: " + std::to_string(report.meta_train_samples) + " (training split)\n";
  summary += "test_samples: " + std::to_string(report.test_samples) + " (held out)\n";
  summary += "redundancy_warning: " + fmt_bool(report.redundancy_warning) + "\n";
  write_text(cfg.out_dir / "summary.txt", summary);
  log << "E2E-3M test_acc " << num(report.e2e_test_accuracy) << " (best member " << num(report.best_member_test_accuracy)
      << ", AVG " << num(report.avg_test_accuracy) << ", EXT " << num(report.ext_test_accuracy) << ")\n";
  return report;
}

EnsembleEvalReport cmd_ensemble_eval(const ExperimentConfig& cfg, std::ostream& log) {
  if (cfg.member_checkpoints.empty()) throw ConfigError("ensemble-eval: members (checkpoint paths) are required");
  const Prepared p = prepare(cfg, log);
  start_run_dir(cfg, "ensemble-eval");
  std::vector<std::unique_ptr<SingleModel>> models;
  for (std::size_t i = 0; i < cfg.member_checkpoints.size(); ++i) {
    models.push_back(load_member(cfg, p, member_variant(cfg, i), cfg.member_checkpoints[i]));
  }

  // Single pass: every image resized straight to the model input.
  auto single = [&](const Tensor& raw) {
    std::vector<Tensor> preds;
    for (const auto& m : models) preds.push_back(m->predict(fit_images(raw, p.backbone), cfg.eval_batch));
    return preds;
  };
  auto crops = [&](const Tensor& raw, std::uint64_t stream) {
    std::vector<Tensor> preds;
    for (std::size_t i = 0; i < models.size(); ++i) {
      std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(stream),
                        static_cast<std::uint32_t>(i)};
      Rng rng(seq);
      preds.push_back(tta_predict(*models[i], raw, cfg.augment, rng));
    }
    return preds;
  };

  const std::vector<std::size_t>& test_y = p.data.test.labels;
  std::vector<Tensor> test_preds = single(p.data.test.images);
  EnsembleEvalReport report;
  if (cfg.tta) {
    // Choose between the single pass and the crops by validation accuracy.
    const Dataset val = p.data.train.subset(p.split.val_index);
    const double sv = accuracy(avg_ensemble(single(val.images)), val.labels);
    const double tv = accuracy(avg_ensemble(crops(val.images, 1)), val.labels);
    const std::vector<Tensor> tta_test = crops(p.data.test.images, 2);
    report.single_pass_val = sv;
    report.tta_val = tv;
    report.single_pass_avg_test = accuracy(avg_ensemble(test_preds), test_y);
    report.tta_avg_test = accuracy(avg_ensemble(tta_test), test_y);
    report.tta_selected = tv > sv;
    log << "validation AVG accuracy: single pass " << num(sv) << ", " << cfg.augment.crops << " crops " << num(tv)
        << " -> using " << (report.tta_selected ? "crops" : "single pass")
        << " (selected on the validation split, not on test feedback)\n";
    if (report.tta_selected) test_preds = tta_test;
  }

  for (std::size_t i = 0; i < test_preds.size(); ++i) {
    report.member_accuracy.push_back(accuracy(test_preds[i], test_y));
    log << "member " << cfg.member_checkpoints[i].string() << ": test_acc " << num(report.member_accuracy.back())
        << "\n";
  }
  const Tensor avg = avg_ensemble(test_preds), ext = ext_softmax_ensemble(test_preds);
  report.avg_accuracy = accuracy(avg, test_y);
  report.ext_accuracy = accuracy(ext, test_y);
  report.disagreements = count_disagreements(avg, ext);
  log << "AVG-Softmax test_acc " << num(report.avg_accuracy) << ", EXT-Softmax test_acc " << num(report.ext_accuracy)
      << ", disagreements " << report.disagreements << " of " << test_y.size() << "\n";

  std::string csv = "method,accuracy\n";
  for (std::size_t i = 0; i < report.member_accuracy.size(); ++i)
    csv += "member" + std::to_string(i) + "," + fmt(report.member_accuracy[i]) + "\n";
  csv += "AVG," + fmt(report.avg_accuracy) + "\nEXT," + fmt(report.ext_accuracy) + "\n";
  csv += "disagreements," + std::to_string(report.disagreements) + "\n";
  if (cfg.tta) {
    csv += "val_single_pass_AVG," + fmt(*report.single_pass_val) + "\nval_tta_AVG," + fmt(*report.tta_val) + "\n";
    csv += "test_single_pass_AVG," + fmt(*report.single_pass_avg_test) + "\ntest_tta_AVG," +
           fmt(*report.tta_avg_test) + "\n";
    csv += std::string("selected,") + (report.tta_selected ? "tta" : "single_pass") + "\n";
  }
  write_text(cfg.out_dir / "ensemble_eval.csv", csv);
  return report;
}

GradSuiteReport cmd_gradcheck(const ExperimentConfig& cfg, std::optional<OpKind> fault, std::ostream& log) {
  const GradSuiteReport report = run_gradient_suite(cfg.seed, fault);
  const std::string text = format_gradient_report(report);
  log << text;
  write_text(cfg.out_dir / "gradcheck.txt", text);
  return report;
}

FoldAssignment cmd_kfold_split(const ExperimentConfig& cfg, std::optional<std::size_t> n, std::ostream& log) {
  const std::size_t k = cfg.folds > 1 ? cfg.folds : 5;
  const std::size_t count = n ? *n : load_dataset(cfg.data).train.size();
  const FoldAssignment a = kfold_split(count, k, cfg.seed);
  std::string csv = "index,fold\n";
  for (std::size_t i = 0; i < count; ++i) csv += std::to_string(i) + "," + std::to_string(a.fold[i]) + "\n";
  write_text(cfg.out_dir / "folds.csv", csv);
  log << count << " samples in " << k << " folds:";
  for (std::size_t f = 0; f < k; ++f) log << " " << a.members(f).size();
  log << "\n";
  return a;
}

}  // namespace e2em
