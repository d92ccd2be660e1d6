#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "e2em/backbone.hpp"
#include "e2em/data.hpp"
#include "e2em/ensemble.hpp"
#include "e2em/gradsuite.hpp"
#include "e2em/optim.hpp"

namespace e2em {

enum class DatasetKind { Synthetic, Idx, Cifar10 };

struct DatasetSpec {
  DatasetKind kind = DatasetKind::Synthetic;
  /// Directory with train-images-idx3-ubyte, train-labels-idx1-ubyte,
  /// t10k-images-idx3-ubyte, t10k-labels-idx1-ubyte (IDX) or
  /// data_batch_{1..5}.bin and test_batch.bin (CIFAR-10).
  std::filesystem::path dir;
  std::size_t train_limit = 0;  // 0 = all
  std::size_t test_limit = 0;
  SyntheticConfig synthetic;
  std::size_t synthetic_test_samples = 200;
};

/// Everything a command needs. Every field is reachable as a flat
/// `key = value` setting (see config_keys()).
struct ExperimentConfig {
  DatasetSpec data;
  /// 0 in height/width means "use the dataset's resolution".
  BackboneConfig backbone{0, 0, 0};
  /// classes = 0 means "use the dataset's class count".
  HeadConfig head = [] {
    HeadConfig h;
    h.classes = 0;
    return h;
  }();

  StagedPlan plan = StagedPlan::standard();
  std::size_t batch_size = 32;
  std::optional<double> decay;
  DecayTick decay_tick = DecayTick::PerStep;
  std::size_t patience = 0;
  std::size_t eval_batch = 256;

  /// k > 1 selects k-fold validation with `fold` held out; otherwise a seeded
  /// ratio split with `val_fraction` held out.
  std::size_t folds = 0;
  std::size_t fold = 0;
  double val_fraction = 0.2;

  std::size_t repeats = 3;
  std::vector<HeadVariant> variants{HeadVariant::Std, HeadVariant::Rnn, HeadVariant::Gru, HeadVariant::BiLstm};

  /// Level-1 candidates trained by e2e3m (the best three are kept).
  std::size_t candidates = 3;
  /// Level-1 checkpoints given explicitly (e2e3m, ensemble-eval).
  std::vector<std::filesystem::path> member_checkpoints;
  /// Head variant per member checkpoint; empty means head.variant for all.
  std::vector<HeadVariant> member_variants;
  /// Degenerate run: one trained member used three times.
  bool identical_members = false;
  E2EHeadConfig meta;
  StagedPlan meta_plan{{{1e-3, 10}, {1e-4, 5}}};

  AugmentConfig augment = AugmentConfig::none();
  bool train_augment = false;
  bool tta = false;

  /// Resume training from this checkpoint at its stage + 1.
  std::optional<std::filesystem::path> resume;

  std::uint64_t seed = 0;
  std::filesystem::path out_dir = "runs/default";

  /// Every problem at once; empty when the config is usable.
  std::vector<std::string> problems() const;
  /// Throws ConfigError listing every problem.
  void validate() const;
};

struct ConfigKey {
  std::string name;
  std::string help;
};
/// Every recognised setting with a one-line description.
const std::vector<ConfigKey>& config_keys();

/// Applies one setting. Throws ConfigError for unknown keys or bad values.
void apply_setting(ExperimentConfig& cfg, const std::string& key, const std::string& value);
/// Parses `key = value` lines ('#' starts a comment) and applies them.
/// Errors from every line are collected into one ConfigError.
void apply_config_text(ExperimentConfig& cfg, const std::string& text, const std::string& origin = "config");
ExperimentConfig load_config_file(const std::filesystem::path& path, ExperimentConfig base = {});
/// Current value of every key, in config_keys() order; re-applying the text
/// reproduces the config.
std::string config_to_text(const ExperimentConfig& cfg);

struct LoadedData {
  Dataset train;
  Dataset test;
};
LoadedData load_dataset(const DatasetSpec& spec);

/// Backbone with zero height/width/channels filled in from the data.
BackboneConfig resolve_backbone(const BackboneConfig& cfg, const Dataset& data);
/// Images resized (upsampled) to the backbone resolution.
Tensor fit_images(const Tensor& images, const BackboneConfig& backbone);

struct Split {
  TrainData data;
  std::vector<std::size_t> train_index;  // into the training set
  std::vector<std::size_t> val_index;
};
Split make_split(const ExperimentConfig& cfg, const Dataset& train, const BackboneConfig& backbone);

TrainOptions make_train_options(const ExperimentConfig& cfg, std::uint64_t seed);

/// Accuracy summary of a set of runs: the highest is the headline figure,
/// mean and (population) standard deviation are reported alongside.
struct RepeatStats {
  double best = 0.0;
  double mean = 0.0;
  double stddev = 0.0;
  std::size_t runs = 0;
};
RepeatStats repeat_stats(std::span<const double> values);

struct TrainRun {
  HeadVariant variant = HeadVariant::Std;
  std::uint64_t seed = 0;
  double val_accuracy = 0.0;
  double val_loss = 0.0;
  double test_accuracy = 0.0;
  double test_loss = 0.0;
  std::filesystem::path checkpoint;
};

struct TrainReport {
  std::vector<TrainRun> runs;
  RepeatStats test;
};

/// Staged training of one single-model pipeline per repeat (seed + r).
/// Writes config.txt, per-run train_log.csv, stage and best checkpoints, and
/// summary.txt under cfg.out_dir.
TrainReport cmd_train(const ExperimentConfig& cfg, std::ostream& log);

struct CompareRow {
  HeadVariant variant = HeadVariant::Std;
  RepeatStats test;
  double delta_vs_std = 0.0;  // best minus STD's best
};
struct CompareReport {
  std::vector<CompareRow> rows;
  std::vector<TrainRun> runs;
};
/// Every variant trained `repeats` times with identical seeds and budget.
/// Writes comparison.csv and runs.csv.
CompareReport cmd_compare_rnn(const ExperimentConfig& cfg, std::ostream& log);

struct MemberResult {
  std::string label;
  double val_accuracy = 0.0;
  double val_loss = 0.0;
  double test_accuracy = 0.0;
};
struct E2EReport {
  std::vector<MemberResult> members;  // the three selected, in selection order
  double best_member_test_accuracy = 0.0;
  double e2e_test_accuracy = 0.0;
  double avg_test_accuracy = 0.0;
  double ext_test_accuracy = 0.0;
  bool redundancy_warning = false;
  std::size_t meta_train_samples = 0;
  std::size_t test_samples = 0;
};
/// Level-1 members (given checkpoints or trained candidates, best three by
/// validation accuracy), meta-head trained on their training-split
/// predictions, everything scored on the held-out test split.
E2EReport cmd_e2e3m(const ExperimentConfig& cfg, std::ostream& log);

struct EnsembleEvalReport {
  std::vector<double> member_accuracy;
  double avg_accuracy = 0.0;
  double ext_accuracy = 0.0;
  std::size_t disagreements = 0;  // test rows where AVG and EXT pick different classes
  /// With TTA: both modes scored on validation and test; `tta_selected`
  /// tells which one validation favoured.
  std::optional<double> single_pass_val, tta_val, single_pass_avg_test, tta_avg_test;
  bool tta_selected = false;
};
/// AVG-Softmax, EXT-Softmax and per-member accuracy of the member
/// checkpoints on the test split. Writes ensemble_eval.csv.
EnsembleEvalReport cmd_ensemble_eval(const ExperimentConfig& cfg, std::ostream& log);

/// Runs the gradient suite, prints the report and writes gradcheck.txt.
GradSuiteReport cmd_gradcheck(const ExperimentConfig& cfg, std::optional<OpKind> fault, std::ostream& log);

/// Fold assignment for the configured training set (or `n` samples when
/// given). Writes folds.csv (index,fold).
FoldAssignment cmd_kfold_split(const ExperimentConfig& cfg, std::optional<std::size_t> n, std::ostream& log);

}  // namespace e2em
