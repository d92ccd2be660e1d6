#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "e2em/classifier.hpp"

namespace e2em {

/// Whether the decay counter advances once per optimizer step or per epoch.
enum class DecayTick { PerStep, PerEpoch };

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  double lr = 1e-4;
  AdamConfig cfg;
  double decay = 0.0;
  DecayTick tick = DecayTick::PerStep;
  std::size_t t = 0;           // bias-correction step counter
  std::size_t iterations = 0;  // decay counter
  std::vector<Tensor> m, v;
};

AdamState make_adam_state(std::span<const Tensor> params, double lr, double decay = 0.0, AdamConfig cfg = {},
                          DecayTick tick = DecayTick::PerStep);

/// lr / (1 + decay * iterations).
double decayed_lr(const AdamState& s);

/// One Adam update in place. Gradients are validated (shape and finiteness)
/// before anything is modified.
void adam_step(AdamState& s, std::span<Tensor> params, std::span<const Tensor> grads);

/// Advances the decay counter when it ticks per epoch.
void adam_end_epoch(AdamState& s);

/// Parameters (and optionally optimizer state) at 32-bit precision, plus the
/// metrics that selected them.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  ParameterSet params;
  std::optional<AdamState> optimizer;
  double val_accuracy = 0.0;
  double val_loss = 0.0;
  std::size_t stage = 0;
  std::size_t epoch = 0;
};

/// Snapshot with every value rounded through 32-bit float, so an in-memory
/// checkpoint and its reloaded file are interchangeable.
Checkpoint capture_checkpoint(const ParameterSet& params, const AdamState* optimizer, double val_accuracy,
                              double val_loss, std::size_t stage, std::size_t epoch);

/// Copies checkpoint parameters into `target`. Names and shapes must match
/// exactly; the error names the offending tensor.
void restore_checkpoint(const Checkpoint& ckpt, ParameterSet& target);

/// Format: magic "E2EMCKPT", u32 version, u32 tensor count, then per tensor
/// u16 name length, name bytes, u8 rank, u32 dims, little-endian f32 payload.
/// Metrics and counters are stored as tensors under "meta/" and optimizer
/// state under "adam/".
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct TrainData {
  Tensor train_x;
  std::vector<std::size_t> train_y;
  Tensor val_x;
  std::vector<std::size_t> val_y;

  void validate(std::size_t classes) const;
};

struct StageSpec {
  double lr = 1e-4;
  std::size_t epochs = 40;
};

struct StagedPlan {
  std::vector<StageSpec> stages;

  /// (1e-4, 40), (1e-5, 15), (1e-6, 15).
  static StagedPlan standard();
  /// Non-empty with strictly decreasing rates.
  void validate() const;
};

struct LogRow {
  std::size_t stage = 0;
  std::size_t epoch = 0;
  std::size_t iteration = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;
};

struct TrainOptions {
  std::size_t batch_size = 32;
  AdamConfig adam;
  /// Decay per stage; when unset, the stage rate divided by its epoch count.
  std::optional<double> decay;
  DecayTick tick = DecayTick::PerStep;
  /// Stop a stage after this many epochs without improvement (0 = run the
  /// full epoch budget).
  std::size_t patience = 0;
  std::uint64_t seed = 0;
  std::size_t eval_batch = 256;
  /// Optional train-batch transform (augmentation).
  std::function<Tensor(const Tensor&, Rng&)> augment;
  /// Called after every epoch with the new log row.
  std::function<void(const LogRow&)> on_epoch;
};

struct Evaluation {
  double loss = 0.0;
  double accuracy = 0.0;
};

Evaluation evaluate(const Classifier& model, const ParameterSet& params, const Tensor& x,
                    std::span<const std::size_t> y, std::size_t batch_size = 256);

struct StageResult {
  Checkpoint best;
  std::vector<LogRow> log;
};

/// Minibatch Adam over `spec.epochs` epochs. Validation uses the 32-bit
/// rounded parameters; a checkpoint is taken whenever validation accuracy
/// improves (ties: lower loss). The initial parameters are the starting
/// best, so epochs = 0 returns them unchanged. The model keeps the
/// last-epoch parameters.
StageResult run_stage(Classifier& model, const TrainData& data, const StageSpec& spec, std::size_t stage_index,
                      const TrainOptions& options, Rng& rng);

struct StagedResult {
  Checkpoint best;
  std::vector<LogRow> log;
  /// Best checkpoint of every stage that ran.
  std::vector<Checkpoint> stage_best;
};

/// Runs the plan from `first_stage` on. Before each later stage the model is
/// restored to the previous stage's best checkpoint and the optimizer is
/// reset. Each stage draws from its own stream seeded by (seed, stage), so a
/// run resumed from a saved checkpoint replays the remaining stages exactly.
/// The model ends at the overall best checkpoint.
StagedResult staged_train(Classifier& model, const TrainData& data, const StagedPlan& plan,
                          const TrainOptions& options, std::size_t first_stage = 0);

/// CSV with header stage,epoch,iteration,lr,train_loss,train_acc,val_loss,val_acc.
void write_training_log(const std::filesystem::path& path, std::span<const LogRow> rows);

}  // namespace e2em
