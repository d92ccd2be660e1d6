#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "e2em/classifier.hpp"

namespace e2em {

/// Concatenates n class distributions in order. Rank-1 inputs [c] give
/// [n*c]; rank-2 inputs [b x c] give [b x n*c].
Tensor concat_distributions(std::span<const Tensor> ds);

/// Inverse of concat_distributions for n equal-width blocks.
std::vector<Tensor> split_distributions(const Tensor& stacked, std::size_t n);

/// Entrywise arithmetic mean of equally shaped predictions.
Tensor avg_ensemble(std::span<const Tensor> preds);

/// Keeps the `keep` largest entries of each row (earlier index wins ties) and
/// zeroes the rest. keep = 1 is the single-maximum rule.
Tensor prune(const Tensor& a, std::size_t keep = 1);

/// Mean of the pruned predictions.
Tensor ext_softmax_ensemble(std::span<const Tensor> preds, std::size_t keep = 1);

/// Inverted dropout: in train mode each entry is dropped with probability
/// `rate` and survivors are scaled by 1/(1-rate). Identity in eval mode.
Var dropout(Var x, double rate, Mode mode, Rng& rng);
Tensor dropout(const Tensor& x, double rate, Mode mode, Rng& rng);

struct E2EHeadConfig {
  std::size_t members = 3;
  std::size_t classes = 10;
  std::size_t hidden = 4096;
  double leaky_slope = 0.2;
  double dropout_rate = 0.5;
  /// Bias on the first dense layer. The literal form has none.
  bool hidden_bias = true;

  std::size_t input_width() const { return members * classes; }
  void validate() const;
};

/// Meta-classifier on stacked member distributions [b x n*c]:
/// dense(hidden) -> leaky ReLU -> dropout -> dense(c) -> softmax.
class E2EHead : public Classifier {
 public:
  E2EHead(E2EHeadConfig cfg, Rng& rng);

  ParameterSet& parameters() override { return params_; }
  const ParameterSet& parameters() const override { return params_; }
  std::size_t classes() const override { return cfg_.classes; }
  Var forward(Tape& tape, std::span<const Var> params, const Tensor& stacked, Mode mode, Rng& rng) const override;

  const E2EHeadConfig& config() const { return cfg_; }

 private:
  E2EHeadConfig cfg_;
  ParameterSet params_;
};

/// Stacked member predictions with labels.
struct EnsembleBatch {
  std::size_t members = 0;
  std::size_t classes = 0;
  Tensor inputs;  // [N x members*classes]
  std::vector<std::size_t> labels;

  std::size_t size() const { return labels.size(); }
  void validate() const;
};

/// Runs every member in eval mode over `inputs` and stacks the outputs.
EnsembleBatch build_ensemble_batch(std::span<const Classifier* const> members, const Tensor& inputs,
                                   std::vector<std::size_t> labels);

/// Binary table: magic "E2EMBTCH", u32 members, u32 classes, u32 count, then
/// count*members*classes little-endian f32 values, then count u32 labels.
void save_ensemble_batch(const EnsembleBatch& batch, const std::filesystem::path& path);
EnsembleBatch load_ensemble_batch(const std::filesystem::path& path);

/// Pairs (i, j) of members whose predictions differ by at most `tolerance`
/// everywhere.
std::vector<std::pair<std::size_t, std::size_t>> redundant_members(std::span<const Tensor> preds,
                                                                  double tolerance = 1e-12);

/// Rows on which the argmax of two prediction matrices differ.
std::size_t count_disagreements(const Tensor& a, const Tensor& b);

}  // namespace e2em
