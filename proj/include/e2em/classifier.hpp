#pragma once

#include <cstddef>
#include <span>

#include "e2em/autodiff.hpp"
#include "e2em/parameters.hpp"
#include "e2em/tensor.hpp"

namespace e2em {

/// Train mode enables stochastic layers (noise, dropout); eval mode is
/// deterministic.
enum class Mode { Train, Eval };

/// A trainable model mapping a batch of inputs (first axis = batch) to class
/// probabilities [b x c].
class Classifier {
 public:
  virtual ~Classifier() = default;

  virtual ParameterSet& parameters() = 0;
  virtual const ParameterSet& parameters() const = 0;
  virtual std::size_t classes() const = 0;

  /// Records the forward pass. `params` are tape nodes for parameters() in
  /// index order (leaves for training, constants for inference).
  virtual Var forward(Tape& tape, std::span<const Var> params, const Tensor& inputs, Mode mode, Rng& rng) const = 0;

  /// Eval-mode probabilities using the model's own parameters.
  Tensor predict(const Tensor& inputs, std::size_t batch_size = 128) const;
  /// Eval-mode probabilities using an externally supplied parameter set of
  /// the same layout.
  Tensor predict(const ParameterSet& params, const Tensor& inputs, std::size_t batch_size = 128) const;
};

}  // namespace e2em
