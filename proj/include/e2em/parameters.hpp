#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "e2em/autodiff.hpp"
#include "e2em/tensor.hpp"

namespace e2em {

using Rng = std::mt19937_64;

/// Ordered collection of named trainable tensors. Indices are stable.
class ParameterSet {
 public:
  std::size_t add(std::string name, Tensor value);

  std::size_t size() const { return values_.size(); }
  const std::string& name(std::size_t i) const { return names_.at(i); }
  Tensor& value(std::size_t i) { return values_.at(i); }
  const Tensor& value(std::size_t i) const { return values_.at(i); }
  std::span<Tensor> values() { return values_; }
  std::span<const Tensor> values() const { return values_; }
  std::optional<std::size_t> find(std::string_view name) const;
  std::size_t element_count() const;

  /// Records every parameter as a leaf on the tape, in index order.
  std::vector<Var> bind(Tape& tape) const;

  /// Copy with every value rounded through 32-bit float.
  ParameterSet rounded_to_float() const;

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
};

/// Uniform in +-sqrt(6 / (fan_in + fan_out)).
Tensor glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng);

}  // namespace e2em
