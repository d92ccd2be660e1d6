#pragma once

#include <cstddef>
#include <span>

#include "e2em/tensor.hpp"

namespace e2em {

/// Fraction of rows whose argmax (lowest index on ties) equals the label.
double accuracy(const Tensor& preds, std::span<const std::size_t> labels);

/// Mean of -log(max(p[label], 1e-12)) over rows.
double mean_cross_entropy(const Tensor& preds, std::span<const std::size_t> labels);

}  // namespace e2em
