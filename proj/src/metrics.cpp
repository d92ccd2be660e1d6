#include "e2em/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "e2em/errors.hpp"

namespace e2em {

namespace {

void check(std::string_view op, const Tensor& preds, std::span<const std::size_t> labels) {
  if (preds.rank() != 2) throw DimensionError(std::string(op) + ": expected [b x c], got " + shape_to_string(preds.shape()));
  if (preds.dim(0) != labels.size()) {
    throw ContractError(std::string(op) + ": " + std::to_string(preds.dim(0)) + " predictions but " +
                        std::to_string(labels.size()) + " labels");
  }
}

}  // namespace

double accuracy(const Tensor& preds, std::span<const std::size_t> labels) {
  check("accuracy", preds, labels);
  const auto arg = argmax_rows(preds);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) correct += arg[i] == labels[i];
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

double mean_cross_entropy(const Tensor& preds, std::span<const std::size_t> labels) {
  check("mean_cross_entropy", preds, labels);
  const std::size_t c = preds.dim(1);
  double total = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= c) throw ValidationError("mean_cross_entropy: label " + std::to_string(labels[i]) + " out of range");
    total -= std::log(std::max(preds[i * c + labels[i]], 1e-12));
  }
  return total / static_cast<double>(labels.size());
}

}  // namespace e2em
