#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "e2em/autodiff.hpp"
#include "e2em/tensor.hpp"

namespace e2em {

/// Builds a scalar loss on `tape` from leaves bound to the given parameters.
using ScalarGraph = std::function<Var(Tape& tape, std::span<const Var> params)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Compares reverse-mode gradients of `f` against central differences
/// (f(p+h) - f(p-h)) / 2h, coordinate by coordinate. The error per coordinate
/// is |analytic - numeric| / max(1, |numeric|).
GradCheckResult finite_difference_check(const ScalarGraph& f, std::span<const Tensor> params, double step = 1e-5,
                                        std::optional<OpKind> sign_flip = std::nullopt);

/// Analytic gradients only, one tensor per parameter.
std::vector<Tensor> analytic_gradients(const ScalarGraph& f, std::span<const Tensor> params,
                                       std::optional<OpKind> sign_flip = std::nullopt);

}  // namespace e2em
