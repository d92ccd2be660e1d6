#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "e2em/gradcheck.hpp"

namespace e2em {

struct GradSuiteCase {
  std::string name;
  std::vector<OpKind> ops;  // op kinds recorded by the case (leaves and constants excluded)
  GradCheckResult result;
  bool passed = false;
};

struct GradSuiteReport {
  double tolerance = 1e-4;
  std::vector<GradSuiteCase> cases;
  /// Max relative error over the cases that exercise each op.
  std::map<OpKind, double> per_op;

  bool passed() const;
  /// Ops present in every failing case and in no passing case.
  std::vector<OpKind> suspects() const;
};

/// Finite-difference checks of every differentiable op in isolation, each
/// recurrent cell, the bidirectional wrapper, the single-model pipeline for
/// every head variant and the ensemble meta-head (train mode, fixed noise).
/// `fault` flips the sign of one op's gradient rule.
GradSuiteReport run_gradient_suite(std::uint64_t seed = 0, std::optional<OpKind> fault = std::nullopt,
                                   double tolerance = 1e-4);

/// Plain-text table: one line per op, one per case, then the verdict.
std::string format_gradient_report(const GradSuiteReport& report);

}  // namespace e2em
