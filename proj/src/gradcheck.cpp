#include "e2em/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "e2em/errors.hpp"

namespace e2em {

namespace {

double evaluate(const ScalarGraph& f, std::span<const Tensor> params) {
  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(params.size());
  for (const auto& p : params) leaves.push_back(tape.leaf(p));
  const Var out = f(tape, leaves);
  const double v = out.value().item();
  if (!std::isfinite(v)) throw NumericError("finite_difference_check: function value is not finite");
  return v;
}

}  // namespace

std::vector<Tensor> analytic_gradients(const ScalarGraph& f, std::span<const Tensor> params,
                                       std::optional<OpKind> sign_flip) {
  Tape tape;
  tape.inject_sign_flip(sign_flip);
  std::vector<Var> leaves;
  leaves.reserve(params.size());
  for (const auto& p : params) leaves.push_back(tape.leaf(p));
  const Var loss = f(tape, leaves);
  if (!loss.value().all_finite()) throw NumericError("finite_difference_check: function value is not finite");
  tape.backward(loss);
  std::vector<Tensor> grads;
  grads.reserve(leaves.size());
  for (const auto& v : leaves) grads.push_back(tape.gradient(v));
  return grads;
}

GradCheckResult finite_difference_check(const ScalarGraph& f, std::span<const Tensor> params, double step,
                                        std::optional<OpKind> sign_flip) {
  if (!(step > 0.0 && step <= 1e-2)) throw ContractError("finite_difference_check: step must lie in (0, 1e-2]");
  const std::vector<Tensor> analytic = analytic_gradients(f, params, sign_flip);

  std::vector<Tensor> work(params.begin(), params.end());
  GradCheckResult result;
  for (std::size_t p = 0; p < work.size(); ++p) {
    for (std::size_t i = 0; i < work[p].size(); ++i) {
      const double original = work[p][i];
      work[p][i] = original + step;
      const double plus = evaluate(f, work);
      work[p][i] = original - step;
      const double minus = evaluate(f, work);
      work[p][i] = original;

      const double numeric = (plus - minus) / (2.0 * step);
      const double a = analytic[p][i];
      const double err = std::abs(a - numeric) / std::max(1.0, std::abs(numeric));
      if (err > result.max_rel_error || (p == 0 && i == 0)) {
        result = GradCheckResult{std::max(err, result.max_rel_error), p, i, a, numeric};
      }
    }
  }
  return result;
}

}  // namespace e2em
