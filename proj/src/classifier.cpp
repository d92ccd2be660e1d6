#include "e2em/classifier.hpp"

#include <algorithm>
#include <vector>

#include "e2em/errors.hpp"

namespace e2em {

Tensor Classifier::predict(const Tensor& inputs, std::size_t batch_size) const {
  return predict(parameters(), inputs, batch_size);
}

Tensor Classifier::predict(const ParameterSet& params, const Tensor& inputs, std::size_t batch_size) const {
  if (batch_size == 0) throw ContractError("predict: batch size must be positive");
  if (params.size() != parameters().size()) throw ContractError("predict: parameter set layout does not match model");
  const std::size_t n = inputs.dim(0), c = classes();
  Tensor out({n, c});
  Rng unused(0);
  for (std::size_t begin = 0; begin < n; begin += batch_size) {
    const std::size_t end = std::min(n, begin + batch_size);
    Tape tape;
    std::vector<Var> vars;
    vars.reserve(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) vars.push_back(tape.constant(params.value(i)));
    const Var probs = forward(tape, vars, inputs.rows(begin, end), Mode::Eval, unused);
    std::copy(probs.value().data().begin(), probs.value().data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(begin * c));
  }
  return out;
}

}  // namespace e2em
