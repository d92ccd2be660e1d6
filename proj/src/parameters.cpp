#include "e2em/parameters.hpp"

#include <cmath>

#include "e2em/errors.hpp"

namespace e2em {

std::size_t ParameterSet::add(std::string name, Tensor value) {
  if (find(name)) throw ContractError("duplicate parameter name '" + name + "'");
  names_.push_back(std::move(name));
  values_.push_back(std::move(value));
  return values_.size() - 1;
}

std::optional<std::size_t> ParameterSet::find(std::string_view name) const {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i] == name) return i;
  }
  return std::nullopt;
}

std::size_t ParameterSet::element_count() const {
  std::size_t n = 0;
  for (const auto& v : values_) n += v.size();
  return n;
}

std::vector<Var> ParameterSet::bind(Tape& tape) const {
  std::vector<Var> leaves;
  leaves.reserve(values_.size());
  for (const auto& v : values_) leaves.push_back(tape.leaf(v));
  return leaves;
}

ParameterSet ParameterSet::rounded_to_float() const {
  ParameterSet out = *this;
  for (auto& v : out.values_) {
    for (auto& x : v.data()) x = round_to_float(x);
  }
  return out;
}

Tensor glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Tensor t(std::move(shape));
  for (auto& x : t.data()) x = dist(rng);
  return t;
}

}  // namespace e2em
