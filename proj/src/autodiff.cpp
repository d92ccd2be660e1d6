#include "e2em/autodiff.hpp"

#include <array>
#include <utility>

#include "e2em/errors.hpp"

namespace e2em {

namespace {

constexpr std::array<std::pair<OpKind, std::string_view>, 23> kOpNames{{
    {OpKind::Leaf, "leaf"},
    {OpKind::Constant, "constant"},
    {OpKind::MatMul, "matmul"},
    {OpKind::Add, "add"},
    {OpKind::Sub, "sub"},
    {OpKind::Mul, "mul"},
    {OpKind::AddBias, "add_bias"},
    {OpKind::Affine, "affine"},
    {OpKind::Sigmoid, "sigmoid"},
    {OpKind::Tanh, "tanh"},
    {OpKind::LeakyRelu, "leaky_relu"},
    {OpKind::SoftmaxRows, "softmax_rows"},
    {OpKind::CrossEntropy, "cross_entropy"},
    {OpKind::Sum, "sum"},
    {OpKind::ConcatCols, "concat_cols"},
    {OpKind::SliceCols, "slice_cols"},
    {OpKind::Reshape, "reshape"},
    {OpKind::SliceTime, "slice_time"},
    {OpKind::StackTime, "stack_time"},
    {OpKind::Conv2d, "conv2d"},
    {OpKind::GlobalAvgPool, "global_avg_pool"},
    {OpKind::MulConst, "mul_const"},
    {OpKind::AddConst, "add_const"},
}};

}  // namespace

std::string_view op_name(OpKind kind) {
  for (const auto& [k, name] : kOpNames) {
    if (k == kind) return name;
  }
  return "unknown";
}

std::optional<OpKind> op_from_name(std::string_view name) {
  for (const auto& [k, n] : kOpNames) {
    if (n == name) return k;
  }
  return std::nullopt;
}

Var Tape::leaf(Tensor value) {
  nodes_.push_back(Node{OpKind::Leaf, {}, std::move(value), Tensor{}, nullptr, true});
  return Var{this, nodes_.size() - 1};
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{OpKind::Constant, {}, std::move(value), Tensor{}, nullptr, false});
  return Var{this, nodes_.size() - 1};
}

Var Tape::record(OpKind kind, std::vector<std::size_t> inputs, Tensor value, BackwardFn backward) {
  bool needs = false;
  for (auto id : inputs) {
    if (id >= nodes_.size()) throw ContractError("input node does not belong to this tape");
    needs = needs || nodes_[id].requires_grad;
  }
  if (!needs) backward = nullptr;
  nodes_.push_back(Node{kind, std::move(inputs), std::move(value), Tensor{}, std::move(backward), needs});
  return Var{this, nodes_.size() - 1};
}

Tensor& Tape::grad_buffer(std::size_t id) {
  auto& node = nodes_.at(id);
  if (node.grad.empty()) node.grad = Tensor::zeros(node.value.shape());
  return node.grad;
}

const Tensor& Tape::gradient(Var v) {
  if (v.tape != this) throw ContractError("variable belongs to a different tape");
  return grad_buffer(v.id);
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw ContractError("loss belongs to a different tape");
  if (nodes_.at(loss.id).value.size() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " +
                        shape_to_string(nodes_[loss.id].value.shape()));
  }
  for (auto& node : nodes_) node.grad = Tensor{};
  grad_buffer(loss.id)[0] = 1.0;

  for (std::size_t i = loss.id + 1; i-- > 0;) {
    auto& node = nodes_[i];
    if (!node.backward || node.grad.empty()) continue;
    if (sign_flip_ && node.kind == *sign_flip_) {
      Tensor flipped = node.grad;
      for (auto& g : flipped.data()) g = -g;
      node.backward(*this, flipped);
    } else {
      // Inputs always have smaller ids, so the closure never touches node.grad.
      node.backward(*this, node.grad);
    }
  }
}

}  // namespace e2em
