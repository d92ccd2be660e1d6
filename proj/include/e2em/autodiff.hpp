#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <string_view>
#include <vector>

#include "e2em/tensor.hpp"

namespace e2em {

enum class OpKind {
  Leaf,
  Constant,
  MatMul,
  Add,
  Sub,
  Mul,
  AddBias,
  Affine,
  Sigmoid,
  Tanh,
  LeakyRelu,
  SoftmaxRows,
  CrossEntropy,
  Sum,
  ConcatCols,
  SliceCols,
  Reshape,
  SliceTime,
  StackTime,
  Conv2d,
  GlobalAvgPool,
  MulConst,
  AddConst,
};

std::string_view op_name(OpKind kind);
std::optional<OpKind> op_from_name(std::string_view name);

class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

/// Dynamic reverse-mode tape. Nodes are appended in evaluation order, so the
/// recorded graph is acyclic and a reverse sweep over node ids visits each
/// node exactly once. Not safe for concurrent mutation.
class Tape {
 public:
  /// Receives the upstream gradient of the node and accumulates into inputs.
  using BackwardFn = std::function<void(Tape&, const Tensor& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Trainable input: gradients are tracked.
  Var leaf(Tensor value);
  /// Non-trainable input: no gradient flows into it.
  Var constant(Tensor value);

  Var record(OpKind kind, std::vector<std::size_t> inputs, Tensor value, BackwardFn backward);

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  OpKind kind(std::size_t id) const { return nodes_.at(id).kind; }
  const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_.at(id).inputs; }
  std::size_t size() const { return nodes_.size(); }

  /// Accumulation buffer of a node, zero-initialised on first touch.
  Tensor& grad_buffer(std::size_t id);

  /// Gradient of the last backward() call w.r.t. this node (zeros if the
  /// node does not influence the loss).
  const Tensor& gradient(Var v);

  /// Seeds d(loss)/d(loss) = 1 and sweeps the tape in reverse. All gradient
  /// accumulators are reset first, so repeated calls do not accumulate.
  void backward(Var loss);

  /// Test hook: negates the upstream gradient handed to every node of `kind`.
  void inject_sign_flip(std::optional<OpKind> kind) { sign_flip_ = kind; }

 private:
  struct Node {
    OpKind kind;
    std::vector<std::size_t> inputs;
    Tensor value;
    Tensor grad;  // empty means zero
    BackwardFn backward;
    bool requires_grad = false;
  };

  std::vector<Node> nodes_;
  std::optional<OpKind> sign_flip_;
};

inline const Tensor& Var::value() const { return tape->value(id); }

}  // namespace e2em
