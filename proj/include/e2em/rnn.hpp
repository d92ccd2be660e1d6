#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <utility>
#include <variant>
#include <vector>

#include "e2em/autodiff.hpp"
#include "e2em/parameters.hpp"
#include "e2em/tensor.hpp"

namespace e2em {

// Recurrent cells in row-vector convention: pre-activations are
// h_prev . W_h + x . W_x + b, with hidden weights [u x u], input weights
// [d x u] and biases [u]. Each weight struct is templated on its field type so
// the same layout holds initial tensors, parameter-set indices, or tape vars.

/// Plain recurrent cell: h_t = sigmoid(h_{t-1} W_h + x_t W_x + b).
template <class T>
struct RnnWeights {
  T w_h, w_x, b;

  template <class Self, class F>
  static void visit(Self& s, F&& f) {
    f("w_h", s.w_h);
    f("w_x", s.w_x);
    f("b", s.b);
  }
};

/// Forget (f), input (i), candidate (c) and output (o) gate blocks.
template <class T>
struct LstmWeights {
  T w_fh, w_fx, b_f;
  T w_ih, w_ix, b_i;
  T w_ch, w_cx, b_c;
  T w_oh, w_ox, b_o;

  template <class Self, class F>
  static void visit(Self& s, F&& f) {
    f("w_fh", s.w_fh);
    f("w_fx", s.w_fx);
    f("b_f", s.b_f);
    f("w_ih", s.w_ih);
    f("w_ix", s.w_ix);
    f("b_i", s.b_i);
    f("w_ch", s.w_ch);
    f("w_cx", s.w_cx);
    f("b_c", s.b_c);
    f("w_oh", s.w_oh);
    f("w_ox", s.w_ox);
    f("b_o", s.b_o);
  }
};

/// Reset (r), update (z) and candidate (h) blocks. The candidate has its own
/// bias b_h, distinct from the update-gate bias.
template <class T>
struct GruWeights {
  T w_rh, w_rx, b_r;
  T w_zh, w_zx, b_z;
  T w_hh, w_hx, b_h;

  template <class Self, class F>
  static void visit(Self& s, F&& f) {
    f("w_rh", s.w_rh);
    f("w_rx", s.w_rx);
    f("b_r", s.b_r);
    f("w_zh", s.w_zh);
    f("w_zx", s.w_zx);
    f("b_z", s.b_z);
    f("w_hh", s.w_hh);
    f("w_hx", s.w_hx);
    f("b_h", s.b_h);
  }
};

/// Softmax read-out y = softmax(h W_y + b_y) of a single cell.
template <class T>
struct OutputProjection {
  T w_y, b_y;

  template <class Self, class F>
  static void visit(Self& s, F&& f) {
    f("w_y", s.w_y);
    f("b_y", s.b_y);
  }
};

/// Read-out of a bidirectional layer: softmax(h W_yh + z W_yz + b_y).
template <class T>
struct BiProjection {
  T w_yh, w_yz, b_y;

  template <class Self, class F>
  static void visit(Self& s, F&& f) {
    f("w_yh", s.w_yh);
    f("w_yz", s.w_yz);
    f("b_y", s.b_y);
  }
};

template <class T>
using CellWeights = std::variant<RnnWeights<T>, LstmWeights<T>, GruWeights<T>>;

/// Forward (left-to-right) and backward (right-to-left) cells of the same
/// variant and unit count.
template <class T>
struct BiWeights {
  CellWeights<T> forward;
  CellWeights<T> backward;
};

/// Maps every field of a weight struct through f(name, field).
template <template <class> class W, class T, class F>
auto transform_weights(const W<T>& in, F&& f) {
  using U = std::decay_t<decltype(f(std::string_view{}, std::declval<const T&>()))>;
  W<U> out{};
  std::vector<U*> slots;
  W<U>::visit(out, [&](std::string_view, U& field) { slots.push_back(&field); });
  std::size_t i = 0;
  W<T>::visit(in, [&](std::string_view name, const T& field) { *slots[i++] = f(name, field); });
  return out;
}

template <class T, class F>
auto transform_cell(const CellWeights<T>& in, F&& f) {
  using U = std::decay_t<decltype(f(std::string_view{}, std::declval<const T&>()))>;
  return std::visit([&](const auto& w) -> CellWeights<U> { return transform_weights(w, f); }, in);
}

template <class T, class F>
auto transform_bi(const BiWeights<T>& in, F&& f) {
  using U = std::decay_t<decltype(f(std::string_view{}, std::declval<const T&>()))>;
  return BiWeights<U>{transform_cell(in.forward, f), transform_cell(in.backward, f)};
}

enum class CellKind { Rnn, Lstm, Gru };

std::string_view cell_kind_name(CellKind kind);

using RnnParams = RnnWeights<Tensor>;
using LstmParams = LstmWeights<Tensor>;
using GruParams = GruWeights<Tensor>;
using CellParams = CellWeights<Tensor>;
using BiParams = BiWeights<Tensor>;

CellKind cell_kind(const CellParams& p);
std::size_t cell_units(const CellParams& p);
std::size_t cell_input_width(const CellParams& p);

/// Glorot-uniform weights, zero biases.
RnnParams make_rnn_params(std::size_t input_width, std::size_t units, Rng& rng);
LstmParams make_lstm_params(std::size_t input_width, std::size_t units, Rng& rng);
GruParams make_gru_params(std::size_t input_width, std::size_t units, Rng& rng);
CellParams make_cell_params(CellKind kind, std::size_t input_width, std::size_t units, Rng& rng);
BiParams make_bi_params(CellKind kind, std::size_t input_width, std::size_t units, Rng& rng);
OutputProjection<Tensor> make_output_projection(std::size_t units, std::size_t classes, Rng& rng);
BiProjection<Tensor> make_bi_projection(std::size_t units, std::size_t classes, Rng& rng);

/// Registers each field as "<prefix>.<field>" and returns the indices.
template <template <class> class W>
W<std::size_t> register_weights(ParameterSet& set, const std::string& prefix, const W<Tensor>& w) {
  return transform_weights(w, [&](std::string_view name, const Tensor& t) {
    return set.add(prefix + "." + std::string(name), t);
  });
}
CellWeights<std::size_t> register_cell(ParameterSet& set, const std::string& prefix, const CellParams& w);

/// Looks up tape leaves by parameter index.
template <template <class> class W>
W<Var> bind_weights(const W<std::size_t>& idx, std::span<const Var> leaves) {
  return transform_weights(idx, [&](std::string_view, std::size_t i) { return leaves[i]; });
}
CellWeights<Var> bind_cell(const CellWeights<std::size_t>& idx, std::span<const Var> leaves);

/// Records every field of a tensor-valued weight struct as a leaf.
template <template <class> class W>
W<Var> leaves_of(Tape& tape, const W<Tensor>& w) {
  return transform_weights(w, [&](std::string_view, const Tensor& t) { return tape.leaf(t); });
}
CellWeights<Var> leaves_of_cell(Tape& tape, const CellParams& w);

/// Recurrent state on the tape. An empty h (or c) stands for the all-zero
/// initial state; the cell then skips the terms that multiply it.
struct CellState {
  std::optional<Var> h;
  std::optional<Var> c;
};

Var rnn_step(const RnnWeights<Var>& p, Var x, const std::optional<Var>& h_prev);
CellState lstm_step(const LstmWeights<Var>& p, Var x, const CellState& state);
Var gru_step(const GruWeights<Var>& p, Var x, const std::optional<Var>& h_prev);
CellState cell_step(const CellWeights<Var>& p, Var x, const CellState& state);

/// Runs a cell over a [b x T x d] sequence from the zero state and returns
/// the hidden states [b x T x u]. With `reverse`, steps run right-to-left and
/// output position t still holds the state produced at input position t.
Var run_sequence(const CellWeights<Var>& p, Var seq, bool reverse);

/// [b x T x d] -> [b x T x 2u]: concatenation [h_t | z_t] of the
/// left-to-right and right-to-left passes.
Var bidirectional_forward(const BiWeights<Var>& p, Var seq);

/// softmax(h W_y + b_y).
Var project_output(const OutputProjection<Var>& p, Var h);
/// softmax(h W_yh + z W_yz + b_y).
Var project_bidirectional(const BiProjection<Var>& p, Var h, Var z);

/// [b x d] -> [b x 1 x d].
Var reshape_to_sequence(Var features);
Tensor reshape_to_sequence(const Tensor& features);

// Tensor-valued conveniences evaluated on a private tape with explicit
// (possibly zero) state tensors.

struct HiddenState {
  Tensor h;
  Tensor c;  // LSTM only
};

HiddenState zero_state(std::size_t batch, std::size_t units, bool with_cell);

Tensor rnn_step(const RnnParams& p, const Tensor& x, const Tensor& h_prev);
HiddenState lstm_step(const LstmParams& p, const Tensor& x, const HiddenState& state);
Tensor gru_step(const GruParams& p, const Tensor& x, const Tensor& h_prev);
Tensor bidirectional_forward(const BiParams& p, const Tensor& seq);

}  // namespace e2em
