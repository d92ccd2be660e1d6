#include "e2em/rnn.hpp"

#include "e2em/errors.hpp"
#include "e2em/ops.hpp"

namespace e2em {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

/// h . W_h + x . W_x + b; the hidden term is skipped for the zero state.
Var pre_activation(Var x, Var w_x, const std::optional<Var>& h, Var w_h, Var b) {
  Var acc = matmul(x, w_x);
  if (h) acc = add(matmul(*h, w_h), acc);
  return add_bias(acc, b);
}

Tensor zero_bias(std::size_t units) { return Tensor::zeros({units}); }

std::vector<Var> run_steps(const CellWeights<Var>& p, Var seq, bool reverse) {
  const Shape& s = seq.shape();
  if (s.size() != 3) throw DimensionError("sequence must be [b x T x d], got " + shape_to_string(s));
  const std::size_t T = s[1];
  std::vector<Var> outputs(T);
  CellState state;
  for (std::size_t k = 0; k < T; ++k) {
    const std::size_t t = reverse ? T - 1 - k : k;
    state = cell_step(p, slice_time(seq, t), state);
    outputs[t] = *state.h;
  }
  return outputs;
}

}  // namespace

std::string_view cell_kind_name(CellKind kind) {
  switch (kind) {
    case CellKind::Rnn: return "RNN";
    case CellKind::Lstm: return "LSTM";
    case CellKind::Gru: return "GRU";
  }
  return "?";
}

CellKind cell_kind(const CellParams& p) {
  return std::visit(Overloaded{[](const RnnParams&) { return CellKind::Rnn; },
                               [](const LstmParams&) { return CellKind::Lstm; },
                               [](const GruParams&) { return CellKind::Gru; }},
                    p);
}

std::size_t cell_units(const CellParams& p) {
  return std::visit(Overloaded{[](const RnnParams& w) { return w.b.size(); },
                               [](const LstmParams& w) { return w.b_f.size(); },
                               [](const GruParams& w) { return w.b_r.size(); }},
                    p);
}

std::size_t cell_input_width(const CellParams& p) {
  return std::visit(Overloaded{[](const RnnParams& w) { return w.w_x.dim(0); },
                               [](const LstmParams& w) { return w.w_fx.dim(0); },
                               [](const GruParams& w) { return w.w_rx.dim(0); }},
                    p);
}

RnnParams make_rnn_params(std::size_t d, std::size_t u, Rng& rng) {
  return RnnParams{glorot_uniform({u, u}, u, u, rng), glorot_uniform({d, u}, d, u, rng), zero_bias(u)};
}

LstmParams make_lstm_params(std::size_t d, std::size_t u, Rng& rng) {
  LstmParams p;
  for (auto [wh, wx, b] : {std::tie(p.w_fh, p.w_fx, p.b_f), std::tie(p.w_ih, p.w_ix, p.b_i),
                           std::tie(p.w_ch, p.w_cx, p.b_c), std::tie(p.w_oh, p.w_ox, p.b_o)}) {
    wh = glorot_uniform({u, u}, u, u, rng);
    wx = glorot_uniform({d, u}, d, u, rng);
    b = zero_bias(u);
  }
  return p;
}

GruParams make_gru_params(std::size_t d, std::size_t u, Rng& rng) {
  GruParams p;
  for (auto [wh, wx, b] : {std::tie(p.w_rh, p.w_rx, p.b_r), std::tie(p.w_zh, p.w_zx, p.b_z),
                           std::tie(p.w_hh, p.w_hx, p.b_h)}) {
    wh = glorot_uniform({u, u}, u, u, rng);
    wx = glorot_uniform({d, u}, d, u, rng);
    b = zero_bias(u);
  }
  return p;
}

CellParams make_cell_params(CellKind kind, std::size_t d, std::size_t u, Rng& rng) {
  if (u == 0) throw ConfigError("recurrent unit count must be positive");
  switch (kind) {
    case CellKind::Rnn: return make_rnn_params(d, u, rng);
    case CellKind::Lstm: return make_lstm_params(d, u, rng);
    case CellKind::Gru: return make_gru_params(d, u, rng);
  }
  throw ConfigError("unknown cell kind");
}

BiParams make_bi_params(CellKind kind, std::size_t d, std::size_t u, Rng& rng) {
  CellParams fwd = make_cell_params(kind, d, u, rng);
  CellParams bwd = make_cell_params(kind, d, u, rng);
  return BiParams{std::move(fwd), std::move(bwd)};
}

OutputProjection<Tensor> make_output_projection(std::size_t u, std::size_t c, Rng& rng) {
  return {glorot_uniform({u, c}, u, c, rng), zero_bias(c)};
}

BiProjection<Tensor> make_bi_projection(std::size_t u, std::size_t c, Rng& rng) {
  return {glorot_uniform({u, c}, u, c, rng), glorot_uniform({u, c}, u, c, rng), zero_bias(c)};
}

CellWeights<std::size_t> register_cell(ParameterSet& set, const std::string& prefix, const CellParams& w) {
  return transform_cell(w, [&](std::string_view name, const Tensor& t) {
    return set.add(prefix + "." + std::string(name), t);
  });
}

CellWeights<Var> bind_cell(const CellWeights<std::size_t>& idx, std::span<const Var> leaves) {
  return transform_cell(idx, [&](std::string_view, std::size_t i) { return leaves[i]; });
}

CellWeights<Var> leaves_of_cell(Tape& tape, const CellParams& w) {
  return transform_cell(w, [&](std::string_view, const Tensor& t) { return tape.leaf(t); });
}

Var rnn_step(const RnnWeights<Var>& p, Var x, const std::optional<Var>& h_prev) {
  return sigmoid(pre_activation(x, p.w_x, h_prev, p.w_h, p.b));
}

CellState lstm_step(const LstmWeights<Var>& p, Var x, const CellState& state) {
  const Var f = sigmoid(pre_activation(x, p.w_fx, state.h, p.w_fh, p.b_f));
  const Var i = sigmoid(pre_activation(x, p.w_ix, state.h, p.w_ih, p.b_i));
  const Var candidate = tanh(pre_activation(x, p.w_cx, state.h, p.w_ch, p.b_c));
  const Var o = sigmoid(pre_activation(x, p.w_ox, state.h, p.w_oh, p.b_o));
  Var c = mul(i, candidate);
  if (state.c) c = add(mul(f, *state.c), c);
  const Var h = mul(o, tanh(c));
  return CellState{h, c};
}

Var gru_step(const GruWeights<Var>& p, Var x, const std::optional<Var>& h_prev) {
  const Var z = sigmoid(pre_activation(x, p.w_zx, h_prev, p.w_zh, p.b_z));
  std::optional<Var> gated;
  if (h_prev) {
    const Var r = sigmoid(pre_activation(x, p.w_rx, h_prev, p.w_rh, p.b_r));
    gated = mul(r, *h_prev);
  }
  const Var candidate = tanh(pre_activation(x, p.w_hx, gated, p.w_hh, p.b_h));
  Var h = mul(z, candidate);
  if (h_prev) h = add(mul(affine(z, -1.0, 1.0), *h_prev), h);
  return h;
}

CellState cell_step(const CellWeights<Var>& p, Var x, const CellState& state) {
  return std::visit(Overloaded{[&](const RnnWeights<Var>& w) { return CellState{rnn_step(w, x, state.h), {}}; },
                               [&](const LstmWeights<Var>& w) { return lstm_step(w, x, state); },
                               [&](const GruWeights<Var>& w) { return CellState{gru_step(w, x, state.h), {}}; }},
                    p);
}

Var run_sequence(const CellWeights<Var>& p, Var seq, bool reverse) {
  const auto outputs = run_steps(p, seq, reverse);
  return stack_time(outputs);
}

Var bidirectional_forward(const BiWeights<Var>& p, Var seq) {
  const auto fwd = run_steps(p.forward, seq, false);
  const auto bwd = run_steps(p.backward, seq, true);
  std::vector<Var> joined;
  joined.reserve(fwd.size());
  for (std::size_t t = 0; t < fwd.size(); ++t) {
    const Var pair[] = {fwd[t], bwd[t]};
    joined.push_back(concat_cols(pair));
  }
  return stack_time(joined);
}

Var project_output(const OutputProjection<Var>& p, Var h) { return softmax_rows(add_bias(matmul(h, p.w_y), p.b_y)); }

Var project_bidirectional(const BiProjection<Var>& p, Var h, Var z) {
  return softmax_rows(add_bias(add(matmul(h, p.w_yh), matmul(z, p.w_yz)), p.b_y));
}

Var reshape_to_sequence(Var features) {
  const Shape& s = features.shape();
  if (s.size() != 2) throw DimensionError("reshape_to_sequence expects [b x d], got " + shape_to_string(s));
  return reshape(features, {s[0], 1, s[1]});
}

Tensor reshape_to_sequence(const Tensor& features) {
  if (features.rank() != 2) {
    throw DimensionError("reshape_to_sequence expects [b x d], got " + shape_to_string(features.shape()));
  }
  return features.reshaped({features.dim(0), 1, features.dim(1)});
}

HiddenState zero_state(std::size_t batch, std::size_t units, bool with_cell) {
  HiddenState s{Tensor::zeros({batch, units}), {}};
  if (with_cell) s.c = Tensor::zeros({batch, units});
  return s;
}

Tensor rnn_step(const RnnParams& p, const Tensor& x, const Tensor& h_prev) {
  Tape tape;
  return rnn_step(leaves_of(tape, p), tape.constant(x), tape.constant(h_prev)).value();
}

HiddenState lstm_step(const LstmParams& p, const Tensor& x, const HiddenState& state) {
  if (state.c.empty()) throw ContractError("lstm_step: missing cell state");
  Tape tape;
  const CellState out =
      lstm_step(leaves_of(tape, p), tape.constant(x), CellState{tape.constant(state.h), tape.constant(state.c)});
  return HiddenState{out.h->value(), out.c->value()};
}

Tensor gru_step(const GruParams& p, const Tensor& x, const Tensor& h_prev) {
  Tape tape;
  return gru_step(leaves_of(tape, p), tape.constant(x), tape.constant(h_prev)).value();
}

Tensor bidirectional_forward(const BiParams& p, const Tensor& seq) {
  if (seq.rank() != 3) throw DimensionError("bidirectional_forward expects [b x T x d], got " + shape_to_string(seq.shape()));
  Tape tape;
  const BiWeights<Var> w{leaves_of_cell(tape, p.forward), leaves_of_cell(tape, p.backward)};
  return bidirectional_forward(w, tape.constant(seq)).value();
}

}  // namespace e2em
