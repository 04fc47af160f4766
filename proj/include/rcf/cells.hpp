#pragma once

// Recurrent cells: simple RNN, LSTM, GRU and 1-D ConvLSTM, each with a
// forward step that records what backpropagation through time needs and a
// matching backward step. Sequences always start from the zero state.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "rcf/errors.hpp"
#include "rcf/matrix.hpp"
#include "rcf/random.hpp"

namespace rcf {

enum class CellKind { Rnn, Lstm, Gru, ConvLstm, BiLstm };

inline std::string to_string(CellKind k) {
  switch (k) {
    case CellKind::Rnn: return "rnn";
    case CellKind::Lstm: return "lstm";
    case CellKind::Gru: return "gru";
    case CellKind::ConvLstm: return "convlstm";
    case CellKind::BiLstm: return "bilstm";
  }
  return "?";
}

inline CellKind cell_kind_from_string(const std::string& s) {
  if (s == "rnn") return CellKind::Rnn;
  if (s == "lstm") return CellKind::Lstm;
  if (s == "gru") return CellKind::Gru;
  if (s == "convlstm") return CellKind::ConvLstm;
  if (s == "bilstm") return CellKind::BiLstm;
  throw LookupError("unknown cell kind '" + s + "'");
}

/// Hidden activations and (LSTM/ConvLSTM only) cell memory. `memory` stays
/// empty for RNN and GRU.
struct CellState {
  Matrix hidden;
  Matrix memory;
};

// ---------------------------------------------------------------------------
// Parameter bundles

struct RnnCache {
  Matrix input, prev_hidden, hidden;
};

/// Elman cell: h' = tanh(input_w x + recurrent_w h + hidden_b). The readout
/// pair maps a hidden state to an output when the cell is used on its own.
struct RnnParams {
  using Cache = RnnCache;
  Matrix input_w, recurrent_w, readout_w;
  Matrix hidden_b, readout_b;

  std::size_t input_dim() const { return input_w.cols(); }
  std::size_t hidden_dim() const { return input_w.rows(); }
  auto tensors() { return std::array{&input_w, &recurrent_w, &readout_w, &hidden_b, &readout_b}; }
  auto tensors() const {
    return std::array<const Matrix*, 5>{&input_w, &recurrent_w, &readout_w, &hidden_b, &readout_b};
  }
};

struct LstmCache {
  Matrix joint;  // [h_prev; x]
  Matrix prev_memory;
  Matrix forget, input, candidate, output;
  Matrix memory, memory_tanh;
};

/// Gate weights act on the stacked [h_prev; x], so each is hidden x (hidden + input).
struct LstmParams {
  using Cache = LstmCache;
  Matrix forget_w, input_w, candidate_w, output_w;
  Matrix forget_b, input_b, candidate_b, output_b;

  std::size_t hidden_dim() const { return forget_w.rows(); }
  std::size_t input_dim() const { return forget_w.cols() - forget_w.rows(); }
  auto tensors() {
    return std::array{&forget_w, &input_w, &candidate_w, &output_w,
                      &forget_b, &input_b, &candidate_b, &output_b};
  }
  auto tensors() const {
    return std::array<const Matrix*, 8>{&forget_w, &input_w, &candidate_w, &output_w,
                                        &forget_b, &input_b, &candidate_b, &output_b};
  }
};

struct GruCache {
  Matrix input, prev_hidden, joint;
  Matrix update, reset, reset_hidden, candidate;
};

/// Update and reset gates read [h_prev; x]; the candidate splits into an input
/// projection and a recurrent projection of the reset-gated state.
struct GruParams {
  using Cache = GruCache;
  Matrix update_w, reset_w, candidate_input_w, candidate_recurrent_w;
  Matrix update_b, reset_b, candidate_b;

  std::size_t hidden_dim() const { return update_w.rows(); }
  std::size_t input_dim() const { return candidate_input_w.cols(); }
  auto tensors() {
    return std::array{&update_w,  &reset_w,  &candidate_input_w, &candidate_recurrent_w,
                      &update_b,  &reset_b,  &candidate_b};
  }
  auto tensors() const {
    return std::array<const Matrix*, 7>{&update_w, &reset_w, &candidate_input_w,
                                        &candidate_recurrent_w, &update_b, &reset_b,
                                        &candidate_b};
  }
};

struct ConvLstmCache {
  Matrix columns;  // im2col of [h_prev; y]
  Matrix prev_memory;
  Matrix forget, input, output, cell;
  Matrix memory, memory_tanh;
};

/// Kernel banks are filters x ((filters + in_channels) * kernel_len); see
/// conv1d_bank for the tap layout. `cell_activation` squashes the cell-input
/// gate g and defaults to sigmoid.
struct ConvLstmParams {
  using Cache = ConvLstmCache;
  Matrix forget_k, input_k, output_k, cell_k;
  Matrix forget_b, input_b, output_b, cell_b;
  std::size_t kernel_len = 3;
  ActivationKind cell_activation = ActivationKind::Sigmoid;

  std::size_t filters() const { return forget_k.rows(); }
  std::size_t hidden_dim() const { return filters(); }
  std::size_t in_channels() const { return forget_k.cols() / kernel_len - forget_k.rows(); }
  std::size_t input_dim() const { return in_channels(); }
  auto tensors() {
    return std::array{&forget_k, &input_k, &output_k, &cell_k,
                      &forget_b, &input_b, &output_b, &cell_b};
  }
  auto tensors() const {
    return std::array<const Matrix*, 8>{&forget_k, &input_k, &output_k, &cell_k,
                                        &forget_b, &input_b, &output_b, &cell_b};
  }
};

/// Two independent LSTMs, the second reading the sequence reversed.
struct BidirectionalParams {
  LstmParams forward, backward;

  std::size_t hidden_dim() const { return forward.hidden_dim(); }
  std::size_t input_dim() const { return forward.input_dim(); }
  auto tensors() {
    std::array<Matrix*, 16> out{};
    const auto f = forward.tensors();
    const auto b = backward.tensors();
    std::copy(f.begin(), f.end(), out.begin());
    std::copy(b.begin(), b.end(), out.begin() + 8);
    return out;
  }
  auto tensors() const {
    std::array<const Matrix*, 16> out{};
    const auto f = forward.tensors();
    const auto b = backward.tensors();
    std::copy(f.begin(), f.end(), out.begin());
    std::copy(b.begin(), b.end(), out.begin() + 8);
    return out;
  }
};

using CellParams = std::variant<RnnParams, LstmParams, GruParams, ConvLstmParams>;
using LayerParams =
    std::variant<RnnParams, LstmParams, GruParams, ConvLstmParams, BidirectionalParams>;

/// Copy of `p` with every tensor zeroed; the gradient accumulator layout.
template <class P>
P zeros_like(const P& p) {
  P z = p;
  for (Matrix* t : z.tensors()) t->fill(0.0);
  return z;
}

// ---------------------------------------------------------------------------
// Initialization

namespace detail {

inline Matrix glorot(std::size_t rows, std::size_t cols, double fan_in, double fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  Matrix m(rows, cols);
  for (double& v : m.values()) v = rng.uniform(-limit, limit);
  return m;
}

inline Matrix glorot(std::size_t rows, std::size_t cols, Rng& rng) {
  return glorot(rows, cols, static_cast<double>(cols), static_cast<double>(rows), rng);
}

inline void require_dims(std::size_t input_dim, std::size_t hidden_dim) {
  if (input_dim == 0 || hidden_dim == 0) {
    throw ConfigError("cell dimensions must be >= 1 (input " + std::to_string(input_dim) +
                      ", hidden " + std::to_string(hidden_dim) + ")");
  }
}

}  // namespace detail

inline RnnParams init_rnn(std::size_t input_dim, std::size_t hidden_dim, Rng& rng,
                          std::size_t output_dim = 1) {
  detail::require_dims(input_dim, hidden_dim);
  RnnParams p;
  p.input_w = detail::glorot(hidden_dim, input_dim, rng);
  p.recurrent_w = detail::glorot(hidden_dim, hidden_dim, rng);
  p.readout_w = detail::glorot(output_dim, hidden_dim, rng);
  p.hidden_b = Matrix::zeros(hidden_dim, 1);
  p.readout_b = Matrix::zeros(output_dim, 1);
  return p;
}

inline LstmParams init_lstm(std::size_t input_dim, std::size_t hidden_dim, Rng& rng) {
  detail::require_dims(input_dim, hidden_dim);
  const std::size_t joint = hidden_dim + input_dim;
  LstmParams p;
  for (Matrix* w : {&p.forget_w, &p.input_w, &p.candidate_w, &p.output_w}) {
    *w = detail::glorot(hidden_dim, joint, rng);
  }
  for (Matrix* b : {&p.forget_b, &p.input_b, &p.candidate_b, &p.output_b}) {
    *b = Matrix::zeros(hidden_dim, 1);
  }
  return p;
}

inline GruParams init_gru(std::size_t input_dim, std::size_t hidden_dim, Rng& rng) {
  detail::require_dims(input_dim, hidden_dim);
  GruParams p;
  p.update_w = detail::glorot(hidden_dim, hidden_dim + input_dim, rng);
  p.reset_w = detail::glorot(hidden_dim, hidden_dim + input_dim, rng);
  p.candidate_input_w = detail::glorot(hidden_dim, input_dim, rng);
  p.candidate_recurrent_w = detail::glorot(hidden_dim, hidden_dim, rng);
  for (Matrix* b : {&p.update_b, &p.reset_b, &p.candidate_b}) *b = Matrix::zeros(hidden_dim, 1);
  return p;
}

inline ConvLstmParams init_convlstm(std::size_t in_channels, std::size_t filters, Rng& rng,
                                    std::size_t kernel_len = 3,
                                    ActivationKind cell_activation = ActivationKind::Sigmoid) {
  detail::require_dims(in_channels, filters);
  if (kernel_len % 2 == 0) {
    throw ConfigError("convolution kernel length must be odd, got " + std::to_string(kernel_len));
  }
  ConvLstmParams p;
  p.kernel_len = kernel_len;
  p.cell_activation = cell_activation;
  const std::size_t taps = (filters + in_channels) * kernel_len;
  const double fan_in = static_cast<double>(taps);
  const double fan_out = static_cast<double>(filters * kernel_len);
  for (Matrix* k : {&p.forget_k, &p.input_k, &p.output_k, &p.cell_k}) {
    *k = detail::glorot(filters, taps, fan_in, fan_out, rng);
  }
  for (Matrix* b : {&p.forget_b, &p.input_b, &p.output_b, &p.cell_b}) {
    *b = Matrix::zeros(filters, 1);
  }
  return p;
}

struct InitOptions {
  std::size_t kernel_len = 3;
  ActivationKind convlstm_cell_activation = ActivationKind::Sigmoid;
};

/// Uniform Glorot weights, zero biases; deterministic for a given seed.
inline LayerParams init_params(CellKind kind, std::size_t input_dim, std::size_t hidden_dim,
                               std::uint64_t seed, const InitOptions& opts = {}) {
  Rng rng(seed);
  switch (kind) {
    case CellKind::Rnn: return init_rnn(input_dim, hidden_dim, rng);
    case CellKind::Lstm: return init_lstm(input_dim, hidden_dim, rng);
    case CellKind::Gru: return init_gru(input_dim, hidden_dim, rng);
    case CellKind::ConvLstm:
      return init_convlstm(input_dim, hidden_dim, rng, opts.kernel_len,
                           opts.convlstm_cell_activation);
    case CellKind::BiLstm: {
      BidirectionalParams p;
      p.forward = init_lstm(input_dim, hidden_dim, rng);
      p.backward = init_lstm(input_dim, hidden_dim, rng);
      return p;
    }
  }
  throw ConfigError("unknown cell kind");
}

// ---------------------------------------------------------------------------
// Forward steps

template <class Cache>
struct StepResult {
  CellState state;
  Cache cache;
};

namespace detail {

inline void require_rows(const Matrix& m, std::size_t rows, std::size_t cols, const char* what) {
  if (m.rows() != rows || m.cols() != cols) {
    throw ShapeError(std::string(what) + " is " + m.shape_str() + ", expected " +
                     std::to_string(rows) + "x" + std::to_string(cols));
  }
}

inline Matrix affine(const Matrix& w, const Matrix& x, const Matrix& b) {
  Matrix out = matmul(w, x);
  out += b;
  return out;
}

/// Sum over columns: the bias gradient of a filter bank.
inline Matrix row_sums(const Matrix& m) {
  Matrix out(m.rows(), 1);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < m.cols(); ++c) s += m(r, c);
    out(r, 0) = s;
  }
  return out;
}

inline void add_bias_bank(Matrix& out, const Matrix& bias) {
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += bias(r, 0);
}

/// Pre-activation gradient from the downstream gradient and the forward output.
inline Matrix through(ActivationKind k, const Matrix& grad, const Matrix& out) {
  Matrix g(grad.rows(), grad.cols());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = grad[i] * derivative_from_output(k, out[i]);
  return g;
}

}  // namespace detail

inline CellState zero_state(const RnnParams& p, std::size_t = 1) {
  return {Matrix::zeros(p.hidden_dim(), 1), {}};
}
inline CellState zero_state(const LstmParams& p, std::size_t = 1) {
  return {Matrix::zeros(p.hidden_dim(), 1), Matrix::zeros(p.hidden_dim(), 1)};
}
inline CellState zero_state(const GruParams& p, std::size_t = 1) {
  return {Matrix::zeros(p.hidden_dim(), 1), {}};
}
inline CellState zero_state(const ConvLstmParams& p, std::size_t length) {
  return {Matrix::zeros(p.filters(), length), Matrix::zeros(p.filters(), length)};
}

inline StepResult<RnnCache> rnn_step(const RnnParams& p, const CellState& state, const Matrix& x) {
  const std::size_t hidden = p.hidden_dim();
  detail::require_rows(x, p.input_dim(), 1, "rnn input");
  detail::require_rows(state.hidden, hidden, 1, "rnn hidden state");
  Matrix pre = matmul(p.input_w, x);
  pre += matmul(p.recurrent_w, state.hidden);
  pre += p.hidden_b;
  Matrix h = apply_activation(ActivationKind::Tanh, pre);
  return {{h, {}}, {x, state.hidden, h}};
}

/// Readout of the standalone baseline RNN: readout_w h + readout_b.
inline Matrix rnn_readout(const RnnParams& p, const Matrix& hidden) {
  return detail::affine(p.readout_w, hidden, p.readout_b);
}

inline StepResult<LstmCache> lstm_step(const LstmParams& p, const CellState& state,
                                       const Matrix& x) {
  const std::size_t hidden = p.hidden_dim();
  detail::require_rows(x, p.input_dim(), 1, "lstm input");
  detail::require_rows(state.hidden, hidden, 1, "lstm hidden state");
  detail::require_rows(state.memory, hidden, 1, "lstm cell memory");

  LstmCache c;
  c.joint = concat_rows(state.hidden, x);
  c.prev_memory = state.memory;
  c.forget = apply_activation(ActivationKind::Sigmoid, detail::affine(p.forget_w, c.joint, p.forget_b));
  c.input = apply_activation(ActivationKind::Sigmoid, detail::affine(p.input_w, c.joint, p.input_b));
  c.candidate =
      apply_activation(ActivationKind::Tanh, detail::affine(p.candidate_w, c.joint, p.candidate_b));
  c.memory = hadamard(c.forget, state.memory) + hadamard(c.input, c.candidate);
  c.output = apply_activation(ActivationKind::Sigmoid, detail::affine(p.output_w, c.joint, p.output_b));
  c.memory_tanh = apply_activation(ActivationKind::Tanh, c.memory);
  CellState next{hadamard(c.output, c.memory_tanh), c.memory};
  return {std::move(next), std::move(c)};
}

inline StepResult<GruCache> gru_step(const GruParams& p, const CellState& state, const Matrix& x) {
  const std::size_t hidden = p.hidden_dim();
  detail::require_rows(x, p.input_dim(), 1, "gru input");
  detail::require_rows(state.hidden, hidden, 1, "gru hidden state");

  GruCache c;
  c.input = x;
  c.prev_hidden = state.hidden;
  c.joint = concat_rows(state.hidden, x);
  c.update = apply_activation(ActivationKind::Sigmoid, detail::affine(p.update_w, c.joint, p.update_b));
  c.reset = apply_activation(ActivationKind::Sigmoid, detail::affine(p.reset_w, c.joint, p.reset_b));
  c.reset_hidden = hadamard(c.reset, state.hidden);
  Matrix pre = matmul(p.candidate_input_w, x);
  pre += matmul(p.candidate_recurrent_w, c.reset_hidden);
  pre += p.candidate_b;
  c.candidate = apply_activation(ActivationKind::Tanh, pre);

  Matrix h(hidden, 1);
  for (std::size_t k = 0; k < hidden; ++k) {
    h[k] = (1.0 - c.update[k]) * state.hidden[k] + c.update[k] * c.candidate[k];
  }
  return {{std::move(h), {}}, std::move(c)};
}

inline StepResult<ConvLstmCache> convlstm_step(const ConvLstmParams& p, const CellState& state,
                                               const Matrix& y) {
  const std::size_t filters = p.filters(), length = y.cols();
  if (y.rows() != p.in_channels()) {
    throw ShapeError("convlstm input has " + std::to_string(y.rows()) + " channels, expected " +
                     std::to_string(p.in_channels()));
  }
  detail::require_rows(state.hidden, filters, length, "convlstm hidden state");
  detail::require_rows(state.memory, filters, length, "convlstm cell memory");

  ConvLstmCache c;
  c.columns = im2col_same(concat_rows(state.hidden, y), p.kernel_len);
  c.prev_memory = state.memory;
  auto gate = [&](const Matrix& k, const Matrix& b, ActivationKind act) {
    Matrix pre = matmul(k, c.columns);
    detail::add_bias_bank(pre, b);
    return apply_activation(act, pre);
  };
  c.forget = gate(p.forget_k, p.forget_b, ActivationKind::Sigmoid);
  c.input = gate(p.input_k, p.input_b, ActivationKind::Sigmoid);
  c.output = gate(p.output_k, p.output_b, ActivationKind::Sigmoid);
  c.cell = gate(p.cell_k, p.cell_b, p.cell_activation);
  c.memory = hadamard(c.forget, state.memory) + hadamard(c.input, c.cell);
  c.memory_tanh = apply_activation(ActivationKind::Tanh, c.memory);
  CellState next{hadamard(c.output, c.memory_tanh), c.memory};
  return {std::move(next), std::move(c)};
}

inline auto step(const RnnParams& p, const CellState& s, const Matrix& x) { return rnn_step(p, s, x); }
inline auto step(const LstmParams& p, const CellState& s, const Matrix& x) { return lstm_step(p, s, x); }
inline auto step(const GruParams& p, const CellState& s, const Matrix& x) { return gru_step(p, s, x); }
inline auto step(const ConvLstmParams& p, const CellState& s, const Matrix& x) {
  return convlstm_step(p, s, x);
}

// ---------------------------------------------------------------------------
// Backward steps. Each consumes the gradient on this step's hidden output
// (and memory, where present), accumulates parameter gradients into `grads`
// and returns the gradients flowing to the previous state and to the input.

struct StepGrads {
  Matrix prev_hidden;
  Matrix prev_memory;
  Matrix input;
};

inline StepGrads step_backward(const RnnParams& p, const RnnCache& c, const Matrix& d_hidden,
                               const Matrix&, RnnParams& grads) {
  const Matrix d_pre = detail::through(ActivationKind::Tanh, d_hidden, c.hidden);
  add_matmul_nt(grads.input_w, d_pre, c.input);
  add_matmul_nt(grads.recurrent_w, d_pre, c.prev_hidden);
  grads.hidden_b += d_pre;
  return {matmul_tn(p.recurrent_w, d_pre), {}, matmul_tn(p.input_w, d_pre)};
}

inline StepGrads step_backward(const LstmParams& p, const LstmCache& c, const Matrix& d_hidden,
                               const Matrix& d_memory_next, LstmParams& grads) {
  const std::size_t hidden = p.hidden_dim();
  Matrix d_output = hadamard(d_hidden, c.memory_tanh);
  Matrix d_memory = d_memory_next;
  for (std::size_t k = 0; k < hidden; ++k) {
    d_memory[k] += d_hidden[k] * c.output[k] * (1.0 - c.memory_tanh[k] * c.memory_tanh[k]);
  }
  const Matrix d_forget = detail::through(ActivationKind::Sigmoid, hadamard(d_memory, c.prev_memory), c.forget);
  const Matrix d_input = detail::through(ActivationKind::Sigmoid, hadamard(d_memory, c.candidate), c.input);
  const Matrix d_candidate = detail::through(ActivationKind::Tanh, hadamard(d_memory, c.input), c.candidate);
  d_output = detail::through(ActivationKind::Sigmoid, d_output, c.output);

  add_matmul_nt(grads.forget_w, d_forget, c.joint);
  add_matmul_nt(grads.input_w, d_input, c.joint);
  add_matmul_nt(grads.candidate_w, d_candidate, c.joint);
  add_matmul_nt(grads.output_w, d_output, c.joint);
  grads.forget_b += d_forget;
  grads.input_b += d_input;
  grads.candidate_b += d_candidate;
  grads.output_b += d_output;

  Matrix d_joint = matmul_tn(p.forget_w, d_forget);
  d_joint += matmul_tn(p.input_w, d_input);
  d_joint += matmul_tn(p.candidate_w, d_candidate);
  d_joint += matmul_tn(p.output_w, d_output);
  return {slice_rows(d_joint, 0, hidden), hadamard(d_memory, c.forget),
          slice_rows(d_joint, hidden, d_joint.rows() - hidden)};
}

inline StepGrads step_backward(const GruParams& p, const GruCache& c, const Matrix& d_hidden,
                               const Matrix&, GruParams& grads) {
  const std::size_t hidden = p.hidden_dim();
  Matrix d_update(hidden, 1), d_candidate(hidden, 1), d_prev(hidden, 1);
  for (std::size_t k = 0; k < hidden; ++k) {
    d_update[k] = d_hidden[k] * (c.candidate[k] - c.prev_hidden[k]);
    d_candidate[k] = d_hidden[k] * c.update[k];
    d_prev[k] = d_hidden[k] * (1.0 - c.update[k]);
  }
  const Matrix d_cand_pre = detail::through(ActivationKind::Tanh, d_candidate, c.candidate);
  add_matmul_nt(grads.candidate_input_w, d_cand_pre, c.input);
  add_matmul_nt(grads.candidate_recurrent_w, d_cand_pre, c.reset_hidden);
  grads.candidate_b += d_cand_pre;

  const Matrix d_reset_hidden = matmul_tn(p.candidate_recurrent_w, d_cand_pre);
  d_prev += hadamard(d_reset_hidden, c.reset);
  const Matrix d_reset =
      detail::through(ActivationKind::Sigmoid, hadamard(d_reset_hidden, c.prev_hidden), c.reset);
  d_update = detail::through(ActivationKind::Sigmoid, d_update, c.update);

  add_matmul_nt(grads.update_w, d_update, c.joint);
  add_matmul_nt(grads.reset_w, d_reset, c.joint);
  grads.update_b += d_update;
  grads.reset_b += d_reset;

  Matrix d_joint = matmul_tn(p.update_w, d_update);
  d_joint += matmul_tn(p.reset_w, d_reset);
  d_prev += slice_rows(d_joint, 0, hidden);
  Matrix d_input = slice_rows(d_joint, hidden, d_joint.rows() - hidden);
  d_input += matmul_tn(p.candidate_input_w, d_cand_pre);
  return {std::move(d_prev), {}, std::move(d_input)};
}

inline StepGrads step_backward(const ConvLstmParams& p, const ConvLstmCache& c,
                               const Matrix& d_hidden, const Matrix& d_memory_next,
                               ConvLstmParams& grads) {
  const std::size_t filters = p.filters();
  Matrix d_output = hadamard(d_hidden, c.memory_tanh);
  Matrix d_memory = d_memory_next;
  for (std::size_t k = 0; k < d_memory.size(); ++k) {
    d_memory[k] += d_hidden[k] * c.output[k] * (1.0 - c.memory_tanh[k] * c.memory_tanh[k]);
  }
  const Matrix d_forget = detail::through(ActivationKind::Sigmoid, hadamard(d_memory, c.prev_memory), c.forget);
  const Matrix d_input = detail::through(ActivationKind::Sigmoid, hadamard(d_memory, c.cell), c.input);
  const Matrix d_cell = detail::through(p.cell_activation, hadamard(d_memory, c.input), c.cell);
  d_output = detail::through(ActivationKind::Sigmoid, d_output, c.output);

  add_matmul_nt(grads.forget_k, d_forget, c.columns);
  add_matmul_nt(grads.input_k, d_input, c.columns);
  add_matmul_nt(grads.output_k, d_output, c.columns);
  add_matmul_nt(grads.cell_k, d_cell, c.columns);
  grads.forget_b += detail::row_sums(d_forget);
  grads.input_b += detail::row_sums(d_input);
  grads.output_b += detail::row_sums(d_output);
  grads.cell_b += detail::row_sums(d_cell);

  Matrix d_columns = matmul_tn(p.forget_k, d_forget);
  d_columns += matmul_tn(p.input_k, d_input);
  d_columns += matmul_tn(p.output_k, d_output);
  d_columns += matmul_tn(p.cell_k, d_cell);
  const Matrix d_joint = col2im_same(d_columns, filters + p.in_channels(), p.kernel_len);
  return {slice_rows(d_joint, 0, filters), hadamard(d_memory, c.forget),
          slice_rows(d_joint, filters, d_joint.rows() - filters)};
}

// ---------------------------------------------------------------------------
// Cache / parameter consistency

namespace detail {

inline void consistent(bool ok, const char* cell) {
  if (!ok) throw ConsistencyError(std::string(cell) + " cache does not match parameter shapes");
}

inline void check_cache(const RnnParams& p, const RnnCache& c) {
  consistent(c.input.rows() == p.input_dim() && c.hidden.rows() == p.hidden_dim() &&
                 c.prev_hidden.rows() == p.hidden_dim(),
             "rnn");
}
inline void check_cache(const LstmParams& p, const LstmCache& c) {
  consistent(c.joint.rows() == p.forget_w.cols() && c.memory.rows() == p.hidden_dim(), "lstm");
}
inline void check_cache(const GruParams& p, const GruCache& c) {
  consistent(c.joint.rows() == p.update_w.cols() && c.input.rows() == p.input_dim() &&
                 c.update.rows() == p.hidden_dim(),
             "gru");
}
inline void check_cache(const ConvLstmParams& p, const ConvLstmCache& c) {
  consistent(c.columns.rows() == p.forget_k.cols() && c.memory.rows() == p.filters(), "convlstm");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Sequences

/// Result of folding a cell over a sequence: final state, the hidden output
/// of every step, and one cache per consumed step.
template <class P>
struct SequenceRun {
  CellState final_state;
  std::vector<Matrix> outputs;
  std::vector<typename P::Cache> caches;
};

template <class P>
SequenceRun<P> run_sequence(const P& params, std::span<const Matrix> inputs) {
  if (inputs.empty()) throw InputError("run_sequence: empty input sequence");
  for (const Matrix& x : inputs) {
    if (!x.same_shape(inputs.front())) {
      throw InputError("run_sequence: non-uniform input shapes " + inputs.front().shape_str() +
                       " and " + x.shape_str());
    }
  }
  SequenceRun<P> run;
  run.final_state = zero_state(params, inputs.front().cols());
  run.outputs.reserve(inputs.size());
  run.caches.reserve(inputs.size());
  for (const Matrix& x : inputs) {
    auto r = step(params, run.final_state, x);
    run.final_state = std::move(r.state);
    run.outputs.push_back(run.final_state.hidden);
    run.caches.push_back(std::move(r.cache));
  }
  return run;
}

template <class P>
struct SequenceGrads {
  P params;
  std::vector<Matrix> inputs;
};

/// BPTT over a recorded run. `grad_hidden[t]` is the upstream gradient on
/// step t's hidden output; entries may be empty to mean zero.
template <class P>
SequenceGrads<P> backward_sequence(const P& params, std::span<const typename P::Cache> caches,
                                   std::span<const Matrix> grad_hidden) {
  if (caches.size() != grad_hidden.size()) {
    throw ConsistencyError("backward_sequence: " + std::to_string(caches.size()) +
                           " caches but " + std::to_string(grad_hidden.size()) +
                           " hidden gradients");
  }
  SequenceGrads<P> out{zeros_like(params), std::vector<Matrix>(caches.size())};
  if (caches.empty()) return out;
  for (const auto& c : caches) detail::check_cache(params, c);

  const Matrix& last_hidden = [&]() -> const Matrix& {
    if constexpr (std::is_same_v<P, RnnParams>) return caches.back().hidden;
    else if constexpr (std::is_same_v<P, GruParams>) return caches.back().prev_hidden;
    else return caches.back().memory;
  }();
  Matrix d_hidden = Matrix::zeros(last_hidden.rows(), last_hidden.cols());
  Matrix d_memory;
  if constexpr (std::is_same_v<P, LstmParams> || std::is_same_v<P, ConvLstmParams>) {
    d_memory = Matrix::zeros(last_hidden.rows(), last_hidden.cols());
  }
  for (std::size_t t = caches.size(); t-- > 0;) {
    if (!grad_hidden[t].empty()) {
      if (!grad_hidden[t].same_shape(d_hidden)) {
        throw ConsistencyError("backward_sequence: hidden gradient " + grad_hidden[t].shape_str() +
                               " does not match state " + d_hidden.shape_str());
      }
      d_hidden += grad_hidden[t];
    }
    StepGrads g = step_backward(params, caches[t], d_hidden, d_memory, out.params);
    d_hidden = std::move(g.prev_hidden);
    d_memory = std::move(g.prev_memory);
    out.inputs[t] = std::move(g.input);
  }
  return out;
}

/// BPTT with a gradient on the final hidden state only.
template <class P>
SequenceGrads<P> backward_sequence(const P& params, std::span<const typename P::Cache> caches,
                                   const Matrix& grad_final) {
  std::vector<Matrix> grads(caches.size());
  if (!caches.empty()) grads.back() = grad_final;
  return backward_sequence(params, caches, std::span<const Matrix>(grads));
}

/// Forward LSTM over the sequence, backward LSTM over its reverse; output is
/// [h_forward_final; h_backward_final] (2 x hidden rows).
inline Matrix run_bidirectional(const LstmParams& forward, const LstmParams& backward,
                                std::span<const Matrix> inputs) {
  if (forward.hidden_dim() != backward.hidden_dim() ||
      forward.input_dim() != backward.input_dim()) {
    throw ConfigError("bidirectional directions disagree: forward " + forward.forget_w.shape_str() +
                      ", backward " + backward.forget_w.shape_str());
  }
  std::vector<Matrix> reversed(inputs.rbegin(), inputs.rend());
  const auto fwd = run_sequence(forward, inputs);
  const auto bwd = run_sequence(backward, std::span<const Matrix>(reversed));
  return concat_rows(fwd.final_state.hidden, bwd.final_state.hidden);
}

}  // namespace rcf
