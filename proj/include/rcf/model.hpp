#pragma once

// Stacked many-to-one forecaster: recurrent layers over a window of scaled
// values, an elementwise hidden activation on every layer output, and a
// single-output dense head.

#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "rcf/cells.hpp"
#include "rcf/errors.hpp"
#include "rcf/matrix.hpp"
#include "rcf/random.hpp"
#include "rcf/scaler.hpp"

namespace rcf {

struct ModelSpec {
  CellKind cell_kind = CellKind::Lstm;
  /// Units per recurrent layer. ConvLSTM uses `filters` for every layer and
  /// reads only the layer count from here.
  std::vector<std::size_t> layer_units{36, 36};
  std::size_t filters = 64;
  std::size_t kernel_len = 3;
  std::size_t window_size = 6;
  ActivationKind hidden_activation = ActivationKind::Relu;
  ActivationKind output_activation = ActivationKind::Linear;
  ActivationKind convlstm_g_activation = ActivationKind::Sigmoid;

  /// Two layers of 36 units (64 filters for ConvLSTM), ReLU between, linear output.
  static ModelSpec standard(CellKind kind, std::size_t window) {
    ModelSpec s;
    s.cell_kind = kind;
    s.window_size = window;
    return s;
  }

  std::size_t layer_width(std::size_t layer) const {
    return cell_kind == CellKind::ConvLstm ? filters : layer_units.at(layer);
  }
  std::size_t layer_count() const { return layer_units.size(); }

  void validate() const {
    if (layer_units.empty()) throw ConfigError("model needs at least one recurrent layer");
    for (std::size_t u : layer_units) {
      if (u == 0) throw ConfigError("layer units must be >= 1");
    }
    if (window_size == 0) throw ConfigError("window size must be >= 1");
    if (cell_kind == CellKind::ConvLstm) {
      if (filters == 0) throw ConfigError("convlstm filters must be >= 1");
      if (kernel_len % 2 == 0) throw ConfigError("convlstm kernel length must be odd");
    }
  }

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

/// prediction = output_activation(weights . features + bias); weights is 1 x features.
struct DenseHead {
  Matrix weights;
  Matrix bias;  // 1 x 1

  auto tensors() { return std::array{&weights, &bias}; }
  auto tensors() const { return std::array<const Matrix*, 2>{&weights, &bias}; }
};

/// Every learnable tensor of a model. Gradients use the same layout.
struct Network {
  std::vector<LayerParams> layers;
  DenseHead head;

  std::vector<Matrix*> tensors() {
    std::vector<Matrix*> out;
    for (auto& layer : layers) {
      std::visit([&](auto& p) { for (Matrix* t : p.tensors()) out.push_back(t); }, layer);
    }
    for (Matrix* t : head.tensors()) out.push_back(t);
    return out;
  }
  std::vector<const Matrix*> tensors() const {
    std::vector<const Matrix*> out;
    for (const auto& layer : layers) {
      std::visit([&](const auto& p) { for (const Matrix* t : p.tensors()) out.push_back(t); }, layer);
    }
    for (const Matrix* t : head.tensors()) out.push_back(t);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const Matrix* t : tensors()) n += t->size();
    return n;
  }
};

inline Network zeros_like(const Network& net) {
  Network z = net;
  for (Matrix* t : z.tensors()) t->fill(0.0);
  return z;
}

struct TrainedModel {
  ModelSpec spec;
  Network net;
  Scaler scaler;
  std::vector<double> history;  // mean training loss per completed epoch
  std::uint64_t init_seed = 0;
  std::uint64_t shuffle_seed = 0;
};

/// Width of the feature vector the head reads.
inline std::size_t head_input_dim(const ModelSpec& spec) {
  const std::size_t last = spec.layer_count() - 1;
  switch (spec.cell_kind) {
    case CellKind::ConvLstm: return spec.filters * spec.window_size;
    case CellKind::BiLstm: return 2 * spec.layer_width(last);
    default: return spec.layer_width(last);
  }
}

inline Network init_network(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  Network net;
  std::size_t in_dim = 1;
  for (std::size_t l = 0; l < spec.layer_count(); ++l) {
    const std::size_t width = spec.layer_width(l);
    switch (spec.cell_kind) {
      case CellKind::Rnn: net.layers.emplace_back(init_rnn(in_dim, width, rng)); break;
      case CellKind::Lstm: net.layers.emplace_back(init_lstm(in_dim, width, rng)); break;
      case CellKind::Gru: net.layers.emplace_back(init_gru(in_dim, width, rng)); break;
      case CellKind::ConvLstm:
        net.layers.emplace_back(
            init_convlstm(in_dim, width, rng, spec.kernel_len, spec.convlstm_g_activation));
        break;
      case CellKind::BiLstm: {
        BidirectionalParams p;
        p.forward = init_lstm(in_dim, width, rng);
        p.backward = init_lstm(in_dim, width, rng);
        net.layers.emplace_back(std::move(p));
        break;
      }
    }
    in_dim = spec.cell_kind == CellKind::BiLstm ? 2 * width : width;
  }
  const std::size_t features = head_input_dim(spec);
  const double limit = std::sqrt(6.0 / (static_cast<double>(features) + 1.0));
  net.head.weights = Matrix(1, features);
  for (double& v : net.head.weights.values()) v = rng.uniform(-limit, limit);
  net.head.bias = Matrix::zeros(1, 1);
  return net;
}

inline TrainedModel init_model(const ModelSpec& spec, std::uint64_t seed) {
  TrainedModel m;
  m.spec = spec;
  m.net = init_network(spec, seed);
  m.init_seed = seed;
  return m;
}

// ---------------------------------------------------------------------------
// Forward with trace

struct BidirectionalRun {
  SequenceRun<LstmParams> forward, backward;
};

using LayerRun = std::variant<SequenceRun<RnnParams>, SequenceRun<LstmParams>,
                              SequenceRun<GruParams>, SequenceRun<ConvLstmParams>,
                              BidirectionalRun>;

struct LayerTrace {
  LayerRun run;
  /// Activated per-step outputs (non-final layers) or the single activated
  /// final output (last layer).
  std::vector<Matrix> activated;
};

struct ForwardTrace {
  std::vector<LayerTrace> layers;
  Matrix features;  // flattened activated output of the last layer, column
  double prediction = 0.0;
};

namespace detail {

/// Dense cells read one scalar per timestep; ConvLSTM reads the whole window
/// as a single 1-channel frame.
inline std::vector<Matrix> window_inputs(const ModelSpec& spec, std::span<const double> window) {
  if (window.size() != spec.window_size) {
    throw InputError("window has " + std::to_string(window.size()) + " values, model expects " +
                     std::to_string(spec.window_size));
  }
  if (spec.cell_kind == CellKind::ConvLstm) {
    return {Matrix(1, window.size(), std::vector<double>(window.begin(), window.end()))};
  }
  std::vector<Matrix> seq;
  seq.reserve(window.size());
  for (double v : window) seq.push_back(Matrix::scalar(v));
  return seq;
}

/// Raw (pre hidden-activation) outputs of one layer: every step, or only the final one.
template <class P>
std::vector<Matrix> raw_outputs(const SequenceRun<P>& run, bool all_steps) {
  if (all_steps) return run.outputs;
  return {run.final_state.hidden};
}

inline std::vector<Matrix> raw_outputs(const BidirectionalRun& run, bool all_steps) {
  const std::size_t n = run.forward.outputs.size();
  if (!all_steps) {
    return {concat_rows(run.forward.final_state.hidden, run.backward.final_state.hidden)};
  }
  std::vector<Matrix> out;
  out.reserve(n);
  for (std::size_t t = 0; t < n; ++t) {
    out.push_back(concat_rows(run.forward.outputs[t], run.backward.outputs[n - 1 - t]));
  }
  return out;
}

inline LayerRun run_layer(const LayerParams& layer, std::span<const Matrix> inputs) {
  return std::visit(
      [&](const auto& p) -> LayerRun {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, BidirectionalParams>) {
          std::vector<Matrix> reversed(inputs.rbegin(), inputs.rend());
          return BidirectionalRun{run_sequence(p.forward, inputs),
                                  run_sequence(p.backward, std::span<const Matrix>(reversed))};
        } else {
          return run_sequence(p, inputs);
        }
      },
      layer);
}

inline Matrix flatten_column(const Matrix& m) {
  return Matrix(m.size(), 1, m.storage());
}

}  // namespace detail

inline ForwardTrace forward_trace(const ModelSpec& spec, const Network& net,
                                  std::span<const double> window) {
  std::vector<Matrix> seq = detail::window_inputs(spec, window);
  ForwardTrace trace;
  trace.layers.reserve(net.layers.size());
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const bool last = l + 1 == net.layers.size();
    LayerTrace lt{detail::run_layer(net.layers[l], seq), {}};
    std::vector<Matrix> raw = std::visit(
        [&](const auto& run) { return detail::raw_outputs(run, !last); }, lt.run);
    for (Matrix& m : raw) lt.activated.push_back(apply_activation(spec.hidden_activation, m));
    seq = lt.activated;
    trace.layers.push_back(std::move(lt));
  }
  trace.features = detail::flatten_column(seq.front());
  const double pre = matmul(net.head.weights, trace.features)(0, 0) + net.head.bias(0, 0);
  trace.prediction = detail::activate(spec.output_activation, pre);
  return trace;
}

/// One-step prediction in scaled units.
inline double forward(const TrainedModel& model, std::span<const double> window) {
  return forward_trace(model.spec, model.net, window).prediction;
}

// ---------------------------------------------------------------------------
// Backward

/// Gradient of d_prediction * prediction with respect to every network tensor.
inline Network backward(const ModelSpec& spec, const Network& net, const ForwardTrace& trace,
                        double d_prediction) {
  Network grads = zeros_like(net);
  const double d_pre =
      d_prediction * detail::derivative_from_output(spec.output_activation, trace.prediction);
  add_matmul_nt(grads.head.weights, Matrix::scalar(d_pre), trace.features);
  grads.head.bias(0, 0) += d_pre;

  // Gradient on the activated outputs of the current layer.
  Matrix d_features = matmul_tn(net.head.weights, Matrix::scalar(d_pre));
  const Matrix& last_out = trace.layers.back().activated.front();
  std::vector<Matrix> d_activated{Matrix(last_out.rows(), last_out.cols(), d_features.storage())};

  for (std::size_t l = net.layers.size(); l-- > 0;) {
    const LayerTrace& lt = trace.layers[l];
    const bool last = l + 1 == net.layers.size();
    std::vector<Matrix> d_raw(d_activated.size());
    for (std::size_t t = 0; t < d_activated.size(); ++t) {
      d_raw[t] = detail::through(spec.hidden_activation, d_activated[t], lt.activated[t]);
    }
    std::vector<Matrix> d_inputs = std::visit(
        [&](const auto& p) -> std::vector<Matrix> {
          using P = std::decay_t<decltype(p)>;
          auto& g = std::get<P>(grads.layers[l]);
          if constexpr (std::is_same_v<P, BidirectionalParams>) {
            const auto& run = std::get<BidirectionalRun>(lt.run);
            const std::size_t n = run.forward.caches.size(), h = p.hidden_dim();
            std::vector<Matrix> d_fwd(n), d_bwd(n);
            if (last) {
              d_fwd.back() = slice_rows(d_raw.front(), 0, h);
              d_bwd.back() = slice_rows(d_raw.front(), h, h);
            } else {
              for (std::size_t t = 0; t < n; ++t) {
                d_fwd[t] = slice_rows(d_raw[t], 0, h);
                d_bwd[n - 1 - t] = slice_rows(d_raw[t], h, h);
              }
            }
            auto gf = backward_sequence(p.forward, std::span<const LstmCache>(run.forward.caches),
                                        std::span<const Matrix>(d_fwd));
            auto gb = backward_sequence(p.backward, std::span<const LstmCache>(run.backward.caches),
                                        std::span<const Matrix>(d_bwd));
            g.forward = std::move(gf.params);
            g.backward = std::move(gb.params);
            std::vector<Matrix> d_in = std::move(gf.inputs);
            for (std::size_t t = 0; t < n; ++t) d_in[t] += gb.inputs[n - 1 - t];
            return d_in;
          } else {
            const auto& run = std::get<SequenceRun<P>>(lt.run);
            using Cache = typename P::Cache;
            std::vector<Matrix> d_steps(run.caches.size());
            if (last) {
              d_steps.back() = d_raw.front();
            } else {
              d_steps = d_raw;
            }
            auto sg = backward_sequence(p, std::span<const Cache>(run.caches),
                                        std::span<const Matrix>(d_steps));
            g = std::move(sg.params);
            return std::move(sg.inputs);
          }
        },
        net.layers[l]);
    d_activated = std::move(d_inputs);
  }
  return grads;
}

}  // namespace rcf
