#pragma once

// Finite-difference harnesses shared by the gradient tests and the acceptance
// run. Each returns the worst relative error it saw.

#include <algorithm>
#include <vector>

#include "rcf/cells.hpp"
#include "rcf/model.hpp"
#include "rcf/training.hpp"
#include "support/oracles.hpp"

namespace rcf::gradcheck {

inline constexpr double kEps = 1e-5;

inline Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng) {
  Matrix m(r, c);
  for (double& v : m.values()) v = rng.uniform(-1, 1);
  return m;
}

inline std::vector<Matrix> random_inputs(std::size_t steps, std::size_t rows, std::size_t cols,
                                         Rng& rng) {
  std::vector<Matrix> xs;
  for (std::size_t t = 0; t < steps; ++t) xs.push_back(random_matrix(rows, cols, rng));
  return xs;
}

template <class P>
void randomize(P& params, Rng& rng, double scale = 0.6) {
  for (Matrix* t : params.tensors()) {
    for (double& v : t->values()) v = rng.uniform(-scale, scale);
  }
}

/// L = sum_t <weights_t, h_t>, so dL/dh_t = weights_t.
template <class P>
double projected_loss(const P& p, const std::vector<Matrix>& xs, const std::vector<Matrix>& weights) {
  const auto run = run_sequence(p, xs);
  double loss = 0;
  for (std::size_t t = 0; t < xs.size(); ++t) {
    for (std::size_t i = 0; i < weights[t].size(); ++i) loss += weights[t][i] * run.outputs[t][i];
  }
  return loss;
}

struct SequenceErrors {
  double params = 0.0;             // worst entry of any parameter tensor
  double inputs = 0.0;             // worst entry of any input
  double params_per_tensor = 0.0;  // worst whole-tensor error
  double inputs_per_tensor = 0.0;
};

/// Guarded relative error of backward_sequence against central differences.
/// With `final_only` the loss reads only the last hidden state.
template <class P>
SequenceErrors sequence_errors(P p, std::vector<Matrix> xs, bool final_only, Rng& rng) {
  const auto run = run_sequence(p, xs);
  std::vector<Matrix> weights(xs.size());
  for (std::size_t t = 0; t < xs.size(); ++t) {
    if (final_only && t + 1 != xs.size()) continue;
    weights[t] = random_matrix(run.outputs[t].rows(), run.outputs[t].cols(), rng);
  }
  const std::span<const typename P::Cache> caches(run.caches);
  const auto grads = final_only ? backward_sequence(p, caches, weights.back())
                                : backward_sequence(p, caches, std::span<const Matrix>(weights));
  SequenceErrors out;
  auto params = p.tensors();
  const auto analytic = grads.params.tensors();
  const auto loss = [&] { return projected_loss(p, xs, weights); };
  for (std::size_t k = 0; k < params.size(); ++k) {
    const Matrix n = oracle::numeric_gradient(*params[k], loss, kEps);
    out.params = std::max(out.params, oracle::max_relative_error(*analytic[k], n));
    out.params_per_tensor = std::max(out.params_per_tensor, oracle::tensor_relative_error(*analytic[k], n));
  }
  for (std::size_t t = 0; t < xs.size(); ++t) {
    const Matrix n = oracle::numeric_gradient(xs[t], loss, kEps);
    out.inputs = std::max(out.inputs, oracle::max_relative_error(grads.inputs[t], n));
    out.inputs_per_tensor = std::max(out.inputs_per_tensor, oracle::tensor_relative_error(grads.inputs[t], n));
  }
  return out;
}

struct Shape {
  std::size_t hidden, input, steps, length;
};

inline Shape random_shape(Rng& rng) {
  return {1 + rng.below(6), 1 + rng.below(4), 1 + rng.below(6), 1 + rng.below(6)};
}

/// One random-shape trial for `kind`; ConvLSTM alternates its g activation and
/// kernel length between trials.
inline SequenceErrors cell_trial(CellKind kind, const Shape& s, bool final_only, int trial, Rng& rng) {
  switch (kind) {
    case CellKind::Rnn: {
      auto p = init_rnn(s.input, s.hidden, rng);
      randomize(p, rng);
      return sequence_errors(p, random_inputs(s.steps, s.input, 1, rng), final_only, rng);
    }
    case CellKind::Lstm: {
      auto p = init_lstm(s.input, s.hidden, rng);
      randomize(p, rng);
      return sequence_errors(p, random_inputs(s.steps, s.input, 1, rng), final_only, rng);
    }
    case CellKind::Gru: {
      auto p = init_gru(s.input, s.hidden, rng);
      randomize(p, rng);
      return sequence_errors(p, random_inputs(s.steps, s.input, 1, rng), final_only, rng);
    }
    case CellKind::ConvLstm: {
      const auto g = trial % 2 == 0 ? ActivationKind::Sigmoid : ActivationKind::Tanh;
      auto p = init_convlstm(s.input, s.hidden, rng, trial % 4 < 2 ? 3 : 1, g);
      randomize(p, rng);
      return sequence_errors(p, random_inputs(s.steps, s.input, s.length, rng), final_only, rng);
    }
    case CellKind::BiLstm:
      break;
  }
  throw ConfigError("no single-cell gradient trial for " + to_string(kind));
}

struct ModelErrors {
  double elementwise = 0.0;
  double per_tensor = 0.0;
};

/// Full stack (two recurrent layers of width 3, dense head, Huber) on a
/// window of 3. Parameters are drawn away from zero so no ReLU input sits
/// exactly on its kink. Targets hit both Huber branches.
inline ModelErrors model_errors(CellKind kind, std::uint64_t seed) {
  ModelSpec spec = ModelSpec::standard(kind, 3);
  spec.layer_units = {3, 3};
  spec.filters = 3;
  Network net = init_network(spec, seed);
  Rng rng(seed + 100);
  for (Matrix* t : net.tensors())
    for (double& v : t->values()) v = rng.uniform(-0.8, 0.8);
  const std::vector<double> window{0.2, 0.5, 0.9};
  ModelErrors out;
  for (double target : {0.4, 3.0}) {
    const auto lg = sample_loss_and_grad(spec, net, window, target, 1.0);
    auto params = net.tensors();
    const auto analytic = lg.grads.tensors();
    const auto loss = [&] { return huber_loss(forward_trace(spec, net, window).prediction, target, 1.0); };
    for (std::size_t k = 0; k < params.size(); ++k) {
      const Matrix numeric = oracle::numeric_gradient(*params[k], loss, kEps);
      out.elementwise = std::max(out.elementwise, oracle::max_relative_error(*analytic[k], numeric));
      out.per_tensor = std::max(out.per_tensor, oracle::tensor_relative_error(*analytic[k], numeric));
    }
  }
  return out;
}

}  // namespace rcf::gradcheck
