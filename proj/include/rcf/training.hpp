#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "rcf/dataset.hpp"
#include "rcf/errors.hpp"
#include "rcf/model.hpp"
#include "rcf/random.hpp"

namespace rcf {

inline double huber_loss(double pred, double target, double delta) {
  const double r = pred - target;
  const double a = std::abs(r);
  return a <= delta ? 0.5 * r * r : delta * (a - 0.5 * delta);
}

/// d huber_loss / d pred.
inline double huber_grad(double pred, double target, double delta) {
  const double r = pred - target;
  if (std::abs(r) <= delta) return r;
  return r > 0.0 ? delta : -delta;
}

struct TrainConfig {
  int max_epochs = 200;
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double huber_delta = 1.0;  // scaled units
  std::size_t batch_size = 32;
  std::uint64_t shuffle_seed = 0;
  /// Stop after this many epochs without improvement of the epoch loss.
  std::optional<int> early_stop_patience;

  void validate() const {
    if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
    if (!(huber_delta > 0.0)) throw ConfigError("huber delta must be positive");
    if (batch_size < 1) throw ConfigError("batch size must be >= 1");
    if (early_stop_patience && *early_stop_patience < 1) {
      throw ConfigError("early-stop patience must be >= 1");
    }
  }
};

/// First/second moment estimates per tensor and the shared step counter.
struct AdamState {
  std::vector<Matrix> first;
  std::vector<Matrix> second;
  long step = 0;

  static AdamState for_tensors(std::span<const Matrix* const> params) {
    AdamState s;
    for (const Matrix* p : params) {
      s.first.emplace_back(p->rows(), p->cols());
      s.second.emplace_back(p->rows(), p->cols());
    }
    return s;
  }
};

/// Bias-corrected Adam, one step over every tensor.
inline void adam_update(std::span<Matrix* const> params, std::span<const Matrix* const> grads,
                        AdamState& state, const TrainConfig& cfg) {
  if (params.size() != grads.size() || params.size() != state.first.size()) {
    throw ConsistencyError("adam_update: " + std::to_string(params.size()) + " tensors, " +
                           std::to_string(grads.size()) + " gradients, " +
                           std::to_string(state.first.size()) + " moment slots");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correct1 = 1.0 - std::pow(cfg.beta1, t);
  const double correct2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Matrix& p = *params[k];
    const Matrix& g = *grads[k];
    Matrix& m = state.first[k];
    Matrix& v = state.second[k];
    if (!p.same_shape(g) || !p.same_shape(m)) {
      throw ConsistencyError("adam_update: tensor " + std::to_string(k) + " is " + p.shape_str() +
                             ", gradient " + g.shape_str() + ", moments " + m.shape_str());
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double m_hat = m[i] / correct1;
      const double v_hat = v[i] / correct2;
      p[i] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
    }
  }
}

struct LossAndGrad {
  double loss = 0.0;
  double prediction = 0.0;
  Network grads;
};

/// Huber loss of one sample and its gradient with respect to every tensor.
inline LossAndGrad sample_loss_and_grad(const ModelSpec& spec, const Network& net,
                                        std::span<const double> window, double target,
                                        double delta) {
  const ForwardTrace trace = forward_trace(spec, net, window);
  LossAndGrad out;
  out.prediction = trace.prediction;
  out.loss = huber_loss(trace.prediction, target, delta);
  out.grads = backward(spec, net, trace, huber_grad(trace.prediction, target, delta));
  return out;
}

/// Mini-batch Adam training. Batches are drawn from a reshuffle of the sample
/// order each epoch; the loss of a batch is the mean of its sample losses.
inline TrainedModel train(const ModelSpec& spec, const WindowedDataset& data,
                          const TrainConfig& cfg, std::uint64_t init_seed) {
  cfg.validate();
  spec.validate();
  if (data.samples.empty()) throw InputError("train: empty dataset");
  for (const auto& s : data.samples) {
    if (s.window.size() != spec.window_size) {
      throw InputError("train: sample for " + s.entity + " " + std::to_string(s.target_year) +
                       " has window " + std::to_string(s.window.size()) + ", model expects " +
                       std::to_string(spec.window_size));
    }
  }

  TrainedModel model = init_model(spec, init_seed);
  model.shuffle_seed = cfg.shuffle_seed;
  std::vector<Matrix*> params = model.net.tensors();
  AdamState adam = AdamState::for_tensors(std::vector<const Matrix*>(params.begin(), params.end()));
  Rng shuffler(cfg.shuffle_seed);

  std::vector<std::size_t> order(data.samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  double best = std::numeric_limits<double>::infinity();
  int since_best = 0;
  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    shuffler.shuffle(std::span<std::size_t>(order));
    double epoch_loss = 0.0;
    int batch_no = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_no) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const double inv = 1.0 / static_cast<double>(end - start);
      Network batch_grads = zeros_like(model.net);
      std::vector<Matrix*> acc = batch_grads.tensors();
      double batch_loss = 0.0;
      for (std::size_t k = start; k < end; ++k) {
        const WindowSample& s = data.samples[order[k]];
        LossAndGrad lg = sample_loss_and_grad(spec, model.net, s.window, s.target, cfg.huber_delta);
        batch_loss += lg.loss;
        const std::vector<Matrix*> g = lg.grads.tensors();
        for (std::size_t t = 0; t < acc.size(); ++t) *acc[t] += *g[t];
      }
      batch_loss *= inv;
      if (!std::isfinite(batch_loss)) throw DivergenceError(epoch + 1, batch_no + 1);
      for (Matrix* g : acc) *g *= inv;
      adam_update(params, std::vector<const Matrix*>(acc.begin(), acc.end()), adam, cfg);
      epoch_loss += batch_loss * static_cast<double>(end - start);
    }
    epoch_loss /= static_cast<double>(order.size());
    model.history.push_back(epoch_loss);

    if (cfg.early_stop_patience) {
      if (epoch_loss < best) {
        best = epoch_loss;
        since_best = 0;
      } else if (++since_best >= *cfg.early_stop_patience) {
        break;
      }
    }
  }
  for (const Matrix* p : params) {
    if (!p->all_finite()) throw DivergenceError(static_cast<int>(model.history.size()), 0);
  }
  return model;
}

}  // namespace rcf
