#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "recog/tensor.hpp"

namespace recog {

/// LeakyReLU slope used by every activation in the model.
inline constexpr double kLeakySlope = 0.1;

using Rng = std::mt19937_64;

/// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)], marked as a trainable leaf.
Tensor init_uniform(Shape shape, std::size_t fan_in, Rng& rng);

/// A trainable tensor together with its checkpoint name.
struct NamedParam {
  std::string name;
  Tensor tensor;
};

struct Linear {
  Tensor weight;  // [out x in]
  Tensor bias;    // [out], undefined when the layer has no bias

  static Linear create(std::size_t in, std::size_t out, Rng& rng, bool with_bias = true);

  std::size_t in_features() const { return weight.dim(1); }
  std::size_t out_features() const { return weight.dim(0); }

  /// x [b x in] -> x * weight^T + bias.
  Tensor operator()(const Tensor& x) const;

  void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
};

enum class RnnKind { GRU, LSTM };

std::string to_string(RnnKind kind);
RnnKind parse_rnn_kind(const std::string& text);

/// GRU:  z = s(Wz x + Uz h + bz), r = s(Wr x + Ur h + br),
///       h~ = tanh(Wh x + Uh (r . h) + bh), h' = (1 - z) . h + z . h~
/// LSTM: i, f, g, o gates; c' = f . c + i . g, h' = o . tanh(c')
/// Gate blocks are stacked row-wise in that order.
struct RecurrentCell {
  RnnKind kind = RnnKind::GRU;
  std::size_t input_size = 0;
  std::size_t hidden_size = 0;
  Tensor w_input;   // [gates*hidden x input]
  Tensor w_hidden;  // [gates*hidden x hidden]
  Tensor bias;      // [gates*hidden]

  static RecurrentCell create(RnnKind kind, std::size_t input_size, std::size_t hidden_size, Rng& rng);

  std::size_t gates() const { return kind == RnnKind::GRU ? 3 : 4; }

  /// Input projection W x + b for x [b x input] -> [b x gates*hidden].
  Tensor project_input(const Tensor& x) const;

  void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
};

struct RnnState {
  Tensor h;
  Tensor c;  // LSTM only
};

Tensor gru_step(const RecurrentCell& cell, const Tensor& x, const Tensor& h);
RnnState lstm_step(const RecurrentCell& cell, const Tensor& x, const Tensor& h, const Tensor& c);

/// One step of either kind from a precomputed input projection.
RnnState cell_step_projected(const RecurrentCell& cell, const Tensor& projected, const RnnState& state);

RnnState zero_state(const RecurrentCell& cell, std::size_t batch);

/// Top-layer outputs of a stacked RNN, one [b x hidden] tensor per step.
struct RnnUnroll {
  std::vector<Tensor> outputs;
  std::vector<RnnState> final_states;  // one per layer
};

/// Runs stacked cells over per-step inputs [b x in] from zero state. When the
/// same tensor is fed at consecutive steps its input projection is reused.
RnnUnroll unroll_rnn(std::span<const RecurrentCell> cells, std::span<const Tensor> inputs);

/// seq [T x b x in] -> final hidden states [layers x b x hidden].
Tensor run_rnn(std::span<const RecurrentCell> cells, const Tensor& seq);

struct BatchNorm2d {
  Tensor scale;  // [C]
  Tensor shift;  // [C]
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double eps = 1e-5;
  double momentum = 0.1;

  static BatchNorm2d create(std::size_t channels);

  std::size_t channels() const { return running_mean.size(); }

  /// Normalizes x [b x C x H x W] with batch statistics and updates the
  /// running estimates.
  Tensor forward_train(const Tensor& x);
  /// Normalizes with the running estimates; no state changes.
  Tensor forward_eval(const Tensor& x) const;
  Tensor forward(const Tensor& x, bool training) {
    return training ? forward_train(x) : forward_eval(x);
  }

  void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
};

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t step = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
};

/// Bias-corrected Adam using each parameter's accumulated gradient:
/// p -= lr * sqrt(1 - b2^t) / (1 - b1^t) * m / (sqrt(v) + eps).
void adam_step(AdamState& state, std::span<const Tensor> params, double lr);

/// 1e-3 halved after epochs 1, 2, 4 and 6.
double lr_at_epoch(int epoch);

/// Rounds every value to the nearest single-precision float.
void round_to_float(std::span<double> values);

}  // namespace recog
