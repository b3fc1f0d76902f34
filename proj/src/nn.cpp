#include "recog/nn.hpp"

#include <cmath>

#include <fmt/format.h>

#include "recog/ops.hpp"

namespace recog {

Tensor init_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> values(shape_numel(shape));
  for (double& v : values) v = dist(rng);
  Tensor t(std::move(shape), std::move(values));
  t.set_requires_grad(true);
  return t;
}

Linear Linear::create(std::size_t in, std::size_t out, Rng& rng, bool with_bias) {
  Linear layer;
  layer.weight = init_uniform({out, in}, in, rng);
  if (with_bias) layer.bias = init_uniform({out}, in, rng);
  return layer;
}

Tensor Linear::operator()(const Tensor& x) const { return affine(x, weight, bias); }

void Linear::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
  out.push_back({prefix + ".weight", weight});
  if (bias.defined()) out.push_back({prefix + ".bias", bias});
}

std::string to_string(RnnKind kind) { return kind == RnnKind::GRU ? "GRU" : "LSTM"; }

RnnKind parse_rnn_kind(const std::string& text) {
  if (text == "GRU" || text == "gru") return RnnKind::GRU;
  if (text == "LSTM" || text == "lstm") return RnnKind::LSTM;
  throw ContractError("unknown recurrent cell kind '" + text + "'");
}

RecurrentCell RecurrentCell::create(RnnKind kind, std::size_t input_size, std::size_t hidden_size, Rng& rng) {
  RecurrentCell cell;
  cell.kind = kind;
  cell.input_size = input_size;
  cell.hidden_size = hidden_size;
  const std::size_t rows = cell.gates() * hidden_size;
  cell.w_input = init_uniform({rows, input_size}, hidden_size, rng);
  cell.w_hidden = init_uniform({rows, hidden_size}, hidden_size, rng);
  cell.bias = init_uniform({rows}, hidden_size, rng);
  return cell;
}

Tensor RecurrentCell::project_input(const Tensor& x) const { return affine(x, w_input, bias); }

void RecurrentCell::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
  out.push_back({prefix + ".w_input", w_input});
  out.push_back({prefix + ".w_hidden", w_hidden});
  out.push_back({prefix + ".bias", bias});
}

namespace {

void check_state(const RecurrentCell& cell, const Tensor& projected, const Tensor& h) {
  const std::size_t width = cell.gates() * cell.hidden_size;
  if (projected.rank() != 2 || projected.dim(1) != width) {
    throw DimensionError(fmt::format("recurrent step: input projection {} for {} gate rows",
                                     shape_str(projected.shape()), width));
  }
  if (h.rank() != 2 || h.dim(0) != projected.dim(0) || h.dim(1) != cell.hidden_size) {
    throw DimensionError(fmt::format("recurrent step: hidden state {} for batch {} and hidden size {}",
                                     shape_str(h.shape()), projected.dim(0), cell.hidden_size));
  }
}

Tensor gru_from_projection(const RecurrentCell& cell, const Tensor& gx, const Tensor& h) {
  const std::size_t hid = cell.hidden_size;
  check_state(cell, gx, h);
  const Tensor gh = affine_rows(h, cell.w_hidden, 0, 2 * hid, Tensor());
  const Tensor zr = sigmoid(add(slice_cols(gx, 0, 2 * hid), gh));
  const Tensor z = slice_cols(zr, 0, hid);
  const Tensor r = slice_cols(zr, hid, hid);
  const Tensor candidate =
      tanh(add(slice_cols(gx, 2 * hid, hid), affine_rows(mul(r, h), cell.w_hidden, 2 * hid, hid, Tensor())));
  // (1 - z) . h + z . h~ == h + z . (h~ - h)
  return add(h, mul(z, sub(candidate, h)));
}

RnnState lstm_from_projection(const RecurrentCell& cell, const Tensor& gx, const Tensor& h, const Tensor& c) {
  const std::size_t hid = cell.hidden_size;
  check_state(cell, gx, h);
  if (c.shape() != h.shape()) {
    throw DimensionError("lstm step: cell state " + shape_str(c.shape()) + " vs hidden " + shape_str(h.shape()));
  }
  const Tensor gates = add(gx, affine(h, cell.w_hidden, Tensor()));
  const Tensor ifg = slice_cols(gates, 0, 2 * hid);
  const Tensor i_f = sigmoid(ifg);
  const Tensor i = slice_cols(i_f, 0, hid);
  const Tensor f = slice_cols(i_f, hid, hid);
  const Tensor g = tanh(slice_cols(gates, 2 * hid, hid));
  const Tensor o = sigmoid(slice_cols(gates, 3 * hid, hid));
  const Tensor c_next = add(mul(f, c), mul(i, g));
  return {mul(o, tanh(c_next)), c_next};
}

}  // namespace

Tensor gru_step(const RecurrentCell& cell, const Tensor& x, const Tensor& h) {
  if (cell.kind != RnnKind::GRU) throw ContractError("gru_step on an LSTM cell");
  return gru_from_projection(cell, cell.project_input(x), h);
}

RnnState lstm_step(const RecurrentCell& cell, const Tensor& x, const Tensor& h, const Tensor& c) {
  if (cell.kind != RnnKind::LSTM) throw ContractError("lstm_step on a GRU cell");
  return lstm_from_projection(cell, cell.project_input(x), h, c);
}

RnnState cell_step_projected(const RecurrentCell& cell, const Tensor& projected, const RnnState& state) {
  if (cell.kind == RnnKind::GRU) return {gru_from_projection(cell, projected, state.h), Tensor()};
  return lstm_from_projection(cell, projected, state.h, state.c);
}

RnnState zero_state(const RecurrentCell& cell, std::size_t batch) {
  RnnState s{Tensor::zeros({batch, cell.hidden_size}), Tensor()};
  if (cell.kind == RnnKind::LSTM) s.c = Tensor::zeros({batch, cell.hidden_size});
  return s;
}

RnnUnroll unroll_rnn(std::span<const RecurrentCell> cells, std::span<const Tensor> inputs) {
  if (cells.empty()) throw ContractError("unroll_rnn: no cells");
  if (inputs.empty()) throw ContractError("unroll_rnn: empty sequence");
  const std::size_t batch = inputs[0].dim(0);
  RnnUnroll result;
  for (const RecurrentCell& cell : cells) result.final_states.push_back(zero_state(cell, batch));
  Tensor cached_input, cached_projection;
  for (const Tensor& x : inputs) {
    if (x.rank() != 2 || x.dim(1) != cells[0].input_size || x.dim(0) != batch) {
      throw DimensionError(fmt::format("unroll_rnn: step input {} for batch {} and input size {}",
                                       shape_str(x.shape()), batch, cells[0].input_size));
    }
    if (!cached_input.defined() || cached_input.id() != x.id()) {
      cached_input = x;
      cached_projection = cells[0].project_input(x);
    }
    Tensor layer_input;
    for (std::size_t l = 0; l < cells.size(); ++l) {
      const Tensor projected = l == 0 ? cached_projection : cells[l].project_input(layer_input);
      result.final_states[l] = cell_step_projected(cells[l], projected, result.final_states[l]);
      layer_input = result.final_states[l].h;
    }
    result.outputs.push_back(layer_input);
  }
  return result;
}

Tensor run_rnn(std::span<const RecurrentCell> cells, const Tensor& seq) {
  if (seq.rank() != 3) throw DimensionError("run_rnn: expected [T x b x in], got " + shape_str(seq.shape()));
  const std::size_t steps = seq.dim(0), batch = seq.dim(1), width = seq.dim(2);
  std::vector<Tensor> inputs;
  inputs.reserve(steps);
  for (std::size_t t = 0; t < steps; ++t) inputs.push_back(reshape(slice_rows(seq, t, 1), {batch, width}));
  RnnUnroll unrolled = unroll_rnn(cells, inputs);
  std::vector<Tensor> finals;
  for (const RnnState& s : unrolled.final_states) finals.push_back(reshape(s.h, {1, batch, s.h.dim(1)}));
  return concat_rows(finals);
}

BatchNorm2d BatchNorm2d::create(std::size_t channels) {
  BatchNorm2d bn;
  bn.scale = Tensor::full({channels}, 1.0).set_requires_grad(true);
  bn.shift = Tensor::zeros({channels}).set_requires_grad(true);
  bn.running_mean.assign(channels, 0.0);
  bn.running_var.assign(channels, 1.0);
  return bn;
}

namespace {

struct ChannelLayout {
  std::size_t batch, channels, plane;
};

ChannelLayout channel_layout(const Tensor& x, std::size_t channels) {
  if (x.rank() != 4 || x.dim(1) != channels) {
    throw DimensionError(fmt::format("batch norm: expected [b x {} x H x W], got {}", channels, shape_str(x.shape())));
  }
  return {x.dim(0), x.dim(1), x.dim(2) * x.dim(3)};
}

// y = scale * xhat + shift, with xhat = (x - mean) * inv_std per channel.
// When `batch_stats` is set the mean and inv_std depend on x itself.
Tensor normalize(const Tensor& x, const Tensor& scale, const Tensor& shift, std::vector<double> mean,
                 std::vector<double> inv_std, bool batch_stats) {
  const ChannelLayout L = channel_layout(x, scale.numel());
  std::vector<double> xhat(x.numel()), out(x.numel());
  auto xv = x.data();
  for (std::size_t b = 0; b < L.batch; ++b)
    for (std::size_t c = 0; c < L.channels; ++c) {
      const std::size_t base = (b * L.channels + c) * L.plane;
      for (std::size_t p = 0; p < L.plane; ++p) {
        xhat[base + p] = (xv[base + p] - mean[c]) * inv_std[c];
        out[base + p] = scale[c] * xhat[base + p] + shift[c];
      }
    }
  Tensor y(x.shape(), std::move(out));
  if (needs_grad({&x, &scale, &shift})) {
    record_op(y, [x, scale, shift, y, xhat = std::move(xhat), inv_std = std::move(inv_std), batch_stats, L] {
      auto g = y.mutable_grad();
      const double n = static_cast<double>(L.batch * L.plane);
      std::vector<double> sum_g(L.channels, 0.0), sum_gx(L.channels, 0.0);
      for (std::size_t b = 0; b < L.batch; ++b)
        for (std::size_t c = 0; c < L.channels; ++c) {
          const std::size_t base = (b * L.channels + c) * L.plane;
          for (std::size_t p = 0; p < L.plane; ++p) {
            sum_g[c] += g[base + p];
            sum_gx[c] += g[base + p] * xhat[base + p];
          }
        }
      accumulate_grad(shift, sum_g);
      accumulate_grad(scale, sum_gx);
      if (!x.requires_grad()) return;
      std::vector<double> dx(x.numel());
      for (std::size_t b = 0; b < L.batch; ++b)
        for (std::size_t c = 0; c < L.channels; ++c) {
          const std::size_t base = (b * L.channels + c) * L.plane;
          const double k = scale[c] * inv_std[c];
          for (std::size_t p = 0; p < L.plane; ++p) {
            if (batch_stats) {
              dx[base + p] = k * (g[base + p] - sum_g[c] / n - xhat[base + p] * sum_gx[c] / n);
            } else {
              dx[base + p] = k * g[base + p];
            }
          }
        }
      accumulate_grad(x, dx);
    });
  }
  return y;
}

}  // namespace

Tensor BatchNorm2d::forward_train(const Tensor& x) {
  const ChannelLayout L = channel_layout(x, channels());
  const std::size_t count = L.batch * L.plane;
  if (count < 2) throw ContractError("batch norm: training needs at least two values per channel");
  std::vector<double> mean(L.channels, 0.0), var(L.channels, 0.0), inv_std(L.channels);
  auto xv = x.data();
  for (std::size_t b = 0; b < L.batch; ++b)
    for (std::size_t c = 0; c < L.channels; ++c)
      for (std::size_t p = 0; p < L.plane; ++p) mean[c] += xv[(b * L.channels + c) * L.plane + p];
  for (double& m : mean) m /= static_cast<double>(count);
  for (std::size_t b = 0; b < L.batch; ++b)
    for (std::size_t c = 0; c < L.channels; ++c)
      for (std::size_t p = 0; p < L.plane; ++p) {
        const double d = xv[(b * L.channels + c) * L.plane + p] - mean[c];
        var[c] += d * d;
      }
  for (std::size_t c = 0; c < L.channels; ++c) {
    const double biased = var[c] / static_cast<double>(count);
    inv_std[c] = 1.0 / std::sqrt(biased + eps);
    const double unbiased = var[c] / static_cast<double>(count - 1);
    running_mean[c] = (1.0 - momentum) * running_mean[c] + momentum * mean[c];
    running_var[c] = (1.0 - momentum) * running_var[c] + momentum * unbiased;
  }
  return normalize(x, scale, shift, std::move(mean), std::move(inv_std), true);
}

Tensor BatchNorm2d::forward_eval(const Tensor& x) const {
  std::vector<double> inv_std(channels());
  for (std::size_t c = 0; c < channels(); ++c) inv_std[c] = 1.0 / std::sqrt(running_var[c] + eps);
  return normalize(x, scale, shift, running_mean, std::move(inv_std), false);
}

void BatchNorm2d::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
  out.push_back({prefix + ".scale", scale});
  out.push_back({prefix + ".shift", shift});
}

void adam_step(AdamState& state, std::span<const Tensor> params, double lr) {
  if (!(lr > 0.0)) throw ContractError(fmt::format("adam_step: learning rate {} must be positive", lr));
  if (state.first_moment.empty()) {
    for (const Tensor& p : params) {
      state.first_moment.emplace_back(p.numel(), 0.0);
      state.second_moment.emplace_back(p.numel(), 0.0);
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw DimensionError(fmt::format("adam_step: state tracks {} parameters, got {}", state.first_moment.size(),
                                     params.size()));
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double step_size = lr * std::sqrt(1.0 - std::pow(state.beta2, t)) / (1.0 - std::pow(state.beta1, t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor p = params[k];
    if (state.first_moment[k].size() != p.numel()) {
      throw DimensionError(fmt::format("adam_step: moment buffer {} does not match parameter {}",
                                       state.first_moment[k].size(), shape_str(p.shape())));
    }
    if (!p.has_grad()) continue;
    auto g = p.mutable_grad();
    auto w = p.mutable_data();
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      w[i] -= step_size * m[i] / (std::sqrt(v[i]) + state.eps);
    }
  }
}

double lr_at_epoch(int epoch) {
  if (epoch < 1) throw ContractError(fmt::format("lr_at_epoch: epoch {} < 1", epoch));
  double lr = 1e-3;
  for (int boundary : {1, 2, 4, 6}) {
    if (epoch > boundary) lr *= 0.5;
  }
  return lr;
}

void round_to_float(std::span<double> values) {
  for (double& v : values) v = static_cast<double>(static_cast<float>(v));
}

}  // namespace recog
