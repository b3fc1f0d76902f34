#include "recog/model.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>
#include <type_traits>

#include <fmt/format.h>

#include "recog/ops.hpp"

namespace recog {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::R: return "R";
    case Variant::GR: return "GR";
    case Variant::GH: return "GH";
  }
  return "?";
}

Variant parse_variant(const std::string& text) {
  if (text == "R") return Variant::R;
  if (text == "GR") return Variant::GR;
  if (text == "GH") return Variant::GH;
  throw ConfigError("unknown model variant '" + text + "'");
}

std::string format_cnn_spec(const std::vector<ConvSpec>& spec) {
  std::string out;
  for (const ConvSpec& c : spec) {
    if (!out.empty()) out += ',';
    out += fmt::format("{}x{}x{}", c.filters, c.kernel, c.stride);
  }
  return out;
}

namespace {

std::size_t parse_size(const std::string& key, const std::string& text) {
  std::size_t v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ConfigError(fmt::format("{}: expected a non-negative integer, got '{}'", key, text));
  }
  return v;
}

double parse_positive(const std::string& key, const std::string& text) {
  double v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || !(v > 0) || !std::isfinite(v)) {
    throw ConfigError(fmt::format("{}: expected a positive number, got '{}'", key, text));
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "1" || text == "true") return true;
  if (text == "0" || text == "false") return false;
  throw ConfigError(fmt::format("{}: expected true or false, got '{}'", key, text));
}

}  // namespace

std::vector<ConvSpec> parse_cnn_spec(const std::string& text) {
  std::vector<ConvSpec> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    ConvSpec c;
    char x1 = 0, x2 = 0;
    std::stringstream is(item);
    if (!(is >> c.filters >> x1 >> c.kernel >> x2 >> c.stride) || x1 != 'x' || x2 != 'x' || !is.eof()) {
      throw ConfigError("cnn_spec entries look like 8x16x4, got '" + item + "'");
    }
    out.push_back(c);
  }
  return out;
}

void ModelConfig::validate() const {
  if (state_dims != 2 && state_dims != 4 && state_dims != 5) {
    throw ConfigError(fmt::format("state_dims must be 2, 4 or 5, got {}", state_dims));
  }
  if (history < 1 || future < 1) throw ConfigError("history and future must be at least one frame");
  for (std::size_t v : {emb_dim, enc_hidden, dec_hidden, dec_layers, feature_dim, cnn_hidden, gat_heads}) {
    if (v < 1) throw ConfigError("layer sizes must be positive");
  }
  if (variant == Variant::GH) {
    if (cnn_spec.empty()) throw ConfigError("cnn_spec needs at least one layer");
    for (const ConvSpec& c : cnn_spec) {
      if (c.filters < 1 || c.kernel < 1 || c.stride < 1) throw ConfigError("cnn_spec values must be positive");
    }
    cnn_sizes();
  }
  if (gnn_kind == GnnKind::GAT && feature_dim % gat_heads != 0) {
    throw ConfigError(fmt::format("feature_dim {} is not divisible by {} heads", feature_dim, gat_heads));
  }
}

std::vector<std::size_t> ModelConfig::cnn_sizes() const {
  std::vector<std::size_t> sizes{kRasterSize};
  for (const ConvSpec& c : cnn_spec) {
    if (sizes.back() < c.kernel) {
      throw ConfigError(fmt::format("cnn_spec kernel {} exceeds the {}-pixel input", c.kernel, sizes.back()));
    }
    sizes.push_back(conv_output_size(sizes.back(), c.kernel, c.stride));
  }
  return sizes;
}

std::size_t ModelConfig::cnn_flatten_width() const {
  const std::size_t side = cnn_sizes().back();
  return cnn_spec.back().filters * side * side;
}

std::map<std::string, std::string> ModelConfig::to_metadata() const {
  return {{"variant", to_string(variant)},
          {"state_dims", std::to_string(state_dims)},
          {"history", std::to_string(history)},
          {"future", std::to_string(future)},
          {"rnn_kind", to_string(rnn_kind)},
          {"gnn_kind", to_string(gnn_kind)},
          {"emb_dim", std::to_string(emb_dim)},
          {"enc_hidden", std::to_string(enc_hidden)},
          {"dec_hidden", std::to_string(dec_hidden)},
          {"dec_layers", std::to_string(dec_layers)},
          {"feature_dim", std::to_string(feature_dim)},
          {"cnn_hidden", std::to_string(cnn_hidden)},
          {"cnn_spec", format_cnn_spec(cnn_spec)},
          {"gat_heads", std::to_string(gat_heads)},
          {"target_self_loop", target_self_loop ? "true" : "false"},
          {"length_scale", fmt::format("{}", length_scale)},
          {"seed", std::to_string(seed)}};
}

void ModelConfig::set(const std::string& key, const std::string& value) {
  if (key == "variant") variant = parse_variant(value);
  else if (key == "state_dims" || key == "dims") {
    state_dims = static_cast<int>(parse_size(key, value));
  } else if (key == "history" || key == "th") history = parse_size(key, value);
  else if (key == "future" || key == "tf") future = parse_size(key, value);
  else if (key == "rnn_kind" || key == "rnn") {
    try {
      rnn_kind = parse_rnn_kind(value);
    } catch (const ContractError& e) {
      throw ConfigError(e.what());
    }
  } else if (key == "gnn_kind" || key == "gnn") {
    try {
      gnn_kind = parse_gnn_kind(value);
    } catch (const ContractError& e) {
      throw ConfigError(e.what());
    }
  } else if (key == "emb_dim") emb_dim = parse_size(key, value);
  else if (key == "enc_hidden") enc_hidden = parse_size(key, value);
  else if (key == "dec_hidden") dec_hidden = parse_size(key, value);
  else if (key == "dec_layers") dec_layers = parse_size(key, value);
  else if (key == "feature_dim") feature_dim = parse_size(key, value);
  else if (key == "cnn_hidden") cnn_hidden = parse_size(key, value);
  else if (key == "cnn_spec") cnn_spec = parse_cnn_spec(value);
  else if (key == "gat_heads") gat_heads = parse_size(key, value);
  else if (key == "target_self_loop") target_self_loop = parse_bool(key, value);
  else if (key == "length_scale") length_scale = parse_positive(key, value);
  else if (key == "seed") seed = parse_size(key, value);
  else throw ConfigError("unknown model setting '" + key + "'");
}

ModelConfig ModelConfig::from_metadata(const std::map<std::string, std::string>& meta) {
  ModelConfig c;
  for (const auto& [key, value] : meta) {
    if (key.rfind("model.", 0) == 0) c.set(key.substr(6), value);
    else if (key.find('.') == std::string::npos) c.set(key, value);
  }
  c.validate();
  return c;
}

namespace {

ConvBlock make_conv(std::size_t in, const ConvSpec& spec, Rng& rng) {
  ConvBlock b;
  const std::size_t fan_in = in * spec.kernel * spec.kernel;
  b.kernels = init_uniform({spec.filters, in, spec.kernel, spec.kernel}, fan_in, rng);
  b.bias = init_uniform({spec.filters}, fan_in, rng);
  b.stride = spec.stride;
  b.norm = BatchNorm2d::create(spec.filters);
  return b;
}

void round_tensor(Tensor t) { round_to_float(t.mutable_data()); }

}  // namespace

ModelParams ModelParams::create(const ModelConfig& config) {
  config.validate();
  ModelParams p;
  p.config = config;
  Rng rng(config.seed);
  const std::size_t f = config.feature_dim;
  p.emb = Linear::create(config.state_dims, config.emb_dim, rng);
  p.encoder = RecurrentCell::create(config.rnn_kind, config.emb_dim, config.enc_hidden, rng);
  p.fc1 = Linear::create(config.enc_hidden, f, rng);
  if (config.variant == Variant::GH) {
    std::size_t in = 1;
    for (const ConvSpec& c : config.cnn_spec) {
      p.cnn.push_back(make_conv(in, c, rng));
      in = c.filters;
    }
    p.cnn_fc = Linear::create(config.cnn_flatten_width(), config.cnn_hidden, rng);
    p.fc2 = Linear::create(config.cnn_hidden, f, rng);
  }
  if (config.variant != Variant::R) {
    p.gnn.push_back(GraphLayer::create(config.gnn_kind, f + 2, f, rng, config.gat_heads));
    p.gnn.push_back(GraphLayer::create(config.gnn_kind, f, f, rng, config.gat_heads));
    p.fc3 = Linear::create(f, f, rng);
  }
  std::size_t in = config.decoder_input();
  for (std::size_t l = 0; l < config.dec_layers; ++l) {
    p.decoder.push_back(RecurrentCell::create(config.rnn_kind, in, config.dec_hidden, rng));
    in = config.dec_hidden;
  }
  p.fc4 = Linear::create(config.dec_hidden, 2, rng);
  p.round_to_storage();
  return p;
}

std::vector<NamedParam> ModelParams::parameters() const {
  std::vector<NamedParam> out;
  emb.collect("emb", out);
  encoder.collect("encoder", out);
  fc1.collect("fc1", out);
  for (std::size_t i = 0; i < cnn.size(); ++i) {
    out.push_back({fmt::format("cnn{}.kernels", i), cnn[i].kernels});
    out.push_back({fmt::format("cnn{}.bias", i), cnn[i].bias});
    cnn[i].norm.collect(fmt::format("cnn{}.norm", i), out);
  }
  if (!cnn.empty()) {
    cnn_fc.collect("cnn_fc", out);
    fc2.collect("fc2", out);
  }
  for (std::size_t i = 0; i < gnn.size(); ++i) gnn[i].collect(fmt::format("gnn{}", i), out);
  if (!gnn.empty()) fc3.collect("fc3", out);
  for (std::size_t i = 0; i < decoder.size(); ++i) decoder[i].collect(fmt::format("decoder{}", i), out);
  fc4.collect("fc4", out);
  return out;
}

std::vector<Tensor> ModelParams::trainable() const {
  std::vector<Tensor> out;
  for (const NamedParam& p : parameters()) out.push_back(p.tensor);
  return out;
}

void ModelParams::round_to_storage() {
  for (const NamedParam& p : parameters()) round_tensor(p.tensor);
  for (ConvBlock& b : cnn) {
    round_to_float(b.norm.running_mean);
    round_to_float(b.norm.running_var);
  }
}

Checkpoint ModelParams::to_checkpoint() const {
  Checkpoint ckpt;
  for (const auto& [key, value] : config.to_metadata()) ckpt.metadata["model." + key] = value;
  for (const NamedParam& p : parameters()) ckpt.add(p.name, p.tensor.shape(), p.tensor.data());
  for (std::size_t i = 0; i < cnn.size(); ++i) {
    const std::size_t c = cnn[i].norm.channels();
    ckpt.add(fmt::format("cnn{}.norm.running_mean", i), {c}, cnn[i].norm.running_mean);
    ckpt.add(fmt::format("cnn{}.norm.running_var", i), {c}, cnn[i].norm.running_var);
  }
  return ckpt;
}

ModelParams ModelParams::from_checkpoint(const Checkpoint& ckpt) {
  ModelParams p = create(ModelConfig::from_metadata(ckpt.metadata));
  const auto load = [&](const std::string& name, const Shape& shape, std::span<double> dest) {
    const CheckpointEntry& e = ckpt.at(name);
    if (e.shape != shape) {
      throw ConfigError(fmt::format("checkpoint entry '{}' has shape {}, model expects {}", name, shape_str(e.shape),
                                    shape_str(shape)));
    }
    std::copy(e.values.begin(), e.values.end(), dest.begin());
  };
  for (NamedParam& np : p.parameters()) load(np.name, np.tensor.shape(), np.tensor.mutable_data());
  for (std::size_t i = 0; i < p.cnn.size(); ++i) {
    BatchNorm2d& bn = p.cnn[i].norm;
    load(fmt::format("cnn{}.norm.running_mean", i), {bn.channels()}, bn.running_mean);
    load(fmt::format("cnn{}.norm.running_var", i), {bn.channels()}, bn.running_var);
  }
  return p;
}

Tensor history_tensor(std::span<const Sample* const> batch, int dims, double length_scale) {
  check_state_dims(dims);
  if (batch.empty()) throw ContractError("empty batch");
  const std::size_t th = batch.front()->history_length();
  std::size_t vehicles = 0;
  for (const Sample* s : batch) {
    if (s->history_length() != th) throw ContractError("samples in a batch must share the history length");
    vehicles += s->vehicle_count();
  }
  const std::size_t d = static_cast<std::size_t>(dims);
  std::vector<double> values(th * vehicles * d);
  std::size_t v = 0;
  for (const Sample* s : batch) {
    for (const auto& h : s->histories) {
      const std::vector<double> flat = slice_state(h, dims);
      for (std::size_t t = 0; t < th; ++t) {
        double* row = values.data() + (t * vehicles + v) * d;
        std::copy_n(flat.begin() + t * d, d, row);
        for (std::size_t k = 0; k < std::min<std::size_t>(d, 4); ++k) row[k] /= length_scale;
      }
      ++v;
    }
  }
  return Tensor({th, vehicles, d}, std::move(values));
}

Tensor raster_tensor(std::span<const Sample* const> batch) {
  if (batch.empty()) throw ContractError("empty batch");
  std::vector<double> values;
  values.reserve(batch.size() * kRasterSize * kRasterSize);
  for (const Sample* s : batch) {
    for (std::uint8_t l : s->map.levels) values.push_back(l / 255.0);
  }
  return Tensor({batch.size(), 1, kRasterSize, kRasterSize}, std::move(values));
}

Tensor future_tensor(std::span<const Sample* const> batch) {
  if (batch.empty()) throw ContractError("empty batch");
  const std::size_t tf = batch.front()->future_length();
  std::vector<double> values;
  values.reserve(batch.size() * tf * 2);
  for (const Sample* s : batch) {
    if (s->future_length() != tf) throw ContractError("samples in a batch must share the future length");
    for (const Vec2& p : s->future) {
      values.push_back(p.x);
      values.push_back(p.y);
    }
  }
  return Tensor({batch.size(), tf, 2}, std::move(values));
}

Tensor encode_vehicles(const ModelParams& p, const Tensor& histories) {
  if (histories.rank() != 3) throw DimensionError("histories must be [T_h x V x dims], got " + shape_str(histories.shape()));
  const std::size_t th = histories.dim(0), v = histories.dim(1), d = histories.dim(2);
  if (d != static_cast<std::size_t>(p.config.state_dims)) {
    throw ConfigError(fmt::format("samples carry {}-dim states, model expects {}", d, p.config.state_dims));
  }
  const Tensor embedded = leaky_relu(p.emb(reshape(histories, {th * v, d})), kLeakySlope);
  const RecurrentCell cells[] = {p.encoder};
  const Tensor h = run_rnn(cells, reshape(embedded, {th, v, p.config.emb_dim}));
  return leaky_relu(p.fc1(reshape(h, {v, p.config.enc_hidden})), kLeakySlope);
}

namespace {

template <typename Blocks>
Tensor run_cnn(const ModelParams& p, Blocks& blocks, const Tensor& rasters, bool training) {
  if (rasters.rank() != 4 || rasters.dim(1) != 1 || rasters.dim(2) != kRasterSize || rasters.dim(3) != kRasterSize) {
    throw ContractError("map rasters must be [B x 1 x 160 x 160], got " + shape_str(rasters.shape()));
  }
  if (blocks.empty()) throw ContractError("model variant " + to_string(p.config.variant) + " has no map encoder");
  Tensor x = rasters;
  for (auto& b : blocks) {
    x = leaky_relu(conv2d(x, b.kernels, b.bias, b.stride), kLeakySlope);
    if constexpr (std::is_const_v<std::remove_reference_t<decltype(b)>>) {
      x = b.norm.forward_eval(x);
    } else {
      x = b.norm.forward(x, training);
    }
  }
  const std::size_t batch = rasters.dim(0);
  x = reshape(x, {batch, x.numel() / batch});
  x = leaky_relu(p.cnn_fc(x), kLeakySlope);
  return leaky_relu(p.fc2(x), kLeakySlope);
}

}  // namespace

Tensor encode_maps(ModelParams& p, const Tensor& rasters, bool training) { return run_cnn(p, p.cnn, rasters, training); }

Tensor encode_maps(const ModelParams& p, const Tensor& rasters) { return run_cnn(p, p.cnn, rasters, false); }

Tensor encode_interaction(const ModelParams& p, const Tensor& vehicle_features, std::span<const std::size_t> offsets,
                          const Tensor& maps) {
  if (p.gnn.size() != 2) throw ContractError("model variant " + to_string(p.config.variant) + " has no graph encoder");
  if (offsets.size() < 2) throw ContractError("encode_interaction needs at least one graph");
  const std::size_t batch = offsets.size() - 1;
  const GraphOptions options{p.config.target_self_loop};
  std::vector<HetGraph> graphs;
  graphs.reserve(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    const Tensor rows = slice_rows(vehicle_features, offsets[b], offsets[b + 1] - offsets[b]);
    graphs.push_back(maps.defined() ? build_hetero_graph(rows, slice_rows(maps, b, 1), options)
                                    : build_vehicle_graph(rows, options));
  }
  const BatchedGraph g = batch_graphs(graphs);
  const MessagePlan plan = plan_messages(g.n_nodes(), g.edges);
  Tensor x = g.node_features;
  for (const GraphLayer& layer : p.gnn) x = apply_graph_layer(plan, x, layer);
  return leaky_relu(p.fc3(gather_rows(x, g.target_rows)), kLeakySlope);
}

Tensor decode_trajectory(const ModelParams& p, const Tensor& features) {
  if (features.rank() != 2 || features.dim(1) != p.config.decoder_input()) {
    throw DimensionError(fmt::format("decoder expects [B x {}], got {}", p.config.decoder_input(), shape_str(features.shape())));
  }
  const std::size_t batch = features.dim(0);
  const std::size_t tf = p.config.future;
  const std::vector<Tensor> inputs(tf, features);
  const RnnUnroll run = unroll_rnn(p.decoder, inputs);
  Tensor steps = p.fc4(concat_rows(run.outputs));  // row t * B + b
  if (p.config.length_scale != 1.0) steps = scale(steps, p.config.length_scale);
  std::vector<std::size_t> order(batch * tf);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < tf; ++t) order[b * tf + t] = t * batch + b;
  return reshape(gather_rows(steps, order), {batch, tf, 2});
}

namespace {

template <typename Params>
ForwardOutput forward_impl(Params& p, std::span<const Sample* const> batch, bool training) {
  if (batch.empty()) throw ContractError("empty batch");
  const ModelConfig& cfg = p.config;
  for (const Sample* s : batch) {
    if (s->history_length() != cfg.history || s->future_length() != cfg.future) {
      throw ConfigError(fmt::format("sample has T_h={} T_f={}, model expects T_h={} T_f={}", s->history_length(),
                                    s->future_length(), cfg.history, cfg.future));
    }
  }
  ForwardOutput out;
  std::vector<std::size_t> offsets{0};
  for (const Sample* s : batch) offsets.push_back(offsets.back() + s->vehicle_count());
  const std::vector<std::size_t> targets(offsets.begin(), offsets.end() - 1);

  const Tensor r = encode_vehicles(p, history_tensor(batch, cfg.state_dims, cfg.length_scale));
  out.r1 = gather_rows(r, targets);
  Tensor features = out.r1;
  if (cfg.variant != Variant::R) {
    if (cfg.variant == Variant::GH) {
      if constexpr (std::is_const_v<Params>) {
        out.map_feature = encode_maps(p, raster_tensor(batch));
      } else {
        out.map_feature = encode_maps(p, raster_tensor(batch), training);
      }
    }
    out.interaction = encode_interaction(p, r, offsets, out.map_feature);
    const Tensor parts[] = {out.interaction, out.r1};
    features = concat_cols(parts);
  }
  out.prediction = decode_trajectory(p, features);
  return out;
}

}  // namespace

ForwardOutput forward(ModelParams& p, std::span<const Sample* const> batch, bool training) {
  return forward_impl(p, batch, training);
}

ForwardOutput forward(const ModelParams& p, std::span<const Sample* const> batch) { return forward_impl(p, batch, false); }

std::vector<Vec2> predict(const ModelParams& p, const Sample& sample) {
  NoGradScope no_grad;
  const Sample* one[] = {&sample};
  const Tensor pred = forward(p, one).prediction;
  std::vector<Vec2> out;
  for (std::size_t t = 0; t < p.config.future; ++t) out.push_back({pred[2 * t], pred[2 * t + 1]});
  return out;
}

Tensor ade_loss(const Tensor& prediction, const Tensor& target) {
  if (prediction.shape() != target.shape()) {
    throw DimensionError(fmt::format("prediction {} and target {} differ in shape", shape_str(prediction.shape()),
                                     shape_str(target.shape())));
  }
  const std::size_t n = prediction.numel() / 2;
  return mean(row_norms(reshape(sub(prediction, target), {n, 2})));
}

}  // namespace recog
