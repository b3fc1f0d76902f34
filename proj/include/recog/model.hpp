#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "recog/checkpoint.hpp"
#include "recog/geometry.hpp"
#include "recog/graph.hpp"
#include "recog/nn.hpp"
#include "recog/tensor.hpp"

namespace recog {

/// R: own history only. GR: graph over vehicles. GH: vehicles plus map node.
enum class Variant { R, GR, GH };

std::string to_string(Variant v);
Variant parse_variant(const std::string& text);

struct ConvSpec {
  std::size_t filters = 0;
  std::size_t kernel = 0;
  std::size_t stride = 1;

  bool operator==(const ConvSpec&) const = default;
};

/// Thrown when a configuration, checkpoint and data set do not fit together.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ModelConfig {
  Variant variant = Variant::GH;
  int state_dims = 4;
  std::size_t history = 30;  // T_h frames
  std::size_t future = 50;   // T_f frames
  RnnKind rnn_kind = RnnKind::GRU;
  GnnKind gnn_kind = GnnKind::GAT;
  std::size_t emb_dim = 64;
  std::size_t enc_hidden = 64;
  std::size_t dec_hidden = 128;
  std::size_t dec_layers = 2;
  std::size_t feature_dim = 64;
  std::size_t cnn_hidden = 128;
  std::vector<ConvSpec> cnn_spec = {{8, 16, 4}, {16, 8, 4}, {32, 4, 2}};
  std::size_t gat_heads = 1;
  bool target_self_loop = true;
  double length_scale = 10.0;  // meters per model unit for positions and velocities
  std::uint64_t seed = 1;

  /// Throws ConfigError on inconsistent values.
  void validate() const;

  /// Side length after each conv layer, starting from the raster size.
  std::vector<std::size_t> cnn_sizes() const;
  std::size_t cnn_flatten_width() const;
  std::size_t decoder_input() const { return variant == Variant::R ? feature_dim : 2 * feature_dim; }

  std::map<std::string, std::string> to_metadata() const;
  static ModelConfig from_metadata(const std::map<std::string, std::string>& meta);

  /// Applies one key=value override; unknown keys throw ConfigError.
  void set(const std::string& key, const std::string& value);
};

std::string format_cnn_spec(const std::vector<ConvSpec>& spec);
std::vector<ConvSpec> parse_cnn_spec(const std::string& text);

struct ConvBlock {
  Tensor kernels;  // [C_out x C_in x k x k]
  Tensor bias;     // [C_out]
  std::size_t stride = 1;
  BatchNorm2d norm;
};

struct ModelParams {
  ModelConfig config;
  Linear emb;
  RecurrentCell encoder;
  Linear fc1;
  std::vector<ConvBlock> cnn;  // GH only
  Linear cnn_fc;               // GH only
  Linear fc2;                  // GH only
  std::vector<GraphLayer> gnn;  // GR and GH
  Linear fc3;                   // GR and GH
  std::vector<RecurrentCell> decoder;
  Linear fc4;

  /// Initializes every weight from config.seed. The sequence encoder is drawn
  /// first, so all variants sharing a seed start from the same encoder.
  static ModelParams create(const ModelConfig& config);

  /// Trainable tensors in a fixed order.
  std::vector<NamedParam> parameters() const;
  std::vector<Tensor> trainable() const;

  /// Rounds parameters and batch-norm statistics to single precision.
  void round_to_storage();

  Checkpoint to_checkpoint() const;
  static ModelParams from_checkpoint(const Checkpoint& ckpt);
};

/// [T_h x V x dims] stacked histories of every vehicle in the batch, with
/// positions and velocities divided by `length_scale`.
Tensor history_tensor(std::span<const Sample* const> batch, int dims, double length_scale = 1.0);
/// [B x 1 x 160 x 160] rasters scaled to [0, 1].
Tensor raster_tensor(std::span<const Sample* const> batch);
/// [B x T_f x 2] ground-truth futures.
Tensor future_tensor(std::span<const Sample* const> batch);

/// r_i = FC1(RNN(Emb(h_i))) for histories [T_h x V x dims] -> [V x F].
Tensor encode_vehicles(const ModelParams& p, const Tensor& histories);

/// Rasters [B x 1 x 160 x 160] -> c [B x F]. Training mode uses batch
/// statistics and updates the running estimates.
Tensor encode_maps(ModelParams& p, const Tensor& rasters, bool training);
Tensor encode_maps(const ModelParams& p, const Tensor& rasters);

/// Builds one graph per sample from vehicle rows [offsets[b], offsets[b+1])
/// and, when `maps` is defined, a map node from maps row b; returns the
/// target outputs through FC3, [B x F].
Tensor encode_interaction(const ModelParams& p, const Tensor& vehicle_features,
                          std::span<const std::size_t> offsets, const Tensor& maps);

/// Feeds `features` [B x in] at each of T_f decoder steps -> [B x T_f x 2].
Tensor decode_trajectory(const ModelParams& p, const Tensor& features);

struct ForwardOutput {
  Tensor prediction;  // [B x T_f x 2], target frame
  Tensor r1;          // [B x F]
  Tensor interaction;  // [B x F], undefined for R
  Tensor map_feature;  // [B x F], GH only
};

ForwardOutput forward(ModelParams& p, std::span<const Sample* const> batch, bool training);
ForwardOutput forward(const ModelParams& p, std::span<const Sample* const> batch);

/// Single-sample inference, [T_f x 2].
std::vector<Vec2> predict(const ModelParams& p, const Sample& sample);

/// Mean over rows of the Euclidean distance between [.. x 2] point sets.
Tensor ade_loss(const Tensor& prediction, const Tensor& target);

}  // namespace recog
