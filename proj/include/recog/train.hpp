#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "recog/metrics.hpp"
#include "recog/model.hpp"

namespace recog {

struct TrainConfig {
  ModelConfig model;
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  std::optional<double> constant_lr;  // replaces the epoch schedule
  std::size_t lr_halve_every = 0;     // with constant_lr: halve every n epochs
  std::optional<double> lr_final;     // with constant_lr: geometric decay to this value at the last epoch
  std::size_t eval_batch = 64;

  void validate() const;
  double lr(std::size_t epoch) const;

  /// Applies one key=value setting; model keys are forwarded to ModelConfig.
  void set(const std::string& key, const std::string& value);
  std::map<std::string, std::string> to_metadata() const;
  /// FNV-1a of the sorted metadata, 16 hex digits.
  std::string hash() const;
};

/// Reads "key = value" lines; '#' starts a comment.
std::map<std::string, std::string> read_config_file(const std::filesystem::path& path);

struct EpochLog {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;  // mean batch loss
  std::optional<double> val_ade;
  std::optional<double> val_fde;
};

struct RunRecord {
  std::string config_hash;
  std::vector<EpochLog> epochs;
  std::size_t best_epoch = 0;
  std::optional<MetricsSummary> val;  // at the best epoch
  std::filesystem::path checkpoint;
  double wall_seconds = 0.0;
};

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainResult {
  ModelParams best;
  RunRecord record;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// Adam on the batch-mean ADE in the target frame. The model is selected by
/// validation ADE, or is the last epoch when `val` is empty. When `out_dir` is
/// set it receives best.ckpt, metrics.txt, loss_curve.csv and wall_time.txt.
TrainResult train(const TrainConfig& config, std::span<const Sample> train_set, std::span<const Sample> val,
                  const std::filesystem::path& out_dir = {}, const EpochCallback& on_epoch = {});

/// Frozen-parameter predictions, target frame, in input order.
std::vector<std::vector<Vec2>> predict_batch(const ModelParams& p, std::span<const Sample> samples,
                                             std::size_t batch_size = 64);

std::vector<SampleResult> evaluate_samples(const ModelParams& p, std::span<const Sample> samples,
                                           std::size_t batch_size = 64);
MetricsSummary evaluate(const ModelParams& p, std::span<const Sample> samples, std::size_t batch_size = 64);

/// Throws ConfigError when the samples do not fit the model configuration.
void check_compatible(const ModelConfig& config, std::span<const Sample> samples);

/// Keeps the last t_h history states and the first t_f future points.
Sample with_horizons(const Sample& s, std::size_t t_h, std::size_t t_f);

void write_run_record(const std::filesystem::path& dir, const TrainConfig& config, const RunRecord& record);

struct GridCell {
  Variant variant = Variant::GH;
  int state_dims = 4;
  std::size_t history = 30;
  RnnKind rnn_kind = RnnKind::GRU;
  GnnKind gnn_kind = GnnKind::GAT;

  std::string name() const;
};

struct GridSpec {
  TrainConfig base;
  std::vector<Variant> variants;
  std::vector<int> dims;
  std::vector<std::size_t> histories;
  std::vector<std::pair<RnnKind, GnnKind>> encoders;
  double split_ratio = 0.8;
  std::uint64_t split_seed = 1;

  /// Cross product; an empty axis takes the base configuration's value.
  std::vector<GridCell> cells() const;
};

struct GridRun {
  GridCell cell;
  RunRecord record;
};

/// Trains and evaluates every cell on one shared split. Writes a directory per
/// cell plus manifest.txt and comparison.csv when `out_dir` is set.
std::vector<GridRun> run_grid(const GridSpec& spec, std::span<const Sample> samples,
                              const std::filesystem::path& out_dir = {}, const EpochCallback& on_epoch = {});

}  // namespace recog
