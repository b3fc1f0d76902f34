#include "recog/train.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include <fmt/format.h>

#include "recog/data_io.hpp"
#include "recog/tensor.hpp"

namespace recog {

namespace {

std::size_t parse_count(const std::string& key, const std::string& value) {
  std::size_t v = 0;
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (ec != std::errc() || ptr != value.data() + value.size()) {
    throw ConfigError(fmt::format("{}: expected a non-negative integer, got '{}'", key, value));
  }
  return v;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::ios_base::failure("cannot write " + path.string());
  return out;
}

}  // namespace

void TrainConfig::validate() const {
  model.validate();
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (eval_batch < 1) throw ConfigError("eval_batch must be at least 1");
  if (constant_lr && !(*constant_lr > 0.0 && std::isfinite(*constant_lr))) {
    throw ConfigError("lr must be positive");
  }
  if (lr_final && !(*lr_final > 0.0 && std::isfinite(*lr_final))) throw ConfigError("lr_final must be positive");
  if (lr_final && !constant_lr) throw ConfigError("lr_final needs a numeric lr");
}

double TrainConfig::lr(std::size_t epoch) const {
  if (!constant_lr) return lr_at_epoch(static_cast<int>(epoch));
  if (lr_final) {
    if (epochs < 2) return *constant_lr;
    const double frac = static_cast<double>(epoch - 1) / static_cast<double>(epochs - 1);
    return *constant_lr * std::pow(*lr_final / *constant_lr, frac);
  }
  if (lr_halve_every == 0) return *constant_lr;
  return std::ldexp(*constant_lr, -static_cast<int>((epoch - 1) / lr_halve_every));
}

void TrainConfig::set(const std::string& key, const std::string& value) {
  if (key == "epochs") epochs = parse_count(key, value);
  else if (key == "batch_size" || key == "batch") batch_size = parse_count(key, value);
  else if (key == "eval_batch") eval_batch = parse_count(key, value);
  else if (key == "lr_halve_every") lr_halve_every = parse_count(key, value);
  else if (key == "lr_final") {
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
    if (ec != std::errc() || ptr != value.data() + value.size()) {
      throw ConfigError(fmt::format("lr_final: expected a number, got '{}'", value));
    }
    lr_final = v;
  } else if (key == "lr") {
    if (value == "schedule") {
      constant_lr.reset();
      return;
    }
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
    if (ec != std::errc() || ptr != value.data() + value.size()) {
      throw ConfigError(fmt::format("lr: expected a number or 'schedule', got '{}'", value));
    }
    constant_lr = v;
  } else {
    model.set(key, value);
  }
}

std::map<std::string, std::string> TrainConfig::to_metadata() const {
  std::map<std::string, std::string> meta;
  for (const auto& [k, v] : model.to_metadata()) meta["model." + k] = v;
  meta["train.epochs"] = std::to_string(epochs);
  meta["train.batch_size"] = std::to_string(batch_size);
  meta["train.lr"] = constant_lr ? fmt::format("{}", *constant_lr) : "schedule";
  if (constant_lr && lr_halve_every) meta["train.lr_halve_every"] = std::to_string(lr_halve_every);
  if (lr_final) meta["train.lr_final"] = fmt::format("{}", *lr_final);
  return meta;
}

std::string TrainConfig::hash() const {
  std::string text;
  for (const auto& [k, v] : to_metadata()) text += k + "=" + v + "\n";
  return fmt::format("{:016x}", fnv1a(text));
}

std::map<std::string, std::string> read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::ios_base::failure("cannot open config " + path.string());
  std::map<std::string, std::string> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    line = trim(line.substr(0, line.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos || trim(line.substr(0, eq)).empty()) {
      throw ConfigError(fmt::format("{}:{}: expected key = value", path.string(), n));
    }
    out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return out;
}

void check_compatible(const ModelConfig& config, std::span<const Sample> samples) {
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Sample& s = samples[i];
    if (s.history_length() != config.history || s.future_length() != config.future) {
      throw ConfigError(fmt::format("sample {} has T_h={} T_f={}, model expects T_h={} T_f={}", i, s.history_length(),
                                    s.future_length(), config.history, config.future));
    }
  }
}

Sample with_horizons(const Sample& s, std::size_t t_h, std::size_t t_f) {
  if (t_h < 1 || t_f < 1 || t_h > s.history_length() || t_f > s.future_length()) {
    throw ConfigError(fmt::format("cannot cut T_h={} T_f={} from a sample with T_h={} T_f={}", t_h, t_f,
                                  s.history_length(), s.future_length()));
  }
  Sample out = s;
  for (auto& h : out.histories) h.erase(h.begin(), h.end() - static_cast<std::ptrdiff_t>(t_h));
  out.future.resize(t_f);
  return out;
}

std::vector<std::vector<Vec2>> predict_batch(const ModelParams& p, std::span<const Sample> samples,
                                             std::size_t batch_size) {
  check_compatible(p.config, samples);
  std::vector<std::vector<Vec2>> out;
  out.reserve(samples.size());
  const std::size_t t_f = p.config.future;
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    const std::size_t end = std::min(samples.size(), start + batch_size);
    std::vector<const Sample*> batch;
    for (std::size_t i = start; i < end; ++i) batch.push_back(&samples[i]);
    const Tensor pred = forward(p, batch).prediction;
    for (std::size_t b = 0; b < batch.size(); ++b) {
      std::vector<Vec2> traj(t_f);
      for (std::size_t t = 0; t < t_f; ++t) traj[t] = {pred[(b * t_f + t) * 2], pred[(b * t_f + t) * 2 + 1]};
      out.push_back(std::move(traj));
    }
  }
  return out;
}

std::vector<SampleResult> evaluate_samples(const ModelParams& p, std::span<const Sample> samples,
                                           std::size_t batch_size) {
  const auto preds = predict_batch(p, samples, batch_size);
  std::vector<SampleResult> out;
  out.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    out.push_back(score_sample(preds[i], samples[i].future, samples[i].scene_id, samples[i].case_key));
  }
  return out;
}

MetricsSummary evaluate(const ModelParams& p, std::span<const Sample> samples, std::size_t batch_size) {
  const auto results = evaluate_samples(p, samples, batch_size);
  return summarize(results);
}

TrainResult train(const TrainConfig& config, std::span<const Sample> train_set, std::span<const Sample> val,
                  const std::filesystem::path& out_dir, const EpochCallback& on_epoch) {
  config.validate();
  if (train_set.empty()) throw ContractError("training set is empty");
  check_compatible(config.model, train_set);
  check_compatible(config.model, val);
  const auto start = std::chrono::steady_clock::now();

  ModelParams p = ModelParams::create(config.model);
  const std::vector<Tensor> params = p.trainable();
  AdamState adam;
  std::mt19937_64 rng(config.model.seed ^ 0x5deece66dull);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  RunRecord record;
  record.config_hash = config.hash();
  Checkpoint best;
  double best_ade = std::numeric_limits<double>::infinity();

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    EpochLog log;
    log.epoch = epoch;
    log.lr = config.lr(epoch);
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += config.batch_size) {
      std::vector<const Sample*> batch;
      for (std::size_t i = b0; i < std::min(order.size(), b0 + config.batch_size); ++i) {
        batch.push_back(&train_set[order[i]]);
      }
      for (const Tensor& t : params) t.zero_grad();
      GradTape tape;
      const ForwardOutput out = forward(p, batch, true);
      const Tensor loss = ade_loss(out.prediction, future_tensor(batch));
      const double value = loss.item();
      if (!std::isfinite(value)) {
        throw TrainingDiverged(fmt::format("loss is {} at epoch {} batch {} (first sample {} frame {})", value, epoch,
                                           b0 / config.batch_size, batch.front()->case_key,
                                           batch.front()->current_frame));
      }
      tape.backward(loss);
      adam_step(adam, params, log.lr);
      p.round_to_storage();
      loss_sum += value;
      ++batches;
    }
    log.train_loss = loss_sum / static_cast<double>(batches);

    bool improved = val.empty();
    if (!val.empty()) {
      MetricsSummary m = evaluate(p, val, config.eval_batch);
      log.val_ade = m.ade;
      log.val_fde = m.fde;
      if (m.ade < best_ade) {
        best_ade = m.ade;
        record.val = std::move(m);
        improved = true;
      }
    }
    if (improved) {
      record.best_epoch = epoch;
      best = p.to_checkpoint();
    }
    record.epochs.push_back(log);
    if (on_epoch) on_epoch(log);
  }

  for (const auto& [k, v] : config.to_metadata()) {
    if (k.rfind("train.", 0) == 0) best.metadata[k] = v;
  }
  best.metadata["train.best_epoch"] = std::to_string(record.best_epoch);
  record.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    record.checkpoint = out_dir / "best.ckpt";
    best.save(record.checkpoint);
    write_run_record(out_dir, config, record);
  }
  return {ModelParams::from_checkpoint(best), std::move(record)};
}

void write_run_record(const std::filesystem::path& dir, const TrainConfig& config, const RunRecord& record) {
  std::filesystem::create_directories(dir);
  {
    auto out = open_out(dir / "metrics.txt");
    out << "config_hash " << record.config_hash << "\n";
    for (const auto& [k, v] : config.to_metadata()) out << "config " << k << " " << v << "\n";
    out << "epochs " << record.epochs.size() << "\n";
    out << "best_epoch " << record.best_epoch << "\n";
    if (record.val) {
      out << fmt::format("val_count {}\nval_ade {:.6f}\nval_fde {:.6f}\n", record.val->count, record.val->ade,
                         record.val->fde);
      for (const HorizonRow& h : record.val->horizons) {
        out << fmt::format("val_ade_{}s {:.6f}\nval_de_{}s {:.6f}\n", h.seconds, h.ade, h.seconds, h.de);
      }
    }
    out << "checkpoint " << record.checkpoint.filename().string() << "\n";
  }
  {
    auto out = open_out(dir / "loss_curve.csv");
    out << "epoch,lr,train_loss,val_ade,val_fde\n";
    for (const EpochLog& e : record.epochs) {
      out << fmt::format("{},{},{:.9f},{},{}\n", e.epoch, e.lr, e.train_loss,
                         e.val_ade ? fmt::format("{:.9f}", *e.val_ade) : "",
                         e.val_fde ? fmt::format("{:.9f}", *e.val_fde) : "");
    }
  }
  if (record.val) {
    auto out = open_out(dir / "val_horizons.csv");
    write_horizon_csv(out, record.val->horizons);
  }
  auto out = open_out(dir / "wall_time.txt");
  out << fmt::format("{:.3f}\n", record.wall_seconds);
}

std::string GridCell::name() const {
  return fmt::format("{}-d{}-th{}-{}-{}", to_string(variant), state_dims, history, to_string(gnn_kind),
                     to_string(rnn_kind));
}

std::vector<GridCell> GridSpec::cells() const {
  const auto variants_ = variants.empty() ? std::vector<Variant>{base.model.variant} : variants;
  const auto dims_ = dims.empty() ? std::vector<int>{base.model.state_dims} : dims;
  const auto hist_ = histories.empty() ? std::vector<std::size_t>{base.model.history} : histories;
  const auto enc_ = encoders.empty() ? std::vector<std::pair<RnnKind, GnnKind>>{{base.model.rnn_kind, base.model.gnn_kind}}
                                     : encoders;
  std::vector<GridCell> out;
  for (const auto& e : enc_)
    for (std::size_t h : hist_)
      for (int d : dims_)
        for (Variant v : variants_) out.push_back({v, d, h, e.first, e.second});
  return out;
}

std::vector<GridRun> run_grid(const GridSpec& spec, std::span<const Sample> samples,
                              const std::filesystem::path& out_dir, const EpochCallback& on_epoch) {
  const auto cells = spec.cells();
  if (cells.empty()) throw ConfigError("grid has no cells");
  const SplitResult split = split_dataset(samples, spec.split_ratio, spec.split_seed);
  std::vector<GridRun> runs;
  for (const GridCell& cell : cells) {
    TrainConfig c = spec.base;
    c.model.variant = cell.variant;
    c.model.state_dims = cell.state_dims;
    c.model.history = cell.history;
    c.model.rnn_kind = cell.rnn_kind;
    c.model.gnn_kind = cell.gnn_kind;
    std::vector<Sample> tr, va;
    for (std::size_t i : split.train) tr.push_back(with_horizons(samples[i], cell.history, c.model.future));
    for (std::size_t i : split.val) va.push_back(with_horizons(samples[i], cell.history, c.model.future));
    TrainResult r = train(c, tr, va, out_dir.empty() ? out_dir : out_dir / cell.name(), on_epoch);
    runs.push_back({cell, std::move(r.record)});
  }
  if (!out_dir.empty()) {
    auto manifest = open_out(out_dir / "manifest.txt");
    manifest << fmt::format("# split ratio {} seed {} train {} val {}\n", spec.split_ratio, spec.split_seed,
                            split.train.size(), split.val.size());
    auto table = open_out(out_dir / "comparison.csv");
    table << "cell,variant,dims,history,gnn,rnn,best_epoch,val_ade,val_fde";
    for (int k = 1; k <= 5; ++k) table << ",ade_" << k << "s,de_" << k << "s";
    table << "\n";
    for (const GridRun& run : runs) {
      const double a = run.record.val ? run.record.val->ade : std::nan("");
      const double f = run.record.val ? run.record.val->fde : std::nan("");
      manifest << fmt::format("{} {} {}\n", run.cell.name(), run.record.config_hash, run.cell.name() + "/best.ckpt");
      table << fmt::format("{},{},{},{},{},{},{},{:.6f},{:.6f}", run.cell.name(), to_string(run.cell.variant),
                           run.cell.state_dims, run.cell.history, to_string(run.cell.gnn_kind),
                           to_string(run.cell.rnn_kind), run.record.best_epoch, a, f);
      for (int k = 1; k <= 5; ++k) {
        const HorizonRow* row = nullptr;
        if (run.record.val)
          for (const HorizonRow& h : run.record.val->horizons)
            if (h.seconds == k) row = &h;
        table << (row ? fmt::format(",{:.6f},{:.6f}", row->ade, row->de) : std::string(",,"));
      }
      table << "\n";
    }
  }
  return runs;
}

}  // namespace recog
