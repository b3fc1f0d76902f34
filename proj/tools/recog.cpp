#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "recog/binary_io.hpp"
#include "recog/data_io.hpp"
#include "recog/plot.hpp"
#include "recog/synth.hpp"
#include "recog/train.hpp"

namespace fs = std::filesystem;
using namespace recog;

namespace {

constexpr int kExitIo = 1;
constexpr int kExitInput = 2;

class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

void warn(const std::string& msg) { fmt::print(stderr, "warning: {}\n", msg); }

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::ios_base::failure("cannot write " + path.string());
  return out;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

/// Settings in increasing priority: config file, RECOG_SEED, --set, dedicated flags.
struct ConfigFlags {
  std::string config_file;
  std::vector<std::string> sets;
  std::map<std::string, std::string> flags;

  void add_to(CLI::App* app) {
    app->add_option("--config", config_file, "key = value configuration file")->check(CLI::ExistingFile);
    app->add_option("--set", sets, "key=value override, repeatable");
    for (const auto& [name, key, help] : std::vector<std::tuple<std::string, std::string, std::string>>{
             {"--variant", "variant", "R, GR or GH"},
             {"--dims", "state_dims", "state dimensions: 2, 4 or 5"},
             {"--rnn", "rnn_kind", "GRU or LSTM"},
             {"--gnn", "gnn_kind", "GCN or GAT"},
             {"--epochs", "epochs", "training epochs"},
             {"--batch-size", "batch_size", "mini-batch size"},
             {"--lr", "lr", "constant learning rate, or 'schedule'"},
             {"--seed", "seed", "initialization and data-order seed"}}) {
      app->add_option_function<std::string>(name, [this, key](const std::string& v) { flags[key] = v; }, help);
    }
  }

  std::vector<std::pair<std::string, std::string>> ordered() const {
    std::vector<std::pair<std::string, std::string>> out;
    if (!config_file.empty()) {
      for (const auto& kv : read_config_file(config_file)) out.push_back(kv);
    }
    if (const char* env = std::getenv("RECOG_SEED")) out.emplace_back("seed", env);
    for (const std::string& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + s + "'");
      out.emplace_back(s.substr(0, eq), s.substr(eq + 1));
    }
    for (const auto& kv : flags) out.push_back(kv);
    return out;
  }

  TrainConfig apply(TrainConfig base) const {
    for (const auto& [k, v] : ordered()) base.set(k, v);
    base.validate();
    return base;
  }
};

struct DataSplits {
  SampleSet train;
  SampleSet val;
};

DataSplits load_splits(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw std::ios_base::failure("data directory " + dir.string() + " does not exist");
  return {load_sample_set(dir / "train"), load_sample_set(dir / "val")};
}

std::vector<Sample> select_split(DataSplits& d, const std::string& split) {
  if (split == "train") return std::move(d.train.samples);
  if (split == "val") return std::move(d.val.samples);
  std::vector<Sample> all = std::move(d.train.samples);
  std::move(d.val.samples.begin(), d.val.samples.end(), std::back_inserter(all));
  return all;
}

TrainConfig base_for(const SampleSet& data) {
  TrainConfig c;
  c.model.history = data.history;
  c.model.future = data.future;
  c.model.state_dims = data.state_dims;
  return c;
}

void print_epoch(const EpochLog& e) {
  if (e.val_ade) {
    fmt::print(stderr, "epoch {:3d}  lr {:.3g}  train {:.4f}  val ADE {:.4f}  FDE {:.4f}\n", e.epoch, e.lr,
               e.train_loss, *e.val_ade, *e.val_fde);
  } else {
    fmt::print(stderr, "epoch {:3d}  lr {:.3g}  train {:.4f}\n", e.epoch, e.lr, e.train_loss);
  }
}

void print_summary(const MetricsSummary& m) {
  fmt::print("samples {}\nADE {:.6f}\nFDE {:.6f}\n", m.count, m.ade, m.fde);
  for (const HorizonRow& h : m.horizons) fmt::print("{}s  ADE {:.6f}  DE {:.6f}\n", h.seconds, h.ade, h.de);
}

// ---- synth ----

struct SynthArgs {
  std::string kind = "intersection";
  std::size_t scenes = 20;
  int min_neighbors = 0;
  int max_neighbors = 3;
  double noise = 0.0;
  std::optional<std::uint64_t> seed;
  int frames = 150;
  std::string out;
};

void run_synth(const SynthArgs& a) {
  SyntheticDatasetSpec spec;
  spec.kind = parse_scene_kind(a.kind);
  spec.scenes = a.scenes;
  spec.min_neighbors = a.min_neighbors;
  spec.max_neighbors = a.max_neighbors;
  spec.noise = a.noise;
  spec.frames = a.frames;
  if (a.seed) spec.seed = *a.seed;
  else if (const char* env = std::getenv("RECOG_SEED")) spec.seed = std::stoull(env);
  if (spec.max_neighbors < spec.min_neighbors) throw UsageError("--max-neighbors is below --min-neighbors");
  const auto scenes = generate_scenes(spec);
  const fs::path out(a.out);
  fs::create_directories(out / "tracks");
  fs::create_directories(out / "maps");
  std::vector<TrackFileRow> rows;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const auto part = scene_rows(scenes[i].scene, static_cast<int>(i));
    rows.insert(rows.end(), part.begin(), part.end());
    write_pgm(out / "maps" / fmt::format("{}_{}.pgm", a.kind, i), rasterize_scene(scenes[i]));
  }
  write_track_file(out / "tracks" / (a.kind + ".csv"), rows);
  fmt::print("wrote {} scenes, {} rows to {}\n", scenes.size(), rows.size(), out.string());
}

// ---- preprocess ----

struct PreprocessArgs {
  std::string tracks, maps, out;
  std::size_t th = 30, tf = 50, stride = 10;
  int dims = 4;
  double split_ratio = 0.8;
  std::uint64_t split_seed = 1;
};

void run_preprocess(const PreprocessArgs& a) {
  check_state_dims(a.dims);
  if (a.th < 1 || a.tf < 1 || a.stride < 1) throw UsageError("--th, --tf and --stride must be positive");
  if (!(a.split_ratio > 0.0 && a.split_ratio < 1.0)) throw UsageError("--split-ratio must lie in (0, 1)");
  if (!fs::is_directory(a.tracks)) throw std::ios_base::failure("track directory " + a.tracks + " does not exist");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(a.tracks)) {
    if (e.is_regular_file() && e.path().extension() == ".csv") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  const WindowSpec window{a.th, a.tf, a.stride};
  std::vector<Sample> samples;
  for (std::size_t f = 0; f < files.size(); ++f) {
    const std::string location = files[f].stem().string();
    const auto rows = parse_track_file(files[f]);
    for (const Scene& scene : group_scenes(rows, static_cast<int>(f), location)) {
      const std::string case_id = scene.case_key.substr(scene.case_key.find('/') + 1);
      fs::path map_path = fs::path(a.maps) / fmt::format("{}_{}.pgm", location, case_id);
      if (!fs::exists(map_path)) map_path = fs::path(a.maps) / (location + ".pgm");
      if (!fs::exists(map_path)) throw SchemaError("no map for " + scene.case_key + " in " + a.maps);
      const WorldRaster map = read_pgm(map_path);
      auto part = make_samples(scene, map, window);
      std::move(part.begin(), part.end(), std::back_inserter(samples));
    }
  }
  if (files.empty()) warn("no track files in " + a.tracks);
  SampleSet train{a.th, a.tf, a.dims, {}}, val{a.th, a.tf, a.dims, {}};
  std::set<std::string> keys;
  for (const Sample& s : samples) keys.insert(s.case_key);
  if (keys.size() >= 2) {
    const SplitResult split = split_dataset(samples, a.split_ratio, a.split_seed);
    for (std::size_t i : split.train) train.samples.push_back(std::move(samples[i]));
    for (std::size_t i : split.val) val.samples.push_back(std::move(samples[i]));
  } else {
    if (!samples.empty()) warn("a single scene cannot be split; every sample goes to training");
    train.samples = std::move(samples);
  }
  if (train.samples.empty() && val.samples.empty()) warn("zero samples produced");
  save_sample_set(fs::path(a.out) / "train", train);
  save_sample_set(fs::path(a.out) / "val", val);
  fmt::print("train {} samples\nval {} samples\n", train.samples.size(), val.samples.size());
}

// ---- train / eval / predict / grid ----

struct TrainArgs {
  std::string data, out;
  ConfigFlags cfg;
};

void run_train(const TrainArgs& a) {
  a.cfg.apply(TrainConfig{});
  DataSplits d = load_splits(a.data);
  const TrainConfig config = a.cfg.apply(base_for(d.train));
  if (d.train.samples.empty()) throw UsageError("training split is empty");
  const TrainResult r = train(config, d.train.samples, d.val.samples, a.out, print_epoch);
  auto manifest = open_out(fs::path(a.out) / "manifest.txt");
  manifest << fmt::format("run {} best.ckpt\n", r.record.config_hash);
  fmt::print("best epoch {}\n", r.record.best_epoch);
  if (r.record.val) print_summary(*r.record.val);
}

struct EvalArgs {
  std::string ckpt, data, split = "val", out;
};

void run_eval(const EvalArgs& a) {
  const ModelParams p = ModelParams::from_checkpoint(Checkpoint::load(a.ckpt));
  DataSplits d = load_splits(a.data);
  const std::vector<Sample> samples = select_split(d, a.split);
  if (samples.empty()) throw UsageError("split '" + a.split + "' has no samples");
  const auto results = evaluate_samples(p, samples);
  const MetricsSummary m = summarize(results);
  print_summary(m);
  if (!a.out.empty()) {
    const fs::path out(a.out);
    {
      auto f = open_out(out / "eval.txt");
      f << fmt::format("samples {}\nade {:.6f}\nfde {:.6f}\n", m.count, m.ade, m.fde);
    }
    {
      auto f = open_out(out / "horizons.csv");
      write_horizon_csv(f, m.horizons);
    }
    std::vector<std::string> warnings;
    const auto rows = aggregate(results, GroupBy::Scene, &warnings);
    for (const auto& w : warnings) warn(w);
    auto f = open_out(out / "by_scene.csv");
    write_horizon_csv(f, rows);
  }
}

struct PredictArgs {
  std::string ckpt, data, split = "val", out;
  std::size_t sample = 0;
};

void run_predict(const PredictArgs& a) {
  const ModelParams p = ModelParams::from_checkpoint(Checkpoint::load(a.ckpt));
  DataSplits d = load_splits(a.data);
  const std::vector<Sample> samples = select_split(d, a.split);
  if (a.sample >= samples.size()) {
    throw UsageError(fmt::format("sample {} not found; split '{}' has {} samples", a.sample, a.split, samples.size()));
  }
  const Sample& s = samples[a.sample];
  check_compatible(p.config, std::span(&s, 1));
  const std::vector<Vec2> pred = predict(p, s);
  TrajectoryPlot plot;
  std::vector<Vec2> hist;
  for (const VehicleState& v : s.histories[0]) hist.push_back({v.x, v.y});
  plot.history = to_world(hist, s.pose);
  plot.ground_truth = to_world(s.future, s.pose);
  plot.prediction = to_world(pred, s.pose);
  for (std::size_t v = 1; v < s.vehicle_count(); ++v) {
    std::vector<Vec2> n;
    for (const VehicleState& st : s.histories[v]) n.push_back({st.x, st.y});
    plot.neighbors.push_back(to_world(n, s.pose));
  }
  plot.raster_corners = raster_extent(s.pose);
  const fs::path out(a.out);
  {
    auto f = open_out(out);
    f << trajectory_svg(plot);
  }
  fs::path sidecar = out;
  sidecar.replace_extension(".csv");
  auto f = open_out(sidecar);
  f << "kind,step,x,y\n";
  const auto rows = [&](const char* kind, const std::vector<Vec2>& pts) {
    for (std::size_t i = 0; i < pts.size(); ++i) f << fmt::format("{},{},{},{}\n", kind, i + 1, pts[i].x, pts[i].y);
  };
  rows("history", plot.history);
  rows("ground_truth", plot.ground_truth);
  rows("prediction", plot.prediction);
  rows("raster_corner", plot.raster_corners);
  fmt::print("sample {} ({} frame {}): ADE {:.6f} FDE {:.6f}\n", a.sample, s.case_key, s.current_frame,
             ade(pred, s.future), fde(pred, s.future));
}

struct GridArgs {
  std::string data, out, variants, dims, histories, encoders;
  double split_ratio = 0.8;
  std::uint64_t split_seed = 1;
  ConfigFlags cfg;
};

void run_grid_cmd(const GridArgs& a) {
  a.cfg.apply(TrainConfig{});
  GridSpec g;
  for (const auto& v : split_list(a.variants)) g.variants.push_back(parse_variant(v));
  for (const auto& v : split_list(a.dims)) {
    g.dims.push_back(std::stoi(v));
    check_state_dims(g.dims.back());
  }
  for (const auto& v : split_list(a.histories)) g.histories.push_back(std::stoul(v));
  for (const auto& v : split_list(a.encoders)) {
    const auto dash = v.find('-');
    if (dash == std::string::npos) throw UsageError("encoder pairs look like GAT-GRU, got '" + v + "'");
    try {
      g.encoders.emplace_back(parse_rnn_kind(v.substr(dash + 1)), parse_gnn_kind(v.substr(0, dash)));
    } catch (const ContractError& e) {
      throw UsageError(e.what());
    }
  }
  g.split_ratio = a.split_ratio;
  g.split_seed = a.split_seed;
  DataSplits d = load_splits(a.data);
  g.base = a.cfg.apply(base_for(d.train));
  const std::vector<Sample> samples = select_split(d, "all");
  const auto runs = run_grid(g, samples, a.out, print_epoch);
  for (const GridRun& r : runs) {
    fmt::print("{}  ADE {:.6f}  FDE {:.6f}\n", r.cell.name(), r.record.val ? r.record.val->ade : std::nan(""),
               r.record.val ? r.record.val->fde : std::nan(""));
  }
}

// ---- plot ----

struct PlotArgs {
  std::string runs, kind = "horizon-curve", out;
};

struct RunMetrics {
  std::string name;
  std::map<std::string, std::string> values;
};

std::vector<RunMetrics> read_runs(const fs::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw std::ios_base::failure("cannot open manifest " + manifest.string());
  std::vector<RunMetrics> runs;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string name, hash, ckpt;
    if (!(ls >> name >> hash >> ckpt)) throw SchemaError("malformed manifest line '" + line + "'");
    const fs::path metrics = manifest.parent_path() / fs::path(ckpt).parent_path() / "metrics.txt";
    std::ifstream mf(metrics);
    if (!mf) throw std::ios_base::failure("cannot open " + metrics.string());
    RunMetrics r{name, {}};
    std::string key, value;
    while (mf >> key && std::getline(mf, value)) r.values[key] = value.substr(value.find_first_not_of(' '));
    runs.push_back(std::move(r));
  }
  if (runs.empty()) throw UsageError("manifest " + manifest.string() + " lists no runs");
  return runs;
}

void run_plot(const PlotArgs& a) {
  const auto runs = read_runs(a.runs);
  const fs::path out(a.out);
  fs::path sidecar = out;
  sidecar.replace_extension(".csv");
  std::string svg;
  std::string table;
  if (a.kind == "horizon-curve") {
    table = "run,seconds,ade,de\n";
    std::vector<Series> series;
    for (const RunMetrics& r : runs) {
      Series s{r.name, {}, {}};
      for (int k = 1; k <= 5; ++k) {
        const auto it = r.values.find(fmt::format("val_ade_{}s", k));
        if (it == r.values.end()) continue;
        const std::string& de = r.values.at(fmt::format("val_de_{}s", k));
        s.x.push_back(k);
        s.y.push_back(std::stod(it->second));
        table += fmt::format("{},{},{},{}\n", r.name, k, it->second, de);
      }
      if (s.x.empty()) throw UsageError("run " + r.name + " has no validation horizons");
      series.push_back(std::move(s));
    }
    svg = line_chart_svg("Validation ADE by prediction horizon", "horizon (s)", "ADE (m)", series);
  } else {
    table = "run,ade,fde\n";
    std::vector<BarGroup> groups;
    for (const RunMetrics& r : runs) {
      if (!r.values.count("val_ade")) throw UsageError("run " + r.name + " has no validation metrics");
      const std::string& ade_s = r.values.at("val_ade");
      const std::string& fde_s = r.values.at("val_fde");
      groups.push_back({r.name, {std::stod(ade_s), std::stod(fde_s)}});
      table += fmt::format("{},{},{}\n", r.name, ade_s, fde_s);
    }
    const std::vector<std::string> names{"ADE", "FDE"};
    svg = bar_chart_svg("Validation error by run", "meters", names, groups);
  }
  open_out(out) << svg;
  open_out(sidecar) << table;
  fmt::print("wrote {} and {}\n", out.string(), sidecar.string());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Trajectory prediction with interaction graphs and local maps"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "generate synthetic track files and maps");
  c_synth->add_option("--kind", synth.kind)->check(CLI::IsMember({"straight", "intersection", "roundabout"}));
  c_synth->add_option("--scenes", synth.scenes)->check(CLI::PositiveNumber);
  c_synth->add_option("--min-neighbors", synth.min_neighbors)->check(CLI::NonNegativeNumber);
  c_synth->add_option("--max-neighbors", synth.max_neighbors)->check(CLI::NonNegativeNumber);
  c_synth->add_option("--noise", synth.noise)->check(CLI::NonNegativeNumber);
  c_synth->add_option_function<std::uint64_t>("--seed", [&](std::uint64_t v) { synth.seed = v; });
  c_synth->add_option("--frames", synth.frames)->check(CLI::Range(2, 100000));
  c_synth->add_option("--out", synth.out)->required();

  PreprocessArgs pre;
  auto* c_pre = app.add_subcommand("preprocess", "cut track files into model samples");
  c_pre->add_option("--tracks", pre.tracks, "directory of track csv files")->required();
  c_pre->add_option("--maps", pre.maps, "directory of pgm maps")->required();
  c_pre->add_option("--out", pre.out)->required();
  c_pre->add_option("--th", pre.th, "history frames")->check(CLI::PositiveNumber);
  c_pre->add_option("--tf", pre.tf, "future frames")->check(CLI::PositiveNumber);
  c_pre->add_option("--stride", pre.stride)->check(CLI::PositiveNumber);
  c_pre->add_option("--dims", pre.dims)->check(CLI::IsMember({2, 4, 5}));
  c_pre->add_option("--split-ratio", pre.split_ratio)->check(CLI::Range(0.0, 1.0));
  c_pre->add_option("--split-seed", pre.split_seed);

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "train a model");
  c_train->add_option("--data", tr.data, "preprocessed data directory")->required();
  c_train->add_option("--out", tr.out, "run directory")->required();
  tr.cfg.add_to(c_train);

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval", "evaluate a checkpoint");
  c_eval->add_option("--ckpt", ev.ckpt)->required()->check(CLI::ExistingFile);
  c_eval->add_option("--data", ev.data)->required();
  c_eval->add_option("--split", ev.split)->check(CLI::IsMember({"train", "val", "all"}));
  c_eval->add_option("--out", ev.out, "directory for metric tables");

  PredictArgs pr;
  auto* c_pred = app.add_subcommand("predict", "predict one sample and draw it");
  c_pred->add_option("--ckpt", pr.ckpt)->required()->check(CLI::ExistingFile);
  c_pred->add_option("--data", pr.data)->required();
  c_pred->add_option("--split", pr.split)->check(CLI::IsMember({"train", "val", "all"}));
  c_pred->add_option("--sample", pr.sample, "index within the split")->required();
  c_pred->add_option("--out", pr.out, "svg path; a csv sidecar is written next to it")->required();

  GridArgs gr;
  auto* c_grid = app.add_subcommand("grid", "train and compare a grid of configurations");
  c_grid->add_option("--data", gr.data)->required();
  c_grid->add_option("--out", gr.out)->required();
  c_grid->add_option("--variants", gr.variants, "comma list of R, GR, GH");
  c_grid->add_option("--dims-list", gr.dims, "comma list of state dimensions");
  c_grid->add_option("--histories", gr.histories, "comma list of history lengths");
  c_grid->add_option("--encoders", gr.encoders, "comma list such as GAT-GRU,GCN-LSTM");
  c_grid->add_option("--split-ratio", gr.split_ratio)->check(CLI::Range(0.0, 1.0));
  c_grid->add_option("--split-seed", gr.split_seed);
  gr.cfg.add_to(c_grid);

  PlotArgs pl;
  auto* c_plot = app.add_subcommand("plot", "chart run records");
  c_plot->add_option("--runs", pl.runs, "manifest.txt of a train or grid run")->required();
  c_plot->add_option("--kind", pl.kind)->check(CLI::IsMember({"horizon-curve", "ablation-bars"}));
  c_plot->add_option("--out", pl.out, "svg path; a csv sidecar is written next to it")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitInput;
  }

  try {
    if (*c_synth) run_synth(synth);
    else if (*c_pre) run_preprocess(pre);
    else if (*c_train) run_train(tr);
    else if (*c_eval) run_eval(ev);
    else if (*c_pred) run_predict(pr);
    else if (*c_grid) run_grid_cmd(gr);
    else if (*c_plot) run_plot(pl);
  } catch (const std::ios_base::failure& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kExitIo;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kExitInput;
  }
  return 0;
}
