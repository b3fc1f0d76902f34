// Acceptance checks. Prints one PASS/FAIL line per check and exits non-zero
// when any selected check fails. Usage: acceptance [name ...]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "recog/data_io.hpp"
#include "recog/gradcheck.hpp"
#include "recog/graph.hpp"
#include "recog/metrics.hpp"
#include "recog/model.hpp"
#include "recog/ops.hpp"
#include "recog/synth.hpp"
#include "recog/train.hpp"
#include "test_util.hpp"

using namespace recog;
using recog::testing::random_sample;
using recog::testing::random_tensor;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::vector<ParamCoord> all_coords(std::span<const Tensor> params) {
  std::vector<ParamCoord> coords;
  for (std::size_t p = 0; p < params.size(); ++p)
    for (std::size_t i = 0; i < params[p].numel(); ++i) coords.push_back({p, i});
  return coords;
}

std::vector<const Sample*> ptrs(std::span<const Sample> v) {
  std::vector<const Sample*> out;
  for (const Sample& s : v) out.push_back(&s);
  return out;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("recog_acceptance_" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

// Gradients of every layer against central differences, then the full model.
Outcome gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(101);
  double layer_err = 0.0;
  std::string worst;
  const auto note = [&](const std::string& name, double err) {
    if (err >= layer_err) {
      layer_err = err;
      worst = name;
    }
  };
  for (int trial = 0; trial < 3; ++trial) {
    const Linear lin = Linear::create(5, 4, rng);
    const Tensor x = random_tensor({3, 5}, rng);
    const Tensor r = random_tensor({3, 4}, rng);
    const Tensor lp[] = {lin.weight, lin.bias};
    note("linear", finite_diff_check([&] { return sum(mul(lin(x), r)); }, lp, all_coords(lp)));
    note("linear input", finite_diff_check([&](const Tensor& v) { return sum(mul(lin(v), r)); }, x));

    for (RnnKind kind : {RnnKind::GRU, RnnKind::LSTM}) {
      const RecurrentCell cell = RecurrentCell::create(kind, 3, 4, rng);
      const Tensor xs = random_tensor({2, 3}, rng);
      const Tensor h = random_tensor({2, 4}, rng);
      const Tensor c = random_tensor({2, 4}, rng);
      const Tensor w = random_tensor({2, 4}, rng);
      const auto step = [&](const Tensor& in, const Tensor& hh) {
        return kind == RnnKind::GRU ? gru_step(cell, in, hh) : lstm_step(cell, in, hh, c).h;
      };
      const Tensor cp[] = {cell.w_input, cell.w_hidden, cell.bias};
      const std::string name = to_string(kind);
      note(name, finite_diff_check([&] { return sum(mul(step(xs, h), w)); }, cp, all_coords(cp)));
      note(name + " state", finite_diff_check([&](const Tensor& v) { return sum(mul(step(xs, v), w)); }, h));
      note(name + " input", finite_diff_check([&](const Tensor& v) { return sum(mul(step(v, h), w)); }, xs));
    }

    const Tensor img = random_tensor({2, 2, 9, 9}, rng);
    const Tensor k = random_tensor({3, 2, 3, 3}, rng);
    const Tensor kb = random_tensor({3}, rng);
    const Tensor cr = random_tensor({2, 3, 4, 4}, rng);
    const Tensor kp[] = {k, kb};
    note("conv2d", finite_diff_check([&] { return sum(mul(conv2d(img, k, kb, 2), cr)); }, kp, all_coords(kp)));
    note("conv2d input", finite_diff_check([&](const Tensor& v) { return sum(mul(conv2d(v, k, kb, 2), cr)); }, img));

    BatchNorm2d bn = BatchNorm2d::create(2);
    for (double& v : bn.scale.mutable_data()) v = 0.7;
    const Tensor br = random_tensor({2, 2, 9, 9}, rng);
    const Tensor bp[] = {bn.scale, bn.shift};
    note("batchnorm", finite_diff_check([&] { return sum(mul(bn.forward_train(img), br)); }, bp, all_coords(bp)));
    note("batchnorm input", finite_diff_check([&](const Tensor& v) { return sum(mul(bn.forward_train(v), br)); }, img));

    const HetGraph g = build_hetero_graph(random_tensor({4, 3}, rng), random_tensor({3}, rng));
    const MessagePlan plan = plan_messages(g.n_nodes, g.edges);
    for (GnnKind kind : {GnnKind::GCN, GnnKind::GAT}) {
      const GraphLayer layer = GraphLayer::create(kind, 5, 4, rng);
      const Tensor gr = random_tensor({g.n_nodes, 4}, rng);
      std::vector<Tensor> gp{layer.weight.weight};
      for (const Tensor& a : layer.attention) gp.push_back(a);
      const auto run = [&](const Tensor& v) { return sum(mul(apply_graph_layer(plan, v, layer), gr)); };
      note(to_string(kind), finite_diff_check([&] { return run(g.node_features); }, gp, all_coords(gp)));
      note(to_string(kind) + " input", finite_diff_check(run, g.node_features));
    }

    const Tensor a = random_tensor({3, 4}, rng);
    const Tensor ar = random_tensor({3, 4}, rng);
    note("leaky_relu", finite_diff_check([&](const Tensor& v) { return sum(mul(leaky_relu(v, 0.1), ar)); }, a));
    note("softmax_rows", finite_diff_check([&](const Tensor& v) { return sum(mul(softmax_rows(v), ar)); }, a));
    const Tensor target = random_tensor({1, 6, 2}, rng);
    note("ade_loss", finite_diff_check([&](const Tensor& v) { return ade_loss(v, target); }, random_tensor({1, 6, 2}, rng)));
  }

  double model_err = 0.0;
  for (Variant v : {Variant::R, Variant::GR, Variant::GH}) {
    ModelConfig c;
    c.variant = v;
    c.history = 4;
    c.future = 3;
    c.emb_dim = 6;
    c.enc_hidden = 5;
    c.feature_dim = 4;
    c.dec_hidden = 5;
    c.cnn_hidden = 6;
    c.cnn_spec = {{2, 16, 4}, {2, 8, 4}, {2, 4, 2}};
    c.seed = 3;
    ModelParams p = ModelParams::create(c);
    std::mt19937_64 srng(9);
    std::vector<Sample> samples{random_sample(srng, 3, 4, 3), random_sample(srng, 2, 4, 3)};
    const auto batch = ptrs(samples);
    const Tensor target = future_tensor(batch);
    const auto params = p.trainable();
    std::vector<ParamCoord> coords;
    std::uniform_int_distribution<std::size_t> pick(0, params.size() - 1);
    while (coords.size() < 60) {
      const std::size_t pi = pick(srng);
      coords.push_back({pi, std::uniform_int_distribution<std::size_t>(0, params[pi].numel() - 1)(srng)});
    }
    model_err = std::max(model_err, finite_diff_check([&] { return ade_loss(forward(p, batch, true).prediction, target); },
                                                      params, coords));
  }
  const double secs = seconds_since(t0);
  return {layer_err <= 1e-4 && model_err <= 1e-3 && secs < 120.0,
          fmt::format("worst layer {} {:.2e} (limit 1e-4), model {:.2e} (limit 1e-3), {:.1f} s", worst, layer_err,
                      model_err, secs)};
}

Outcome metric_oracle() {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> d(-50.0, 50.0);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + trial % 50;
    std::vector<Vec2> a(n), b(n);
    for (std::size_t t = 0; t < n; ++t) {
      a[t] = {d(rng), d(rng)};
      b[t] = {d(rng), d(rng)};
    }
    double total = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      const double e = std::hypot(a[t].x - b[t].x, a[t].y - b[t].y);
      worst = std::max(worst, std::abs(de_tau(a, b, t + 1) - e));
      total += e;
    }
    worst = std::max(worst, std::abs(ade(a, b) - total / static_cast<double>(n)));
    worst = std::max(worst, std::abs(fde(a, b) - std::hypot(a[n - 1].x - b[n - 1].x, a[n - 1].y - b[n - 1].y)));
  }
  const std::vector<Vec2> zero(50), offset(50, Vec2{3.0, 4.0});
  std::vector<Vec2> ramp(50);
  for (std::size_t t = 0; t < 50; ++t) ramp[t] = {static_cast<double>(t + 1) / 50.0, 0.0};
  const double off_ade = ade(offset, zero), off_fde = fde(offset, zero), ramp_ade = ade(ramp, zero);
  const bool pass = worst <= 1e-12 && off_ade == 5.0 && off_fde == 5.0 && std::abs(ramp_ade - 0.51) <= 1e-12;
  return {pass, fmt::format("max deviation {:.1e} over 1000 pairs; offset (3,4) ADE {} FDE {}; ramp ADE {:.15f}", worst,
                            off_ade, off_fde, ramp_ade)};
}

Outcome graph_edges() {
  std::mt19937_64 rng(3);
  bool pass = true;
  std::string detail;
  for (std::size_t n = 2; n <= 10; ++n) {
    const Tensor vf = random_tensor({n - 1, 3}, rng);
    const HetGraph g = build_hetero_graph(vf, random_tensor({3}, rng));
    std::set<std::pair<std::size_t, std::size_t>> built, brute;
    for (const Edge& e : g.edges) built.insert({e.src, e.dst});
    for (std::size_t src = 0; src < n; ++src)
      for (std::size_t dst = 0; dst < n; ++dst) {
        const bool target_out = src == 0 && dst < n - 1;
        const bool into_target = dst == 0;
        if (target_out || into_target) brute.insert({src, dst});
      }
    bool tags = true;
    for (std::size_t i = 0; i < n; ++i) {
      const bool is_map = i == n - 1;
      tags &= g.node_features[i * 5 + 3] == (is_map ? 1.0 : 0.0) && g.node_features[i * 5 + 4] == (is_map ? 0.0 : 1.0);
    }
    const bool ok = built == brute && g.edges.size() == 2 * n - 2 && tags;
    if (!ok) detail += fmt::format(" N={} mismatch", n);
    pass &= ok;
  }
  return {pass, pass ? "N=2..10 equal brute force, |E|=2N-2, tags map [1,0] vehicle [0,1]" : detail};
}

VehicleState move_state(const VehicleState& s, double angle, Vec2 shift) {
  const double c = std::cos(angle), sn = std::sin(angle);
  return {c * s.x - sn * s.y + shift.x, sn * s.x + c * s.y + shift.y, c * s.vx - sn * s.vy, sn * s.vx + c * s.vy,
          wrap_angle(s.psi + angle)};
}

Outcome invariance() {
  std::mt19937_64 rng(8);
  ModelConfig cfg;
  cfg.history = 10;
  cfg.future = 20;
  cfg.seed = 4;

  // Neighbor order.
  const ModelParams gh = ModelParams::create(cfg);
  double perm_dev = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    const Sample base = random_sample(rng, 5, 10, 20);
    const auto ref = predict(gh, base);
    Sample shuffled = base;
    std::vector<std::size_t> order{1, 2, 3, 4};
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t i = 0; i < 4; ++i) {
      shuffled.histories[i + 1] = base.histories[order[i]];
      shuffled.vehicle_ids[i + 1] = base.vehicle_ids[order[i]];
    }
    const auto got = predict(gh, shuffled);
    for (std::size_t t = 0; t < ref.size(); ++t)
      perm_dev = std::max({perm_dev, std::abs(ref[t].x - got[t].x), std::abs(ref[t].y - got[t].y)});
  }

  // Rigid motion of a whole scene and its map.
  SyntheticSceneSpec spec;
  spec.kind = SceneKind::Intersection;
  spec.n_neighbors = 3;
  spec.noise = 0.3;
  spec.seed = 77;
  spec.frames = 80;
  const SyntheticScene scene = generate_scene(spec);
  const WindowSpec window{10, 20, 10};
  const auto a = make_samples(scene.scene, scene.map, window);
  double rigid_dev = 0.0;
  std::size_t compared = 0;
  for (double angle : {0.9, -2.3}) {
    const Vec2 shift{-211.3, 87.9};
    Scene moved = scene.scene;
    for (Track& t : moved.tracks)
      for (VehicleState& s : t.states) s = move_state(s, angle, shift);
    const auto b = make_samples(moved, scene.map.transformed(angle, shift), window);
    if (a.size() != b.size()) return {false, "rigid motion changed the sample count"};
    for (std::size_t i = 0; i < a.size(); ++i) {
      const auto pa = predict(gh, a[i]), pb = predict(gh, b[i]);
      for (std::size_t t = 0; t < pa.size(); ++t)
        rigid_dev = std::max({rigid_dev, std::abs(pa[t].x - pb[t].x), std::abs(pa[t].y - pb[t].y)});
      ++compared;
    }
  }

  // Inputs a variant must ignore.
  const Sample base = random_sample(rng, 4, 10, 20);
  Sample fewer = base;
  fewer.histories.pop_back();
  fewer.vehicle_ids.pop_back();
  fewer.histories[1][4].x += 3.0;
  Sample remapped = base;
  for (std::uint8_t& l : remapped.map.levels) l = static_cast<std::uint8_t>(255 - l);
  cfg.variant = Variant::R;
  const ModelParams r = ModelParams::create(cfg);
  cfg.variant = Variant::GR;
  const ModelParams gr = ModelParams::create(cfg);
  const auto same = [](const std::vector<Vec2>& p, const std::vector<Vec2>& q) {
    for (std::size_t t = 0; t < p.size(); ++t)
      if (p[t].x != q[t].x || p[t].y != q[t].y) return false;
    return true;
  };
  const bool r_exact = same(predict(r, base), predict(r, fewer)) && same(predict(r, base), predict(r, remapped));
  const bool gr_exact = same(predict(gr, base), predict(gr, remapped));
  const bool gr_uses_neighbors = !same(predict(gr, base), predict(gr, fewer));
  const bool gh_uses_map = !same(predict(gh, base), predict(gh, remapped));

  const bool pass = perm_dev <= 1e-9 && rigid_dev <= 1e-6 && compared > 0 && r_exact && gr_exact &&
                    gr_uses_neighbors && gh_uses_map;
  return {pass, fmt::format("permutation {:.1e} (limit 1e-9), rigid motion {:.1e} over {} samples (limit 1e-6), "
                            "R ignores neighbors+map {}, GR ignores map {}",
                            perm_dev, rigid_dev, compared, r_exact ? "exactly" : "NO", gr_exact ? "exactly" : "NO")};
}

Outcome shape_chain() {
  ModelConfig cfg;
  cfg.seed = 2;
  const ModelParams p = ModelParams::create(cfg);
  std::mt19937_64 rng(1);
  const Sample s = random_sample(rng, 1, cfg.history, cfg.future);
  const Sample* one[] = {&s};
  NoGradScope no_grad;
  Tensor x = raster_tensor(one);
  std::vector<std::string> chain{shape_str(x.shape())};
  for (const ConvBlock& b : p.cnn) {
    x = conv2d(x, b.kernels, b.bias, b.stride);
    chain.push_back(shape_str(x.shape()));
  }
  const bool pass = x.shape() == Shape{1, 32, 3, 3} && x.numel() == 288 && cfg.cnn_flatten_width() == 288 &&
                    encode_maps(p, raster_tensor(one)).shape() == Shape{1, cfg.feature_dim};
  std::string joined;
  for (const auto& c : chain) joined += (joined.empty() ? "" : " -> ") + c;
  return {pass, fmt::format("{} -> flatten {}", joined, x.numel())};
}

Outcome lr_sequence() {
  const std::vector<double> expected{1e-3, 5e-4, 2.5e-4, 2.5e-4, 1.25e-4, 1.25e-4, 6.25e-5, 6.25e-5, 6.25e-5, 6.25e-5};
  const TrainConfig t;
  std::string got;
  bool pass = true;
  for (std::size_t e = 1; e <= 10; ++e) {
    pass &= t.lr(e) == expected[e - 1];
    got += fmt::format("{}{:g}", e > 1 ? " " : "", t.lr(e));
  }
  return {pass, got};
}

Outcome overfit() {
  SyntheticDatasetSpec spec;
  spec.kind = SceneKind::Straight;
  spec.scenes = 8;
  spec.window = {30, 50, 10};
  spec.seed = 1;
  std::vector<Sample> samples = synthesize_samples(spec);
  if (samples.size() < 32) return {false, fmt::format("only {} samples generated", samples.size())};
  samples.resize(32);
  TrainConfig t;
  t.model.variant = Variant::GH;
  t.model.history = 30;
  t.model.future = 50;
  t.model.state_dims = 4;
  t.model.gnn_kind = GnnKind::GAT;
  t.model.rnn_kind = RnnKind::GRU;
  t.epochs = 500;
  t.batch_size = 4;
  t.constant_lr = 3e-3;
  t.lr_final = 3e-5;
  const auto t0 = std::chrono::steady_clock::now();
  const TrainResult r = train(t, samples, {});
  const double train_ade = evaluate(r.best, samples).ade;
  const double secs = seconds_since(t0);
  return {train_ade < 0.05 && secs < 600.0,
          fmt::format("train ADE {:.4f} m after {} epochs (limit 0.05), last batch-mean loss {:.4f}, {:.0f} s",
                      train_ade, t.epochs, r.record.epochs.back().train_loss, secs)};
}

constexpr std::size_t kAblationScenes = 60;

TrainConfig ablation_config() {
  TrainConfig t;
  t.model.history = 10;
  t.model.future = 30;
  t.epochs = 4;
  t.batch_size = 32;
  return t;
}

Outcome ablation() {
  SyntheticDatasetSpec spec;
  spec.kind = SceneKind::Intersection;
  spec.scenes = kAblationScenes;
  spec.min_neighbors = 1;
  spec.max_neighbors = 3;
  spec.window = {10, 30, 10};
  spec.seed = 2024;
  const std::vector<Sample> samples = synthesize_samples(spec);
  if (samples.size() < 2000) return {false, fmt::format("only {} samples", samples.size())};
  const SplitResult split = split_dataset(samples, 0.8, 1);
  std::vector<Sample> tr, va;
  for (std::size_t i : split.train) tr.push_back(samples[i]);
  for (std::size_t i : split.val) va.push_back(samples[i]);

  std::map<Variant, std::vector<double>> ades;
  for (std::uint64_t seed : {1, 2, 3}) {
    for (Variant v : {Variant::R, Variant::GR, Variant::GH}) {
      TrainConfig t = ablation_config();
      t.model.variant = v;
      t.model.seed = seed;
      const TrainResult r = train(t, tr, va);
      ades[v].push_back(r.record.val->ade);
      std::fprintf(stderr, "ablation seed %llu %s val ADE %.4f\n", static_cast<unsigned long long>(seed),
                   to_string(v).c_str(), r.record.val->ade);
    }
  }
  const auto mean = [](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); };
  const double r = mean(ades[Variant::R]), gr = mean(ades[Variant::GR]), gh = mean(ades[Variant::GH]);
  const double gain = (r - gh) / r;
  return {gh < r && gain >= 0.05 && gr < r,
          fmt::format("{} train / {} val samples; mean val ADE R {:.4f} GR {:.4f} GH {:.4f}; GH gain over R {:.1f}%",
                      tr.size(), va.size(), r, gr, gh, 100.0 * gain)};
}

std::vector<Sample> small_dataset() {
  SyntheticDatasetSpec spec;
  spec.scenes = 6;
  spec.seed = 31;
  return synthesize_samples(spec);
}

TrainConfig small_train_config() {
  TrainConfig t;
  t.model.history = 10;
  t.model.future = 30;
  t.model.emb_dim = 16;
  t.model.enc_hidden = 16;
  t.model.feature_dim = 16;
  t.model.dec_hidden = 16;
  t.model.cnn_hidden = 16;
  t.model.seed = 7;
  t.epochs = 3;
  t.batch_size = 8;
  return t;
}

Outcome determinism() {
  const auto data = small_dataset();
  const std::span<const Sample> tr(data.data(), data.size() * 3 / 4), va(data.data() + tr.size(), data.size() - tr.size());
  const TrainConfig t = small_train_config();
  const auto d1 = scratch("det1"), d2 = scratch("det2");
  train(t, tr, va, d1);
  train(t, tr, va, d2);
  const bool ckpt = slurp(d1 / "best.ckpt") == slurp(d2 / "best.ckpt") && !slurp(d1 / "best.ckpt").empty();
  const bool curve = slurp(d1 / "loss_curve.csv") == slurp(d2 / "loss_curve.csv");
  std::filesystem::remove_all(d1);
  std::filesystem::remove_all(d2);
  return {ckpt && curve, fmt::format("checkpoints {}, loss curves {}", ckpt ? "identical" : "DIFFER",
                                     curve ? "identical" : "DIFFER")};
}

Outcome round_trip() {
  const auto data = small_dataset();
  const std::span<const Sample> tr(data.data(), data.size() * 3 / 4), va(data.data() + tr.size(), data.size() - tr.size());
  const auto dir = scratch("ckpt");
  const TrainResult r = train(small_train_config(), tr, va, dir);
  const ModelParams loaded = ModelParams::from_checkpoint(Checkpoint::load(dir / "best.ckpt"));
  const MetricsSummary m = evaluate(loaded, va);
  double dev = std::max(std::abs(m.ade - r.record.val->ade), std::abs(m.fde - r.record.val->fde));
  for (std::size_t k = 0; k < m.horizons.size(); ++k) {
    dev = std::max(dev, std::abs(m.horizons[k].ade - r.record.val->horizons[k].ade));
    dev = std::max(dev, std::abs(m.horizons[k].de - r.record.val->horizons[k].de));
  }
  std::filesystem::remove_all(dir);

  SyntheticSceneSpec spec;
  spec.noise = 0.4;
  spec.seed = 12;
  const auto rows = scene_rows(generate_scene(spec).scene, 3);
  std::stringstream first;
  write_tracks(first, rows);
  const auto parsed = parse_tracks(first, "tracks.csv");
  std::stringstream second;
  write_tracks(second, parsed);
  const bool identity = parsed == rows && first.str() == second.str();
  return {dev <= 1e-6 && identity, fmt::format("metric deviation after reload {:.1e} (limit 1e-6); track file {} rows {}",
                                               dev, rows.size(), identity ? "identical" : "DIFFER")};
}

struct Check {
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Check> checks{{"gradients", gradients},     {"metric-oracle", metric_oracle},
                                  {"graph-edges", graph_edges}, {"invariance", invariance},
                                  {"shape-chain", shape_chain}, {"lr-schedule", lr_sequence},
                                  {"overfit", overfit},         {"ablation", ablation},
                                  {"determinism", determinism}, {"round-trip", round_trip}};
  std::set<std::string> selected(argv + 1, argv + argc);
  for (const std::string& s : selected) {
    if (std::none_of(checks.begin(), checks.end(), [&](const Check& c) { return s == c.name; })) {
      std::fprintf(stderr, "unknown check '%s'\n", s.c_str());
      return 2;
    }
  }
  int failed = 0;
  for (const Check& c : checks) {
    if (!selected.empty() && !selected.count(c.name)) continue;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("%-14s %s  %s\n", c.name, o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
    failed += !o.pass;
  }
  return failed == 0 ? 0 : 1;
}
