#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include "recog/data_io.hpp"
#include "recog/synth.hpp"
#include "recog/train.hpp"

using namespace recog;

namespace {

TrainConfig small_config(Variant v) {
  TrainConfig t;
  t.model.variant = v;
  t.model.history = 10;
  t.model.future = 30;
  t.model.emb_dim = 8;
  t.model.enc_hidden = 8;
  t.model.feature_dim = 8;
  t.model.dec_hidden = 8;
  t.model.cnn_hidden = 8;
  t.model.seed = 5;
  t.epochs = 2;
  t.batch_size = 8;
  return t;
}

const std::vector<Sample>& dataset() {
  static const std::vector<Sample> samples = [] {
    SyntheticDatasetSpec spec;
    spec.scenes = 6;
    spec.seed = 21;
    return synthesize_samples(spec);
  }();
  return samples;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("recog_train_" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

}  // namespace

TEST_CASE("learning rate per epoch over ten epochs") {
  TrainConfig t;
  const double expected[] = {1e-3, 5e-4, 2.5e-4, 2.5e-4, 1.25e-4, 1.25e-4, 6.25e-5, 6.25e-5, 6.25e-5, 6.25e-5};
  for (std::size_t e = 1; e <= 10; ++e) CHECK(t.lr(e) == expected[e - 1]);
  t.set("lr", "0.01");
  CHECK(t.lr(7) == 0.01);
  t.set("lr", "schedule");
  CHECK(t.lr(7) == 6.25e-5);
}

TEST_CASE("train config keys, hash and file") {
  TrainConfig a;
  a.set("epochs", "3");
  a.set("batch", "4");
  a.set("variant", "GR");
  a.set("dims", "2");
  CHECK(a.epochs == 3);
  CHECK(a.batch_size == 4);
  CHECK(a.model.variant == Variant::GR);
  CHECK(a.model.state_dims == 2);
  CHECK_THROWS_AS(a.set("nonsense", "1"), ConfigError);
  CHECK_THROWS_AS(a.set("epochs", "x"), ConfigError);
  TrainConfig b = a;
  CHECK(a.hash() == b.hash());
  b.set("seed", "9");
  CHECK(a.hash() != b.hash());
  CHECK(a.hash().size() == 16);

  const auto dir = scratch_dir("cfg");
  std::filesystem::create_directories(dir);
  {
    std::ofstream f(dir / "c.cfg");
    f << "# comment\n epochs = 4 \n\nvariant=R # trailing\n";
  }
  const auto kv = read_config_file(dir / "c.cfg");
  CHECK(kv.size() == 2);
  CHECK(kv.at("epochs") == "4");
  CHECK(kv.at("variant") == "R");
  {
    std::ofstream f(dir / "bad.cfg");
    f << "epochs 4\n";
  }
  CHECK_THROWS_AS(read_config_file(dir / "bad.cfg"), ConfigError);
}

TEST_CASE("one epoch on one sample lowers its loss") {
  const Sample& s = dataset()[3];
  for (Variant v : {Variant::R, Variant::GR}) {
    TrainConfig t = small_config(v);
    t.epochs = 1;
    const std::span<const Sample> one(&s, 1);
    const double before = evaluate(ModelParams::create(t.model), one).ade;
    const double after = evaluate(train(t, one, {}).best, one).ade;
    CHECK(after < before);
  }
  TrainConfig t = small_config(Variant::GH);
  t.epochs = 1;
  ModelParams init = ModelParams::create(t.model);
  const std::vector<const Sample*> batch{&s};
  const double before = ade_loss(forward(init, batch, true).prediction, future_tensor(batch)).item();
  ModelParams trained = train(t, std::span(&s, 1), {}).best;
  const double after = ade_loss(forward(trained, batch, true).prediction, future_tensor(batch)).item();
  CHECK(after < before);
}

TEST_CASE("training is deterministic") {
  const auto& data = dataset();
  const std::span<const Sample> tr(data.data(), 40), va(data.data() + 40, 20);
  const TrainConfig t = small_config(Variant::GH);
  const auto d1 = scratch_dir("det1"), d2 = scratch_dir("det2");
  const TrainResult r1 = train(t, tr, va, d1);
  const TrainResult r2 = train(t, tr, va, d2);
  CHECK(slurp(d1 / "best.ckpt") == slurp(d2 / "best.ckpt"));
  CHECK(slurp(d1 / "loss_curve.csv") == slurp(d2 / "loss_curve.csv"));
  CHECK(slurp(d1 / "metrics.txt") == slurp(d2 / "metrics.txt"));
  CHECK(std::filesystem::exists(d1 / "wall_time.txt"));
  REQUIRE(r1.record.epochs.size() == 2);
  CHECK(r1.record.epochs[0].lr == 1e-3);
  CHECK(r1.record.epochs[1].lr == 5e-4);
  REQUIRE(r1.record.val);

  const Checkpoint ck = Checkpoint::load(d1 / "best.ckpt");
  CHECK(ck.metadata.at("train.best_epoch") == std::to_string(r1.record.best_epoch));
  const ModelParams loaded = ModelParams::from_checkpoint(ck);
  const MetricsSummary m = evaluate(loaded, va);
  CHECK(std::abs(m.ade - r1.record.val->ade) <= 1e-6);
  CHECK(std::abs(m.fde - r1.record.val->fde) <= 1e-6);
  CHECK(m.ade == evaluate(r1.best, va).ade);
}

TEST_CASE("evaluation") {
  const auto& data = dataset();
  const std::span<const Sample> va(data.data(), 25);
  const ModelParams p = ModelParams::create(small_config(Variant::GH).model);

  SUBCASE("matches one-by-one forward and metrics") {
    const auto results = evaluate_samples(p, va, 7);
    for (std::size_t i = 0; i < va.size(); ++i) {
      const auto pred = predict(p, va[i]);
      CHECK(results[i].ade() == ade(pred, va[i].future));
      CHECK(results[i].fde() == fde(pred, va[i].future));
    }
  }
  SUBCASE("order independent") {
    std::vector<Sample> shuffled(va.begin(), va.end());
    std::reverse(shuffled.begin(), shuffled.end());
    std::rotate(shuffled.begin(), shuffled.begin() + 5, shuffled.end());
    const MetricsSummary a = evaluate(p, va), b = evaluate(p, shuffled, 4);
    CHECK(a.ade == doctest::Approx(b.ade).epsilon(1e-12));
    CHECK(a.fde == doctest::Approx(b.fde).epsilon(1e-12));
  }
  SUBCASE("frozen parameters give identical results") {
    CHECK(evaluate(p, va).ade == evaluate(p, va).ade);
  }
  SUBCASE("shape mismatch is a config error") {
    ModelConfig c = p.config;
    c.future = 20;
    CHECK_THROWS_AS(evaluate(ModelParams::create(c), va), ConfigError);
  }
}

TEST_CASE("divergence names the batch") {
  std::vector<Sample> data(dataset().begin(), dataset().begin() + 10);
  data[7].future[3].x = std::nan("");
  TrainConfig t = small_config(Variant::R);
  t.batch_size = 4;
  t.epochs = 1;
  try {
    train(t, data, {});
    FAIL("expected divergence");
  } catch (const TrainingDiverged& e) {
    CHECK(std::string(e.what()).find("batch") != std::string::npos);
  }
}

TEST_CASE("with_horizons") {
  const Sample& s = dataset()[0];
  const Sample c = with_horizons(s, 4, 12);
  CHECK(c.history_length() == 4);
  CHECK(c.future_length() == 12);
  CHECK(c.histories[0].back() == s.histories[0].back());
  CHECK(c.histories[0].front() == s.histories[0][6]);
  CHECK(c.future.back().x == s.future[11].x);
  CHECK_THROWS_AS(with_horizons(s, 11, 30), ConfigError);
}

TEST_CASE("grid") {
  const auto& data = dataset();
  GridSpec g;
  g.base = small_config(Variant::GH);
  g.base.epochs = 1;
  g.split_seed = 3;

  SUBCASE("one cell equals a plain run") {
    const auto dir = scratch_dir("grid1");
    const auto runs = run_grid(g, data, dir);
    REQUIRE(runs.size() == 1);
    const SplitResult split = split_dataset(data, 0.8, 3);
    std::vector<Sample> tr, va;
    for (std::size_t i : split.train) tr.push_back(data[i]);
    for (std::size_t i : split.val) va.push_back(data[i]);
    const TrainResult plain = train(g.base, tr, va);
    CHECK(runs[0].record.val->ade == plain.record.val->ade);
    CHECK(runs[0].record.config_hash == plain.record.config_hash);
    CHECK(std::filesystem::exists(dir / runs[0].cell.name() / "best.ckpt"));
    CHECK(std::filesystem::exists(dir / "manifest.txt"));
    CHECK(slurp(dir / "comparison.csv").find(runs[0].cell.name()) != std::string::npos);
  }
  SUBCASE("cross product layout") {
    g.variants = {Variant::R, Variant::GR, Variant::GH};
    g.dims = {2, 4, 5};
    g.histories = {10, 30, 50};
    g.encoders = {{RnnKind::GRU, GnnKind::GAT}, {RnnKind::LSTM, GnnKind::GCN}};
    const auto cells = g.cells();
    CHECK(cells.size() == 54);
    CHECK(cells[0].name() == "R-d2-th10-GAT-GRU");
    CHECK(cells[1].variant == Variant::GR);
  }
}
