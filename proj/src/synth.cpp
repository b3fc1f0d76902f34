#include "recog/synth.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>

#include <fmt/format.h>

#include "recog/tensor.hpp"

namespace recog {

std::string to_string(SceneKind k) {
  switch (k) {
    case SceneKind::Straight: return "straight";
    case SceneKind::Intersection: return "intersection";
    case SceneKind::Roundabout: return "roundabout";
  }
  return "?";
}

SceneKind parse_scene_kind(const std::string& text) {
  if (text == "straight") return SceneKind::Straight;
  if (text == "intersection") return SceneKind::Intersection;
  if (text == "roundabout") return SceneKind::Roundabout;
  throw std::invalid_argument(fmt::format("unknown scene kind '{}' (straight, intersection, roundabout)", text));
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kLane = 1.75;
constexpr double kStep = 0.25;  // path sampling, meters

using Rng = std::mt19937_64;

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

/// Arc-length parameterized polyline with a curve radius per sample.
class Path {
 public:
  explicit Path(Vec2 start) : pts_{start}, s_{0.0}, radius_{kInf} {}

  void line_to(Vec2 to) {
    const Vec2 from = pts_.back();
    const double len = std::hypot(to.x - from.x, to.y - from.y);
    const int n = std::max(1, static_cast<int>(std::ceil(len / kStep)));
    for (int i = 1; i <= n; ++i) {
      const double t = static_cast<double>(i) / n;
      push({from.x + t * (to.x - from.x), from.y + t * (to.y - from.y)}, kInf);
    }
  }

  void arc(Vec2 center, double r, double a0, double a1) {
    const int n = std::max(1, static_cast<int>(std::ceil(std::abs(a1 - a0) * r / kStep)));
    for (int i = 1; i <= n; ++i) {
      const double a = a0 + (a1 - a0) * i / n;
      push({center.x + r * std::cos(a), center.y + r * std::sin(a)}, r);
    }
  }

  double length() const { return s_.back(); }

  Vec2 at(double s) const {
    const auto [i, t] = locate(s);
    return {pts_[i].x + t * (pts_[i + 1].x - pts_[i].x), pts_[i].y + t * (pts_[i + 1].y - pts_[i].y)};
  }

  Vec2 tangent(double s) const {
    const std::size_t i = locate(s).first;
    const double dx = pts_[i + 1].x - pts_[i].x, dy = pts_[i + 1].y - pts_[i].y;
    const double n = std::hypot(dx, dy);
    return {dx / n, dy / n};
  }

  double radius(double s) const { return radius_[locate(s).first + 1]; }

  /// First arc length at which `inside` holds, or kInf.
  double first_where(const std::function<bool(Vec2)>& inside, double from = 0.0) const {
    for (std::size_t i = 0; i < pts_.size(); ++i) {
      if (s_[i] >= from && inside(pts_[i])) return s_[i];
    }
    return kInf;
  }

 private:
  void push(Vec2 p, double r) {
    const Vec2 q = pts_.back();
    s_.push_back(s_.back() + std::hypot(p.x - q.x, p.y - q.y));
    pts_.push_back(p);
    radius_.push_back(r);
  }

  std::pair<std::size_t, double> locate(double s) const {
    s = std::clamp(s, 0.0, length());
    auto it = std::upper_bound(s_.begin(), s_.end(), s);
    std::size_t i = it == s_.begin() ? 0 : static_cast<std::size_t>(it - s_.begin()) - 1;
    i = std::min(i, pts_.size() - 2);
    const double seg = s_[i + 1] - s_[i];
    return {i, seg > 0.0 ? (s - s_[i]) / seg : 0.0};
  }

  std::vector<Vec2> pts_;
  std::vector<double> s_;
  std::vector<double> radius_;
};

double curve_speed(double radius) { return std::isinf(radius) ? kInf : std::sqrt(2.5 * radius); }

/// Returns a stop position ahead of s, or kInf when the vehicle may proceed.
using StopRule = std::function<double(int frame, double s, double v)>;

struct Motion {
  std::vector<double> s;  // frames + 1 arc lengths
};

Motion drive(const Path& path, double s0, double v0, double v_des, int frames, const StopRule& stop) {
  constexpr double dt = kFramePeriod;
  Motion m;
  double s = s0, v = v0;
  for (int f = 0; f <= frames; ++f) {
    m.s.push_back(s);
    double a = 1.0 * (std::min(v_des, curve_speed(path.radius(s))) - v);
    for (double d = 1.0; d <= 40.0; d += 1.0) {
      const double lim = curve_speed(path.radius(s + d));
      if (v <= lim) continue;
      const double need = (v * v - lim * lim) / (2.0 * d);
      if (need > 1.5) a = std::min(a, -need);
    }
    if (stop) {
      const double s_stop = stop(f, s, v);
      if (!std::isinf(s_stop)) {
        const double d = s_stop - s;
        if (d < 0.3) {
          a = std::min(a, -v / dt);
        } else {
          const double need = v * v / (2.0 * d);
          if (need > 1.5) a = std::min(a, -need);
          if (d < 3.0) a = std::min(a, 0.5 * (1.0 - v));
        }
      }
    }
    a = std::clamp(a, -4.0, 2.0);
    v = std::max(0.0, v + a * dt);
    s += v * dt;
  }
  return m;
}

/// Positions with a lateral weave, then rigid motion, then differenced
/// velocities and yaw.
Track to_track(int id, const Path& path, const Motion& m, double noise, double phase, double angle, Vec2 shift) {
  const double c = std::cos(angle), sn = std::sin(angle);
  std::vector<Vec2> world;
  for (double s : m.s) {
    const Vec2 p = path.at(s);
    const Vec2 t = path.tangent(s);
    const double off = noise * std::sin(2.0 * std::numbers::pi * s / 25.0 + phase);
    const Vec2 q{p.x - t.y * off, p.y + t.x * off};
    world.push_back({c * q.x - sn * q.y + shift.x, sn * q.x + c * q.y + shift.y});
  }
  Track track{id, 0, {}};
  const Vec2 t0 = path.tangent(m.s.front());
  double psi = wrap_angle(std::atan2(t0.y, t0.x) + angle);
  for (std::size_t f = 0; f + 1 < world.size(); ++f) {
    const double vx = (world[f + 1].x - world[f].x) / kFramePeriod;
    const double vy = (world[f + 1].y - world[f].y) / kFramePeriod;
    if (std::hypot(vx, vy) > 0.1) psi = std::atan2(vy, vx);
    track.states.push_back({world[f].x, world[f].y, vx, vy, psi});
  }
  return track;
}

struct Actor {
  Path path;
  Motion motion;
};

SyntheticScene straight_scene(const SyntheticSceneSpec& spec, Rng& rng, std::vector<Actor>& actors) {
  SyntheticScene out;
  out.map.capsules.push_back({{-150.0, 0.0}, {450.0, 0.0}, 6.0});
  const double lanes[] = {-3.5, 0.0, 3.5};
  for (int i = 0; i <= spec.n_neighbors; ++i) {
    const double y = i == 0 ? 0.0 : lanes[std::uniform_int_distribution<int>(0, 2)(rng)];
    const double x = i == 0 ? 0.0 : uniform(rng, -30.0, 30.0);
    const double v = uniform(rng, 8.0, 14.0);
    Path path({x - 10.0, y});
    path.line_to({x + 400.0, y});
    Motion m;
    for (int f = 0; f <= spec.frames; ++f) m.s.push_back(10.0 + v * f * kFramePeriod);
    actors.push_back({std::move(path), std::move(m)});
  }
  return out;
}

SyntheticScene intersection_scene(const SyntheticSceneSpec& spec, Rng& rng, std::vector<Actor>& actors) {
  SyntheticScene out;
  out.turns_left = std::bernoulli_distribution(0.5)(rng);
  const double side = out.turns_left ? 1.0 : -1.0;
  out.map.capsules.push_back({{-400.0, 0.0}, {0.0, 0.0}, 4.0});
  out.map.capsules.push_back({{0.0, 0.0}, {150.0, 0.0}, 4.0});
  out.map.capsules.push_back({{0.0, 0.0}, {0.0, side * 300.0}, 4.0});

  const double v_des = uniform(rng, 8.0, 12.0);
  const double t_arrive = uniform(rng, 3.0, 8.0);
  const double x_turn = -7.0;
  Path ego({x_turn - v_des * t_arrive - 5.0, -kLane});
  ego.line_to({x_turn, -kLane});
  if (out.turns_left) {
    const double r = 8.75;
    ego.arc({x_turn, -kLane + r}, r, -std::numbers::pi / 2, 0.0);
    ego.line_to({kLane, 300.0});
  } else {
    const double r = 5.25;
    ego.arc({x_turn, -kLane - r}, r, std::numbers::pi / 2, 0.0);
    ego.line_to({-kLane, -300.0});
  }

  struct Cross {
    double x0, v;
  };
  std::vector<double> arrivals;
  for (int i = 0; i < spec.n_neighbors; ++i) arrivals.push_back(t_arrive + 0.6 + uniform(rng, -3.0, 3.0));
  std::sort(arrivals.begin(), arrivals.end());
  for (std::size_t i = 1; i < arrivals.size(); ++i) arrivals[i] = std::max(arrivals[i], arrivals[i - 1] + 1.2);
  std::vector<Cross> cross;
  for (double t : arrivals) {
    const double v = uniform(rng, 8.0, 11.0);
    cross.push_back({4.5 + v * t, v});
  }

  constexpr double kBox = 4.5;
  const auto in_box = [](Vec2 p) { return std::abs(p.x) < kBox && std::abs(p.y) < kBox; };
  const double s_box_in = ego.first_where(in_box);
  const double s_box_out = ego.first_where([&](Vec2 p) { return !in_box(p); }, s_box_in);
  const double s_stop = ego.first_where([](Vec2 p) { return p.x >= -9.0; });

  StopRule rule;
  if (out.turns_left) {
    rule = [&, committed = false](int frame, double s, double v) mutable -> double {
      if (committed || s > s_stop + 0.5) {
        committed = true;
        return kInf;
      }
      const double now = frame * kFramePeriod;
      const double v_eff = std::max(v, 3.0);
      const double t_in = (s_box_in - s) / v_eff;
      const double t_out = t_in + (s_box_out - s_box_in) / 4.0;
      bool conflict = false;
      for (const Cross& c : cross) {
        const double x = c.x0 - c.v * now;
        const double c_in = (x - kBox) / c.v;
        const double c_out = (x + kBox + 4.5) / c.v;
        if (c_out > 0.0 && t_in - 1.0 < c_out && c_in < t_out + 1.0) conflict = true;
      }
      if (!conflict) return kInf;
      if (v * v / (2.0 * std::max(s_stop - s, 0.01)) > 4.0) {
        committed = true;
        return kInf;
      }
      return s_stop;
    };
  }
  Motion m = drive(ego, 0.0, v_des, v_des, spec.frames, rule);
  actors.push_back({std::move(ego), std::move(m)});

  for (const Cross& c : cross) {
    Path path({c.x0, kLane});
    path.line_to({c.x0 - 600.0, kLane});
    Motion cm;
    for (int f = 0; f <= spec.frames; ++f) cm.s.push_back(c.v * f * kFramePeriod);
    actors.push_back({std::move(path), std::move(cm)});
  }
  return out;
}

SyntheticScene roundabout_scene(const SyntheticSceneSpec& spec, Rng& rng, std::vector<Actor>& actors) {
  SyntheticScene out;
  constexpr double kRing = 14.0;
  out.map.annuli.push_back({{0.0, 0.0}, 10.0, 18.0});
  for (int k = 0; k < 4; ++k) {
    const double a = k * std::numbers::pi / 2;
    out.map.capsules.push_back({{16.0 * std::cos(a), 16.0 * std::sin(a)}, {300.0 * std::cos(a), 300.0 * std::sin(a)}, 4.0});
  }
  for (int i = 0; i <= spec.n_neighbors; ++i) {
    const int entry = std::uniform_int_distribution<int>(0, 3)(rng);
    const int turns = std::uniform_int_distribution<int>(1, 3)(rng);
    const double a0 = entry * std::numbers::pi / 2;
    const double a1 = a0 + turns * std::numbers::pi / 2;
    Path path({70.0 * std::cos(a0), 70.0 * std::sin(a0)});
    path.line_to({kRing * std::cos(a0), kRing * std::sin(a0)});
    path.arc({0.0, 0.0}, kRing, a0, a1);
    path.line_to({300.0 * std::cos(a1), 300.0 * std::sin(a1)});
    const double v_des = uniform(rng, 7.0, 11.0);
    const double s0 = uniform(rng, 0.0, 30.0);
    Motion m = drive(path, s0, v_des, v_des, spec.frames, {});
    actors.push_back({std::move(path), std::move(m)});
  }
  return out;
}

}  // namespace

SyntheticScene generate_scene(const SyntheticSceneSpec& spec) {
  if (spec.n_neighbors < 0) throw ContractError("n_neighbors must be non-negative");
  if (spec.frames < 2) throw ContractError("a scene needs at least two frames");
  Rng rng(spec.seed);
  std::vector<Actor> actors;
  SyntheticScene out;
  switch (spec.kind) {
    case SceneKind::Straight: out = straight_scene(spec, rng, actors); break;
    case SceneKind::Intersection: out = intersection_scene(spec, rng, actors); break;
    case SceneKind::Roundabout: out = roundabout_scene(spec, rng, actors); break;
  }
  const double angle = uniform(rng, -std::numbers::pi, std::numbers::pi);
  const Vec2 shift{uniform(rng, -300.0, 300.0), uniform(rng, -300.0, 300.0)};
  out.scene.scene_id = spec.scene_id;
  out.scene.case_key = spec.case_key;
  for (std::size_t i = 0; i < actors.size(); ++i) {
    const double phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    out.scene.tracks.push_back(
        to_track(static_cast<int>(i) + 1, actors[i].path, actors[i].motion, spec.noise, phase, angle, shift));
  }
  out.map = out.map.transformed(angle, shift);
  return out;
}

WorldRaster rasterize_scene(const SyntheticScene& s, double margin, double resolution) {
  double x0 = kInf, y0 = kInf, x1 = -kInf, y1 = -kInf;
  for (const Track& t : s.scene.tracks) {
    for (const VehicleState& st : t.states) {
      x0 = std::min(x0, st.x);
      y0 = std::min(y0, st.y);
      x1 = std::max(x1, st.x);
      y1 = std::max(y1, st.y);
    }
  }
  return s.map.rasterize(x0 - margin, y0 - margin, x1 + margin, y1 + margin, resolution);
}

std::vector<SyntheticScene> generate_scenes(const SyntheticDatasetSpec& spec) {
  if (spec.min_neighbors < 0 || spec.max_neighbors < spec.min_neighbors) {
    throw ContractError("neighbor range must satisfy 0 <= min <= max");
  }
  Rng rng(spec.seed);
  std::vector<SyntheticScene> scenes;
  for (std::size_t i = 0; i < spec.scenes; ++i) {
    SyntheticSceneSpec s;
    s.kind = spec.kind;
    s.n_neighbors = std::uniform_int_distribution<int>(spec.min_neighbors, spec.max_neighbors)(rng);
    s.noise = spec.noise;
    s.seed = rng();
    s.frames = spec.frames;
    s.scene_id = static_cast<int>(spec.kind);
    s.case_key = fmt::format("{}/{}", to_string(spec.kind), i);
    scenes.push_back(generate_scene(s));
  }
  return scenes;
}

std::vector<Sample> synthesize_samples(const SyntheticDatasetSpec& spec) {
  std::vector<Sample> out;
  for (const SyntheticScene& s : generate_scenes(spec)) {
    std::vector<Sample> part = make_samples(s.scene, s.map, spec.window);
    std::move(part.begin(), part.end(), std::back_inserter(out));
  }
  return out;
}

}  // namespace recog
