#include "recog/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include <fmt/format.h>

#include "recog/tensor.hpp"

namespace recog {

double wrap_angle(double a) {
  double r = std::remainder(a, 2.0 * std::numbers::pi);
  if (r <= -std::numbers::pi) r += 2.0 * std::numbers::pi;
  return r;
}

VehicleState to_target_frame(const VehicleState& s, const Pose& target) {
  const double c = std::cos(target.psi);
  const double sn = std::sin(target.psi);
  const double dx = s.x - target.x;
  const double dy = s.y - target.y;
  return {c * dx + sn * dy, -sn * dx + c * dy, c * s.vx + sn * s.vy, -sn * s.vx + c * s.vy,
          wrap_angle(s.psi - target.psi)};
}

VehicleState from_target_frame(const VehicleState& s, const Pose& target) {
  const double c = std::cos(target.psi);
  const double sn = std::sin(target.psi);
  return {target.x + c * s.x - sn * s.y, target.y + sn * s.x + c * s.y, c * s.vx - sn * s.vy,
          sn * s.vx + c * s.vy, wrap_angle(s.psi + target.psi)};
}

std::vector<VehicleState> to_target_frame(std::span<const VehicleState> states, const Pose& target) {
  std::vector<VehicleState> out;
  out.reserve(states.size());
  for (const VehicleState& s : states) out.push_back(to_target_frame(s, target));
  return out;
}

void check_state_dims(int dims) {
  if (dims != 2 && dims != 4 && dims != 5) {
    throw ContractError(fmt::format("state dims must be 2, 4 or 5, got {}", dims));
  }
}

std::vector<double> slice_state(std::span<const VehicleState> states, int dims) {
  check_state_dims(dims);
  std::vector<double> out;
  out.reserve(states.size() * dims);
  for (const VehicleState& s : states) {
    out.push_back(s.x);
    out.push_back(s.y);
    if (dims >= 4) {
      out.push_back(s.vx);
      out.push_back(s.vy);
    }
    if (dims == 5) out.push_back(s.psi);
  }
  return out;
}

double WorldRaster::value_at(double x, double y) const {
  const double c = std::floor((x - origin_x) / resolution);
  const double r = std::floor((origin_y - y) / resolution);
  if (c < 0 || r < 0 || c >= static_cast<double>(width) || r >= static_cast<double>(height)) return 0.0;
  return levels[static_cast<std::size_t>(r) * width + static_cast<std::size_t>(c)] / 255.0;
}

double GeometricMap::value_at(double x, double y) const {
  for (const Capsule& k : capsules) {
    const double ex = k.b.x - k.a.x;
    const double ey = k.b.y - k.a.y;
    const double len2 = ex * ex + ey * ey;
    double t = len2 > 0 ? ((x - k.a.x) * ex + (y - k.a.y) * ey) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double dx = x - (k.a.x + t * ex);
    const double dy = y - (k.a.y + t * ey);
    if (dx * dx + dy * dy <= k.half_width * k.half_width) return 1.0;
  }
  for (const Annulus& a : annuli) {
    const double d = std::hypot(x - a.center.x, y - a.center.y);
    if (d >= a.r_inner && d <= a.r_outer) return 1.0;
  }
  return 0.0;
}

GeometricMap GeometricMap::transformed(double angle, Vec2 shift) const {
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  const auto move = [&](Vec2 p) { return Vec2{c * p.x - s * p.y + shift.x, s * p.x + c * p.y + shift.y}; };
  GeometricMap out;
  for (const Capsule& k : capsules) out.capsules.push_back({move(k.a), move(k.b), k.half_width});
  for (const Annulus& a : annuli) out.annuli.push_back({move(a.center), a.r_inner, a.r_outer});
  return out;
}

WorldRaster GeometricMap::rasterize(double x0, double y0, double x1, double y1, double resolution) const {
  WorldRaster r;
  r.resolution = resolution;
  r.origin_x = x0;
  r.origin_y = y1;
  r.width = static_cast<std::size_t>(std::ceil((x1 - x0) / resolution));
  r.height = static_cast<std::size_t>(std::ceil((y1 - y0) / resolution));
  r.levels.assign(r.width * r.height, 0);
  for (std::size_t row = 0; row < r.height; ++row) {
    for (std::size_t col = 0; col < r.width; ++col) {
      const double x = x0 + (col + 0.5) * resolution;
      const double y = y1 - (row + 0.5) * resolution;
      r.levels[row * r.width + col] = static_cast<std::uint8_t>(std::lround(value_at(x, y) * 255.0));
    }
  }
  return r;
}

Vec2 raster_cell_center(std::size_t row, std::size_t col) {
  const double half = kRasterSize / 2.0;
  return {(col + 0.5 - half) * kMetersPerPixel, (half - row - 0.5) * kMetersPerPixel};
}

MapRaster crop_map(const MapSource& source, const Pose& target) {
  MapRaster out;
  const double c = std::cos(target.psi);
  const double s = std::sin(target.psi);
  for (std::size_t row = 0; row < kRasterSize; ++row) {
    for (std::size_t col = 0; col < kRasterSize; ++col) {
      const Vec2 p = raster_cell_center(row, col);
      const double v = source.value_at(target.x + c * p.x - s * p.y, target.y + s * p.x + c * p.y);
      out.levels[row * kRasterSize + col] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
    }
  }
  return out;
}

const VehicleState& Track::at(int frame) const {
  if (frame < first_frame || frame > last_frame()) {
    throw std::out_of_range(fmt::format("track {} has no frame {}", id, frame));
  }
  return states[static_cast<std::size_t>(frame - first_frame)];
}

std::size_t window_count(std::size_t track_length, const WindowSpec& spec) {
  if (spec.history < 1 || spec.future < 1 || spec.stride < 1) {
    throw ContractError("history, future and stride must be at least 1");
  }
  const std::size_t span = spec.history + spec.future;
  if (track_length < span) return 0;
  return (track_length - span) / spec.stride + 1;
}

std::vector<int> select_neighbors(const Scene& scene, int frame, int target_id, double radius) {
  const Track* target = nullptr;
  for (const Track& t : scene.tracks) {
    if (t.id == target_id) target = &t;
  }
  if (target == nullptr || !target->covers(frame, frame)) {
    throw ContractError(fmt::format("target {} is not present at frame {}", target_id, frame));
  }
  const VehicleState& me = target->at(frame);
  std::vector<int> ids;
  for (const Track& t : scene.tracks) {
    if (t.id == target_id || !t.covers(frame, frame)) continue;
    const VehicleState& o = t.at(frame);
    if (std::hypot(o.x - me.x, o.y - me.y) <= radius) ids.push_back(t.id);
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::vector<SamplePrecursor> segment_tracks(const Scene& scene, const WindowSpec& spec) {
  std::vector<SamplePrecursor> out;
  const int th = static_cast<int>(spec.history);
  for (const Track& target : scene.tracks) {
    const std::size_t n = window_count(target.states.size(), spec);
    for (std::size_t w = 0; w < n; ++w) {
      SamplePrecursor pre;
      pre.target_id = target.id;
      pre.current_frame = target.first_frame + static_cast<int>(w * spec.stride) + th - 1;
      for (int id : select_neighbors(scene, pre.current_frame, target.id)) {
        const auto it = std::find_if(scene.tracks.begin(), scene.tracks.end(), [&](const Track& t) { return t.id == id; });
        if (it->covers(pre.current_frame - th + 1, pre.current_frame)) pre.neighbor_ids.push_back(id);
      }
      out.push_back(std::move(pre));
    }
  }
  return out;
}

void Sample::validate(std::size_t t_h, std::size_t t_f) const {
  if (histories.empty()) throw std::invalid_argument("sample has no target history");
  if (vehicle_ids.size() != histories.size()) throw std::invalid_argument("sample vehicle ids do not match histories");
  for (const auto& h : histories) {
    if (h.size() != t_h) {
      throw std::invalid_argument(fmt::format("history has {} states, expected {}", h.size(), t_h));
    }
    for (const VehicleState& s : h) {
      if (!std::isfinite(s.x) || !std::isfinite(s.y) || !std::isfinite(s.vx) || !std::isfinite(s.vy) ||
          !std::isfinite(s.psi)) {
        throw std::invalid_argument("sample contains a non-finite state");
      }
    }
  }
  if (future.size() != t_f) {
    throw std::invalid_argument(fmt::format("future has {} points, expected {}", future.size(), t_f));
  }
  for (const Vec2& p : future) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y)) throw std::invalid_argument("sample future is not finite");
  }
  const VehicleState& now = histories.front().back();
  if (std::abs(now.x) > 1e-9 || std::abs(now.y) > 1e-9 || std::abs(now.psi) > 1e-9) {
    throw std::invalid_argument("target's current state is not at the frame origin");
  }
  if (map.levels.size() != kRasterSize * kRasterSize) throw std::invalid_argument("raster is not 160 x 160");
}

Sample build_sample(const Scene& scene, const SamplePrecursor& pre, const MapSource& map, const WindowSpec& spec) {
  const auto find = [&](int id) -> const Track& {
    for (const Track& t : scene.tracks) {
      if (t.id == id) return t;
    }
    throw std::out_of_range(fmt::format("scene has no track {}", id));
  };
  const Track& target = find(pre.target_id);
  const int th = static_cast<int>(spec.history);
  const int tf = static_cast<int>(spec.future);
  Sample s;
  s.scene_id = scene.scene_id;
  s.case_key = scene.case_key;
  s.current_frame = pre.current_frame;
  s.pose = pose_of(target.at(pre.current_frame));
  std::vector<int> ids{pre.target_id};
  ids.insert(ids.end(), pre.neighbor_ids.begin(), pre.neighbor_ids.end());
  for (int id : ids) {
    const Track& t = find(id);
    std::vector<VehicleState> h;
    for (int f = pre.current_frame - th + 1; f <= pre.current_frame; ++f) h.push_back(to_target_frame(t.at(f), s.pose));
    s.histories.push_back(std::move(h));
  }
  s.vehicle_ids = std::move(ids);
  for (int f = pre.current_frame + 1; f <= pre.current_frame + tf; ++f) {
    const VehicleState p = to_target_frame(target.at(f), s.pose);
    s.future.push_back({p.x, p.y});
  }
  s.map = crop_map(map, s.pose);
  s.validate(spec.history, spec.future);
  return s;
}

std::vector<Sample> make_samples(const Scene& scene, const MapSource& map, const WindowSpec& spec) {
  std::vector<Sample> out;
  for (const SamplePrecursor& pre : segment_tracks(scene, spec)) out.push_back(build_sample(scene, pre, map, spec));
  return out;
}

std::vector<Vec2> to_world(std::span<const Vec2> points, const Pose& target) {
  std::vector<Vec2> out;
  out.reserve(points.size());
  for (const Vec2& p : points) {
    const VehicleState w = from_target_frame({p.x, p.y, 0, 0, 0}, target);
    out.push_back({w.x, w.y});
  }
  return out;
}

}  // namespace recog
