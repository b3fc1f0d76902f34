#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace recog {

inline constexpr std::size_t kRasterSize = 160;
inline constexpr double kMetersPerPixel = 0.25;
inline constexpr double kFramePeriod = 0.1;  // seconds, 10 Hz
inline constexpr double kNeighborRadius = 20.0;

/// Wraps an angle into (-pi, pi].
double wrap_angle(double a);

struct VehicleState {
  double x = 0.0;
  double y = 0.0;
  double vx = 0.0;
  double vy = 0.0;
  double psi = 0.0;

  bool operator==(const VehicleState&) const = default;
};

struct Pose {
  double x = 0.0;
  double y = 0.0;
  double psi = 0.0;
};

inline Pose pose_of(const VehicleState& s) { return {s.x, s.y, s.psi}; }

/// Translates by -(x0, y0), rotates positions and velocities by -psi0 and
/// shifts yaw by -psi0.
VehicleState to_target_frame(const VehicleState& s, const Pose& target);
VehicleState from_target_frame(const VehicleState& s, const Pose& target);
std::vector<VehicleState> to_target_frame(std::span<const VehicleState> states, const Pose& target);

/// Keeps (x, y), (x, y, vx, vy) or (x, y, vx, vy, psi) per state, flattened.
std::vector<double> slice_state(std::span<const VehicleState> states, int dims);
void check_state_dims(int dims);

/// Anything that can report a map intensity in [0, 1] at a world position.
class MapSource {
 public:
  virtual ~MapSource() = default;
  virtual double value_at(double x, double y) const = 0;
};

/// A gridded world map. Row 0 is the top edge (largest y), origin is the world
/// position of the top-left corner, lookups are nearest-cell.
struct WorldRaster : MapSource {
  std::size_t width = 0;
  std::size_t height = 0;
  double resolution = kMetersPerPixel;
  double origin_x = 0.0;
  double origin_y = 0.0;
  std::vector<std::uint8_t> levels;  // row-major, 0..255

  double value_at(double x, double y) const override;
};

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

/// Drivable area described by primitives: capsules (thick segments) and
/// annuli. Exact under rigid motion.
struct GeometricMap : MapSource {
  struct Capsule {
    Vec2 a, b;
    double half_width;
  };
  struct Annulus {
    Vec2 center;
    double r_inner, r_outer;
  };
  std::vector<Capsule> capsules;
  std::vector<Annulus> annuli;

  double value_at(double x, double y) const override;

  /// Rotates by `angle` about the world origin, then translates.
  GeometricMap transformed(double angle, Vec2 shift) const;

  /// Samples cell centers into a world raster covering [x0, x1] x [y0, y1].
  WorldRaster rasterize(double x0, double y0, double x1, double y1, double resolution) const;
};

/// The 160 x 160 local map around a target, x-axis along its heading.
/// Row 0 is furthest to the left of the target, column 0 furthest behind.
struct MapRaster {
  std::vector<std::uint8_t> levels = std::vector<std::uint8_t>(kRasterSize * kRasterSize, 0);

  double value(std::size_t row, std::size_t col) const { return levels[row * kRasterSize + col] / 255.0; }
  bool operator==(const MapRaster&) const = default;
};

/// Target-frame coordinates (forward, left) of a raster cell center.
Vec2 raster_cell_center(std::size_t row, std::size_t col);

MapRaster crop_map(const MapSource& source, const Pose& target);

struct Track {
  int id = 0;
  int first_frame = 0;
  std::vector<VehicleState> states;  // one per 100 ms frame

  int last_frame() const { return first_frame + static_cast<int>(states.size()) - 1; }
  bool covers(int from, int to) const { return from >= first_frame && to <= last_frame(); }
  const VehicleState& at(int frame) const;
};

/// All tracks recorded in one case of one location.
struct Scene {
  int scene_id = 0;  // location index, used for per-scene grouping
  std::string case_key;
  std::vector<Track> tracks;  // ascending id
};

struct WindowSpec {
  std::size_t history = 30;  // T_h
  std::size_t future = 50;   // T_f
  std::size_t stride = 10;
};

std::size_t window_count(std::size_t track_length, const WindowSpec& spec);

/// Vehicles within kNeighborRadius (inclusive) of the target at `frame`,
/// ascending id, target excluded.
std::vector<int> select_neighbors(const Scene& scene, int frame, int target_id,
                                  double radius = kNeighborRadius);

struct SamplePrecursor {
  int target_id = 0;
  int current_frame = 0;          // last history frame
  std::vector<int> neighbor_ids;  // ascending, full history only
};

std::vector<SamplePrecursor> segment_tracks(const Scene& scene, const WindowSpec& spec);

/// Model input for one target at one time, in the target frame.
struct Sample {
  std::vector<int> vehicle_ids;                    // target first
  std::vector<std::vector<VehicleState>> histories;  // per vehicle, T_h states
  MapRaster map;
  std::vector<Vec2> future;  // T_f target positions
  int scene_id = 0;
  std::string case_key;
  int current_frame = 0;
  Pose pose;  // world pose of the target at the current frame

  std::size_t history_length() const { return histories.front().size(); }
  std::size_t future_length() const { return future.size(); }
  std::size_t vehicle_count() const { return histories.size(); }

  /// Throws std::invalid_argument when an invariant is violated.
  void validate(std::size_t t_h, std::size_t t_f) const;
};

Sample build_sample(const Scene& scene, const SamplePrecursor& pre, const MapSource& map,
                    const WindowSpec& spec);

std::vector<Sample> make_samples(const Scene& scene, const MapSource& map, const WindowSpec& spec);

/// Converts target-frame points back to world coordinates.
std::vector<Vec2> to_world(std::span<const Vec2> points, const Pose& target);

}  // namespace recog
