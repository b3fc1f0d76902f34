#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "recog/geometry.hpp"

namespace recog {

/// A required column is missing or a file does not follow its format.
class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A cell could not be read as the expected type.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& file, std::size_t line, const std::string& what);
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

struct TrackFileRow {
  int case_id = 0;
  int track_id = 0;
  int frame_id = 0;
  std::int64_t timestamp_ms = 0;
  std::string agent_type = "car";
  double x = 0.0;
  double y = 0.0;
  double vx = 0.0;
  double vy = 0.0;
  double psi_rad = 0.0;
  double length = 4.5;
  double width = 1.8;

  bool operator==(const TrackFileRow&) const = default;
};

/// Column order written by write_track_file.
inline constexpr const char* kTrackColumns[] = {"case_id", "track_id", "frame_id", "timestamp_ms", "agent_type", "x",
                                                "y",       "vx",       "vy",       "psi_rad",      "length",     "width"};

std::vector<TrackFileRow> parse_track_file(const std::filesystem::path& path);
std::vector<TrackFileRow> parse_tracks(std::istream& in, const std::string& name);
void write_track_file(const std::filesystem::path& path, std::span<const TrackFileRow> rows);
void write_tracks(std::ostream& out, std::span<const TrackFileRow> rows);

/// Groups vehicle rows by case into scenes. Rows of one track must be 100 ms
/// apart with consecutive frame ids. Pedestrian and bicycle rows are skipped.
std::vector<Scene> group_scenes(std::span<const TrackFileRow> rows, int scene_id, const std::string& location);

std::vector<TrackFileRow> scene_rows(const Scene& scene, int case_id);

/// Binary portable graymap (P5). A "# recog <origin_x> <origin_y> <resolution>"
/// comment carries the world placement of the top-left corner.
WorldRaster read_pgm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const WorldRaster& raster);

/// Scene-disjoint split by case key. Keys are ordered by a seeded hash and the
/// first round(ratio * keys) go to training.
struct SplitResult {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

SplitResult split_dataset(std::span<const Sample> samples, double ratio, std::uint64_t seed);

/// 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view text, std::uint64_t seed = 0);

/// Directory of per-sample binary records plus manifest.txt.
///
/// Record layout (little-endian):
///   "RECOGSMP" magic, u32 version = 1,
///   i32 scene_id, string case_key, i32 current_frame,
///   f64 pose x, y, psi,
///   u32 T_h, u32 T_f, u32 n_vehicles, n_vehicles x i32 vehicle id,
///   n_vehicles x T_h x (f32 x, y, vx, vy, psi),
///   T_f x (f32 x, y),
///   160 x 160 u8 raster, row-major
/// where string = u32 byte length + raw bytes.
struct SampleSet {
  std::size_t history = 0;
  std::size_t future = 0;
  int state_dims = 5;
  std::vector<Sample> samples;
};

void save_sample_set(const std::filesystem::path& dir, const SampleSet& set);
SampleSet load_sample_set(const std::filesystem::path& dir);

void write_sample(std::ostream& out, const Sample& s);
Sample read_sample(std::istream& in);

}  // namespace recog
