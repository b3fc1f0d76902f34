#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "recog/geometry.hpp"

namespace recog {

enum class SceneKind { Straight, Intersection, Roundabout };

std::string to_string(SceneKind k);
SceneKind parse_scene_kind(const std::string& text);

struct SyntheticSceneSpec {
  SceneKind kind = SceneKind::Intersection;
  int n_neighbors = 2;  // vehicles besides the ego
  double noise = 0.0;   // lateral weave amplitude, meters
  std::uint64_t seed = 1;
  int frames = 150;
  int scene_id = 0;
  std::string case_key = "synthetic/0";
};

/// Scenes are generated in a local frame and then placed by a random rigid
/// motion. Track 1 is the ego.
///
/// Straight: parallel lanes, constant velocity.
/// Intersection: a T-junction. The ego comes from the west arm and turns into
/// the single side arm, which the map reveals. It yields to westbound cross
/// traffic before a left turn and slows for the curve.
/// Roundabout: vehicles enter the ring from an arm and leave by another.
struct SyntheticScene {
  Scene scene;
  GeometricMap map;  // world frame
  bool turns_left = false;  // intersection only
};

SyntheticScene generate_scene(const SyntheticSceneSpec& spec);

/// World raster of the scene map over the track bounding box plus `margin`.
WorldRaster rasterize_scene(const SyntheticScene& s, double margin = 25.0,
                            double resolution = kMetersPerPixel);

struct SyntheticDatasetSpec {
  SceneKind kind = SceneKind::Intersection;
  std::size_t scenes = 60;
  int min_neighbors = 0;
  int max_neighbors = 3;
  double noise = 0.0;
  std::uint64_t seed = 1;
  int frames = 150;
  WindowSpec window{10, 30, 10};
};

std::vector<SyntheticScene> generate_scenes(const SyntheticDatasetSpec& spec);
std::vector<Sample> synthesize_samples(const SyntheticDatasetSpec& spec);

}  // namespace recog
