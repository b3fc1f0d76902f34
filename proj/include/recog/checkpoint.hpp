#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "recog/tensor.hpp"

namespace recog {

/// Checkpoint archive layout (all integers little-endian):
///
///   "RECOGCKP"                       8-byte magic
///   u32 schema_version               currently 1
///   u32 n_metadata, then n_metadata x (string key, string value)
///   u32 n_entries, then per entry:
///     string name, u32 rank, rank x u32 dim, prod(dims) x f32 value
///
/// where string = u32 byte length + raw bytes.
struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

struct Checkpoint {
  static constexpr std::uint32_t kSchemaVersion = 1;

  std::uint32_t schema_version = kSchemaVersion;
  std::map<std::string, std::string> metadata;
  std::vector<CheckpointEntry> entries;

  void add(const std::string& name, const Shape& shape, std::span<const double> values);
  const CheckpointEntry& at(const std::string& name) const;

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);
};

}  // namespace recog
