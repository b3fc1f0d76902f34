#include "recog/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <fmt/format.h>

#include "recog/binary_io.hpp"

namespace recog {

namespace {
constexpr char kMagic[8] = {'R', 'E', 'C', 'O', 'G', 'C', 'K', 'P'};
}

void Checkpoint::add(const std::string& name, const Shape& shape, std::span<const double> values) {
  CheckpointEntry e{name, shape, {}};
  e.values.reserve(values.size());
  for (double v : values) e.values.push_back(static_cast<float>(v));
  entries.push_back(std::move(e));
}

const CheckpointEntry& Checkpoint::at(const std::string& name) const {
  for (const CheckpointEntry& e : entries) {
    if (e.name == name) return e;
  }
  throw binio::FormatError("checkpoint has no entry '" + name + "'");
}

void Checkpoint::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out.write(kMagic, sizeof(kMagic));
  binio::put_u32(out, schema_version);
  binio::put_u32(out, static_cast<std::uint32_t>(metadata.size()));
  for (const auto& [key, value] : metadata) {
    binio::put_string(out, key);
    binio::put_string(out, value);
  }
  binio::put_u32(out, static_cast<std::uint32_t>(entries.size()));
  for (const CheckpointEntry& e : entries) {
    binio::put_string(out, e.name);
    binio::put_u32(out, static_cast<std::uint32_t>(e.shape.size()));
    for (std::size_t d : e.shape) binio::put_u32(out, static_cast<std::uint32_t>(d));
    for (float v : e.values) binio::put_f32(out, v);
  }
  if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  char magic[8];
  binio::read_exact(in, magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(magic)) != 0) {
    throw binio::FormatError(path.string() + " is not a checkpoint archive");
  }
  Checkpoint ckpt;
  ckpt.schema_version = binio::get_u32(in);
  if (ckpt.schema_version != kSchemaVersion) {
    throw binio::FormatError(fmt::format("{}: unsupported checkpoint schema {}", path.string(), ckpt.schema_version));
  }
  const std::uint32_t n_meta = binio::get_u32(in);
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    std::string key = binio::get_string(in);
    ckpt.metadata[key] = binio::get_string(in);
  }
  const std::uint32_t n_entries = binio::get_u32(in);
  for (std::uint32_t i = 0; i < n_entries; ++i) {
    CheckpointEntry e;
    e.name = binio::get_string(in);
    const std::uint32_t rank = binio::get_u32(in);
    if (rank > 8) throw binio::FormatError(fmt::format("entry '{}' has rank {}", e.name, rank));
    std::size_t n = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      e.shape.push_back(binio::get_u32(in));
      n *= e.shape.back();
    }
    if (n > (std::size_t{1} << 28)) throw binio::FormatError(fmt::format("entry '{}' is implausibly large", e.name));
    e.values.resize(n);
    for (float& v : e.values) v = binio::get_f32(in);
    ckpt.entries.push_back(std::move(e));
  }
  return ckpt;
}

}  // namespace recog
