#include "recog/data_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include <fmt/format.h>

#include "recog/binary_io.hpp"
#include "recog/tensor.hpp"

namespace recog {

ParseError::ParseError(const std::string& file, std::size_t line, const std::string& what)
    : std::runtime_error(fmt::format("{}:{}: {}", file, line, what)), line_(line) {}

namespace {

std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    std::string_view cell = line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start);
    while (!cell.empty() && (cell.front() == ' ' || cell.front() == '"')) cell.remove_prefix(1);
    while (!cell.empty() && (cell.back() == ' ' || cell.back() == '"' || cell.back() == '\r')) cell.remove_suffix(1);
    cells.push_back(cell);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return cells;
}

template <typename T>
T parse_number(std::string_view cell, const std::string& file, std::size_t line, const char* column) {
  T v{};
  const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (ec != std::errc() || ptr != cell.data() + cell.size() || cell.empty()) {
    throw ParseError(file, line, fmt::format("column {}: '{}' is not a number", column, cell));
  }
  if constexpr (std::is_floating_point_v<T>) {
    if (!std::isfinite(v)) throw ParseError(file, line, fmt::format("column {}: '{}' is not finite", column, cell));
  }
  return v;
}

}  // namespace

std::vector<TrackFileRow> parse_tracks(std::istream& in, const std::string& name) {
  std::string line;
  std::size_t line_no = 0;
  std::vector<TrackFileRow> rows;
  if (!std::getline(in, line)) return rows;
  ++line_no;
  const auto header = split_csv(line);
  std::size_t col[std::size(kTrackColumns)];
  for (std::size_t k = 0; k < std::size(kTrackColumns); ++k) {
    const auto it = std::find(header.begin(), header.end(), kTrackColumns[k]);
    if (it == header.end()) throw SchemaError(fmt::format("{}: missing required column '{}'", name, kTrackColumns[k]));
    col[k] = static_cast<std::size_t>(it - header.begin());
  }
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv(line);
    if (cells.size() < header.size()) {
      throw ParseError(name, line_no, fmt::format("expected {} cells, found {}", header.size(), cells.size()));
    }
    TrackFileRow r;
    const auto cell = [&](std::size_t k) { return cells[col[k]]; };
    r.case_id = parse_number<int>(cell(0), name, line_no, kTrackColumns[0]);
    r.track_id = parse_number<int>(cell(1), name, line_no, kTrackColumns[1]);
    r.frame_id = parse_number<int>(cell(2), name, line_no, kTrackColumns[2]);
    r.timestamp_ms = parse_number<std::int64_t>(cell(3), name, line_no, kTrackColumns[3]);
    r.agent_type = std::string(cell(4));
    double* fields[] = {&r.x, &r.y, &r.vx, &r.vy, &r.psi_rad, &r.length, &r.width};
    for (std::size_t k = 0; k < 7; ++k) *fields[k] = parse_number<double>(cell(5 + k), name, line_no, kTrackColumns[5 + k]);
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<TrackFileRow> parse_track_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::ios_base::failure("cannot open track file " + path.string());
  return parse_tracks(in, path.string());
}

void write_tracks(std::ostream& out, std::span<const TrackFileRow> rows) {
  for (std::size_t k = 0; k < std::size(kTrackColumns); ++k) out << (k ? "," : "") << kTrackColumns[k];
  out << '\n';
  for (const TrackFileRow& r : rows) {
    out << fmt::format("{},{},{},{},{},{},{},{},{},{},{},{}\n", r.case_id, r.track_id, r.frame_id, r.timestamp_ms,
                       r.agent_type, r.x, r.y, r.vx, r.vy, r.psi_rad, r.length, r.width);
  }
}

void write_track_file(const std::filesystem::path& path, std::span<const TrackFileRow> rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::ios_base::failure("cannot write track file " + path.string());
  write_tracks(out, rows);
  if (!out) throw std::ios_base::failure("failed writing " + path.string());
}

std::vector<Scene> group_scenes(std::span<const TrackFileRow> rows, int scene_id, const std::string& location) {
  std::map<int, std::map<int, std::vector<const TrackFileRow*>>> by_case;
  for (const TrackFileRow& r : rows) {
    if (r.agent_type.find("pedestrian") != std::string::npos || r.agent_type.find("bicycle") != std::string::npos) continue;
    by_case[r.case_id][r.track_id].push_back(&r);
  }
  std::vector<Scene> scenes;
  for (auto& [case_id, tracks] : by_case) {
    Scene s;
    s.scene_id = scene_id;
    s.case_key = fmt::format("{}/{}", location, case_id);
    for (auto& [track_id, list] : tracks) {
      std::sort(list.begin(), list.end(), [](const TrackFileRow* a, const TrackFileRow* b) { return a->frame_id < b->frame_id; });
      Track t{track_id, list.front()->frame_id, {}};
      for (std::size_t i = 0; i < list.size(); ++i) {
        const TrackFileRow& r = *list[i];
        if (i > 0 && (r.frame_id != list[i - 1]->frame_id + 1 || r.timestamp_ms != list[i - 1]->timestamp_ms + 100)) {
          throw SchemaError(fmt::format("{} case {} track {}: frames {} and {} are not 100 ms apart", location, case_id,
                                        track_id, list[i - 1]->frame_id, r.frame_id));
        }
        t.states.push_back({r.x, r.y, r.vx, r.vy, wrap_angle(r.psi_rad)});
      }
      s.tracks.push_back(std::move(t));
    }
    scenes.push_back(std::move(s));
  }
  return scenes;
}

std::vector<TrackFileRow> scene_rows(const Scene& scene, int case_id) {
  std::vector<TrackFileRow> rows;
  for (const Track& t : scene.tracks) {
    for (std::size_t i = 0; i < t.states.size(); ++i) {
      const VehicleState& s = t.states[i];
      TrackFileRow r;
      r.case_id = case_id;
      r.track_id = t.id;
      r.frame_id = t.first_frame + static_cast<int>(i);
      r.timestamp_ms = static_cast<std::int64_t>(r.frame_id) * 100;
      r.x = s.x;
      r.y = s.y;
      r.vx = s.vx;
      r.vy = s.vy;
      r.psi_rad = s.psi;
      rows.push_back(r);
    }
  }
  std::stable_sort(rows.begin(), rows.end(), [](const TrackFileRow& a, const TrackFileRow& b) {
    return std::tie(a.frame_id, a.track_id) < std::tie(b.frame_id, b.track_id);
  });
  return rows;
}

WorldRaster read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::ios_base::failure("cannot open map " + path.string());
  WorldRaster r;
  std::string magic;
  in >> magic;
  if (magic != "P5") throw SchemaError(path.string() + " is not a binary graymap (P5)");
  bool placed = false;
  std::vector<long> numbers;
  while (numbers.size() < 3) {
    in >> std::ws;
    if (in.peek() == '#') {
      std::string comment;
      std::getline(in, comment);
      std::istringstream cs(comment);
      std::string hash, tag;
      if (cs >> hash >> tag && tag == "recog" && cs >> r.origin_x >> r.origin_y >> r.resolution) placed = true;
      continue;
    }
    long v = 0;
    if (!(in >> v)) throw SchemaError(path.string() + ": malformed graymap header");
    numbers.push_back(v);
  }
  if (numbers[0] <= 0 || numbers[1] <= 0 || numbers[2] <= 0 || numbers[2] > 255) {
    throw SchemaError(path.string() + ": unsupported graymap dimensions or depth");
  }
  in.get();
  r.width = static_cast<std::size_t>(numbers[0]);
  r.height = static_cast<std::size_t>(numbers[1]);
  if (!placed) {
    r.resolution = kMetersPerPixel;
    r.origin_x = 0.0;
    r.origin_y = r.height * r.resolution;
  }
  r.levels.resize(r.width * r.height);
  in.read(reinterpret_cast<char*>(r.levels.data()), static_cast<std::streamsize>(r.levels.size()));
  if (static_cast<std::size_t>(in.gcount()) != r.levels.size()) throw SchemaError(path.string() + ": truncated pixel data");
  if (numbers[2] != 255) {
    for (std::uint8_t& l : r.levels) l = static_cast<std::uint8_t>(std::lround(l * 255.0 / numbers[2]));
  }
  return r;
}

void write_pgm(const std::filesystem::path& path, const WorldRaster& raster) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::ios_base::failure("cannot write map " + path.string());
  out << "P5\n" << fmt::format("# recog {} {} {}\n", raster.origin_x, raster.origin_y, raster.resolution);
  out << raster.width << ' ' << raster.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(raster.levels.data()), static_cast<std::streamsize>(raster.levels.size()));
  if (!out) throw std::ios_base::failure("failed writing " + path.string());
}

std::uint64_t fnv1a(std::string_view text, std::uint64_t seed) {
  std::uint64_t h = 1469598103934665603ull ^ seed;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

SplitResult split_dataset(std::span<const Sample> samples, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw ContractError(fmt::format("split ratio {} must lie in (0, 1)", ratio));
  std::vector<std::string> keys;
  for (const Sample& s : samples) keys.push_back(s.case_key);
  std::sort(keys.begin(), keys.end());
  keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
  if (keys.size() < 2) throw ContractError(fmt::format("{} scene(s) cannot be split into non-empty parts", keys.size()));
  std::stable_sort(keys.begin(), keys.end(), [&](const std::string& a, const std::string& b) {
    return fnv1a(a, seed) < fnv1a(b, seed);
  });
  const std::size_t n_train = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(ratio * keys.size())), 1, keys.size() - 1);
  std::map<std::string, bool> is_train;
  for (std::size_t i = 0; i < keys.size(); ++i) is_train[keys[i]] = i < n_train;
  SplitResult out;
  for (std::size_t i = 0; i < samples.size(); ++i) (is_train[samples[i].case_key] ? out.train : out.val).push_back(i);
  return out;
}

namespace {
constexpr char kSampleMagic[8] = {'R', 'E', 'C', 'O', 'G', 'S', 'M', 'P'};
constexpr std::uint32_t kSampleVersion = 1;
}  // namespace

void write_sample(std::ostream& out, const Sample& s) {
  out.write(kSampleMagic, 8);
  binio::put_u32(out, kSampleVersion);
  binio::put_i32(out, s.scene_id);
  binio::put_string(out, s.case_key);
  binio::put_i32(out, s.current_frame);
  binio::put_f64(out, s.pose.x);
  binio::put_f64(out, s.pose.y);
  binio::put_f64(out, s.pose.psi);
  binio::put_u32(out, static_cast<std::uint32_t>(s.history_length()));
  binio::put_u32(out, static_cast<std::uint32_t>(s.future_length()));
  binio::put_u32(out, static_cast<std::uint32_t>(s.vehicle_count()));
  for (int id : s.vehicle_ids) binio::put_i32(out, id);
  for (const auto& h : s.histories) {
    for (const VehicleState& v : h) {
      for (double f : {v.x, v.y, v.vx, v.vy, v.psi}) binio::put_f32(out, static_cast<float>(f));
    }
  }
  for (const Vec2& p : s.future) {
    binio::put_f32(out, static_cast<float>(p.x));
    binio::put_f32(out, static_cast<float>(p.y));
  }
  out.write(reinterpret_cast<const char*>(s.map.levels.data()), static_cast<std::streamsize>(s.map.levels.size()));
}

Sample read_sample(std::istream& in) {
  char magic[8];
  binio::read_exact(in, magic, 8);
  if (!std::equal(magic, magic + 8, kSampleMagic)) throw binio::FormatError("not a sample record");
  const std::uint32_t version = binio::get_u32(in);
  if (version != kSampleVersion) throw binio::FormatError(fmt::format("unsupported sample version {}", version));
  Sample s;
  s.scene_id = binio::get_i32(in);
  s.case_key = binio::get_string(in);
  s.current_frame = binio::get_i32(in);
  s.pose.x = binio::get_f64(in);
  s.pose.y = binio::get_f64(in);
  s.pose.psi = binio::get_f64(in);
  const std::uint32_t th = binio::get_u32(in), tf = binio::get_u32(in), nv = binio::get_u32(in);
  if (th == 0 || tf == 0 || nv == 0 || th > 100000 || tf > 100000 || nv > 100000) {
    throw binio::FormatError("implausible sample dimensions");
  }
  for (std::uint32_t v = 0; v < nv; ++v) s.vehicle_ids.push_back(binio::get_i32(in));
  s.histories.assign(nv, std::vector<VehicleState>(th));
  for (auto& h : s.histories) {
    for (VehicleState& v : h) {
      v.x = binio::get_f32(in);
      v.y = binio::get_f32(in);
      v.vx = binio::get_f32(in);
      v.vy = binio::get_f32(in);
      v.psi = binio::get_f32(in);
    }
  }
  s.future.resize(tf);
  for (Vec2& p : s.future) {
    p.x = binio::get_f32(in);
    p.y = binio::get_f32(in);
  }
  binio::read_exact(in, reinterpret_cast<char*>(s.map.levels.data()), s.map.levels.size());
  s.validate(th, tf);
  return s;
}

void save_sample_set(const std::filesystem::path& dir, const SampleSet& set) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / "manifest.txt", std::ios::trunc);
  if (!manifest) throw std::ios_base::failure("cannot write manifest in " + dir.string());
  manifest << "# recog sample set v1\n";
  manifest << fmt::format("history {}\nfuture {}\ndims {}\ncount {}\n", set.history, set.future, set.state_dims,
                          set.samples.size());
  for (std::size_t i = 0; i < set.samples.size(); ++i) {
    const Sample& s = set.samples[i];
    const std::string file = fmt::format("sample_{:06d}.bin", i);
    std::ofstream out(dir / file, std::ios::binary | std::ios::trunc);
    if (!out) throw std::ios_base::failure("cannot write " + (dir / file).string());
    write_sample(out, s);
    if (!out) throw std::ios_base::failure("failed writing " + (dir / file).string());
    manifest << fmt::format("{} {} {} {} {}\n", file, s.scene_id, s.case_key, s.current_frame, s.vehicle_count());
  }
  if (!manifest) throw std::ios_base::failure("failed writing manifest in " + dir.string());
}

SampleSet load_sample_set(const std::filesystem::path& dir) {
  std::ifstream manifest(dir / "manifest.txt");
  if (!manifest) throw std::ios_base::failure("cannot open " + (dir / "manifest.txt").string());
  SampleSet set;
  std::string line;
  std::size_t count = 0;
  bool have_count = false;
  while (std::getline(manifest, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "history") ls >> set.history;
    else if (key == "future") ls >> set.future;
    else if (key == "dims") ls >> set.state_dims;
    else if (key == "count") {
      ls >> count;
      have_count = true;
    } else {
      std::ifstream in(dir / key, std::ios::binary);
      if (!in) throw std::ios_base::failure("cannot open " + (dir / key).string());
      Sample s = read_sample(in);
      if (s.history_length() != set.history || s.future_length() != set.future) {
        throw SchemaError(fmt::format("{}: horizons differ from the manifest", key));
      }
      set.samples.push_back(std::move(s));
    }
    if (!ls && !ls.eof()) throw SchemaError(fmt::format("{}: malformed manifest line '{}'", dir.string(), line));
  }
  if (!have_count || count != set.samples.size()) {
    throw SchemaError(fmt::format("{}: manifest lists {} samples, count says {}", dir.string(), set.samples.size(), count));
  }
  check_state_dims(set.state_dims);
  return set;
}

}  // namespace recog
