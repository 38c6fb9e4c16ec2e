#pragma once

// Dataset manifests, long-format sample CSVs, and gap filling.
//
// On-disk layout of a dataset directory:
//   manifest.json  { "version": 1, "time_steps": T, "target_name": str,
//                    "sensors": [{"name", "min", "max", "kind"}] }
//   samples.csv    sample_id,sensor,t_index,value   (empty value = missing)
//   targets.csv    sample_id,target                 (optional)

#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "pbmr/error.hpp"

namespace pbmr {

enum class SensorKind { measured, auxiliary };

struct SensorChannel {
  std::string name;
  double sigma = 0.0;  ///< absolute minimum of the physical range
  double lambda = 1.0; ///< absolute maximum of the physical range
  SensorKind kind = SensorKind::measured;

  double width() const { return lambda - sigma; }
  bool operator==(const SensorChannel&) const = default;
};

struct DatasetManifest {
  static constexpr int kVersion = 1;

  std::vector<SensorChannel> sensors; ///< order defines grid row order
  std::size_t time_steps = 0;
  std::string target_name = "yield";
  int version = kVersion;

  std::size_t rows() const { return sensors.size(); }
  std::size_t cells() const { return sensors.size() * time_steps; }

  std::optional<std::size_t> sensor_index(std::string_view name) const {
    for (std::size_t i = 0; i < sensors.size(); ++i)
      if (sensors[i].name == name) return i;
    return std::nullopt;
  }

  void validate() const {
    if (version != kVersion)
      throw ValidationError("manifest: unsupported version " + std::to_string(version));
    if (sensors.empty()) throw ValidationError("manifest: at least one sensor is required");
    if (time_steps < 1) throw ValidationError("manifest: time_steps must be >= 1");
    std::set<std::string> seen;
    for (const auto& s : sensors) {
      if (s.name.empty()) throw ValidationError("manifest: sensor with empty name");
      if (!seen.insert(s.name).second) throw ValidationError("manifest: duplicate sensor '" + s.name + "'");
      if (!std::isfinite(s.sigma) || !std::isfinite(s.lambda) || !(s.lambda > s.sigma)) {
        throw ValidationError("manifest: sensor '" + s.name + "' needs max > min, got [" + std::to_string(s.sigma) +
                              ", " + std::to_string(s.lambda) + "]");
      }
    }
  }

  bool operator==(const DatasetManifest&) const = default;
};

/// One sample's raw sensors x time grid. Missing cells hold 0.
struct SampleFrame {
  std::string sample_id;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;
  std::vector<bool> missing;
  std::optional<double> target;

  SampleFrame() = default;
  SampleFrame(std::string id, std::size_t r, std::size_t c)
      : sample_id(std::move(id)), rows(r), cols(c), values(r * c, 0.0), missing(r * c, false) {}

  double& at(std::size_t i, std::size_t j) { return values[i * cols + j]; }
  double at(std::size_t i, std::size_t j) const { return values[i * cols + j]; }
  bool is_missing(std::size_t i, std::size_t j) const { return missing[i * cols + j]; }

  std::size_t missing_count() const {
    std::size_t n = 0;
    for (bool m : missing) n += m ? 1 : 0;
    return n;
  }

  bool operator==(const SampleFrame&) const = default;
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<SampleFrame> frames;
};

inline std::string to_string(SensorKind kind) { return kind == SensorKind::measured ? "measured" : "auxiliary"; }

inline nlohmann::json to_json(const DatasetManifest& m) {
  nlohmann::json sensors = nlohmann::json::array();
  for (const auto& s : m.sensors)
    sensors.push_back({{"name", s.name}, {"min", s.sigma}, {"max", s.lambda}, {"kind", to_string(s.kind)}});
  return {{"version", m.version}, {"time_steps", m.time_steps}, {"target_name", m.target_name}, {"sensors", sensors}};
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j) {
  DatasetManifest m;
  try {
    m.version = j.at("version").get<int>();
    const auto steps = j.at("time_steps").get<long long>();
    if (steps < 1) throw ValidationError("manifest: time_steps must be >= 1");
    m.time_steps = static_cast<std::size_t>(steps);
    m.target_name = j.at("target_name").get<std::string>();
    for (const auto& s : j.at("sensors")) {
      SensorChannel c;
      c.name = s.at("name").get<std::string>();
      c.sigma = s.at("min").get<double>();
      c.lambda = s.at("max").get<double>();
      const auto kind = s.value("kind", std::string("measured"));
      if (kind == "measured") {
        c.kind = SensorKind::measured;
      } else if (kind == "auxiliary") {
        c.kind = SensorKind::auxiliary;
      } else {
        throw ValidationError("manifest: sensor '" + c.name + "' has unknown kind '" + kind + "'");
      }
      m.sensors.push_back(std::move(c));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("manifest: ") + e.what());
  }
  m.validate();
  return m;
}

namespace detail {

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return out;
}

inline std::string_view trim_cr(std::string_view s) {
  if (!s.empty() && s.back() == '\r') s.remove_suffix(1);
  return s;
}

inline double parse_double(std::string_view s, const std::string& where) {
  double v = 0;
  const auto* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc{} || ptr != end || !std::isfinite(v))
    throw ValidationError(where + ": cannot parse number '" + std::string(s) + "'");
  return v;
}

inline std::size_t parse_index(std::string_view s, const std::string& where) {
  std::size_t v = 0;
  const auto* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc{} || ptr != end) throw ValidationError(where + ": cannot parse index '" + std::string(s) + "'");
  return v;
}

inline std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  return in;
}

inline void expect_header(std::istream& in, std::string_view expected, const std::filesystem::path& path) {
  std::string header;
  if (!std::getline(in, header) || trim_cr(header) != expected)
    throw ValidationError(path.string() + ": expected header '" + std::string(expected) + "'");
}

/// Shortest text that parses back to the same double.
inline std::string format_exact(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

} // namespace detail

inline DatasetManifest load_manifest(const std::filesystem::path& path) {
  auto in = detail::open_in(path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path.string() + ": invalid JSON: " + e.what());
  }
  return manifest_from_json(j);
}

/// Reads samples.csv (and targets.csv when given). Sample order is order of
/// first appearance; cells absent from the CSV come back flagged missing.
inline Dataset load_dataset(const std::filesystem::path& manifest_path, const std::filesystem::path& samples_path,
                            const std::optional<std::filesystem::path>& targets_path = std::nullopt) {
  Dataset ds;
  ds.manifest = load_manifest(manifest_path);
  const auto& m = ds.manifest;
  const std::size_t rows = m.rows(), cols = m.time_steps;

  std::unordered_map<std::string, std::size_t> index;
  std::vector<std::vector<bool>> seen;
  auto in = detail::open_in(samples_path);
  detail::expect_header(in, "sample_id,sensor,t_index,value", samples_path);
  std::string line;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const auto text = detail::trim_cr(line);
    if (text.empty()) continue;
    const std::string where = samples_path.string() + ":" + std::to_string(line_no);
    const auto fields = detail::split_csv_line(text);
    if (fields.size() != 4) throw ValidationError(where + ": expected 4 fields");
    const std::string id(fields[0]);
    if (id.empty()) throw ValidationError(where + ": empty sample_id");
    const auto row = m.sensor_index(fields[1]);
    if (!row) throw ValidationError(where + ": unknown sensor '" + std::string(fields[1]) + "'");
    const std::size_t t = detail::parse_index(fields[2], where);
    if (t >= cols)
      throw ValidationError(where + ": t_index " + std::to_string(t) + " >= time_steps " + std::to_string(cols));
    auto [it, inserted] = index.try_emplace(id, ds.frames.size());
    if (inserted) {
      ds.frames.emplace_back(id, rows, cols);
      ds.frames.back().missing.assign(rows * cols, true);
      seen.emplace_back(rows * cols, false);
    }
    SampleFrame& f = ds.frames[it->second];
    const std::size_t cell = *row * cols + t;
    if (seen[it->second][cell])
      throw ValidationError(where + ": duplicate cell (" + id + ", " + std::string(fields[1]) + ", " +
                            std::to_string(t) + ")");
    seen[it->second][cell] = true;
    if (fields[3].empty()) continue;
    const double v = detail::parse_double(fields[3], where);
    const auto& s = m.sensors[*row];
    if (v < s.sigma || v > s.lambda) {
      throw ValidationError(where + ": value " + std::string(fields[3]) + " outside sensor '" + s.name + "' range [" +
                            detail::format_exact(s.sigma) + ", " + detail::format_exact(s.lambda) + "]");
    }
    f.values[cell] = v;
    f.missing[cell] = false;
  }

  if (targets_path) {
    auto tin = detail::open_in(*targets_path);
    detail::expect_header(tin, "sample_id,target", *targets_path);
    line_no = 1;
    while (std::getline(tin, line)) {
      ++line_no;
      const auto text = detail::trim_cr(line);
      if (text.empty()) continue;
      const std::string where = targets_path->string() + ":" + std::to_string(line_no);
      const auto fields = detail::split_csv_line(text);
      if (fields.size() != 2) throw ValidationError(where + ": expected 2 fields");
      const auto it = index.find(std::string(fields[0]));
      if (it == index.end()) throw ValidationError(where + ": target for unknown sample '" + std::string(fields[0]) + "'");
      auto& f = ds.frames[it->second];
      if (f.target) throw ValidationError(where + ": duplicate target for '" + f.sample_id + "'");
      f.target = detail::parse_double(fields[1], where);
    }
  }
  return ds;
}

/// Loads <dir>/manifest.json, <dir>/samples.csv and, if present, <dir>/targets.csv.
inline Dataset load_dataset_dir(const std::filesystem::path& dir) {
  const auto targets = dir / "targets.csv";
  return load_dataset(dir / "manifest.json", dir / "samples.csv",
                      std::filesystem::exists(targets) ? std::optional(targets) : std::nullopt);
}

/// Inverse of load_dataset_dir. Every cell is written; missing cells get an
/// empty value field. targets.csv lists only samples that have a target.
inline void write_dataset_dir(const Dataset& ds, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  auto open_out = [&](const char* name) {
    std::ofstream out(dir / name, std::ios::binary);
    if (!out) throw RuntimeFailure("cannot write " + (dir / name).string());
    return out;
  };
  {
    auto out = open_out("manifest.json");
    out << to_json(ds.manifest).dump(2) << '\n';
  }
  {
    auto out = open_out("samples.csv");
    out << "sample_id,sensor,t_index,value\n";
    for (const auto& f : ds.frames) {
      for (std::size_t i = 0; i < f.rows; ++i) {
        const auto& name = ds.manifest.sensors[i].name;
        for (std::size_t j = 0; j < f.cols; ++j) {
          out << f.sample_id << ',' << name << ',' << j << ',';
          if (!f.is_missing(i, j)) out << detail::format_exact(f.at(i, j));
          out << '\n';
        }
      }
    }
  }
  {
    auto out = open_out("targets.csv");
    out << "sample_id,target\n";
    for (const auto& f : ds.frames)
      if (f.target) out << f.sample_id << ',' << detail::format_exact(*f.target) << '\n';
  }
}

/// Replaces each missing cell with the closest earlier observation in its
/// row. Cells before a row's first observation take that first observation.
inline SampleFrame forward_fill(const SampleFrame& frame) {
  SampleFrame out = frame;
  for (std::size_t i = 0; i < frame.rows; ++i) {
    std::size_t first = frame.cols;
    for (std::size_t j = 0; j < frame.cols; ++j) {
      if (!frame.is_missing(i, j)) {
        first = j;
        break;
      }
    }
    if (first == frame.cols) {
      throw ValidationError("forward_fill: sample '" + frame.sample_id + "' row " + std::to_string(i) +
                            " has no observed values");
    }
    double last = frame.at(i, first);
    for (std::size_t j = 0; j < frame.cols; ++j) {
      const std::size_t cell = i * frame.cols + j;
      if (frame.missing[cell]) {
        out.values[cell] = last;
        out.missing[cell] = false;
      } else {
        last = frame.values[cell];
      }
    }
  }
  return out;
}

} // namespace pbmr
