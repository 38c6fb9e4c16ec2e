#pragma once

// Two-file tensor archives: a JSON manifest listing (name, shape, offset)
// entries and a blob of little-endian float32 values concatenated in
// manifest order. Offsets count float32 elements.
//
// Checkpoints: <prefix>.ckpt.json + <prefix>.ckpt.bin, manifest carries the
// architecture config so a network can be rebuilt from the files alone.

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "pbmr/model.hpp"

namespace pbmr {

inline constexpr int kCheckpointVersion = 1;

struct BlobEntry {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

namespace detail {

inline void write_le_floats(std::ostream& out, std::span<const float> values) {
  std::vector<char> bytes(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(values[i]);
    for (int b = 0; b < 4; ++b) bytes[i * 4 + static_cast<std::size_t>(b)] = static_cast<char>((bits >> (8 * b)) & 0xffu);
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline std::vector<float> read_le_floats(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() % 4 != 0)
    throw ValidationError(path.string() + ": length " + std::to_string(bytes.size()) + " is not a multiple of 4");
  std::vector<float> out(bytes.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b)
      bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[i * 4 + static_cast<std::size_t>(b)])) << (8 * b);
    out[i] = std::bit_cast<float>(bits);
  }
  return out;
}

inline std::ofstream open_out(const std::filesystem::path& path, bool binary) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  return out;
}

} // namespace detail

/// Writes `header` (extended with "version", "blob" and "entries") and the blob.
inline void write_blob_archive(const std::filesystem::path& json_path, const std::filesystem::path& bin_path,
                               nlohmann::json header, const std::vector<BlobEntry>& entries) {
  nlohmann::json table = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& e : entries) {
    table.push_back({{"name", e.name}, {"shape", e.shape}, {"offset", offset}});
    offset += e.values.size();
  }
  header["version"] = kCheckpointVersion;
  header["dtype"] = "float32-le";
  header["blob"] = bin_path.filename().string();
  header["count"] = offset;
  header["entries"] = std::move(table);
  {
    auto out = detail::open_out(json_path, false);
    out << header.dump(2) << '\n';
  }
  auto out = detail::open_out(bin_path, true);
  for (const auto& e : entries) detail::write_le_floats(out, e.values);
  if (!out) throw RuntimeFailure("failed writing " + bin_path.string());
}

struct BlobArchive {
  nlohmann::json header;
  std::vector<BlobEntry> entries;
};

inline BlobArchive read_blob_archive(const std::filesystem::path& json_path, const std::filesystem::path& bin_path) {
  BlobArchive archive;
  {
    std::ifstream in(json_path);
    if (!in) throw ValidationError("cannot open " + json_path.string());
    try {
      in >> archive.header;
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(json_path.string() + ": invalid JSON: " + e.what());
    }
  }
  const auto& h = archive.header;
  try {
    const int version = h.at("version").get<int>();
    if (version != kCheckpointVersion) {
      throw ValidationError(json_path.string() + ": unsupported version " + std::to_string(version) + " (expected " +
                            std::to_string(kCheckpointVersion) + ")");
    }
    const auto blob = detail::read_le_floats(bin_path);
    std::size_t expected = 0;
    for (const auto& e : h.at("entries")) {
      BlobEntry entry;
      entry.name = e.at("name").get<std::string>();
      entry.shape = e.at("shape").get<Shape>();
      const auto offset = e.at("offset").get<std::size_t>();
      const auto count = shape_numel(entry.shape);
      if (offset != expected) throw ValidationError(json_path.string() + ": entry '" + entry.name + "' has offset " +
                                                    std::to_string(offset) + ", expected " + std::to_string(expected));
      if (offset + count > blob.size()) {
        throw ValidationError(bin_path.string() + ": blob truncated at entry '" + entry.name + "' (needs elements [" +
                              std::to_string(offset) + ", " + std::to_string(offset + count) + "), blob holds " +
                              std::to_string(blob.size()) + ")");
      }
      entry.values.assign(blob.begin() + static_cast<std::ptrdiff_t>(offset),
                          blob.begin() + static_cast<std::ptrdiff_t>(offset + count));
      expected += count;
      archive.entries.push_back(std::move(entry));
    }
    if (expected != blob.size()) {
      throw ValidationError(bin_path.string() + ": blob holds " + std::to_string(blob.size()) +
                            " elements, manifest describes " + std::to_string(expected));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(json_path.string() + ": " + e.what());
  }
  return archive;
}

inline std::filesystem::path checkpoint_json_path(const std::filesystem::path& prefix) {
  return prefix.string() + ".ckpt.json";
}
inline std::filesystem::path checkpoint_bin_path(const std::filesystem::path& prefix) {
  return prefix.string() + ".ckpt.bin";
}

inline void save_checkpoint(const RegressionNet<float>& net, const std::filesystem::path& prefix) {
  std::vector<BlobEntry> entries;
  for (const auto& p : net.parameters()) {
    auto d = p.value.data();
    entries.push_back({p.name, p.value.shape(), std::vector<float>(d.begin(), d.end())});
  }
  nlohmann::json header = {{"format", "pbmr-checkpoint"}, {"arch", to_json(net.config())}};
  write_blob_archive(checkpoint_json_path(prefix), checkpoint_bin_path(prefix), std::move(header), entries);
}

inline RegressionNet<float> load_checkpoint(const std::filesystem::path& prefix) {
  const auto json_path = checkpoint_json_path(prefix);
  auto archive = read_blob_archive(json_path, checkpoint_bin_path(prefix));
  if (!archive.header.contains("arch")) throw ValidationError(json_path.string() + ": missing arch config");
  auto net = RegressionNet<float>::build(arch_from_json(archive.header["arch"]), 0);
  auto& params = net.parameters();
  if (archive.entries.size() != params.size()) {
    throw ValidationError(json_path.string() + ": " + std::to_string(archive.entries.size()) + " parameters, arch needs " +
                          std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& e = archive.entries[i];
    if (e.name != params[i].name || e.shape != params[i].value.shape()) {
      throw ValidationError(json_path.string() + ": parameter " + std::to_string(i) + " is '" + e.name + "' " +
                            shape_str(e.shape) + ", arch expects '" + params[i].name + "' " +
                            shape_str(params[i].value.shape()));
    }
    std::copy(e.values.begin(), e.values.end(), params[i].value.data().begin());
  }
  return net;
}

} // namespace pbmr
