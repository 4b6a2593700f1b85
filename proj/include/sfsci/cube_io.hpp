#pragma once

// Cube files: raw little-endian float32 in (band, row, col) order, with a
// JSON sidecar `<path>.json` holding {height, width, bands, dtype, order,
// sha256}. A dataset directory carries a manifest.json listing its cubes.

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>

#include "sfsci/hash.hpp"
#include "sfsci/sensing.hpp"

namespace sfsci {

namespace fs = std::filesystem;
using json = nlohmann::json;

/// Little-endian float32 encoding of a tensor.
template <typename T>
std::vector<std::uint8_t> encode_f32le(std::span<const T> values) {
  std::vector<std::uint8_t> out(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const float f = static_cast<float>(values[i]);
    std::uint32_t u;
    std::memcpy(&u, &f, 4);
    for (int b = 0; b < 4; ++b) out[4 * i + b] = static_cast<std::uint8_t>(u >> (8 * b));
  }
  return out;
}

template <typename T>
std::vector<T> decode_f32le(std::span<const std::uint8_t> bytes) {
  std::vector<T> out(bytes.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint32_t u = 0;
    for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(bytes[4 * i + b]) << (8 * b);
    float f;
    std::memcpy(&f, &u, 4);
    out[i] = static_cast<T>(f);
  }
  return out;
}

inline std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

inline void write_bytes(const fs::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

inline json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw IoError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

inline void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

inline fs::path sidecar_path(const fs::path& path) { return fs::path(path.string() + ".json"); }

/// Writes the raw file and its sidecar; returns the sha256 of the raw bytes.
template <typename T>
std::string save_cube(const fs::path& path, const HyperspectralCube<T>& cube) {
  const auto bytes = encode_f32le<T>(cube.data.span());
  const std::string digest = sha256_hex(bytes);
  write_bytes(path, bytes);
  write_json(sidecar_path(path), json{{"height", cube.height()},
                                      {"width", cube.width()},
                                      {"bands", cube.bands()},
                                      {"dtype", "f32le"},
                                      {"order", "brc"},
                                      {"sha256", digest}});
  return digest;
}

namespace detail {

inline std::size_t header_dim(const json& h, const char* field, const fs::path& where) {
  if (!h.contains(field) || !h[field].is_number_unsigned() || h[field].get<std::size_t>() == 0) {
    throw IoError(std::string("cube header field '") + field + "' missing or invalid in " + where.string());
  }
  return h[field].get<std::size_t>();
}

inline std::string header_string(const json& h, const char* field, const fs::path& where) {
  if (!h.contains(field) || !h[field].is_string()) {
    throw IoError(std::string("cube header field '") + field + "' missing or invalid in " + where.string());
  }
  return h[field].get<std::string>();
}

}  // namespace detail

template <typename T = float>
HyperspectralCube<T> load_cube(const fs::path& path) {
  const fs::path side = sidecar_path(path);
  if (!fs::exists(side)) throw IoError("missing cube header " + side.string());
  const json h = read_json(side);
  const std::size_t height = detail::header_dim(h, "height", side);
  const std::size_t width = detail::header_dim(h, "width", side);
  const std::size_t bands = detail::header_dim(h, "bands", side);
  if (detail::header_string(h, "dtype", side) != "f32le") throw IoError("cube header field 'dtype' must be f32le");
  if (detail::header_string(h, "order", side) != "brc") throw IoError("cube header field 'order' must be brc");
  const std::string digest = detail::header_string(h, "sha256", side);
  if (!fs::exists(path)) throw IoError("missing cube data " + path.string());
  const auto bytes = read_bytes(path);
  if (bytes.size() != height * width * bands * 4) {
    throw IoError("cube data size does not match header fields 'height','width','bands' in " + path.string());
  }
  if (sha256_hex(bytes) != digest) throw IoError("cube header field 'sha256' does not match data in " + path.string());
  return HyperspectralCube<T>(Tensor<T>({bands, height, width}, decode_f32le<T>(bytes)));
}

struct DatasetEntry {
  std::string path;  // relative to the dataset directory
  std::size_t height = 0, width = 0, bands = 0;
  std::string sha256;
  std::string domain;
};

inline constexpr int kManifestSchema = 1;

/// Writes scene_NNN.cube files plus manifest.json.
template <typename T>
std::vector<DatasetEntry> save_dataset(const fs::path& dir, const std::vector<HyperspectralCube<T>>& cubes,
                                       const std::string& domain, const json& extra = json::object()) {
  fs::create_directories(dir);
  std::vector<DatasetEntry> entries;
  json list = json::array();
  for (std::size_t i = 0; i < cubes.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "scene_%03zu.cube", i);
    DatasetEntry e{name, cubes[i].height(), cubes[i].width(), cubes[i].bands(), save_cube(dir / name, cubes[i]), domain};
    list.push_back({{"path", e.path},
                    {"height", e.height},
                    {"width", e.width},
                    {"bands", e.bands},
                    {"sha256", e.sha256},
                    {"domain", e.domain}});
    entries.push_back(std::move(e));
  }
  json manifest{{"schema_version", kManifestSchema}, {"domain", domain}, {"count", cubes.size()}, {"entries", list}};
  for (auto& [k, v] : extra.items()) manifest[k] = v;
  write_json(dir / "manifest.json", manifest);
  return entries;
}

inline std::vector<DatasetEntry> read_manifest(const fs::path& dir) {
  const fs::path mpath = dir / "manifest.json";
  if (!fs::exists(mpath)) throw IoError("missing dataset manifest " + mpath.string());
  const json m = read_json(mpath);
  if (!m.contains("entries") || !m["entries"].is_array()) throw IoError("manifest field 'entries' missing in " + mpath.string());
  std::vector<DatasetEntry> out;
  for (const auto& e : m["entries"]) {
    DatasetEntry d;
    try {
      d.path = e.at("path").get<std::string>();
      d.height = e.at("height").get<std::size_t>();
      d.width = e.at("width").get<std::size_t>();
      d.bands = e.at("bands").get<std::size_t>();
      d.sha256 = e.at("sha256").get<std::string>();
      d.domain = e.value("domain", std::string());
    } catch (const json::exception& ex) {
      throw IoError("malformed manifest entry in " + mpath.string() + ": " + ex.what());
    }
    out.push_back(std::move(d));
  }
  return out;
}

template <typename T = float>
std::vector<HyperspectralCube<T>> load_dataset(const fs::path& dir) {
  std::vector<HyperspectralCube<T>> cubes;
  for (const auto& e : read_manifest(dir)) {
    auto cube = load_cube<T>(dir / e.path);
    if (cube.height() != e.height || cube.width() != e.width || cube.bands() != e.bands) {
      throw IoError("manifest shape does not match cube " + e.path);
    }
    if (sha256_hex(read_bytes(dir / e.path)) != e.sha256) throw IoError("manifest field 'sha256' mismatch for " + e.path);
    cubes.push_back(std::move(cube));
  }
  return cubes;
}

/// Masks are stored as single-band cubes.
inline void save_mask(const fs::path& path, const CodedMask& mask) {
  HyperspectralCube<float> c(Tensor<float>(mask.as_tensor<float>()));
  save_cube(path, c);
}

inline CodedMask load_mask(const fs::path& path) {
  auto c = load_cube<float>(path);
  if (c.bands() != 1) throw IoError("mask file must have exactly one band: " + path.string());
  std::vector<std::uint8_t> bits(c.data.size());
  for (std::size_t i = 0; i < bits.size(); ++i) {
    const float v = c.data[i];
    if (v != 0.0f && v != 1.0f) throw IoError("mask file contains non-binary entries: " + path.string());
    bits[i] = v == 1.0f ? 1 : 0;
  }
  return CodedMask(c.height(), c.width(), std::move(bits));
}

}  // namespace sfsci
