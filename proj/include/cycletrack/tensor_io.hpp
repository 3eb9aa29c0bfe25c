#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cycletrack/error.hpp"
#include "cycletrack/types.hpp"

// File formats:
//   .egr  "VSEG" | u32 version=1 | u32 H | u32 W | u32 d | u8 normalized | f32 payload (LE)
//   .lmk  "VMSK" | u32 version=1 | u32 H | u32 W | u16 payload (LE)
// Self-describing and trivially seekable; payload is row-major, patch-major
// then channel.

namespace cycletrack {

struct ReaderLimits {
  std::uint32_t max_height = 1024;
  std::uint32_t max_width = 1024;
  std::uint32_t max_dim = 4096;
};

namespace io_detail {

constexpr std::array<char, 4> kGridMagic = {'V', 'S', 'E', 'G'};
constexpr std::array<char, 4> kMaskMagic = {'V', 'M', 'S', 'K'};
constexpr std::uint32_t kFormatVersion = 1;

inline void write_u32(std::ostream& out, std::uint32_t v) {
  const std::array<unsigned char, 4> b = {
      static_cast<unsigned char>(v & 0xff),
      static_cast<unsigned char>((v >> 8) & 0xff),
      static_cast<unsigned char>((v >> 16) & 0xff),
      static_cast<unsigned char>((v >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(b.data()), 4);
}

inline std::optional<std::uint32_t> read_u32(std::istream& in) {
  std::array<unsigned char, 4> b{};
  if (!in.read(reinterpret_cast<char*>(b.data()), 4)) return std::nullopt;
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void write_f32_payload(std::ostream& out, const std::vector<float>& values) {
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size() * sizeof(float)));
  } else {
    for (float f : values) write_u32(out, std::bit_cast<std::uint32_t>(f));
  }
}

inline bool read_f32_payload(std::istream& in, std::vector<float>& values) {
  if constexpr (std::endian::native == std::endian::little) {
    return static_cast<bool>(in.read(reinterpret_cast<char*>(values.data()),
                                     static_cast<std::streamsize>(values.size() * sizeof(float))));
  } else {
    for (float& f : values) {
      auto v = read_u32(in);
      if (!v) return false;
      f = std::bit_cast<float>(*v);
    }
    return true;
  }
}

inline void check_magic(std::istream& in, const std::array<char, 4>& expected,
                        const std::string& path) {
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), 4) || magic != expected) {
    raise(ErrorCode::bad_magic, "bad magic in " + path);
  }
  auto version = read_u32(in);
  if (!version || *version != kFormatVersion) {
    raise(ErrorCode::unsupported_version,
          "unsupported format version in " + path);
  }
}

inline void check_no_trailing(std::istream& in, const std::string& path) {
  char extra;
  if (in.read(&extra, 1)) {
    raise(ErrorCode::dimension_mismatch,
          "payload longer than declared dims in " + path);
  }
}

inline std::ifstream open_input(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(ErrorCode::io_failure, "cannot open " + path);
  return in;
}

}  // namespace io_detail

inline EmbeddingGrid read_embedding_grid(const std::string& path,
                                         const ReaderLimits& limits = {}) {
  using namespace io_detail;
  std::ifstream in = open_input(path);
  check_magic(in, kGridMagic, path);

  const auto h = read_u32(in), w = read_u32(in), d = read_u32(in);
  char flag = 0;
  if (!h || !w || !d || !in.read(&flag, 1)) {
    raise(ErrorCode::dimension_mismatch, "truncated header in " + path);
  }
  if (*h == 0 || *w == 0 || *d == 0 || *h > limits.max_height ||
      *w > limits.max_width || *d > limits.max_dim) {
    raise(ErrorCode::dimension_mismatch,
          "declared dims " + std::to_string(*h) + "x" + std::to_string(*w) + "x" +
              std::to_string(*d) + " outside reader limits in " + path);
  }

  std::vector<float> payload(static_cast<std::size_t>(*h) * *w * *d);
  if (!read_f32_payload(in, payload)) {
    raise(ErrorCode::dimension_mismatch, "payload shorter than declared dims in " + path);
  }
  check_no_trailing(in, path);

  EmbeddingGrid grid(static_cast<int>(*h), static_cast<int>(*w), static_cast<int>(*d),
                     std::move(payload), flag != 0);
  // Always revalidates norms: files written with the flag unset get
  // normalized here, and zero vectors are rejected either way.
  grid.normalize_patches();
  return grid;
}

inline void write_embedding_grid(const EmbeddingGrid& grid, const std::string& path) {
  using namespace io_detail;
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) raise(ErrorCode::io_failure, "cannot open " + path + " for writing");
  out.write(kGridMagic.data(), 4);
  write_u32(out, kFormatVersion);
  write_u32(out, static_cast<std::uint32_t>(grid.height()));
  write_u32(out, static_cast<std::uint32_t>(grid.width()));
  write_u32(out, static_cast<std::uint32_t>(grid.dim()));
  const char flag = grid.normalized() ? 1 : 0;
  out.write(&flag, 1);
  write_f32_payload(out, grid.data());
  out.flush();
  if (!out) raise(ErrorCode::io_failure, "write failed for " + path);
}

inline LabelMask read_label_mask(const std::string& path, const ReaderLimits& limits = {}) {
  using namespace io_detail;
  std::ifstream in = open_input(path);
  check_magic(in, kMaskMagic, path);

  const auto h = read_u32(in), w = read_u32(in);
  if (!h || !w) raise(ErrorCode::dimension_mismatch, "truncated header in " + path);
  if (*h == 0 || *w == 0 || *h > limits.max_height || *w > limits.max_width) {
    raise(ErrorCode::dimension_mismatch, "declared dims outside reader limits in " + path);
  }

  std::vector<std::uint16_t> labels(static_cast<std::size_t>(*h) * *w);
  for (auto& v : labels) {
    std::array<unsigned char, 2> b{};
    if (!in.read(reinterpret_cast<char*>(b.data()), 2)) {
      raise(ErrorCode::dimension_mismatch, "payload shorter than declared dims in " + path);
    }
    v = static_cast<std::uint16_t>(b[0] | (b[1] << 8));
  }
  check_no_trailing(in, path);
  return LabelMask(static_cast<int>(*h), static_cast<int>(*w), std::move(labels));
}

inline void write_label_mask(const LabelMask& mask, const std::string& path) {
  using namespace io_detail;
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) raise(ErrorCode::io_failure, "cannot open " + path + " for writing");
  out.write(kMaskMagic.data(), 4);
  write_u32(out, kFormatVersion);
  write_u32(out, static_cast<std::uint32_t>(mask.height));
  write_u32(out, static_cast<std::uint32_t>(mask.width));
  for (std::uint16_t v : mask.labels) {
    const std::array<unsigned char, 2> b = {static_cast<unsigned char>(v & 0xff),
                                            static_cast<unsigned char>(v >> 8)};
    out.write(reinterpret_cast<const char*>(b.data()), 2);
  }
  out.flush();
  if (!out) raise(ErrorCode::io_failure, "write failed for " + path);
}

struct FrameEntry {
  std::string embedding;
  std::optional<std::string> mask;
};

struct SequenceManifest {
  std::vector<FrameEntry> frames;
  double fps = 10.0;
  std::string name = "sequence";
};

inline SequenceManifest parse_manifest(const nlohmann::json& j, const std::string& origin) {
  SequenceManifest m;
  try {
    if (!j.contains("frames") || !j["frames"].is_array() || j["frames"].empty()) {
      raise(ErrorCode::config_error, origin + ": manifest needs a non-empty frames array");
    }
    for (const auto& f : j["frames"]) {
      FrameEntry entry;
      entry.embedding = f.at("embedding").get<std::string>();
      if (f.contains("mask") && !f["mask"].is_null()) {
        entry.mask = f["mask"].get<std::string>();
      }
      m.frames.push_back(std::move(entry));
    }
    m.fps = j.value("fps", 10.0);
    m.name = j.value("name", std::string("sequence"));
  } catch (const nlohmann::json::exception& e) {
    raise(ErrorCode::config_error, origin + ": " + e.what());
  }
  return m;
}

inline nlohmann::json manifest_to_json(const SequenceManifest& m) {
  nlohmann::json frames = nlohmann::json::array();
  for (const auto& f : m.frames) {
    nlohmann::json entry = {{"embedding", f.embedding}};
    if (f.mask) entry["mask"] = *f.mask;
    frames.push_back(std::move(entry));
  }
  return {{"frames", std::move(frames)}, {"fps", m.fps}, {"name", m.name}};
}

inline SequenceManifest read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) raise(ErrorCode::io_failure, "cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    raise(ErrorCode::config_error, path + ": " + e.what());
  }
  return parse_manifest(j, path);
}

inline void write_manifest(const SequenceManifest& m, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) raise(ErrorCode::io_failure, "cannot open " + path + " for writing");
  out << manifest_to_json(m).dump(2) << "\n";
  if (!out) raise(ErrorCode::io_failure, "write failed for " + path);
}

struct LoadedSequence {
  SequenceManifest manifest;
  std::vector<EmbeddingGrid> frames;
  std::vector<std::optional<LabelMask>> masks;
};

/// Loads every frame of a manifest, resolving paths relative to the manifest
/// file, and validates that all frames share one geometry.
inline LoadedSequence load_sequence(const std::string& manifest_path,
                                    const ReaderLimits& limits = {}) {
  namespace fs = std::filesystem;
  LoadedSequence seq;
  seq.manifest = read_manifest(manifest_path);
  const fs::path base = fs::path(manifest_path).parent_path();

  for (const auto& entry : seq.manifest.frames) {
    EmbeddingGrid grid = read_embedding_grid((base / entry.embedding).string(), limits);
    if (!seq.frames.empty() &&
        (grid.height() != seq.frames.front().height() ||
         grid.width() != seq.frames.front().width() || grid.dim() != seq.frames.front().dim())) {
      raise(ErrorCode::dimension_mismatch,
            entry.embedding + " does not match the sequence geometry");
    }
    if (entry.mask) {
      LabelMask mask = read_label_mask((base / *entry.mask).string(), limits);
      if (mask.height != grid.height() || mask.width != grid.width()) {
        raise(ErrorCode::dimension_mismatch, *entry.mask + " does not match its frame");
      }
      seq.masks.push_back(std::move(mask));
    } else {
      seq.masks.emplace_back(std::nullopt);
    }
    seq.frames.push_back(std::move(grid));
  }
  return seq;
}

}  // namespace cycletrack
