#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

#include "dropkit/errors.hpp"
#include "dropkit/layers.hpp"

namespace dropkit {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format is little-endian; big-endian hosts need byte swaps");

inline constexpr char kCheckpointMagic[8] = {'D', 'F', 'C', 'K', 'P', 'T', '1', '\n'};

// Flat binary checkpoint: magic, then per parameter in model-definition
// order: u32 name length, name bytes, u64 element count, raw doubles.
inline void save_checkpoint(const std::string& path, const ParamList& params) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open checkpoint for writing: " + path);
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  for (const ParamRef& p : params) {
    const std::uint32_t name_len = static_cast<std::uint32_t>(p.name.size());
    out.write(reinterpret_cast<const char*>(&name_len), sizeof(name_len));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    const std::uint64_t count = p.count;
    out.write(reinterpret_cast<const char*>(&count), sizeof(count));
    out.write(reinterpret_cast<const char*>(p.value),
              static_cast<std::streamsize>(p.count * sizeof(double)));
  }
  if (!out) throw FormatError("short write while saving checkpoint: " + path);
}

inline void load_checkpoint(const std::string& path, ParamList& params) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint: " + path);
  char magic[sizeof(kCheckpointMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
    throw FormatError("bad checkpoint magic: " + path);
  for (ParamRef& p : params) {
    std::uint32_t name_len = 0;
    in.read(reinterpret_cast<char*>(&name_len), sizeof(name_len));
    if (!in) throw FormatError("truncated checkpoint: " + path);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    std::uint64_t count = 0;
    in.read(reinterpret_cast<char*>(&count), sizeof(count));
    if (!in) throw FormatError("truncated checkpoint: " + path);
    if (name != p.name || count != p.count)
      throw FormatError("checkpoint layout mismatch at '" + p.name + "' (found '" + name + "')");
    in.read(reinterpret_cast<char*>(p.value),
            static_cast<std::streamsize>(count * sizeof(double)));
    if (!in) throw FormatError("truncated checkpoint payload: " + path);
  }
  in.peek();
  if (!in.eof()) throw FormatError("trailing bytes after checkpoint payload: " + path);
}

}  // namespace dropkit
