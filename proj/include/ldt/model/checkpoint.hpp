#pragma once

// Checkpoint layout (all integers little-endian):
//   "LDTCKPT\0"  u32 version  u32 n  <n bytes of config JSON>
//   u32 tensor_count
//   per tensor: u32 name_len  name  u32 ndim  u32 dims[ndim]  f32 data[prod(dims)]

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include <nlohmann/json.hpp>

#include "ldt/error.hpp"
#include "ldt/model/config.hpp"
#include "ldt/model/transformer.hpp"

namespace ldt {

inline constexpr std::array<char, 8> kCheckpointMagic{'L', 'D', 'T', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw Error("truncated checkpoint");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline std::string get_bytes(std::istream& in, std::uint32_t n) {
  if (n > (1u << 28)) throw Error("checkpoint field too large");
  std::string s(n, '\0');
  if (n && !in.read(s.data(), n)) throw Error("truncated checkpoint");
  return s;
}

}  // namespace detail

inline void save_checkpoint(std::ostream& out, const Transformer<float>& model) {
  out.write(kCheckpointMagic.data(), kCheckpointMagic.size());
  detail::put_u32(out, kCheckpointVersion);
  const std::string cfg = nlohmann::json(model.config()).dump();
  detail::put_u32(out, static_cast<std::uint32_t>(cfg.size()));
  out.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  const auto& entries = model.layout().entries();
  detail::put_u32(out, static_cast<std::uint32_t>(entries.size()));
  for (const ParamEntry& e : entries) {
    detail::put_u32(out, static_cast<std::uint32_t>(e.name.size()));
    out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    detail::put_u32(out, static_cast<std::uint32_t>(e.shape.size()));
    for (int s : e.shape) detail::put_u32(out, static_cast<std::uint32_t>(s));
    for (std::size_t i = 0; i < e.size; ++i) detail::put_u32(out, std::bit_cast<std::uint32_t>(model.params()[e.offset + i]));
  }
  if (!out) throw Error("failed to write checkpoint");
}

inline Transformer<float> load_checkpoint(std::istream& in) {
  std::array<char, 8> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kCheckpointMagic) throw Error("not a checkpoint file");
  const std::uint32_t version = detail::get_u32(in);
  if (version != kCheckpointVersion) throw Error("unsupported checkpoint version " + std::to_string(version));
  ModelConfig cfg;
  try {
    cfg = nlohmann::json::parse(detail::get_bytes(in, detail::get_u32(in))).get<ModelConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("bad checkpoint config: ") + e.what());
  }
  Transformer<float> model(cfg);
  const auto& entries = model.layout().entries();
  if (detail::get_u32(in) != entries.size()) throw StructuralError("checkpoint tensor count does not match its config");
  for (const ParamEntry& e : entries) {
    const std::string name = detail::get_bytes(in, detail::get_u32(in));
    if (name != e.name) throw StructuralError("checkpoint tensor '" + name + "' where '" + e.name + "' was expected");
    const std::uint32_t ndim = detail::get_u32(in);
    if (ndim != e.shape.size()) throw StructuralError("checkpoint tensor '" + name + "' has the wrong rank");
    for (int s : e.shape)
      if (detail::get_u32(in) != static_cast<std::uint32_t>(s))
        throw StructuralError("checkpoint tensor '" + name + "' has the wrong shape");
    for (std::size_t i = 0; i < e.size; ++i) model.params()[e.offset + i] = std::bit_cast<float>(detail::get_u32(in));
  }
  return model;
}

inline void save_checkpoint(const std::string& path, const Transformer<float>& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  save_checkpoint(out, model);
}

inline Transformer<float> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  return load_checkpoint(in);
}

}  // namespace ldt
