#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "tcslot/model.hpp"

namespace tcslot::checkpoint {

namespace fs = std::filesystem;

inline constexpr char kMagic[8] = {'T', 'C', 'S', 'L', 'O', 'T', 'C', 'K'};
inline constexpr std::uint32_t kVersion = 1;

// Layout (little-endian host order):
//   magic[8] | u32 version | u64 config_len | config JSON
//   u32 n_params | n x { u32 name_len | name | u32 rank | i32 dims[rank] | f64 data[] }

namespace detail {

template <typename V>
void put(std::ostream& os, const V& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V get(std::istream& is) {
  V v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(V));
  if (!is) throw DataError("checkpoint: truncated file");
  return v;
}

}  // namespace detail

template <typename T>
void save(const fs::path& path, const model::TcslotNet<T>& net) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write checkpoint " + path.string());
  os.write(kMagic, sizeof(kMagic));
  detail::put(os, kVersion);
  const std::string cfg = nlohmann::json(net.config()).dump();
  detail::put(os, static_cast<std::uint64_t>(cfg.size()));
  os.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  const auto& items = net.parameters().items();
  detail::put(os, static_cast<std::uint32_t>(items.size()));
  for (const auto& [name, var] : items) {
    detail::put(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put(os, static_cast<std::uint32_t>(var.value().rank()));
    for (int d : var.shape()) detail::put(os, static_cast<std::int32_t>(d));
    for (auto v : var.value().values()) detail::put(os, static_cast<double>(v));
  }
  if (!os) throw DataError("failed writing checkpoint " + path.string());
}

struct Archive {
  model::ModelConfig config;
  std::vector<std::pair<std::string, Tensor<double>>> params;
};

inline Archive read(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint " + path.string());
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(magic)) != 0) throw DataError(path.string() + ": not a checkpoint");
  const auto version = detail::get<std::uint32_t>(is);
  if (version != kVersion) throw DataError("checkpoint: unsupported version " + std::to_string(version));
  const auto cfg_len = detail::get<std::uint64_t>(is);
  if (cfg_len > (1u << 24)) throw DataError("checkpoint: corrupt config block");
  std::string cfg(cfg_len, '\0');
  is.read(cfg.data(), static_cast<std::streamsize>(cfg_len));
  Archive a;
  try {
    a.config = nlohmann::json::parse(cfg).get<model::ModelConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint: bad config block: ") + e.what());
  }
  const auto n = detail::get<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < n; ++i) {
    const auto len = detail::get<std::uint32_t>(is);
    if (len > 4096) throw DataError("checkpoint: corrupt parameter name");
    std::string name(len, '\0');
    is.read(name.data(), len);
    const auto rank = detail::get<std::uint32_t>(is);
    if (rank > 8) throw DataError("checkpoint: corrupt parameter rank");
    Shape shape(rank);
    std::size_t count = 1;
    for (auto& d : shape) {
      d = detail::get<std::int32_t>(is);
      if (d < 0 || d > (1 << 24)) throw DataError("checkpoint: corrupt parameter shape");
      count *= static_cast<std::size_t>(d);
      if (count > (std::size_t{1} << 28)) throw DataError("checkpoint: corrupt parameter shape");
    }
    Tensor<double> t(shape);
    for (auto& v : t.values()) v = detail::get<double>(is);
    a.params.emplace_back(std::move(name), std::move(t));
  }
  if (is.peek() != std::char_traits<char>::eof()) throw DataError("checkpoint: trailing bytes");
  return a;
}

/// Copies archived values into `net`; names and shapes must match one to one.
template <typename T>
void load_into(model::TcslotNet<T>& net, const Archive& a) {
  const auto& items = net.parameters().items();
  if (items.size() != a.params.size()) {
    throw ConfigError("checkpoint: parameter count " + std::to_string(a.params.size()) + " does not match model (" +
                      std::to_string(items.size()) + ")");
  }
  for (const auto& [name, t] : a.params) {
    Var<T> p = net.parameters().find(name);
    if (p.shape() != t.shape()) {
      throw ConfigError("checkpoint: shape mismatch for " + name + ": " + shape_str(t.shape()) + " vs " +
                        shape_str(p.shape()));
    }
    auto& dst = p.mutable_value();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(t[i]);
  }
}

template <typename T = float>
model::TcslotNet<T> load(const fs::path& path) {
  const auto a = read(path);
  model::TcslotNet<T> net(a.config);
  load_into(net, a);
  return net;
}

}  // namespace tcslot::checkpoint
