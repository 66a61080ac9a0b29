#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "nmrom/error.hpp"
#include "nmrom/io/binary.hpp"
#include "nmrom/neural/tensor.hpp"

namespace nmrom::nn {

struct NamedTensor {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<double> data;
};

/// Named tensors plus a string manifest. The manifest is stored as rank-0,
/// empty tensors named "meta.<key>=<value>".
struct Checkpoint {
  std::map<std::string, std::string> meta;
  std::vector<NamedTensor> tensors;

  void add(const Param& p, const std::string& prefix = {}) {
    NamedTensor t{prefix + p.name, {}, p.value};
    for (Index d : p.dims) t.dims.push_back(static_cast<std::uint32_t>(d));
    tensors.push_back(std::move(t));
  }
  template <class Range>
  void add_all(const Range& params, const std::string& prefix = {}) {
    for (const auto* p : params) add(*p, prefix);
  }
  void add(std::string name, std::vector<double> data) {
    tensors.push_back({std::move(name), {static_cast<std::uint32_t>(data.size())}, std::move(data)});
  }

  [[nodiscard]] const NamedTensor& get(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return t;
    throw FormatError("checkpoint: missing tensor '" + name + "'");
  }
  [[nodiscard]] bool has(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return true;
    return false;
  }
  [[nodiscard]] const std::string& meta_at(const std::string& key) const {
    auto it = meta.find(key);
    if (it == meta.end()) throw FormatError("checkpoint: missing manifest key '" + key + "'");
    return it->second;
  }

  /// Copies stored values into parameters, checking names and shapes.
  template <class Range>
  void load_into(const Range& params, const std::string& prefix = {}) const {
    for (auto* p : params) {
      const auto& t = get(prefix + p->name);
      if (t.dims.size() != p->dims.size()) throw FormatError("checkpoint: rank mismatch for " + p->name);
      for (std::size_t i = 0; i < t.dims.size(); ++i)
        if (t.dims[i] != p->dims[i]) throw FormatError("checkpoint: shape mismatch for " + p->name);
      p->value = t.data;
    }
  }
};

inline constexpr std::string_view kCheckpointMagic = "NMCKPT1\n";
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  io::ByteWriter w;
  w.text(kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(ck.meta.size() + ck.tensors.size()));
  auto put = [&w](const std::string& name, const std::vector<std::uint32_t>& dims, const std::vector<double>& data) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.text(name);
    w.u32(static_cast<std::uint32_t>(dims.size()));
    std::size_t n = 1;
    for (auto d : dims) {
      w.u32(d);
      n *= d;
    }
    if (dims.empty()) n = 0;
    if (n != data.size()) throw ShapeError("checkpoint: tensor '" + name + "' data does not match dims");
    w.f64s(data.data(), data.size());
  };
  for (const auto& [k, v] : ck.meta) {
    if (k.find('=') != std::string::npos) throw ConfigError("checkpoint: manifest key may not contain '='");
    put("meta." + k + "=" + v, {}, {});
  }
  for (const auto& t : ck.tensors) put(t.name, t.dims, t.data);
  w.finish(path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  io::ByteReader r(path, kCheckpointMagic);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  r.verify_checksum();
  Checkpoint ck;
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t len = r.u32();
    if (len > r.remaining()) throw FormatError(path.string() + ": truncated");
    std::string name = r.text(len);
    const std::uint32_t rank = r.u32();
    if (std::size_t{rank} * 4 > r.remaining()) throw FormatError(path.string() + ": truncated");
    std::vector<std::uint32_t> dims(rank);
    std::size_t n = rank ? 1 : 0;
    for (auto& d : dims) n *= (d = r.u32());
    if (n * sizeof(double) > r.remaining()) throw FormatError(path.string() + ": truncated");
    std::vector<double> data(n);
    r.f64s(data.data(), n);
    if (rank == 0 && name.rfind("meta.", 0) == 0) {
      const auto eq = name.find('=');
      if (eq == std::string::npos) throw FormatError(path.string() + ": malformed manifest entry");
      ck.meta[name.substr(5, eq - 5)] = name.substr(eq + 1);
    } else {
      ck.tensors.push_back({std::move(name), std::move(dims), std::move(data)});
    }
  }
  r.expect_end();
  return ck;
}

}  // namespace nmrom::nn
