#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "mvfuse/binio.hpp"
#include "mvfuse/common.hpp"
#include "mvfuse/nn.hpp"
#include "mvfuse/tensor.hpp"

namespace mvf {

/// Checkpoint file: magic "MVCK", u32 version, u32 entry count, then per
/// entry: name, u32 rank, u32 extents, float32 payload. Parameters and
/// batch-norm running statistics are stored uniformly; entries appear in the
/// model's visit order so identical training runs write identical bytes.
inline constexpr char kCheckpointMagic[4] = {'M', 'V', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointEntry {
  std::string name;
  std::vector<int> shape;
  std::vector<float> data;
};

inline void write_checkpoint_entries(const std::string& path,
                                     const std::vector<CheckpointEntry>& entries) {
  BinWriter w(path);
  w.bytes(kCheckpointMagic, 4);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    w.str(e.name);
    w.u32(static_cast<std::uint32_t>(e.shape.size()));
    std::size_t n = 1;
    for (int d : e.shape) {
      w.u32(static_cast<std::uint32_t>(d));
      n *= static_cast<std::size_t>(d);
    }
    MVF_CHECK(n == e.data.size(), Errc::invalid_argument, "checkpoint entry shape mismatch");
    w.bytes(e.data.data(), e.data.size() * sizeof(float));
  }
  w.close();
}

inline std::vector<CheckpointEntry> read_checkpoint_entries(const std::string& path) {
  BinReader r(path);
  char magic[4];
  r.bytes(magic, 4);
  MVF_CHECK(std::memcmp(magic, kCheckpointMagic, 4) == 0, Errc::data_format,
            "not a checkpoint file: " + path);
  const std::uint32_t version = r.u32();
  MVF_CHECK(version == kCheckpointVersion, Errc::data_version,
            "unsupported checkpoint version " + std::to_string(version) + " in " + path);
  const std::uint32_t count = r.u32();
  std::vector<CheckpointEntry> entries;
  entries.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    e.name = r.str();
    const std::uint32_t rank = r.u32();
    MVF_CHECK(rank <= 8, Errc::data_format, "unreasonable tensor rank in " + path);
    std::size_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const std::uint32_t extent = r.u32();
      e.shape.push_back(static_cast<int>(extent));
      n *= extent;
    }
    e.data.resize(n);
    if (n > 0) r.bytes(e.data.data(), n * sizeof(float));
    entries.push_back(std::move(e));
  }
  return entries;
}

/// Snapshot every parameter and buffer reachable from `net.visit`.
template <class Real, class Net>
std::vector<CheckpointEntry> snapshot_state(Net& net, const std::string& root = "model") {
  std::vector<CheckpointEntry> entries;
  nn::ParamVisitor<Real> v;
  v.on_param = [&](const std::string& name, TensorT<Real>& t) {
    CheckpointEntry e;
    e.name = name;
    e.shape = t.shape();
    e.data.assign(t.values().begin(), t.values().end());
    entries.push_back(std::move(e));
  };
  v.on_buffer = [&](const std::string& name, std::vector<Real>& b) {
    CheckpointEntry e;
    e.name = name;
    e.shape = {static_cast<int>(b.size())};
    e.data.assign(b.begin(), b.end());
    entries.push_back(std::move(e));
  };
  net.visit(root, v);
  return entries;
}

template <class Real, class Net>
void save_checkpoint(const std::string& path, Net& net, const std::string& root = "model") {
  write_checkpoint_entries(path, snapshot_state<Real>(net, root));
}

/// Strict load: every model tensor must be present with a matching shape and
/// every file entry must be consumed.
template <class Real, class Net>
void load_checkpoint(const std::string& path, Net& net, const std::string& root = "model") {
  const std::vector<CheckpointEntry> entries = read_checkpoint_entries(path);
  std::map<std::string, const CheckpointEntry*> table;
  for (const auto& e : entries) {
    MVF_CHECK(table.emplace(e.name, &e).second, Errc::data_format,
              "duplicate checkpoint entry: " + e.name);
  }
  std::set<std::string> used;
  auto take = [&](const std::string& name) -> const CheckpointEntry& {
    auto it = table.find(name);
    MVF_CHECK(it != table.end(), Errc::checkpoint_mismatch,
              "checkpoint is missing tensor: " + name);
    used.insert(name);
    return *it->second;
  };

  nn::ParamVisitor<Real> v;
  v.on_param = [&](const std::string& name, TensorT<Real>& t) {
    const CheckpointEntry& e = take(name);
    MVF_CHECK(e.shape == t.shape(), Errc::checkpoint_mismatch,
              "checkpoint shape mismatch for " + name);
    for (std::size_t i = 0; i < e.data.size(); ++i) t.values()[i] = static_cast<Real>(e.data[i]);
  };
  v.on_buffer = [&](const std::string& name, std::vector<Real>& b) {
    const CheckpointEntry& e = take(name);
    MVF_CHECK(e.shape == std::vector<int>{static_cast<int>(b.size())}, Errc::checkpoint_mismatch,
              "checkpoint shape mismatch for " + name);
    for (std::size_t i = 0; i < e.data.size(); ++i) b[i] = static_cast<Real>(e.data[i]);
  };
  net.visit(root, v);
  MVF_CHECK(used.size() == table.size(), Errc::checkpoint_mismatch,
            "checkpoint holds tensors unknown to the model");
}

}  // namespace mvf
