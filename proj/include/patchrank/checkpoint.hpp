#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <type_traits>
#include <vector>

#include "patchrank/errors.hpp"
#include "patchrank/layers.hpp"
#include "patchrank/network.hpp"

namespace patchrank {

// Checkpoint file layout (all integers little-endian):
//   8 bytes   magic "PRCKPT\r\n"
//   u32       format version
//   u32       element size in bytes (4 or 8)
//   u64       header length H
//   H bytes   JSON header: metadata, and per network its name, input shape,
//             layer specs and parameter shapes
//   ...       raw parameter buffers, network by network, in header order
inline constexpr char kCheckpointMagic[8] = {'P', 'R', 'C', 'K', 'P', 'T', '\r', '\n'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
struct NamedNetwork {
  std::string name;
  Network<T> network;
};

template <typename T>
struct Checkpoint {
  nlohmann::json metadata = nlohmann::json::object();
  std::vector<NamedNetwork<T>> networks;

  const Network<T>& get(const std::string& name) const {
    for (const auto& n : networks)
      if (n.name == name) return n.network;
    throw DataError("checkpoint has no network named '" + name + "'");
  }
};

inline nlohmann::json layer_to_json(const LayerSpec& s) {
  nlohmann::json j{{"kind", std::string(to_string(s.kind))}};
  if (s.has_params()) {
    j["kernel"] = s.kernel;
    j["stride"] = s.stride;
    j["padding"] = s.padding;
    j["in_channels"] = s.in_channels;
    j["out_channels"] = s.out_channels;
  }
  if (s.kind == LayerKind::kLeakyRelu) j["slope"] = s.slope;
  return j;
}

inline LayerSpec layer_from_json(const nlohmann::json& j) {
  LayerSpec s;
  s.kind = parse_layer_kind(j.at("kind").get<std::string>());
  if (s.has_params()) {
    s.kernel = j.at("kernel").get<int>();
    s.stride = j.at("stride").get<int>();
    s.padding = j.at("padding").get<int>();
    s.in_channels = j.at("in_channels").get<int>();
    s.out_channels = j.at("out_channels").get<int>();
  }
  if (s.kind == LayerKind::kLeakyRelu) s.slope = j.at("slope").get<double>();
  return s;
}

template <typename T>
void save_checkpoint(const Checkpoint<T>& ckpt, const std::filesystem::path& path) {
  static_assert(std::is_floating_point_v<T>);
  nlohmann::json header;
  header["metadata"] = ckpt.metadata;
  header["networks"] = nlohmann::json::array();
  for (const auto& [name, net] : ckpt.networks) {
    nlohmann::json n{{"name", name}, {"input_shape", net.input_shape()}};
    n["layers"] = nlohmann::json::array();
    for (const auto& l : net.layers()) n["layers"].push_back(layer_to_json(l));
    n["params"] = nlohmann::json::array();
    for (const auto& p : net.params()) n["params"].push_back(p.shape());
    header["networks"].push_back(std::move(n));
  }
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  auto put = [&](const void* p, std::size_t n) { out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); };
  const std::uint32_t version = kCheckpointVersion;
  const std::uint32_t elem = sizeof(T);
  const std::uint64_t len = text.size();
  put(kCheckpointMagic, sizeof(kCheckpointMagic));
  put(&version, sizeof(version));
  put(&elem, sizeof(elem));
  put(&len, sizeof(len));
  put(text.data(), text.size());
  for (const auto& named : ckpt.networks)
    for (const auto& p : named.network.params()) put(p.data(), p.size() * sizeof(T));
  if (!out) throw DataError("failed writing checkpoint " + path.string());
}

namespace detail {

template <typename Src, typename T>
void read_params(std::istream& in, Network<T>& net, const std::string& path) {
  for (auto& p : net.mutable_params()) {
    std::vector<Src> buf(p.size());
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(Src)));
    if (!in) throw DataError("truncated checkpoint " + path);
    for (std::size_t i = 0; i < buf.size(); ++i) p[i] = static_cast<T>(buf[i]);
  }
}

}  // namespace detail

/// Loads a checkpoint, converting parameters if it was written with a
/// different element type.
template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  char magic[8];
  std::uint32_t version = 0, elem = 0;
  std::uint64_t len = 0;
  in.read(magic, sizeof(magic));
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  in.read(reinterpret_cast<char*>(&elem), sizeof(elem));
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw DataError(path.string() + " is not a patchrank checkpoint");
  }
  if (version != kCheckpointVersion) {
    throw DataError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  if (elem != 4 && elem != 8) throw DataError(path.string() + ": bad element size");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw DataError("truncated checkpoint " + path.string());

  const auto header = nlohmann::json::parse(text);
  Checkpoint<T> ckpt;
  ckpt.metadata = header.at("metadata");
  for (const auto& n : header.at("networks")) {
    std::vector<LayerSpec> layers;
    for (const auto& l : n.at("layers")) layers.push_back(layer_from_json(l));
    Network<T> net(std::move(layers), n.at("input_shape").get<Shape>());
    const auto shapes = n.at("params").get<std::vector<Shape>>();
    if (shapes.size() != net.params().size()) throw DataError(path.string() + ": parameter count mismatch");
    for (std::size_t i = 0; i < shapes.size(); ++i) {
      if (shapes[i] != net.params()[i].shape()) throw DataError(path.string() + ": parameter shape mismatch");
    }
    if (elem == 4) {
      detail::read_params<float>(in, net, path.string());
    } else {
      detail::read_params<double>(in, net, path.string());
    }
    ckpt.networks.push_back({n.at("name").get<std::string>(), std::move(net)});
  }
  return ckpt;
}

}  // namespace patchrank
