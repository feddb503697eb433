#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "hmresnet/container.hpp"
#include "hmresnet/model.hpp"

namespace hmresnet {

inline constexpr char kModelMagic[] = "HMRN";
inline constexpr std::uint32_t kModelVersion = 1;

/// Model file: "HMRN", version, canonical config JSON, every learned
/// parameter followed by every state buffer (BN running stats, input
/// normalisation), CRC-32.
template <typename T>
io::Bytes serialize(HmresnetModel<T>& model) {
  const std::string json = nlohmann::json(model.config()).dump();
  auto w = io::begin(kModelMagic, kModelVersion, json);
  for (const auto& p : model.parameters()) w.put_tensor(p.name, *p.value);
  for (const auto& s : model.state_buffers()) w.put_tensor(s.name, *s.value);
  return std::move(w).finish();
}

template <typename T>
HmresnetModel<T> deserialize(const io::Bytes& bytes) {
  auto c = io::decode(bytes, kModelMagic, kModelVersion);
  ModelConfig cfg;
  try {
    cfg = nlohmann::json::parse(c.json).get<ModelConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model config is not valid JSON: ") + e.what());
  }
  HmresnetModel<T> model(cfg);
  std::map<std::string, Tensor<T>*> slots;
  for (auto& p : model.parameters()) slots[p.name] = p.value;
  for (auto& s : model.state_buffers()) slots[s.name] = s.value;
  for (auto& [name, tensor] : c.tensors) {
    auto it = slots.find(name);
    if (it == slots.end())
      throw FormatError("model file has unexpected tensor '" + name + "'");
    if (it->second->shape() != tensor.shape())
      throw FormatError("tensor '" + name + "' has shape " +
                        to_string(tensor.shape()) + ", config expects " +
                        to_string(it->second->shape()));
    *it->second = tensor.template cast<T>();
    slots.erase(it);
  }
  if (!slots.empty())
    throw FormatError("model file is missing tensor '" + slots.begin()->first + "'");
  return model;
}

template <typename T>
void save_model(HmresnetModel<T>& model, const std::filesystem::path& path) {
  io::atomic_write(path, serialize(model));
}

template <typename T>
HmresnetModel<T> load_model(const std::filesystem::path& path) {
  return deserialize<T>(io::read_file(path));
}

}  // namespace hmresnet
