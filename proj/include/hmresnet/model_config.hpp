#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "json.hpp"

#include "hmresnet/error.hpp"

namespace hmresnet {

struct SensorSpec {
  std::string name;
  std::size_t channels = 0;
  friend bool operator==(const SensorSpec&, const SensorSpec&) = default;
};

// per_channel: one residual extractor per scalar channel (input 1 x L).
// per_sensor: one extractor per sensor over all its channels (C x L).
enum class ChannelMode { per_channel, per_sensor };

struct ModelConfig {
  std::vector<SensorSpec> sensors;
  std::size_t window_length = 128;
  std::size_t mcfeu_stack_depth = 3;
  std::array<std::size_t, 3> kernel_sizes{9, 5, 3};
  std::array<std::size_t, 3> feature_maps{32, 64, 64};
  std::vector<std::size_t> bottleneck_widths{1000, 1000};
  std::vector<std::size_t> decision_hidden_widths{1000, 1000};
  std::size_t decision_stack_depth = 1;
  std::size_t class_count = 6;
  std::vector<std::string> class_names;
  double dropout_rate = 0.3;
  double bn_epsilon = 1e-5;
  double bn_momentum = 0.9;
  double init_sigma2 = 0.05;
  bool residual_shortcuts = true;
  ChannelMode channel_mode = ChannelMode::per_channel;

  std::size_t total_channels() const {
    std::size_t n = 0;
    for (const auto& s : sensors) n += s.channels;
    return n;
  }

  std::size_t feature_width() const { return feature_maps.back(); }
  std::size_t fused_width() const {
    return bottleneck_widths.back() * sensors.size();
  }

  // Collects every violated invariant into one ConfigError.
  void validate() const {
    std::vector<std::string> problems;
    if (sensors.empty()) problems.push_back("sensors: at least one sensor required");
    for (std::size_t i = 0; i < sensors.size(); ++i) {
      if (sensors[i].channels == 0)
        problems.push_back("sensors[" + std::to_string(i) + "].channels must be >= 1");
      if (sensors[i].name.empty())
        problems.push_back("sensors[" + std::to_string(i) + "].name is empty");
    }
    if (window_length < 1) problems.push_back("window_length must be >= 1");
    if (mcfeu_stack_depth < 1) problems.push_back("mcfeu_stack_depth must be >= 1");
    if (decision_stack_depth < 1) problems.push_back("decision_stack_depth must be >= 1");
    for (std::size_t k : kernel_sizes)
      if (k < 1 || k % 2 == 0)
        problems.push_back("kernel_sizes must be odd positive integers, got " +
                           std::to_string(k));
    if (feature_maps != std::array<std::size_t, 3>{32, 64, 64})
      problems.push_back("feature_maps must be (32, 64, 64)");
    if (bottleneck_widths.empty()) problems.push_back("bottleneck_widths is empty");
    if (decision_hidden_widths.empty())
      problems.push_back("decision_hidden_widths is empty");
    for (std::size_t w : bottleneck_widths)
      if (w == 0) problems.push_back("bottleneck_widths entries must be >= 1");
    for (std::size_t w : decision_hidden_widths)
      if (w == 0) problems.push_back("decision_hidden_widths entries must be >= 1");
    if (class_count < 2) problems.push_back("class_count must be >= 2");
    if (!class_names.empty() && class_names.size() != class_count)
      problems.push_back("class_names has " + std::to_string(class_names.size()) +
                         " entries but class_count is " + std::to_string(class_count));
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
      problems.push_back("dropout_rate must lie in [0, 1)");
    if (!(bn_epsilon > 0.0)) problems.push_back("bn_epsilon must be > 0");
    if (!(bn_momentum >= 0.0 && bn_momentum <= 1.0))
      problems.push_back("bn_momentum must lie in [0, 1]");
    if (!(init_sigma2 > 0.0)) problems.push_back("init_sigma2 must be > 0");
    if (problems.empty()) return;
    std::string msg = "invalid ModelConfig:";
    for (const auto& p : problems) msg += "\n  - " + p;
    throw ConfigError(msg);
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

NLOHMANN_JSON_SERIALIZE_ENUM(ChannelMode, {
                                              {ChannelMode::per_channel, "per_channel"},
                                              {ChannelMode::per_sensor, "per_sensor"},
                                          })

inline void to_json(nlohmann::json& j, const SensorSpec& s) {
  j = nlohmann::json{{"name", s.name}, {"channels", s.channels}};
}

inline void from_json(const nlohmann::json& j, SensorSpec& s) {
  j.at("name").get_to(s.name);
  j.at("channels").get_to(s.channels);
}

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{
      {"sensors", c.sensors},
      {"window_length", c.window_length},
      {"mcfeu_stack_depth", c.mcfeu_stack_depth},
      {"kernel_sizes", c.kernel_sizes},
      {"feature_maps", c.feature_maps},
      {"bottleneck_widths", c.bottleneck_widths},
      {"decision_hidden_widths", c.decision_hidden_widths},
      {"decision_stack_depth", c.decision_stack_depth},
      {"class_count", c.class_count},
      {"class_names", c.class_names},
      {"dropout_rate", c.dropout_rate},
      {"bn_epsilon", c.bn_epsilon},
      {"bn_momentum", c.bn_momentum},
      {"init_sigma2", c.init_sigma2},
      {"residual_shortcuts", c.residual_shortcuts},
      {"channel_mode", c.channel_mode},
  };
}

// Missing keys keep their defaults, so partial documents are accepted.
inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  static const std::vector<std::string> known{
      "sensors", "window_length", "mcfeu_stack_depth", "kernel_sizes",
      "feature_maps", "bottleneck_widths", "decision_hidden_widths",
      "decision_stack_depth", "class_count", "class_names", "dropout_rate",
      "bn_epsilon", "bn_momentum", "init_sigma2", "residual_shortcuts",
      "channel_mode"};
  for (const auto& [key, _] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw ConfigError("unknown model config field '" + key + "'");
  try {
    auto opt = [&](const char* key, auto& field) {
      if (j.contains(key)) j.at(key).get_to(field);
    };
    opt("sensors", c.sensors);
    opt("window_length", c.window_length);
    opt("mcfeu_stack_depth", c.mcfeu_stack_depth);
    opt("kernel_sizes", c.kernel_sizes);
    opt("feature_maps", c.feature_maps);
    opt("bottleneck_widths", c.bottleneck_widths);
    opt("decision_hidden_widths", c.decision_hidden_widths);
    opt("decision_stack_depth", c.decision_stack_depth);
    opt("class_count", c.class_count);
    opt("class_names", c.class_names);
    opt("dropout_rate", c.dropout_rate);
    opt("bn_epsilon", c.bn_epsilon);
    opt("bn_momentum", c.bn_momentum);
    opt("init_sigma2", c.init_sigma2);
    opt("residual_shortcuts", c.residual_shortcuts);
    opt("channel_mode", c.channel_mode);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed model config: ") + e.what());
  }
}

}  // namespace hmresnet
