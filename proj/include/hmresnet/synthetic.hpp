#pragma once

// Labelled multi-sensor windows with class-dependent frequency, amplitude and
// offset per channel. Stands in for real recordings in tests and demos.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "hmresnet/dataset.hpp"

namespace hmresnet {

struct SyntheticSpec {
  std::vector<SensorSpec> sensors{{"imu", 3}};
  std::size_t window_length = 128;
  std::size_t class_count = 6;
  std::size_t windows_per_class = 10;
  std::size_t subjects = 5;
  double noise = 0.3;
  std::uint64_t seed = 1;
};

inline void to_json(nlohmann::json& j, const SyntheticSpec& s) {
  j = {{"sensors", s.sensors},   {"window_length", s.window_length},
       {"class_count", s.class_count}, {"windows_per_class", s.windows_per_class},
       {"subjects", s.subjects}, {"noise", s.noise}, {"seed", s.seed}};
}

inline void from_json(const nlohmann::json& j, SyntheticSpec& s) {
  static const std::vector<std::string> keys{"sensors",  "window_length", "class_count", "windows_per_class",
                                             "subjects", "noise",         "seed"};
  for (const auto& [k, v] : j.items())
    if (std::find(keys.begin(), keys.end(), k) == keys.end())
      throw ConfigError("unknown synthetic dataset key '" + k + "'");
  if (j.contains("sensors")) j.at("sensors").get_to(s.sensors);
  if (j.contains("window_length")) j.at("window_length").get_to(s.window_length);
  if (j.contains("class_count")) j.at("class_count").get_to(s.class_count);
  if (j.contains("windows_per_class")) j.at("windows_per_class").get_to(s.windows_per_class);
  if (j.contains("subjects")) j.at("subjects").get_to(s.subjects);
  if (j.contains("noise")) j.at("noise").get_to(s.noise);
  if (j.contains("seed")) j.at("seed").get_to(s.seed);
}

/// Windows are emitted class-interleaved (0, 1, ..., K-1, 0, 1, ...) and
/// subjects assigned round-robin.
inline WindowedDataset make_synthetic(const SyntheticSpec& spec) {
  if (spec.sensors.empty() || spec.window_length < 2 || spec.class_count < 2 ||
      spec.windows_per_class < 1 || spec.subjects < 1)
    throw ConfigError("synthetic dataset spec is degenerate");
  std::size_t c = 0;
  for (const auto& s : spec.sensors) c += s.channels;
  const std::size_t k = spec.class_count, l = spec.window_length;
  const std::size_t n = k * spec.windows_per_class;

  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, spec.noise);

  // Per class and channel: cycles per window, amplitude, offset.
  struct Wave { double cycles, amp, offset; };
  std::vector<Wave> wave(k * c);
  for (auto& w : wave) w = {1.0 + 7.0 * u(rng), 0.5 + 1.5 * u(rng), 2.0 * u(rng) - 1.0};

  WindowedDataset d;
  d.sensors = spec.sensors;
  for (const auto& s : spec.sensors)
    for (std::size_t i = 0; i < s.channels; ++i)
      d.channel_names.push_back(s.name + "_ch" + std::to_string(i));
  for (std::size_t i = 0; i < k; ++i) d.class_names.push_back("class" + std::to_string(i));
  d.windows = Tensor<double>({n, c, l});
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t y = i % k;
    d.labels.push_back(y);
    d.subjects.push_back("s" + std::to_string(i % spec.subjects + 1));
    for (std::size_t ch = 0; ch < c; ++ch) {
      const Wave& w = wave[y * c + ch];
      const double phase = 2 * std::numbers::pi * u(rng);
      for (std::size_t t = 0; t < l; ++t)
        d.windows(i, ch, t) = w.offset +
                              w.amp * std::sin(2 * std::numbers::pi * w.cycles * t / l + phase) +
                              noise(rng);
    }
  }
  d.preprocessing = {{"source", "synthetic"}, {"spec", spec}};
  return d;
}

}  // namespace hmresnet
