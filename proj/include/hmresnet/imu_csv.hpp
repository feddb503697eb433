#pragma once

// Generic multi-IMU ingestion. One CSV per recording: a header row naming
// "<sensor>_<channel>" columns, one sample per row, label column last.
// A JSON schema declares the sensors, channels, rate and windowing.

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "hmresnet/dataset.hpp"
#include "hmresnet/signal.hpp"
#include "hmresnet/text.hpp"
#include "json.hpp"

namespace hmresnet {

struct ImuSensorSchema {
  std::string name;
  std::vector<std::string> channels;
  friend bool operator==(const ImuSensorSchema&, const ImuSensorSchema&) = default;
};

struct ImuSchema {
  std::vector<ImuSensorSchema> sensors;
  std::vector<std::string> classes;
  double sample_rate = 25.0;
  std::size_t window = 25;
  double overlap = 0.8;
  std::string label_column = "label";
  bool include_magnetometer = false;
  bool median_filter = true;
  double noise_cutoff_hz = 20.0;  // <= 0 disables
  int noise_order = 3;
  bool gravity_split = false;     // adds "<acc>_gravity" channels, keeps body in place
  double gravity_cutoff_hz = 0.3;
  int gravity_order = 3;

  void validate() const {
    std::vector<std::string> bad;
    if (sensors.empty()) bad.push_back("sensors must not be empty");
    for (const auto& s : sensors)
      if (s.channels.empty()) bad.push_back("sensor '" + s.name + "' declares no channels");
    if (classes.size() < 2) bad.push_back("classes must list at least 2 names");
    if (!(sample_rate > 0)) bad.push_back("sample_rate must be > 0");
    if (window < 2) bad.push_back("window must be >= 2");
    if (!(overlap >= 0 && overlap < 1)) bad.push_back("overlap must lie in [0, 1)");
    if (bad.empty()) return;
    std::string msg = "invalid IMU schema:";
    for (const auto& b : bad) msg += "\n  - " + b;
    throw ConfigError(msg);
  }
};

inline void to_json(nlohmann::json& j, const ImuSensorSchema& s) {
  j = {{"name", s.name}, {"channels", s.channels}};
}
inline void from_json(const nlohmann::json& j, ImuSensorSchema& s) {
  j.at("name").get_to(s.name);
  j.at("channels").get_to(s.channels);
}

inline void to_json(nlohmann::json& j, const ImuSchema& s) {
  j = {{"sensors", s.sensors},
       {"classes", s.classes},
       {"sample_rate", s.sample_rate},
       {"window", s.window},
       {"overlap", s.overlap},
       {"label_column", s.label_column},
       {"include_magnetometer", s.include_magnetometer},
       {"median_filter", s.median_filter},
       {"noise_cutoff_hz", s.noise_cutoff_hz},
       {"noise_order", s.noise_order},
       {"gravity_split", s.gravity_split},
       {"gravity_cutoff_hz", s.gravity_cutoff_hz},
       {"gravity_order", s.gravity_order}};
}

inline void from_json(const nlohmann::json& j, ImuSchema& s) {
  const nlohmann::json defaults = ImuSchema{};
  for (const auto& [k, v] : j.items())
    if (!defaults.contains(k)) throw ConfigError("unknown IMU schema key '" + k + "'");
  try {
    j.at("sensors").get_to(s.sensors);
    j.at("classes").get_to(s.classes);
    auto opt = [&](const char* key, auto& field) {
      if (j.contains(key)) j.at(key).get_to(field);
    };
    opt("sample_rate", s.sample_rate);
    opt("window", s.window);
    opt("overlap", s.overlap);
    opt("label_column", s.label_column);
    opt("include_magnetometer", s.include_magnetometer);
    opt("median_filter", s.median_filter);
    opt("noise_cutoff_hz", s.noise_cutoff_hz);
    opt("noise_order", s.noise_order);
    opt("gravity_split", s.gravity_split);
    opt("gravity_cutoff_hz", s.gravity_cutoff_hz);
    opt("gravity_order", s.gravity_order);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("IMU schema: ") + e.what());
  }
}

namespace detail {

inline bool is_magnetometer(const std::string& channel) {
  return channel.rfind("mag", 0) == 0;
}

inline bool is_accelerometer(const std::string& channel) {
  return channel.rfind("acc", 0) == 0;
}

inline bool is_missing(std::string_view cell) {
  return cell.empty() || cell == "NaN" || cell == "nan" || cell == "NA";
}

// Majority label; a tie goes to the label that occurs first in the window.
inline std::size_t majority(const std::vector<std::size_t>& labels, std::size_t from, std::size_t n) {
  std::map<std::size_t, std::size_t> count;
  for (std::size_t i = from; i < from + n; ++i) ++count[labels[i]];
  std::size_t best = labels[from], best_count = 0;
  for (std::size_t i = from; i < from + n; ++i) {
    const std::size_t c = count[labels[i]];
    if (c > best_count) {
      best = labels[i];
      best_count = c;
    }
  }
  return best;
}

}  // namespace detail

/// Reads one recording and windows it. `subject` tags every window.
inline WindowedDataset load_multi_imu_csv(const std::filesystem::path& path, const ImuSchema& schema,
                                          const std::string& subject) {
  schema.validate();
  const auto lines = text::read_lines(path);
  if (lines.empty()) throw InputError("'" + path.string() + "' is empty");
  if (lines.size() < 2) throw InputError("'" + path.string() + "' has a header but no samples");

  // Column lookup from the header.
  const auto header = text::split(lines[0], ',');
  std::map<std::string, std::size_t> declared;  // column name -> order in schema
  std::vector<std::string> column_names;
  for (const auto& s : schema.sensors)
    for (const auto& c : s.channels) {
      declared.emplace(s.name + "_" + c, declared.size());
      column_names.push_back(s.name + "_" + c);
    }
  if (header.empty() || header.back() != schema.label_column)
    throw InputError(text::where(path, 1) + ": last column must be the label column '" +
                     schema.label_column + "'");
  std::vector<std::size_t> column_of(declared.size(), SIZE_MAX);
  for (std::size_t i = 0; i + 1 < header.size(); ++i) {
    const std::string name(header[i]);
    auto it = declared.find(name);
    if (it == declared.end())
      throw InputError(text::where(path, 1) + ": column '" + name + "' is not declared in the schema");
    if (column_of[it->second] != SIZE_MAX)
      throw InputError(text::where(path, 1) + ": column '" + name + "' appears twice");
    column_of[it->second] = i;
  }
  for (std::size_t k = 0; k < column_of.size(); ++k)
    if (column_of[k] == SIZE_MAX)
      throw InputError(text::where(path, 1) + ": declared column '" + column_names[k] + "' is missing");

  std::map<std::string, std::size_t> class_index;
  for (std::size_t i = 0; i < schema.classes.size(); ++i) class_index[schema.classes[i]] = i;

  const std::size_t n = lines.size() - 1;
  std::vector<signal::Signal> columns(declared.size(), signal::Signal(n));
  std::vector<std::size_t> labels(n);
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t line_no = r + 2;
    const auto cells = text::split(lines[r + 1], ',');
    if (cells.size() != header.size())
      throw InputError(text::where(path, line_no) + ": expected " + std::to_string(header.size()) +
                       " cells, found " + std::to_string(cells.size()));
    for (std::size_t k = 0; k < declared.size(); ++k) {
      const auto cell = cells[column_of[k]];
      double v;
      if (detail::is_missing(cell))
        v = std::numeric_limits<double>::quiet_NaN();
      else if (!text::to_double(cell, v))
        throw InputError(text::where(path, line_no) + ", column '" + column_names[k] + "': '" +
                         std::string(cell) + "' is not numeric");
      columns[k][r] = v;
    }
    const std::string label(cells.back());
    if (auto it = class_index.find(label); it != class_index.end()) {
      labels[r] = it->second;
    } else {
      double v;
      if (!text::to_double(label, v) || v != static_cast<double>(static_cast<long>(v)) || v < 0 ||
          v >= static_cast<double>(schema.classes.size()))
        throw InputError(text::where(path, line_no) + ", column '" + schema.label_column +
                         "': label '" + label + "' is neither a class name nor an index in [0, " +
                         std::to_string(schema.classes.size()) + ")");
      labels[r] = static_cast<std::size_t>(v);
    }
  }

  const bool noise = schema.noise_cutoff_hz > 0 && schema.noise_cutoff_hz < schema.sample_rate / 2;
  nlohmann::json pre = {{"source", "multi_imu_csv"},
                        {"schema", schema},
                        {"noise_lowpass", noise ? "applied" : "skipped"}};
  if (schema.noise_cutoff_hz > 0 && !noise)
    pre["noise_lowpass_note"] = "cutoff at or above Nyquist (" +
                                std::to_string(schema.sample_rate / 2) + " Hz); stage skipped";

  // Per-channel preprocessing, then assemble the output channel list.
  WindowedDataset d;
  std::vector<signal::Signal> out_channels;
  std::size_t k = 0;
  for (const auto& s : schema.sensors) {
    std::size_t used = 0;
    std::vector<signal::Signal> gravity;
    std::vector<std::string> gravity_names;
    for (const auto& c : s.channels) {
      signal::Signal x = std::move(columns[k++]);
      if (detail::is_magnetometer(c) && !schema.include_magnetometer) continue;
      x = signal::impute_missing(x);
      if (schema.median_filter) x = signal::median_filter(x, 3);
      if (noise) x = signal::butterworth_lowpass(x, schema.noise_cutoff_hz, schema.noise_order, schema.sample_rate);
      if (schema.gravity_split && detail::is_accelerometer(c)) {
        auto split = signal::separate_gravity(x, schema.sample_rate, schema.gravity_cutoff_hz,
                                              schema.gravity_order);
        x = std::move(split.body);
        gravity.push_back(std::move(split.gravity));
        gravity_names.push_back(s.name + "_" + c + "_gravity");
      }
      out_channels.push_back(std::move(x));
      d.channel_names.push_back(s.name + "_" + c);
      ++used;
    }
    for (std::size_t g = 0; g < gravity.size(); ++g) {
      out_channels.push_back(std::move(gravity[g]));
      d.channel_names.push_back(gravity_names[g]);
      ++used;
    }
    if (used == 0)
      throw ConfigError("sensor '" + s.name + "' has no channels left after excluding magnetometers");
    d.sensors.push_back({s.name, used});
  }

  if (schema.window > n)
    throw InputError("'" + path.string() + "' has " + std::to_string(n) + " samples, fewer than one " +
                     std::to_string(schema.window) + "-sample window");
  const auto starts = signal::window_starts(n, schema.window, schema.overlap);
  d.class_names = schema.classes;
  d.windows = Tensor<double>({starts.size(), out_channels.size(), schema.window});
  for (std::size_t w = 0; w < starts.size(); ++w) {
    for (std::size_t c = 0; c < out_channels.size(); ++c)
      std::copy_n(out_channels[c].begin() + static_cast<std::ptrdiff_t>(starts[w]), schema.window,
                  &d.windows(w, c, 0));
    d.labels.push_back(detail::majority(labels, starts[w], schema.window));
    d.subjects.push_back(subject);
  }
  d.preprocessing = std::move(pre);
  d.validate();
  return d;
}

/// Concatenates datasets with identical layout (several recordings).
inline WindowedDataset concatenate(const std::vector<WindowedDataset>& parts) {
  if (parts.empty()) throw InvalidArgument("concatenate: no datasets");
  WindowedDataset out;
  const auto& first = parts.front();
  out.sensors = first.sensors;
  out.channel_names = first.channel_names;
  out.class_names = first.class_names;
  out.preprocessing = first.preprocessing;
  std::size_t n = 0;
  for (const auto& p : parts) {
    if (p.sensors != first.sensors || p.channel_names != first.channel_names ||
        p.class_names != first.class_names || p.window_length() != first.window_length())
      throw InputError("recordings disagree on channel layout or classes");
    if (p.normalization) throw InvalidArgument("concatenate expects unnormalized recordings");
    n += p.size();
  }
  out.windows = Tensor<double>({n, first.channels(), first.window_length()});
  std::size_t at = 0;
  for (const auto& p : parts) {
    std::copy_n(p.windows.ptr(), p.windows.size(), out.windows.ptr() + at);
    at += p.windows.size();
    out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
    out.subjects.insert(out.subjects.end(), p.subjects.begin(), p.subjects.end());
  }
  return out;
}

}  // namespace hmresnet
