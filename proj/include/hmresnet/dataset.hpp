#pragma once

#include <cmath>
#include <filesystem>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "hmresnet/container.hpp"
#include "hmresnet/model_config.hpp"
#include "hmresnet/tensor.hpp"
#include "json.hpp"

namespace hmresnet {

/// Per-channel z-score statistics, computed on a training split.
struct Normalization {
  std::vector<double> mean;
  std::vector<double> stddev;
  friend bool operator==(const Normalization&, const Normalization&) = default;
};

inline void to_json(nlohmann::json& j, const Normalization& n) {
  j = {{"mean", n.mean}, {"std", n.stddev}};
}
inline void from_json(const nlohmann::json& j, Normalization& n) {
  j.at("mean").get_to(n.mean);
  j.at("std").get_to(n.stddev);
}

/// Windows stored channels-major as one [N x C x L] tensor. Channels are
/// grouped sensor by sensor in the order of `sensors`.
struct WindowedDataset {
  std::vector<SensorSpec> sensors;
  std::vector<std::string> channel_names;
  std::vector<std::string> class_names;
  Tensor<double> windows;
  std::vector<std::size_t> labels;
  std::vector<std::string> subjects;
  std::optional<Normalization> normalization;  // set once applied
  nlohmann::json preprocessing = nlohmann::json::object();

  std::size_t size() const { return labels.size(); }
  std::size_t channels() const { return windows.empty() ? 0 : windows.dim(1); }
  std::size_t window_length() const { return windows.empty() ? 0 : windows.dim(2); }
  std::size_t class_count() const { return class_names.size(); }

  void validate() const {
    if (labels.empty()) throw InputError("dataset has no windows");
    if (windows.rank() != 3 || windows.dim(0) != labels.size())
      throw InputError("dataset windows " + to_string(windows.shape()) + " do not match " +
                       std::to_string(labels.size()) + " labels");
    if (subjects.size() != labels.size())
      throw InputError("dataset has " + std::to_string(subjects.size()) +
                       " subject ids for " + std::to_string(labels.size()) + " windows");
    std::size_t c = 0;
    for (const auto& s : sensors) c += s.channels;
    if (c != windows.dim(1) || channel_names.size() != c)
      throw InputError("dataset sensor layout does not match its " +
                       std::to_string(windows.dim(1)) + " channels");
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] >= class_names.size())
        throw InputError("window " + std::to_string(i) + " has label " +
                         std::to_string(labels[i]) + " outside [0, " +
                         std::to_string(class_names.size()) + ")");
  }

  /// Copy of the selected windows, in the given order.
  WindowedDataset subset(const std::vector<std::size_t>& idx) const {
    WindowedDataset out;
    out.sensors = sensors;
    out.channel_names = channel_names;
    out.class_names = class_names;
    out.normalization = normalization;
    out.preprocessing = preprocessing;
    const std::size_t c = channels(), l = window_length(), stride = c * l;
    out.windows = idx.empty() ? Tensor<double>() : Tensor<double>({idx.size(), c, l});
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const std::size_t i = idx[k];
      if (i >= size()) throw InvalidArgument("subset index " + std::to_string(i) + " out of range");
      std::copy_n(windows.ptr() + i * stride, stride, out.windows.ptr() + k * stride);
      out.labels.push_back(labels[i]);
      out.subjects.push_back(subjects[i]);
    }
    return out;
  }

  /// The selected windows as a model batch of element type T.
  template <typename T>
  Tensor<T> batch(const std::vector<std::size_t>& idx) const {
    const std::size_t stride = channels() * window_length();
    Tensor<T> out({idx.size(), channels(), window_length()});
    for (std::size_t k = 0; k < idx.size(); ++k)
      for (std::size_t j = 0; j < stride; ++j)
        out.ptr()[k * stride + j] = static_cast<T>(windows.ptr()[idx[k] * stride + j]);
    return out;
  }

  std::vector<std::size_t> class_histogram() const {
    std::vector<std::size_t> h(class_names.size(), 0);
    for (std::size_t y : labels) ++h.at(y);
    return h;
  }
};

/// Per-channel mean and population standard deviation over every window.
/// A constant channel gets std 1 so it maps to zero rather than NaN.
inline Normalization compute_normalization(const WindowedDataset& d) {
  const std::size_t n = d.size(), c = d.channels(), l = d.window_length();
  Normalization s{std::vector<double>(c, 0.0), std::vector<double>(c, 0.0)};
  for (std::size_t ch = 0; ch < c; ++ch) {
    double sum = 0, sq = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double* row = d.windows.ptr() + (i * c + ch) * l;
      for (std::size_t t = 0; t < l; ++t) sum += row[t];
    }
    const double mean = sum / static_cast<double>(n * l);
    for (std::size_t i = 0; i < n; ++i) {
      const double* row = d.windows.ptr() + (i * c + ch) * l;
      for (std::size_t t = 0; t < l; ++t) sq += (row[t] - mean) * (row[t] - mean);
    }
    const double sd = std::sqrt(sq / static_cast<double>(n * l));
    s.mean[ch] = mean;
    s.stddev[ch] = sd > 0 ? sd : 1.0;
  }
  return s;
}

/// Applies the statistics in place. Refuses a dataset that already carries
/// applied statistics.
inline void apply_normalization(WindowedDataset& d, const Normalization& s) {
  if (d.normalization)
    throw InvalidArgument("dataset is already normalized; refusing to normalize twice");
  const std::size_t n = d.size(), c = d.channels(), l = d.window_length();
  if (s.mean.size() != c || s.stddev.size() != c)
    throw ShapeError("normalization has " + std::to_string(s.mean.size()) +
                     " channels, dataset has " + std::to_string(c));
  for (std::size_t ch = 0; ch < c; ++ch)
    if (!(s.stddev[ch] > 0))
      throw InvalidArgument("normalization std of channel " + std::to_string(ch) + " is not positive");
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) {
      double* row = d.windows.ptr() + (i * c + ch) * l;
      for (std::size_t t = 0; t < l; ++t) row[t] = (row[t] - s.mean[ch]) / s.stddev[ch];
    }
  d.normalization = s;
}

// --- dataset files ----------------------------------------------------------

inline constexpr char kDatasetMagic[] = "HMRD";
inline constexpr std::uint32_t kDatasetVersion = 1;

/// Manifest: everything about a dataset except the window values.
inline nlohmann::json manifest(const WindowedDataset& d) {
  nlohmann::json j;
  j["window_count"] = d.size();
  j["window_length"] = d.window_length();
  j["sensors"] = d.sensors;
  j["channels"] = d.channel_names;
  j["classes"] = d.class_names;
  j["class_counts"] = d.class_histogram();
  j["subjects"] = d.subjects;
  j["normalization"] = d.normalization ? nlohmann::json(*d.normalization) : nlohmann::json();
  j["preprocessing"] = d.preprocessing;
  return j;
}

inline io::Bytes serialize_dataset(const WindowedDataset& d) {
  d.validate();
  auto w = io::begin(kDatasetMagic, kDatasetVersion, manifest(d).dump());
  w.put_tensor("windows", d.windows);
  Tensor<double> labels({d.size()});
  for (std::size_t i = 0; i < d.size(); ++i) labels[i] = static_cast<double>(d.labels[i]);
  w.put_tensor("labels", labels);
  return std::move(w).finish();
}

inline WindowedDataset deserialize_dataset(const io::Bytes& bytes) {
  auto c = io::decode(bytes, kDatasetMagic, kDatasetVersion);
  WindowedDataset d;
  try {
    const auto j = nlohmann::json::parse(c.json);
    j.at("sensors").get_to(d.sensors);
    j.at("channels").get_to(d.channel_names);
    j.at("classes").get_to(d.class_names);
    j.at("subjects").get_to(d.subjects);
    if (!j.at("normalization").is_null()) d.normalization = j.at("normalization").get<Normalization>();
    d.preprocessing = j.at("preprocessing");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("dataset manifest is malformed: ") + e.what());
  }
  bool have_windows = false, have_labels = false;
  for (auto& [name, t] : c.tensors) {
    if (name == "windows") {
      d.windows = std::move(t);
      have_windows = true;
    } else if (name == "labels") {
      for (double v : t.data()) {
        if (!(v >= 0) || v != std::floor(v)) throw FormatError("dataset label is not a class index");
        d.labels.push_back(static_cast<std::size_t>(v));
      }
      have_labels = true;
    } else {
      throw FormatError("dataset file has unexpected tensor '" + name + "'");
    }
  }
  if (!have_windows || !have_labels) throw FormatError("dataset file lacks windows or labels");
  try {
    d.validate();
  } catch (const InputError& e) {
    throw FormatError(e.what());
  }
  return d;
}

inline void save_dataset(const WindowedDataset& d, const std::filesystem::path& path) {
  io::atomic_write(path, serialize_dataset(d));
}

inline WindowedDataset load_dataset(const std::filesystem::path& path) {
  return deserialize_dataset(io::read_file(path));
}

}  // namespace hmresnet
