#pragma once

// Loader for the published smartphone HAR layout:
//   <root>/{train,test}/Inertial Signals/<signal>_{train,test}.txt
//   <root>/{train,test}/y_{train,test}.txt, subject_{train,test}.txt
// One window of 128 samples per row; labels 1..6.

#include <array>
#include <filesystem>
#include <string>
#include <utility>

#include "hmresnet/dataset.hpp"
#include "hmresnet/text.hpp"

namespace hmresnet {

inline constexpr std::array<const char*, 9> kUciharSignals{
    "body_acc_x",  "body_acc_y",  "body_acc_z",  "body_gyro_x", "body_gyro_y",
    "body_gyro_z", "total_acc_x", "total_acc_y", "total_acc_z"};

inline const std::vector<std::string>& ucihar_class_names() {
  static const std::vector<std::string> names{"WALKING", "WALKING UPSTAIRS", "WALKING DOWNSTAIRS",
                                              "SITTING", "STANDING",         "LAYING"};
  return names;
}

inline constexpr std::size_t kUciharWindow = 128;

namespace detail {

inline std::vector<std::string> read_column(const std::filesystem::path& file) {
  auto lines = text::read_lines(file);
  std::vector<std::string> out;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto v = text::trim(lines[i]);
    if (v.empty())
      throw InputError(text::where(file, i + 1) + ": empty line");
    out.emplace_back(v);
  }
  return out;
}

}  // namespace detail

/// One split, unnormalized.
inline WindowedDataset load_ucihar_split(const std::filesystem::path& root, const std::string& split) {
  namespace fs = std::filesystem;
  const fs::path dir = root / split;
  const fs::path label_file = dir / ("y_" + split + ".txt");
  const fs::path subject_file = dir / ("subject_" + split + ".txt");
  for (const auto& f : {label_file, subject_file})
    if (!fs::exists(f)) throw InputError("missing file '" + f.string() + "'");
  std::vector<fs::path> signal_files;
  for (const char* s : kUciharSignals) {
    signal_files.push_back(dir / "Inertial Signals" / (std::string(s) + "_" + split + ".txt"));
    if (!fs::exists(signal_files.back()))
      throw InputError("missing file '" + signal_files.back().string() + "'");
  }

  WindowedDataset d;
  d.sensors = {{"smartphone", kUciharSignals.size()}};
  for (const char* s : kUciharSignals) d.channel_names.emplace_back(s);
  d.class_names = ucihar_class_names();

  const auto labels = detail::read_column(label_file);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    double v;
    if (!text::to_double(labels[i], v) || v != static_cast<int>(v) || v < 1 || v > 6)
      throw InputError(text::where(label_file, i + 1) + ": label '" + labels[i] +
                       "' is not an integer in 1..6");
    d.labels.push_back(static_cast<std::size_t>(v) - 1);
  }
  d.subjects = detail::read_column(subject_file);
  const std::size_t n = d.labels.size();
  if (n == 0) throw InputError("'" + label_file.string() + "' has no labels");
  if (d.subjects.size() != n)
    throw InputError("'" + subject_file.string() + "' has " + std::to_string(d.subjects.size()) +
                     " rows but '" + label_file.string() + "' has " + std::to_string(n));

  d.windows = Tensor<double>({n, kUciharSignals.size(), kUciharWindow});
  for (std::size_t c = 0; c < signal_files.size(); ++c) {
    const auto lines = text::read_lines(signal_files[c]);
    if (lines.size() != n)
      throw InputError("'" + signal_files[c].string() + "' has " + std::to_string(lines.size()) +
                       " rows but '" + label_file.string() + "' has " + std::to_string(n));
    for (std::size_t i = 0; i < n; ++i) {
      const auto row = text::numbers(lines[i], signal_files[c], i + 1);
      if (row.size() != kUciharWindow)
        throw InputError(text::where(signal_files[c], i + 1) + ": expected " +
                         std::to_string(kUciharWindow) + " values, found " +
                         std::to_string(row.size()));
      std::copy(row.begin(), row.end(), &d.windows(i, c, 0));
    }
  }
  d.preprocessing = {{"source", "ucihar"},
                     {"split", split},
                     {"sample_rate_hz", 50},
                     {"window", kUciharWindow},
                     {"overlap", 0.5},
                     {"filters", "as published: noise filtered, 0.3 Hz Butterworth gravity split"}};
  d.validate();
  return d;
}

/// Locates the dataset root: accepts the root itself or a parent holding
/// "UCI HAR Dataset".
inline std::filesystem::path resolve_ucihar_root(const std::filesystem::path& p) {
  if (std::filesystem::exists(p / "train")) return p;
  if (std::filesystem::exists(p / "UCI HAR Dataset" / "train")) return p / "UCI HAR Dataset";
  throw InputError("'" + p.string() + "' does not contain the smartphone dataset (no train/ directory)");
}

/// Both splits, z-scored per channel with statistics of the train split.
inline std::pair<WindowedDataset, WindowedDataset> load_ucihar(const std::filesystem::path& root,
                                                               bool normalize = true) {
  const auto base = resolve_ucihar_root(root);
  auto train = load_ucihar_split(base, "train");
  auto test = load_ucihar_split(base, "test");
  if (normalize) {
    const auto stats = compute_normalization(train);
    apply_normalization(train, stats);
    apply_normalization(test, stats);
  }
  return {std::move(train), std::move(test)};
}

}  // namespace hmresnet
