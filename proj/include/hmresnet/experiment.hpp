#pragma once

// Experiment config: one JSON document naming the dataset, model overrides,
// training and split settings and an output directory. Leaf fields can be
// overridden from the environment (HMRESNET_<SECTION>__<KEY>=<json>).

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "hmresnet/dataset.hpp"
#include "hmresnet/imu_csv.hpp"
#include "hmresnet/optim.hpp"
#include "hmresnet/split.hpp"
#include "hmresnet/synthetic.hpp"
#include "hmresnet/text.hpp"
#include "hmresnet/ucihar.hpp"
#include "json.hpp"

namespace hmresnet {

inline constexpr char kEnvPrefix[] = "HMRESNET_";

enum class Precision { float32, float64 };

struct Recording {
  std::filesystem::path path;
  std::string subject;
  friend bool operator==(const Recording&, const Recording&) = default;
};

struct DatasetSection {
  std::string kind = "ucihar";  // ucihar | csv | synthetic
  std::filesystem::path root;   // ucihar
  std::vector<Recording> recordings, test_recordings;  // csv
  ImuSchema schema;                                     // csv
  SyntheticSpec synthetic;                              // synthetic
  bool normalize = true;
};

struct ExperimentConfig {
  std::filesystem::path source;  // the config file, empty when built in code
  DatasetSection dataset;
  nlohmann::json model = nlohmann::json::object();  // ModelConfig fields; layout comes from the data
  TrainConfig training;
  SplitSpec split;
  Precision precision = Precision::float32;
  std::filesystem::path output = "out";
  std::optional<double> reference_accuracy;

  std::filesystem::path train_file() const { return output / "train.hmrd"; }
  std::filesystem::path test_file() const { return output / "test.hmrd"; }
  std::filesystem::path manifest_file() const { return output / "manifest.json"; }
  std::filesystem::path model_file() const { return output / "model.hmrn"; }
  std::filesystem::path log_file() const { return output / "train_log.jsonl"; }
  std::filesystem::path timing_file() const { return output / "train_log.jsonl.timing"; }
};

namespace detail {

inline void reject_unknown(const nlohmann::json& j, const std::vector<std::string>& keys,
                           const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [k, v] : j.items())
    if (std::find(keys.begin(), keys.end(), k) == keys.end())
      throw ConfigError("unknown " + where + " key '" + k + "'");
}

inline std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path q(p);
  return q.is_absolute() || base.empty() ? q : base / q;
}

inline std::vector<Recording> recordings_from(const nlohmann::json& j, const std::filesystem::path& base,
                                              const std::string& where) {
  if (!j.is_array()) throw ConfigError("dataset." + where + " must be an array");
  std::vector<Recording> out;
  for (const auto& r : j) {
    Recording rec;
    if (r.is_string()) {
      rec.path = resolve(base, r.get<std::string>());
      rec.subject = rec.path.stem().string();
    } else {
      reject_unknown(r, {"path", "subject"}, "dataset." + where + " entry");
      if (!r.contains("path")) throw ConfigError("dataset." + where + " entry lacks 'path'");
      rec.path = resolve(base, r.at("path").get<std::string>());
      rec.subject = r.contains("subject") ? r.at("subject").get<std::string>() : rec.path.stem().string();
    }
    out.push_back(std::move(rec));
  }
  return out;
}

inline void set_path(nlohmann::json& j, const std::vector<std::string>& path, nlohmann::json v) {
  nlohmann::json* at = &j;
  for (std::size_t i = 0; i + 1 < path.size(); ++i) {
    if (!at->is_object()) throw ConfigError("override path crosses a non-object value");
    at = &(*at)[path[i]];
    if (at->is_null()) *at = nlohmann::json::object();
  }
  if (!at->is_object()) throw ConfigError("override path crosses a non-object value");
  (*at)[path.back()] = std::move(v);
}

}  // namespace detail

/// Applies HMRESNET_A__B=value style overrides: the name after the prefix is
/// lower-cased and split on "__" into a key path; the value is parsed as
/// JSON and kept as a plain string when that fails. Returns the applied
/// variable names.
inline std::vector<std::string> apply_env_overrides(nlohmann::json& doc,
                                                    const std::map<std::string, std::string>& env) {
  std::vector<std::string> applied;
  const std::string prefix = kEnvPrefix;
  for (const auto& [name, value] : env) {
    if (name.rfind(prefix, 0) != 0 || name.size() == prefix.size()) continue;
    std::string rest = name.substr(prefix.size());
    for (auto& ch : rest) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    std::vector<std::string> path;
    std::size_t from = 0;
    for (;;) {
      const auto at = rest.find("__", from);
      path.push_back(rest.substr(from, at == std::string::npos ? std::string::npos : at - from));
      if (at == std::string::npos) break;
      from = at + 2;
    }
    for (const auto& p : path)
      if (p.empty()) throw ConfigError("environment override " + name + " has an empty key");
    nlohmann::json v = nlohmann::json::parse(value, nullptr, false);
    if (v.is_discarded()) v = value;
    detail::set_path(doc, path, std::move(v));
    applied.push_back(name);
  }
  return applied;
}

/// Environment variables of this process that carry the override prefix.
inline std::map<std::string, std::string> override_environment(char** envp) {
  std::map<std::string, std::string> out;
  for (char** e = envp; e && *e; ++e) {
    std::string kv(*e);
    const auto eq = kv.find('=');
    if (eq == std::string::npos) continue;
    if (kv.rfind(kEnvPrefix, 0) == 0) out[kv.substr(0, eq)] = kv.substr(eq + 1);
  }
  return out;
}

/// Parses a config document. Relative paths resolve against `base`. Checks
/// structure and value ranges, and that every referenced input exists.
inline ExperimentConfig parse_experiment(const nlohmann::json& doc, const std::filesystem::path& base) {
  ExperimentConfig c;
  detail::reject_unknown(doc, {"dataset", "model", "training", "split", "precision", "output",
                               "reference_accuracy"},
                         "config");
  try {
    if (!doc.contains("dataset")) throw ConfigError("config lacks a dataset section");
    const auto& ds = doc.at("dataset");
    detail::reject_unknown(ds, {"kind", "root", "recordings", "test_recordings", "schema", "synthetic",
                                "normalize"},
                           "dataset");
    auto& d = c.dataset;
    if (ds.contains("kind")) d.kind = ds.at("kind").get<std::string>();
    if (ds.contains("normalize")) d.normalize = ds.at("normalize").get<bool>();
    if (d.kind == "ucihar") {
      if (!ds.contains("root")) throw ConfigError("dataset.root is required for kind ucihar");
      d.root = detail::resolve(base, ds.at("root").get<std::string>());
      if (!std::filesystem::exists(d.root))
        throw InputError("dataset.root '" + d.root.string() + "' does not exist");
      d.root = resolve_ucihar_root(d.root);
    } else if (d.kind == "csv") {
      if (!ds.contains("recordings") || !ds.contains("schema"))
        throw ConfigError("dataset kind csv needs recordings and schema");
      d.recordings = detail::recordings_from(ds.at("recordings"), base, "recordings");
      if (d.recordings.empty()) throw ConfigError("dataset.recordings is empty");
      if (ds.contains("test_recordings"))
        d.test_recordings = detail::recordings_from(ds.at("test_recordings"), base, "test_recordings");
      const auto& sj = ds.at("schema");
      if (sj.is_string()) {
        const auto p = detail::resolve(base, sj.get<std::string>());
        const auto lines = text::read_lines(p);
        std::string all;
        for (const auto& l : lines) all += l + "\n";
        try {
          d.schema = nlohmann::json::parse(all).get<ImuSchema>();
        } catch (const nlohmann::json::parse_error& e) {
          throw ConfigError("schema '" + p.string() + "': " + e.what());
        }
      } else {
        d.schema = sj.get<ImuSchema>();
      }
      d.schema.validate();
      for (const auto* list : {&d.recordings, &d.test_recordings})
        for (const auto& r : *list)
          if (!std::filesystem::exists(r.path))
            throw InputError("recording '" + r.path.string() + "' does not exist");
    } else if (d.kind == "synthetic") {
      if (ds.contains("synthetic")) d.synthetic = ds.at("synthetic").get<SyntheticSpec>();
    } else {
      throw ConfigError("dataset.kind must be ucihar, csv or synthetic, got '" + d.kind + "'");
    }

    if (doc.contains("model")) {
      c.model = doc.at("model");
      (void)c.model.get<ModelConfig>();  // field names and types
    }
    if (doc.contains("training")) c.training = doc.at("training").get<TrainConfig>();
    c.training.validate();
    if (doc.contains("split")) c.split = doc.at("split").get<SplitSpec>();
    c.split.validate();
    if (doc.contains("precision")) {
      const auto p = doc.at("precision").get<std::string>();
      if (p == "float32") c.precision = Precision::float32;
      else if (p == "float64") c.precision = Precision::float64;
      else throw ConfigError("precision must be float32 or float64, got '" + p + "'");
    }
    if (doc.contains("output")) c.output = detail::resolve(base, doc.at("output").get<std::string>());
    else c.output = detail::resolve(base, "out");
    if (doc.contains("reference_accuracy")) {
      c.reference_accuracy = doc.at("reference_accuracy").get<double>();
      if (!(*c.reference_accuracy >= 0 && *c.reference_accuracy <= 1))
        throw ConfigError("reference_accuracy must lie in [0, 1]");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

/// Reads, overrides and parses a config file.
inline ExperimentConfig load_experiment(const std::filesystem::path& file,
                                        const std::map<std::string, std::string>& env = {}) {
  std::string all;
  for (const auto& l : text::read_lines(file)) all += l + "\n";
  nlohmann::json doc = nlohmann::json::parse(all, nullptr, false);
  if (doc.is_discarded()) throw ConfigError("'" + file.string() + "' is not valid JSON");
  apply_env_overrides(doc, env);
  auto c = parse_experiment(doc, file.parent_path());
  c.source = file;
  return c;
}

/// Model config for a dataset: layout and classes come from the data, every
/// other field from the model section. Layout fields set explicitly in the
/// section must agree with the data.
inline ModelConfig model_config_for(const ExperimentConfig& c, const WindowedDataset& d) {
  ModelConfig m = c.model.get<ModelConfig>();
  std::vector<std::string> bad;
  if (c.model.contains("sensors") && m.sensors != d.sensors) bad.push_back("sensors differ from the dataset's");
  if (c.model.contains("window_length") && m.window_length != d.window_length())
    bad.push_back("window_length " + std::to_string(m.window_length) + ", dataset has " +
                  std::to_string(d.window_length()));
  if (c.model.contains("class_count") && m.class_count != d.class_count())
    bad.push_back("class_count " + std::to_string(m.class_count) + ", dataset has " +
                  std::to_string(d.class_count()));
  if (c.model.contains("class_names") && m.class_names != d.class_names)
    bad.push_back("class_names differ from the dataset's");
  if (!bad.empty()) {
    std::string msg = "model section does not match the dataset:";
    for (const auto& b : bad) msg += "\n  - " + b;
    throw ConfigError(msg);
  }
  m.sensors = d.sensors;
  m.window_length = d.window_length();
  m.class_count = d.class_count();
  m.class_names = d.class_names;
  m.validate();
  return m;
}

struct Ingested {
  WindowedDataset train;
  std::optional<WindowedDataset> test;
};

/// Reads the raw dataset. Without a separate test source, a holdout split
/// section carves one out. Normalization (train statistics) only when asked.
inline Ingested ingest(const ExperimentConfig& c, bool normalize) {
  const auto& d = c.dataset;
  Ingested out;
  if (d.kind == "ucihar") {
    auto [train, test] = load_ucihar(d.root, false);
    out.train = std::move(train);
    out.test = std::move(test);
  } else if (d.kind == "csv") {
    auto load = [&](const std::vector<Recording>& list) {
      std::vector<WindowedDataset> parts;
      for (const auto& r : list) parts.push_back(load_multi_imu_csv(r.path, d.schema, r.subject));
      auto all = concatenate(parts);
      nlohmann::json sources = nlohmann::json::array();
      for (const auto& r : list) sources.push_back({{"path", r.path.filename().string()}, {"subject", r.subject}});
      all.preprocessing["source"] = sources;
      return all;
    };
    out.train = load(d.recordings);
    if (!d.test_recordings.empty()) out.test = load(d.test_recordings);
  } else {
    out.train = make_synthetic(d.synthetic);
    out.train.preprocessing = {{"source", "synthetic"}, {"spec", d.synthetic}};
  }
  if (!out.test && c.split.mode == SplitMode::holdout) {
    const auto folds = make_folds(out.train, c.split);
    auto train = out.train.subset(folds[0].train);
    out.test = out.train.subset(folds[0].test);
    out.train = std::move(train);
  }
  if (normalize) {
    const auto stats = compute_normalization(out.train);
    apply_normalization(out.train, stats);
    if (out.test) apply_normalization(*out.test, stats);
  }
  return out;
}

inline nlohmann::json preprocess_manifest(const ExperimentConfig& c, const Ingested& data) {
  nlohmann::json j;
  j["kind"] = c.dataset.kind;
  j["train"] = manifest(data.train);
  j["test"] = data.test ? manifest(*data.test) : nlohmann::json();
  return j;
}

}  // namespace hmresnet
