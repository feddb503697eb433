// hmresnet command line: preprocess, train, eval, predict, gradcheck.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "hmresnet/experiment.hpp"
#include "hmresnet/gradcheck.hpp"
#include "hmresnet/metrics.hpp"
#include "hmresnet/serialize.hpp"

extern char** environ;

namespace fs = std::filesystem;
using namespace hmresnet;

namespace {

enum Exit { kOk = 0, kInternal = 1, kInput = 2, kValidation = 3, kCheckFailed = 4 };

const char* kFooter = R"(Environment overrides:
  HMRESNET_<SECTION>__<KEY>=<value> replaces one field of the --config
  document before validation. The name after the prefix is lower-cased and
  split on "__" into a key path; the value is read as JSON, or as a plain
  string if it is not valid JSON. Examples:
    HMRESNET_TRAINING__EPOCHS=5
    HMRESNET_DATASET__SYNTHETIC__WINDOWS_PER_CLASS=40
    HMRESNET_PRECISION=float64

Exit codes:
  0 success, 2 input or file-format error, 3 invalid config or arguments,
  4 a check failed (gradcheck)
)";

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string format = "text";
  bool timing = false;
  std::optional<std::size_t> folds;
  std::string model, dataset, input, precision, corrupt;
};

ExperimentConfig load_config(const Options& o) {
  if (o.config.empty()) throw ConfigError("--config is required");
  auto cfg = load_experiment(o.config, override_environment(environ));
  if (o.seed) cfg.training.seed = *o.seed;
  return cfg;
}

Precision precision_of(const Options& o, const std::optional<ExperimentConfig>& cfg) {
  if (o.precision == "float32") return Precision::float32;
  if (o.precision == "float64") return Precision::float64;
  if (!o.precision.empty()) throw ConfigError("--precision must be float32 or float64");
  return cfg ? cfg->precision : Precision::float32;
}

template <typename F>
int with_precision(Precision p, F&& f) {
  if (p == Precision::float64) return f(double{});
  return f(float{});
}

std::string fixed(double v, int digits = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

// --- preprocess -------------------------------------------------------------

int cmd_preprocess(const Options& o) {
  const auto cfg = load_config(o);
  const auto data = ingest(cfg, cfg.dataset.normalize);
  // Everything is in memory and validated; only now touch the output dir.
  save_dataset(data.train, cfg.train_file());
  if (data.test) save_dataset(*data.test, cfg.test_file());
  else if (fs::exists(cfg.test_file())) fs::remove(cfg.test_file());
  io::atomic_write(cfg.manifest_file(), preprocess_manifest(cfg, data).dump(2) + "\n");
  auto line = [](const char* what, const WindowedDataset& d) {
    std::cout << what << ": " << d.size() << " windows, " << d.channels() << " channels x "
              << d.window_length() << " samples, " << d.class_count() << " classes\n";
  };
  line("train", data.train);
  if (data.test) line("test", *data.test);
  std::cout << "wrote " << cfg.manifest_file().string() << "\n";
  return kOk;
}

// --- train ------------------------------------------------------------------

struct Prepared {
  WindowedDataset train;
  std::optional<WindowedDataset> test;
};

Prepared load_prepared(const ExperimentConfig& cfg) {
  if (!fs::exists(cfg.train_file()))
    throw InputError("'" + cfg.train_file().string() + "' not found; run preprocess first");
  Prepared p{load_dataset(cfg.train_file()), std::nullopt};
  if (fs::exists(cfg.test_file())) p.test = load_dataset(cfg.test_file());
  return p;
}

template <typename T>
int train_as(const ExperimentConfig& cfg) {
  auto data = load_prepared(cfg);
  const auto mcfg = model_config_for(cfg, data.train);
  auto model = build<T>(mcfg, cfg.training.seed);
  if (data.test) check_compatible(model, *data.test, "test set '" + cfg.test_file().string() + "'");
  if (data.test && data.test->class_names != data.train.class_names)
    throw InvalidArgument("train and test sets name their classes differently");
  if (data.train.normalization)
    model.set_input_normalization(data.train.normalization->mean, data.train.normalization->stddev);

  const std::size_t epochs = cfg.training.epochs;
  auto progress = [&](const EpochRecord& r) {
    std::cerr << "epoch " << r.epoch << "/" << epochs << " " << r.split << " loss " << fixed(r.loss)
              << " accuracy " << fixed(r.accuracy) << " (" << fixed(r.wall_seconds, 2) << " s)\n";
  };
  const auto log = fit(model, data.train, data.test ? &*data.test : nullptr, cfg.training, progress);

  save_model(model, cfg.model_file());
  io::atomic_write(cfg.log_file(), log.to_jsonl());
  io::atomic_write(cfg.timing_file(), log.timing_jsonl());

  std::cout << "parameters " << model.parameter_count() << "\n";
  std::cout << "final train accuracy " << fixed(log.last("train")->accuracy) << "\n";
  if (const auto* v = log.last("valid")) {
    std::cout << "final test accuracy " << fixed(v->accuracy) << "\n";
    if (cfg.reference_accuracy)
      std::cout << "reference accuracy " << fixed(*cfg.reference_accuracy, 5) << " (difference "
                << fixed(v->accuracy - *cfg.reference_accuracy) << ")\n";
  }
  std::cout << "wrote " << cfg.model_file().string() << "\n";
  return kOk;
}

int cmd_train(const Options& o) {
  const auto cfg = load_config(o);
  return with_precision(cfg.precision, [&](auto t) { return train_as<decltype(t)>(cfg); });
}

// --- eval -------------------------------------------------------------------

template <typename T>
int eval_model(const Options& o, const std::optional<ExperimentConfig>& cfg, ReportFormat fmt) {
  fs::path model_path = o.model, data_path = o.dataset;
  if (model_path.empty()) {
    if (!cfg) throw ConfigError("eval needs --model or --config");
    model_path = cfg->model_file();
  }
  if (data_path.empty()) {
    if (!cfg) throw ConfigError("eval needs --dataset or --config");
    data_path = fs::exists(cfg->test_file()) ? cfg->test_file() : cfg->train_file();
  }
  auto model = load_model<T>(model_path);
  const auto d = load_dataset(data_path);
  check_compatible(model, d, "dataset '" + data_path.string() + "'");
  const auto& names = model.config().class_names;
  if (!names.empty() && names != d.class_names)
    throw InvalidArgument("dataset '" + data_path.string() + "' names its classes differently from the model");
  const auto e = evaluate(model, d);
  const auto cm = confusion(e.predictions, d.labels, d.class_names);
  const auto m = compute_metrics(cm);
  std::cout << render_report(cm, m, fmt);
  if (fmt == ReportFormat::text && cfg && cfg->reference_accuracy)
    std::cout << "reference accuracy " << fixed(*cfg->reference_accuracy, 5) << " (difference "
              << fixed(m.accuracy - *cfg->reference_accuracy) << ")\n";
  return kOk;
}

struct FoldResult {
  ConfusionMatrix cm;
  Metrics metrics;
};

template <typename T>
int eval_folds(const ExperimentConfig& cfg, std::size_t k, ReportFormat fmt) {
  SplitSpec spec = cfg.split;
  spec.mode = SplitMode::kfold;
  spec.k = k;
  spec.validate();
  auto raw = ingest(ExperimentConfig{cfg}, false);
  WindowedDataset all = raw.test ? concatenate({raw.train, *raw.test}) : std::move(raw.train);
  const auto mcfg = model_config_for(cfg, all);
  (void)make_folds(all, spec);  // k against the unit count, before any training

  std::vector<FoldResult> folds;
  ConfusionMatrix pooled(all.class_names);
  const auto pairs = split(all, spec, cfg.dataset.normalize);
  for (std::size_t f = 0; f < pairs.size(); ++f) {
    const auto& [train, test] = pairs[f];
    auto model = build<T>(mcfg, cfg.training.seed);
    if (train.normalization) model.set_input_normalization(train.normalization->mean, train.normalization->stddev);
    fit(model, train, nullptr, cfg.training);
    const auto e = evaluate(model, test);
    auto cm = confusion(e.predictions, test.labels, all.class_names);
    pooled += cm;
    folds.push_back({cm, compute_metrics(cm)});
    std::cerr << "fold " << f + 1 << "/" << pairs.size() << " accuracy " << fixed(folds.back().metrics.accuracy)
              << "\n";
  }

  auto mean_of = [&](auto get) {
    double s = 0;
    for (const auto& r : folds) s += get(r.metrics);
    return s / static_cast<double>(folds.size());
  };
  auto sd_of = [&](auto get) {
    const double mu = mean_of(get);
    double s = 0;
    for (const auto& r : folds) s += (get(r.metrics) - mu) * (get(r.metrics) - mu);
    return folds.size() > 1 ? std::sqrt(s / static_cast<double>(folds.size() - 1)) : 0.0;
  };
  auto acc = [](const Metrics& m) { return m.accuracy; };
  auto mp = [](const Metrics& m) { return m.macro_precision; };
  auto mr = [](const Metrics& m) { return m.macro_recall; };
  const auto pooled_metrics = compute_metrics(pooled);

  if (fmt == ReportFormat::json) {
    nlohmann::json j;
    j["schema_version"] = kReportSchemaVersion;
    j["k"] = k;
    j["split"] = spec;
    j["folds"] = nlohmann::json::array();
    for (const auto& r : folds) j["folds"].push_back(report_json(r.cm, r.metrics));
    j["mean"] = {{"accuracy", mean_of(acc)},
                 {"accuracy_sd", sd_of(acc)},
                 {"macro_precision", mean_of(mp)},
                 {"macro_recall", mean_of(mr)}};
    j["pooled"] = report_json(pooled, pooled_metrics);
    std::cout << j.dump(2) << "\n";
  } else if (fmt == ReportFormat::csv) {
    std::cout << "fold,windows,accuracy,macro_precision,macro_recall\n";
    for (std::size_t f = 0; f < folds.size(); ++f) {
      const auto& m = folds[f].metrics;
      std::cout << f + 1 << "," << m.sample_count << "," << fixed(m.accuracy, 6) << ","
                << fixed(m.macro_precision, 6) << "," << fixed(m.macro_recall, 6) << "\n";
    }
    std::cout << "mean," << fixed(static_cast<double>(pooled.total()) / static_cast<double>(folds.size()), 1) << ","
              << fixed(mean_of(acc), 6) << "," << fixed(mean_of(mp), 6) << "," << fixed(mean_of(mr), 6) << "\n";
  } else {
    std::cout << k << "-fold cross-validation over " << all.size() << " windows\n";
    std::cout << "fold  windows  accuracy  macro_precision  macro_recall\n";
    for (std::size_t f = 0; f < folds.size(); ++f) {
      const auto& m = folds[f].metrics;
      std::cout << std::setw(4) << f + 1 << std::setw(9) << m.sample_count << std::setw(10) << fixed(m.accuracy)
                << std::setw(17) << fixed(m.macro_precision) << std::setw(14) << fixed(m.macro_recall) << "\n";
    }
    std::cout << "mean accuracy " << fixed(mean_of(acc)) << " (sd " << fixed(sd_of(acc)) << "), macro precision "
              << fixed(mean_of(mp)) << ", macro recall " << fixed(mean_of(mr)) << "\n\n";
    std::cout << "Pooled over folds\n" << render_report(pooled, pooled_metrics, ReportFormat::text);
  }
  return kOk;
}

int cmd_eval(const Options& o) {
  const auto fmt = parse_report_format(o.format);
  std::optional<ExperimentConfig> cfg;
  if (!o.config.empty()) cfg = load_config(o);
  const auto p = precision_of(o, cfg);
  if (o.folds) {
    if (!cfg) throw ConfigError("--folds needs --config (the raw dataset is re-read)");
    if (!o.model.empty() || !o.dataset.empty())
      throw ConfigError("--folds trains one model per fold; it cannot be combined with --model or --dataset");
    return with_precision(p, [&](auto t) { return eval_folds<decltype(t)>(*cfg, *o.folds, fmt); });
  }
  return with_precision(p, [&](auto t) { return eval_model<decltype(t)>(o, cfg, fmt); });
}

// --- predict ----------------------------------------------------------------

// One window per non-empty line: C x L values, channel after channel,
// separated by spaces, tabs or commas. '#' starts a comment line.
Tensor<double> read_window_text(const fs::path& file, std::size_t c, std::size_t l) {
  std::vector<double> values;
  std::size_t n = 0, line_no = 0;
  for (const auto& raw : text::read_lines(file)) {
    ++line_no;
    std::string line(text::trim(raw));
    if (line.empty() || line[0] == '#') continue;
    for (auto& ch : line)
      if (ch == ',') ch = ' ';
    const auto v = text::numbers(line, file, line_no);
    if (v.size() != c * l)
      throw ShapeError(text::where(file, line_no) + ": window has " + std::to_string(v.size()) +
                       " values, model expects " + std::to_string(c) + " x " + std::to_string(l) + " = " +
                       std::to_string(c * l));
    values.insert(values.end(), v.begin(), v.end());
    ++n;
  }
  if (n == 0) throw InputError("'" + file.string() + "' holds no windows");
  return Tensor<double>({n, c, l}, std::move(values));
}

template <typename T>
int predict_as(const Options& o, ReportFormat fmt) {
  if (o.model.empty() || o.input.empty()) throw ConfigError("predict needs --model and --input");
  auto model = load_model<T>(o.model);
  const auto& mc = model.config();
  const std::size_t c = mc.total_channels(), l = mc.window_length, k = mc.class_count;

  Tensor<T> x;
  const fs::path input(o.input);
  if (input.extension() == ".hmrd") {
    const auto d = load_dataset(input);
    if (d.channels() != c || d.window_length() != l)
      throw ShapeError("'" + input.string() + "' holds " + std::to_string(d.channels()) + " x " +
                       std::to_string(d.window_length()) + " windows, model expects " + std::to_string(c) +
                       " x " + std::to_string(l));
    std::vector<std::size_t> idx(d.size());
    std::iota(idx.begin(), idx.end(), 0);
    x = d.template batch<T>(idx);
    if (!d.normalization) model.normalize_input(x);
  } else {
    x = read_window_text(input, c, l).template cast<T>();
    model.normalize_input(x);
  }
  const std::size_t n = x.dim(0);

  std::vector<std::string> names = mc.class_names;
  if (names.empty())
    for (std::size_t i = 0; i < k; ++i) names.push_back(std::to_string(i));

  // One window per forward pass, so the timing is per-window latency.
  Rng unused(0);
  std::vector<std::size_t> cls(n);
  std::vector<std::vector<double>> probs(n, std::vector<double>(k));
  double seconds = 0;
  for (std::size_t i = 0; i < n; ++i) {
    Tensor<T> one({1, c, l});
    std::copy_n(x.ptr() + i * c * l, c * l, one.ptr());
    typename HmresnetModel<T>::ForwardContext ctx;
    const auto start = std::chrono::steady_clock::now();
    const auto p = model.forward(one, Mode::infer, unused, ctx);
    seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    cls[i] = p.classes[0];
    for (std::size_t j = 0; j < k; ++j) probs[i][j] = static_cast<double>(p.probabilities(0, j));
  }

  if (fmt == ReportFormat::csv) {
    std::cout << "window,class";
    for (const auto& nm : names) std::cout << "," << detail::csv_cell("p_" + nm);
    std::cout << "\n";
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (fmt == ReportFormat::json) {
      std::cout << nlohmann::json{{"window", i}, {"class", names[cls[i]]}, {"index", cls[i]},
                                  {"probabilities", probs[i]}}
                       .dump()
                << "\n";
      continue;
    }
    const char* sep = fmt == ReportFormat::csv ? "," : " ";
    std::cout << i << sep << (fmt == ReportFormat::csv ? detail::csv_cell(names[cls[i]]) : "'" + names[cls[i]] + "'");
    for (double v : probs[i]) std::cout << sep << fixed(v, 8);
    std::cout << "\n";
  }
  if (o.timing) {
    const double mean = seconds / static_cast<double>(n);
    if (fmt == ReportFormat::json)
      std::cout << nlohmann::json{{"timing", {{"windows", n}, {"mean_seconds_per_window", mean}}}}.dump() << "\n";
    else
      std::cerr << "mean latency " << std::scientific << std::setprecision(3) << mean << " s per window over "
                << n << " windows\n";
  }
  return kOk;
}

int cmd_predict(const Options& o) {
  const auto fmt = parse_report_format(o.format);
  return with_precision(precision_of(o, std::nullopt), [&](auto t) { return predict_as<decltype(t)>(o, fmt); });
}

// --- gradcheck --------------------------------------------------------------

int cmd_gradcheck(const Options& o) {
  const auto fmt = parse_report_format(o.format);
  GradcheckOptions opt;
  if (o.seed) opt.seed = *o.seed;
  if (!o.corrupt.empty()) opt.corrupt = o.corrupt;
  const auto results = run_gradcheck(opt);
  bool ok = true;
  for (const auto& r : results) ok &= r.passed;
  if (fmt == ReportFormat::text) {
    std::cout << render_gradcheck(results, opt.tolerance);
  } else if (fmt == ReportFormat::json) {
    nlohmann::json j = {{"tolerance", opt.tolerance}, {"passed", ok}, {"checks", nlohmann::json::array()}};
    for (const auto& r : results)
      j["checks"].push_back({{"name", r.name},
                             {"worst_rel_error", r.worst_rel_error},
                             {"worst_at", r.worst_at},
                             {"coordinates", r.coordinates},
                             {"passed", r.passed}});
    std::cout << j.dump(2) << "\n";
  } else {
    std::cout << "check,worst_rel_error,worst_at,coordinates,passed\n";
    for (const auto& r : results) {
      std::ostringstream e;
      e << std::scientific << std::setprecision(3) << r.worst_rel_error;
      std::cout << r.name << "," << e.str() << "," << detail::csv_cell(r.worst_at) << "," << r.coordinates << ","
                << (r.passed ? "true" : "false") << "\n";
    }
  }
  return ok ? kOk : kCheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hmresnet: hierarchical multichannel residual network for activity recognition"};
  app.footer(kFooter);
  app.require_subcommand(1);
  Options o;

  auto add_config = [&](CLI::App* c, bool required) {
    auto* opt = c->add_option("--config", o.config, "experiment config (JSON)");
    if (required) opt->required();
  };
  auto add_seed = [&](CLI::App* c, const char* what) { c->add_option("--seed", o.seed, what); };
  auto add_format = [&](CLI::App* c) {
    c->add_option("--format", o.format, "output format")->check(CLI::IsMember({"text", "json", "csv"}));
  };
  auto add_precision = [&](CLI::App* c) {
    c->add_option("--precision", o.precision, "arithmetic precision")
        ->check(CLI::IsMember({"float32", "float64"}));
  };

  auto* pre = app.add_subcommand("preprocess", "filter, window and normalize the dataset; write .hmrd files and a manifest");
  add_config(pre, true);

  auto* train = app.add_subcommand("train", "train a model on the preprocessed data");
  add_config(train, true);
  add_seed(train, "training seed (overrides training.seed)");

  auto* eval = app.add_subcommand("eval", "confusion matrix and metrics of a model, or k-fold cross-validation");
  add_config(eval, false);
  add_seed(eval, "training seed for --folds");
  add_format(eval);
  add_precision(eval);
  eval->add_option("--model", o.model, "model file (default: <output>/model.hmrn)");
  eval->add_option("--dataset", o.dataset, "dataset file (default: <output>/test.hmrd, else train.hmrd)");
  eval->add_option("--folds", o.folds, "train and test on K folds of the raw dataset")->check(CLI::Range(2, 1000000));

  auto* predict = app.add_subcommand("predict", "classify windows from a .hmrd file or a text file (one window per line)");
  predict->add_option("--model", o.model, "model file")->required();
  predict->add_option("--input", o.input, "windows: .hmrd, or text with C x L values per line")->required();
  predict->add_flag("--timing", o.timing, "report mean per-window latency");
  add_format(predict);
  add_precision(predict);

  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every layer and a tiny network");
  add_seed(grad, "seed for inputs and parameters");
  add_format(grad);
  grad->add_option("--corrupt", o.corrupt, "test hook: perturb the analytic gradient of this check");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kValidation;
  }

  try {
    if (*pre) return cmd_preprocess(o);
    if (*train) return cmd_train(o);
    if (*eval) return cmd_eval(o);
    if (*predict) return cmd_predict(o);
    if (*grad) return cmd_gradcheck(o);
  } catch (const InputError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kInput;
  } catch (const FormatError& e) {
    std::cerr << "file format error: " << e.what() << "\n";
    return kInput;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kInput;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kValidation;
  } catch (const InvalidArgument& e) {
    std::cerr << "invalid argument: " << e.what() << "\n";
    return kValidation;
  } catch (const ShapeError& e) {
    std::cerr << "shape error: " << e.what() << "\n";
    return kValidation;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInternal;
  }
  return kInternal;
}
