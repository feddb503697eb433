#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "hmresnet/dataset.hpp"
#include "hmresnet/model.hpp"
#include "json.hpp"

namespace hmresnet {

struct TrainConfig {
  std::size_t batch_size = 32;
  std::size_t epochs = 100;
  std::uint64_t seed = 1;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  bool shuffle = true;

  void validate() const {
    std::vector<std::string> bad;
    if (batch_size < 1) bad.push_back("batch_size must be >= 1");
    if (epochs < 1) bad.push_back("epochs must be >= 1");
    if (!(lr > 0)) bad.push_back("lr must be > 0");
    if (!(beta1 >= 0 && beta1 < 1)) bad.push_back("beta1 must lie in [0, 1)");
    if (!(beta2 >= 0 && beta2 < 1)) bad.push_back("beta2 must lie in [0, 1)");
    if (!(epsilon > 0)) bad.push_back("epsilon must be > 0");
    if (bad.empty()) return;
    std::string msg = "invalid training config:";
    for (const auto& b : bad) msg += "\n  - " + b;
    throw ConfigError(msg);
  }
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"batch_size", c.batch_size}, {"epochs", c.epochs}, {"seed", c.seed},
       {"lr", c.lr},                 {"beta1", c.beta1},   {"beta2", c.beta2},
       {"epsilon", c.epsilon},       {"shuffle", c.shuffle}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  static const std::vector<std::string> keys{"batch_size", "epochs", "seed", "lr",
                                             "beta1", "beta2", "epsilon", "shuffle"};
  for (const auto& [k, v] : j.items())
    if (std::find(keys.begin(), keys.end(), k) == keys.end())
      throw ConfigError("unknown training key '" + k + "'");
  try {
    if (j.contains("batch_size")) j.at("batch_size").get_to(c.batch_size);
    if (j.contains("epochs")) j.at("epochs").get_to(c.epochs);
    if (j.contains("seed")) j.at("seed").get_to(c.seed);
    if (j.contains("lr")) j.at("lr").get_to(c.lr);
    if (j.contains("beta1")) j.at("beta1").get_to(c.beta1);
    if (j.contains("beta2")) j.at("beta2").get_to(c.beta2);
    if (j.contains("epsilon")) j.at("epsilon").get_to(c.epsilon);
    if (j.contains("shuffle")) j.at("shuffle").get_to(c.shuffle);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("training config: ") + e.what());
  }
}

// --- Adam -------------------------------------------------------------------

template <typename T>
struct AdamState {
  std::map<std::string, Tensor<T>> m;
  std::map<std::string, Tensor<T>> v;
  std::uint64_t t = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  AdamState() = default;
  explicit AdamState(const TrainConfig& c)
      : lr(c.lr), beta1(c.beta1), beta2(c.beta2), epsilon(c.epsilon) {}
};

/// One bias-corrected Adam step over `params` (value and gradient) in the
/// order given. Moments are created lazily on first sight of a name.
template <typename T>
void adam_step(const std::vector<ParamRef<T>>& params, AdamState<T>& s) {
  for (const auto& p : params) {
    if (p.grad->shape() != p.value->shape())
      throw ShapeError("adam: gradient of '" + p.name + "' is " + to_string(p.grad->shape()) +
                       ", parameter is " + to_string(p.value->shape()));
    auto it = s.m.find(p.name);
    if (it == s.m.end()) {
      s.m.emplace(p.name, Tensor<T>(p.value->shape()));
      s.v.emplace(p.name, Tensor<T>(p.value->shape()));
    } else if (it->second.shape() != p.value->shape()) {
      throw ShapeError("adam: moment of '" + p.name + "' is " + to_string(it->second.shape()) +
                       ", parameter is " + to_string(p.value->shape()));
    }
  }
  ++s.t;
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.t));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.t));
  for (const auto& p : params) {
    auto& m = s.m.at(p.name);
    auto& v = s.v.at(p.name);
    T* w = p.value->ptr();
    const T* g = p.grad->ptr();
    for (std::size_t i = 0; i < p.value->size(); ++i) {
      const double gi = static_cast<double>(g[i]);
      const double mi = s.beta1 * static_cast<double>(m[i]) + (1.0 - s.beta1) * gi;
      const double vi = s.beta2 * static_cast<double>(v[i]) + (1.0 - s.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double step = s.lr * (mi / c1) / (std::sqrt(vi / c2) + s.epsilon);
      w[i] = static_cast<T>(static_cast<double>(w[i]) - step);
    }
  }
}

// --- objective --------------------------------------------------------------

template <typename T>
struct BatchLoss {
  double loss = 0;
  std::map<std::string, Tensor<T>> grads;  // empty in infer mode
  double accuracy = 0;
  std::vector<std::size_t> predictions;
};

/// Mean cross-entropy over the batch. In train mode also returns the
/// batch-mean gradient of every parameter.
template <typename T>
BatchLoss<T> batch_loss(HmresnetModel<T>& model, const Tensor<T>& x,
                        std::span<const std::size_t> labels, Mode mode, Rng& rng) {
  if (labels.empty()) throw InvalidArgument("batch_loss: empty batch");
  typename HmresnetModel<T>::ForwardContext ctx;
  auto pred = model.forward(x, mode, rng, ctx);
  auto lg = model.loss(ctx, labels);
  BatchLoss<T> out;
  out.loss = static_cast<double>(lg.mean_loss);
  out.accuracy = static_cast<double>(lg.correct) / static_cast<double>(labels.size());
  out.predictions = std::move(pred.classes);
  if (mode == Mode::train) {
    model.zero_grad();
    model.backward(ctx, lg.dlogits);
    out.grads = model.gradient_map();
  }
  return out;
}

// --- training loop ----------------------------------------------------------

struct EpochRecord {
  std::size_t epoch = 0;
  std::string split;
  double loss = 0;
  double accuracy = 0;
  double wall_seconds = 0;  // not part of the deterministic log
};

struct TrainingLog {
  nlohmann::json header;
  std::vector<EpochRecord> records;

  /// Line-delimited JSON, one header line then one line per record. Wall
  /// time is kept out so equal seeds give byte-identical logs.
  std::string to_jsonl() const {
    std::string s = header.dump() + "\n";
    for (const auto& r : records)
      s += nlohmann::json{{"record", "epoch"}, {"epoch", r.epoch}, {"split", r.split},
                          {"loss", r.loss}, {"accuracy", r.accuracy}}
               .dump() +
           "\n";
    return s;
  }

  std::string timing_jsonl() const {
    std::string s;
    for (const auto& r : records)
      s += nlohmann::json{{"epoch", r.epoch}, {"split", r.split}, {"wall_seconds", r.wall_seconds}}
               .dump() +
           "\n";
    return s;
  }

  const EpochRecord* last(const std::string& split) const {
    for (auto it = records.rbegin(); it != records.rend(); ++it)
      if (it->split == split) return &*it;
    return nullptr;
  }
};

/// Throws before any work when the dataset cannot feed this model.
template <typename T>
void check_compatible(const HmresnetModel<T>& model, const WindowedDataset& d,
                      const std::string& what) {
  d.validate();
  const auto& c = model.config();
  std::vector<std::string> bad;
  if (d.channels() != c.total_channels())
    bad.push_back(std::to_string(d.channels()) + " channels, model expects " +
                  std::to_string(c.total_channels()));
  if (d.window_length() != c.window_length)
    bad.push_back("window length " + std::to_string(d.window_length()) + ", model expects " +
                  std::to_string(c.window_length));
  if (d.class_count() != c.class_count)
    bad.push_back(std::to_string(d.class_count()) + " classes, model expects " +
                  std::to_string(c.class_count));
  if (bad.empty()) return;
  std::string msg = what + " does not match the model:";
  for (const auto& b : bad) msg += "\n  - " + b;
  throw InvalidArgument(msg);
}

struct Evaluation {
  double loss = 0;
  double accuracy = 0;
  std::vector<std::size_t> predictions;
  std::vector<std::vector<double>> probabilities;
};

/// Infer-mode pass over a dataset in fixed-size chunks.
template <typename T>
Evaluation evaluate(HmresnetModel<T>& model, const WindowedDataset& d,
                    std::size_t batch_size = 64) {
  check_compatible(model, d, "evaluation set");
  Evaluation e;
  Rng unused(0);
  std::size_t correct = 0;
  const std::size_t k = model.config().class_count;
  for (std::size_t first = 0; first < d.size(); first += batch_size) {
    std::vector<std::size_t> idx(std::min(batch_size, d.size() - first));
    std::iota(idx.begin(), idx.end(), first);
    typename HmresnetModel<T>::ForwardContext ctx;
    auto p = model.forward(d.template batch<T>(idx), Mode::infer, unused, ctx);
    std::vector<std::size_t> y(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) y[i] = d.labels[idx[i]];
    auto lg = model.loss(ctx, y);
    e.loss += static_cast<double>(lg.mean_loss) * static_cast<double>(idx.size());
    correct += lg.correct;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      e.predictions.push_back(p.classes[i]);
      std::vector<double> row(k);
      for (std::size_t j = 0; j < k; ++j) row[j] = static_cast<double>(p.probabilities(i, j));
      e.probabilities.push_back(std::move(row));
    }
  }
  e.loss /= static_cast<double>(d.size());
  e.accuracy = static_cast<double>(correct) / static_cast<double>(d.size());
  return e;
}

using EpochCallback = std::function<void(const EpochRecord&)>;
// Checked after every epoch; true ends training early.
using StopPredicate = std::function<bool(const TrainingLog&)>;

/// Mini-batch Adam over the whole network. Shuffling and dropout draw from one
/// generator seeded with cfg.seed, so a run is reproducible bit for bit.
template <typename T>
TrainingLog fit(HmresnetModel<T>& model, const WindowedDataset& train,
                const WindowedDataset* valid, const TrainConfig& cfg,
                const EpochCallback& on_epoch = {}, const StopPredicate& stop = {}) {
  cfg.validate();
  check_compatible(model, train, "training set");
  if (valid) check_compatible(model, *valid, "validation set");

  TrainingLog log;
  log.header = {{"record", "header"},
                {"training", cfg},
                {"model", model.config()},
                {"parameter_count", model.parameter_count()},
                {"train_windows", train.size()},
                {"valid_windows", valid ? valid->size() : 0},
                {"precision", sizeof(T) == 4 ? "float32" : "float64"}};

  AdamState<T> adam(cfg);
  Rng rng(cfg.seed);
  const auto params = model.parameters();
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  using clock = std::chrono::steady_clock;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto start = clock::now();
    if (cfg.shuffle) std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0;
    std::size_t correct = 0;
    for (std::size_t first = 0; first < order.size(); first += cfg.batch_size) {
      const std::size_t n = std::min(cfg.batch_size, order.size() - first);
      std::vector<std::size_t> idx(order.begin() + first, order.begin() + first + n);
      std::vector<std::size_t> y(n);
      for (std::size_t i = 0; i < n; ++i) y[i] = train.labels[idx[i]];
      typename HmresnetModel<T>::ForwardContext ctx;
      model.forward(train.template batch<T>(idx), Mode::train, rng, ctx);
      auto lg = model.loss(ctx, y);
      model.zero_grad();
      model.backward(ctx, lg.dlogits);
      adam_step(params, adam);
      loss_sum += static_cast<double>(lg.mean_loss) * static_cast<double>(n);
      correct += lg.correct;
    }
    EpochRecord r{epoch, "train", loss_sum / static_cast<double>(train.size()),
                  static_cast<double>(correct) / static_cast<double>(train.size()),
                  std::chrono::duration<double>(clock::now() - start).count()};
    log.records.push_back(r);
    if (on_epoch) on_epoch(r);
    if (valid) {
      const auto vstart = clock::now();
      const auto e = evaluate(model, *valid);
      EpochRecord vr{epoch, "valid", e.loss, e.accuracy,
                     std::chrono::duration<double>(clock::now() - vstart).count()};
      log.records.push_back(vr);
      if (on_epoch) on_epoch(vr);
    }
    if (stop && stop(log)) break;
  }
  return log;
}

}  // namespace hmresnet
