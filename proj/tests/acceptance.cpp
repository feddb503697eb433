// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Tolerances are fixed below.

#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "hmresnet/metrics.hpp"
#include "hmresnet/optim.hpp"
#include "hmresnet/serialize.hpp"
#include "hmresnet/signal.hpp"
#include "hmresnet/synthetic.hpp"
#include "json.hpp"
#include "reference_data.hpp"

using namespace hmresnet;
namespace fs = std::filesystem;

namespace {

// 1
constexpr double kGradTolerance = 1e-5;
constexpr double kGradSeconds = 60.0;
// 2
constexpr double kHarAccuracy = 0.93;
constexpr double kHarLayingRecall = 0.99;
constexpr std::size_t kHarEpochs = 30;
constexpr double kHarTargetHours = 4.0;
constexpr double kHarReference = 0.97619;
// 3
constexpr std::size_t kOverfitSamples = 32;
constexpr std::size_t kOverfitEpochs = 200;
constexpr double kOverfitAccuracy = 0.99;
// 4
constexpr double kInitVariance = 0.05;
constexpr double kInitRelTolerance = 0.02;
constexpr std::size_t kInitMinDraws = 100000;
// 5
constexpr double kCutoffDb = -3.0103;
constexpr double kCutoffDbTolerance = 0.1;
constexpr double kGravity = 9.81;
constexpr double kGravityRelTolerance = 0.01;
// 8
constexpr double kAdamExpected = 0.999;
constexpr double kAdamTolerance = 1e-9;
// 9
constexpr double kLatencySeconds = 0.2;
constexpr std::size_t kLatencyWindows = 50;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string num(double v, int digits = 4) {
  std::ostringstream s;
  s << std::setprecision(digits) << v;
  return s.str();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

fs::path g_work;

struct Cli {
  int code = -1;
  std::string out, err;
  double seconds = 0;
};

Cli cli(const std::string& args) {
  const auto out = g_work / "cli.out", err = g_work / "cli.err";
  const std::string cmd = "'" HMRESNET_CLI "' " + args + " >'" + out.string() + "' 2>'" + err.string() + "'";
  const auto start = std::chrono::steady_clock::now();
  const int status = std::system(cmd.c_str());
  Cli r;
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

void write(const fs::path& p, const std::string& s) {
  fs::create_directories(p.parent_path());
  std::ofstream(p, std::ios::binary) << s;
}

ModelConfig smartphone_config() {
  ModelConfig c;
  c.sensors = {{"body_acc", 3}, {"body_gyro", 3}, {"total_acc", 3}};
  c.window_length = 128;
  c.class_count = 6;
  return c;
}

// --- 1 ----------------------------------------------------------------------

Outcome gradient_correctness() {
  const auto r = cli("gradcheck --format json");
  if (r.code != 0 && r.code != 4) return {false, "gradcheck exited with " + std::to_string(r.code) + ": " + r.err};
  const auto j = nlohmann::json::parse(r.out);
  double worst = 0;
  std::string where, failed;
  for (const auto& c : j["checks"]) {
    if (c["worst_rel_error"].get<double>() > worst) {
      worst = c["worst_rel_error"];
      where = c["name"];
    }
    if (!c["passed"].get<bool>()) failed += " " + c["name"].get<std::string>();
  }
  const bool ok = r.code == 0 && failed.empty() && worst < kGradTolerance && r.seconds < kGradSeconds;
  return {ok, std::to_string(j["checks"].size()) + " checks, worst rel err " + num(worst, 3) + " (" + where +
                  ") vs " + num(kGradTolerance) + ", " + num(r.seconds, 3) + " s vs " + num(kGradSeconds) + " s" +
                  (failed.empty() ? "" : ", failed:" + failed)};
}

// --- 2 ----------------------------------------------------------------------

struct HarJudgement {
  bool pass;
  std::string detail;
};

// Accuracy, LAYING recall, and static-class share of the off-diagonal mass.
HarJudgement judge_har(const ConfusionMatrix& cm) {
  const auto m = compute_metrics(cm);
  const std::size_t sitting = 3, standing = 4, laying = 5;
  std::uint64_t off = 0, static_off = 0;
  for (std::size_t a = 0; a < cm.classes(); ++a)
    for (std::size_t p = 0; p < cm.classes(); ++p) {
      if (a == p) continue;
      off += cm.counts[a][p];
      const bool sa = a == sitting || a == standing || a == laying;
      const bool sp = p == sitting || p == standing || p == laying;
      if (sa && sp) static_off += cm.counts[a][p];
    }
  const bool majority = off == 0 || 2 * static_off > off;
  const bool ok = m.accuracy >= kHarAccuracy && m.per_class[laying].recall >= kHarLayingRecall && majority;
  return {ok, "accuracy " + num(m.accuracy, 5) + " vs " + num(kHarAccuracy) + " (reference " +
                  num(kHarReference, 5) + "), LAYING recall " + num(m.per_class[laying].recall, 4) +
                  ", static residual confusions " + std::to_string(static_off) + "/" + std::to_string(off)};
}

Outcome smartphone_reproduction() {
  // The judge itself must accept the published matrix.
  ConfusionMatrix ref(testing::kSmartphoneClasses);
  ref.counts = testing::kSmartphoneReferenceMatrix;
  const auto ref_j = judge_har(ref);
  if (!ref_j.pass) return {false, "judge rejects the published matrix: " + ref_j.detail};

  const char* root = std::getenv("UCI_HAR_DIR");
  if (!root || !*root)
    return {false, "smartphone dataset not available (set UCI_HAR_DIR to the 'UCI HAR Dataset' directory); "
                   "judge verified on the published matrix: " + ref_j.detail};
  nlohmann::json cfg = {{"dataset", {{"kind", "ucihar"}, {"root", root}}},
                        {"training", {{"epochs", kHarEpochs}, {"batch_size", 32}, {"seed", 1}}},
                        {"precision", "float32"},
                        {"output", (g_work / "har").string()},
                        {"reference_accuracy", kHarReference}};
  write(g_work / "har.json", cfg.dump(2));
  const auto start = std::chrono::steady_clock::now();
  for (const char* step : {"preprocess", "train"}) {
    const auto r = cli(std::string(step) + " --config '" + (g_work / "har.json").string() + "'");
    if (r.code != 0) return {false, std::string(step) + " failed: " + r.err};
  }
  const auto r = cli("eval --format json --config '" + (g_work / "har.json").string() + "'");
  if (r.code != 0) return {false, "eval failed: " + r.err};
  const double hours = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() / 3600;
  const auto cm = confusion_from_json(nlohmann::json::parse(r.out));
  if (cm.classes() != 6 || cm.total() != 2947)
    return {false, "expected a 6-class matrix over 2947 test windows, got " + std::to_string(cm.total())};
  const auto j = judge_har(cm);
  return {j.pass, j.detail + ", " + num(hours, 3) + " h (target " + num(kHarTargetHours) + " h)"};
}

// --- 3 ----------------------------------------------------------------------

Outcome overfit_sanity() {
  SyntheticSpec s;
  s.sensors = {{"body_acc", 3}, {"body_gyro", 3}, {"total_acc", 3}};
  s.window_length = 128;
  s.class_count = 4;
  s.windows_per_class = 20;
  s.seed = 3;
  const auto all = make_synthetic(s);
  // Windows come class-interleaved, so the first 32 hold 8 of each class.
  std::vector<std::size_t> idx(kOverfitSamples);
  std::iota(idx.begin(), idx.end(), 0);
  auto subset = all.subset(idx);
  apply_normalization(subset, compute_normalization(subset));

  ModelConfig mc = smartphone_config();
  mc.class_count = 4;
  auto model = build<float>(mc, 1);
  TrainConfig tc;
  tc.epochs = kOverfitEpochs;
  tc.batch_size = kOverfitSamples;
  const auto log = fit(model, subset, nullptr, tc, {}, [](const TrainingLog& l) {
    return l.records.back().accuracy >= kOverfitAccuracy;
  });
  const auto& last = log.records.back();
  const auto infer = evaluate(model, subset);
  return {last.accuracy >= kOverfitAccuracy,
          "train accuracy " + num(last.accuracy) + " at epoch " + std::to_string(last.epoch) + " of " +
              std::to_string(kOverfitEpochs) + " (threshold " + num(kOverfitAccuracy) + "; infer-mode accuracy " +
              num(infer.accuracy) + ")"};
}

// --- 4 ----------------------------------------------------------------------

Outcome initialization_statistics() {
  auto model = build<double>(smartphone_config(), 4);
  std::vector<double> w;
  for (const auto& p : model.parameters()) {
    const auto& n = p.name;
    if (n.size() >= 2 && n.compare(n.size() - 2, 2, ".W") == 0)
      w.insert(w.end(), p.value->data().begin(), p.value->data().end());
  }
  double mean = 0;
  for (double v : w) mean += v;
  mean /= static_cast<double>(w.size());
  double var = 0;
  for (double v : w) var += (v - mean) * (v - mean);
  var /= static_cast<double>(w.size() - 1);
  const double rel = std::abs(var - kInitVariance) / kInitVariance;
  return {w.size() >= kInitMinDraws && rel <= kInitRelTolerance,
          std::to_string(w.size()) + " weights, sample variance " + num(var, 6) + " (rel. deviation " +
              num(rel, 3) + " vs " + num(kInitRelTolerance) + "), mean " + num(mean, 3)};
}

// --- 5 ----------------------------------------------------------------------

// Amplitude of a tone by least-squares fit of sin and cos over [from, n).
double tone_amplitude(const signal::Signal& y, double f, double fs, std::size_t from) {
  double ss = 0, sc = 0, cc = 0, ys = 0, yc = 0;
  for (std::size_t i = from; i < y.size(); ++i) {
    const double a = 2 * std::numbers::pi * f * static_cast<double>(i) / fs;
    const double s = std::sin(a), c = std::cos(a);
    ss += s * s, cc += c * c, sc += s * c, ys += y[i] * s, yc += y[i] * c;
  }
  const double det = ss * cc - sc * sc;
  return std::hypot((ys * cc - yc * sc) / det, (yc * ss - ys * sc) / det);
}

Outcome filter_correctness() {
  std::string detail;
  bool ok = true;
  double worst_db = kCutoffDb;
  for (auto [fc, fs] : {std::pair{0.3, 50.0}, {20.0, 50.0}, {1.0, 25.0}})
    for (int order : {2, 3, 4}) {
      const auto n = static_cast<std::size_t>(40.0 / fc * fs) + 2000;
      signal::Signal x(n);
      for (std::size_t i = 0; i < n; ++i) x[i] = std::sin(2 * std::numbers::pi * fc * static_cast<double>(i) / fs);
      const auto y = signal::sosfilt(signal::butterworth_sos(order, fc, fs), x);
      const double db = 20 * std::log10(tone_amplitude(y, fc, fs, n / 2));
      if (std::abs(db - kCutoffDb) > std::abs(worst_db - kCutoffDb)) worst_db = db;
      ok &= std::abs(db - kCutoffDb) <= kCutoffDbTolerance;
    }
  detail += "cutoff gain worst " + num(worst_db, 6) + " dB";

  std::mt19937_64 rng(5);
  std::normal_distribution<double> noise(0, 1);
  std::size_t inexact = 0, samples = 0;
  for (int trial = 0; trial < 20; ++trial) {
    signal::Signal x(400);
    const double scale = std::pow(10.0, trial % 4 - 3);
    for (auto& v : x) v = (trial % 2 ? kGravity : -kGravity) + scale * noise(rng);
    const auto g = signal::separate_gravity(x, 50.0);
    for (std::size_t i = 0; i < x.size(); ++i, ++samples) inexact += g.body[i] + g.gravity[i] != x[i];
  }
  ok &= inexact == 0;
  detail += ", body+gravity inexact at " + std::to_string(inexact) + "/" + std::to_string(samples) + " samples";

  signal::Signal still(1000);
  for (auto& v : still) v = kGravity + 0.02 * noise(rng);
  const auto g = signal::separate_gravity(still, 50.0);
  double worst = 0;
  for (std::size_t i = 0; i < still.size(); ++i) worst = std::max(worst, std::abs(g.gravity[i] - kGravity) / kGravity);
  ok &= worst <= kGravityRelTolerance;
  detail += ", stationary gravity worst rel. error " + num(worst, 3);
  return {ok, detail};
}

// --- 6 ----------------------------------------------------------------------

Outcome windowing_arithmetic() {
  std::size_t cases = 0, wrong = 0;
  auto check = [&](std::size_t n, std::size_t w, double o) {
    const std::size_t step = std::max<long>(1, std::lround(static_cast<double>(w) * (1 - o)));
    const std::size_t expected = n < w ? 0 : (n - w) / step + 1;
    std::size_t got = 0;
    if (n >= w) got = signal::window_starts(n, w, o).size();
    ++cases;
    wrong += got != expected;
  };
  for (std::size_t n = 1; n <= 600; n += 7)
    for (std::size_t w : {1, 2, 5, 16, 25, 64, 128, 256})
      for (double o : {0.0, 0.25, 0.5, 0.75, 0.8, 0.9})
        if (w <= n) check(n, w, o);
  // 128-sample windows with 50% overlap, 25-sample windows with 80% overlap.
  const bool regimes = signal::window_starts(10000, 128, 0.5).size() == (10000 - 128) / 64 + 1 &&
                       signal::window_starts(10000, 25, 0.8).size() == (10000 - 25) / 5 + 1 &&
                       signal::window_step(128, 0.5) == 64 && signal::window_step(25, 0.8) == 5;
  return {wrong == 0 && regimes, std::to_string(cases) + " (N, window, overlap) cases, " + std::to_string(wrong) +
                                      " mismatches; (128, 50%) step 64 and (25, 80%) step 5 " +
                                      (regimes ? "match" : "DO NOT match")};
}

// --- 7 ----------------------------------------------------------------------

Outcome metrics_oracle() {
  ConfusionMatrix cm(testing::kSmartphoneClasses);
  cm.counts = testing::kSmartphoneReferenceMatrix;
  const auto m = compute_metrics(cm);
  const bool ok = cm.trace() == 2878 && cm.total() == 2947 && m.accuracy == 2878.0 / 2947.0 &&
                  m.per_class[5].precision == 1.0 && m.per_class[5].recall == 1.0;
  return {ok, "accuracy " + std::to_string(cm.trace()) + "/" + std::to_string(cm.total()) + " = " +
                  num(m.accuracy, 6) + ", LAYING precision " + num(m.per_class[5].precision) + " recall " +
                  num(m.per_class[5].recall)};
}

// --- 8 ----------------------------------------------------------------------

Outcome adam_unit_law() {
  Tensor<double> w({1}, 1.0), g({1}, 2.0);  // f(w) = w^2 at w = 1
  std::vector<ParamRef<double>> refs{{"w", &w, &g}};
  AdamState<double> st;
  adam_step(refs, st);
  const double first = w[0];
  Tensor<double> z({1}, 0.37), zg({1}, 0.0);
  std::vector<ParamRef<double>> zrefs{{"z", &z, &zg}};
  AdamState<double> zst;
  bool fixed = true;
  for (int i = 0; i < 10; ++i) {
    adam_step(zrefs, zst);
    fixed &= z[0] == 0.37;
  }
  const bool ok = std::abs(first - kAdamExpected) <= kAdamTolerance && fixed;
  std::ostringstream s;
  s << std::setprecision(12) << "first step w' = " << first << " (|w' - 0.999| = " << std::abs(first - kAdamExpected)
    << "), zero gradient " << (fixed ? "is" : "is NOT") << " a fixed point over 10 steps";
  return {ok, s.str()};
}

// --- 9 ----------------------------------------------------------------------

Outcome latency() {
  auto model = build<float>(smartphone_config(), 9);
  save_model(model, g_work / "latency.hmrn");
  SyntheticSpec s;
  s.sensors = smartphone_config().sensors;
  s.window_length = 128;
  s.class_count = 6;
  s.windows_per_class = (kLatencyWindows + 5) / 6;
  auto d = make_synthetic(s);
  std::vector<std::size_t> idx(kLatencyWindows);
  std::iota(idx.begin(), idx.end(), 0);
  save_dataset(d.subset(idx), g_work / "latency.hmrd");
  const auto r = cli("predict --timing --format json --model '" + (g_work / "latency.hmrn").string() + "' --input '" +
                     (g_work / "latency.hmrd").string() + "'");
  if (r.code != 0) return {false, "predict failed: " + r.err};
  std::istringstream in(r.out);
  std::string line, last;
  std::size_t lines = 0;
  while (std::getline(in, line))
    if (!line.empty()) last = line, ++lines;
  const auto t = nlohmann::json::parse(last).at("timing");
  const double mean = t.at("mean_seconds_per_window");
  return {mean <= kLatencySeconds && lines == kLatencyWindows + 1,
          num(mean * 1e3, 4) + " ms per 9 x 128 window over " + std::to_string(t.at("windows").get<std::size_t>()) +
              " windows (budget " + num(kLatencySeconds * 1e3) + " ms)"};
}

// --- 10 ---------------------------------------------------------------------

Outcome determinism() {
  nlohmann::json cfg = {
      {"dataset",
       {{"kind", "synthetic"},
        {"synthetic",
         {{"sensors", smartphone_config().sensors}, {"window_length", 128}, {"class_count", 6},
          {"windows_per_class", 8}, {"subjects", 4}}}}},
      {"training", {{"epochs", 2}, {"batch_size", 16}, {"seed", 11}}},
      {"split", {{"mode", "holdout"}, {"holdout_fraction", 0.25}}}};
  std::vector<std::string> models, logs;
  for (const char* run : {"det_a", "det_b"}) {
    cfg["output"] = (g_work / run).string();
    const auto file = g_work / (std::string(run) + ".json");
    write(file, cfg.dump(2));
    for (const char* step : {"preprocess", "train"}) {
      const auto r = cli(std::string(step) + " --config '" + file.string() + "'");
      if (r.code != 0) return {false, std::string(step) + " failed: " + r.err};
    }
    models.push_back(slurp(g_work / run / "model.hmrn"));
    logs.push_back(slurp(g_work / run / "train_log.jsonl"));
  }
  const bool ok = !models[0].empty() && models[0] == models[1] && logs[0] == logs[1];
  return {ok, "model files " + std::string(models[0] == models[1] ? "identical" : "DIFFER") + " (" +
                  std::to_string(models[0].size()) + " bytes), training logs " +
                  (logs[0] == logs[1] ? "identical" : "DIFFER")};
}

// --- 11 ---------------------------------------------------------------------

Outcome serialization() {
  auto model = build<double>(smartphone_config(), 12);
  const auto bytes = serialize(model);
  auto back = deserialize<double>(bytes);
  const bool same_bytes = serialize(back) == bytes;
  bool same_values = true;
  auto a = model.parameters(), b = back.parameters();
  for (std::size_t i = 0; i < a.size(); ++i)
    same_values &= a[i].name == b[i].name && a[i].value->size() == b[i].value->size() &&
                   std::memcmp(a[i].value->ptr(), b[i].value->ptr(), a[i].value->size() * sizeof(double)) == 0;

  std::uint32_t json_len;
  std::memcpy(&json_len, bytes.data() + 8, 4);
  const std::size_t lo = 12 + json_len, hi = bytes.size();
  std::mt19937_64 rng(13);
  std::uniform_int_distribution<std::size_t> at(lo, hi - 1);
  std::size_t flips = 0, checksum = 0;
  for (int i = 0; i < 32; ++i) {
    auto bad = bytes;
    bad[i == 0 ? hi - 1 : at(rng)] ^= 0x10;
    ++flips;
    try {
      deserialize<double>(bad);
    } catch (const ChecksumError&) {
      ++checksum;
    } catch (const std::exception&) {
    }
  }
  const bool ok = same_bytes && same_values && checksum == flips;
  return {ok, std::string("round trip ") + (same_bytes && same_values ? "bit-exact" : "NOT bit-exact") + " over " +
                  std::to_string(a.size()) + " tensors, " + std::to_string(checksum) + "/" + std::to_string(flips) +
                  " corrupted copies rejected with a checksum error"};
}

}  // namespace

int main() {
  g_work = fs::temp_directory_path() / ("hmresnet-acceptance-" + std::to_string(::getpid()));
  fs::remove_all(g_work);
  fs::create_directories(g_work);

  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"gradient correctness", gradient_correctness},
      {"smartphone dataset reproduction", smartphone_reproduction},
      {"overfit sanity", overfit_sanity},
      {"initialization statistics", initialization_statistics},
      {"filter correctness", filter_correctness},
      {"windowing arithmetic", windowing_arithmetic},
      {"metrics oracle", metrics_oracle},
      {"adam unit law", adam_unit_law},
      {"latency", latency},
      {"determinism", determinism},
      {"serialization", serialization}};

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    const auto start = std::chrono::steady_clock::now();
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    failed += !o.pass;
    std::cout << (o.pass ? "PASS " : "FAIL ") << i + 1 << " " << criteria[i].first << ": " << o.detail << " ["
              << num(s, 3) << " s]" << std::endl;
  }
  std::cout << (failed ? "FAILED " : "ALL PASSED ") << criteria.size() - static_cast<std::size_t>(failed) << "/"
            << criteria.size() << " criteria" << std::endl;
  std::error_code ec;
  fs::remove_all(g_work, ec);
  return failed ? 1 : 0;
}
