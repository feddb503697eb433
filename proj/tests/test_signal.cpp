#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "hmresnet/signal.hpp"

using namespace hmresnet;
using namespace hmresnet::signal;

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

Signal tone(double freq, double fs, std::size_t n, double amp = 1.0, double offset = 0.0) {
  Signal x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = offset + amp * std::sin(2 * kPi * freq * i / fs);
  return x;
}

// Amplitude at `freq` over samples [from, n), by least-squares projection on
// sin and cos.
double amplitude(const Signal& y, double freq, double fs, std::size_t from) {
  double ss = 0, sc = 0, cc = 0, ys = 0, yc = 0;
  for (std::size_t i = from; i < y.size(); ++i) {
    const double s = std::sin(2 * kPi * freq * i / fs), c = std::cos(2 * kPi * freq * i / fs);
    ss += s * s;
    cc += c * c;
    sc += s * c;
    ys += y[i] * s;
    yc += y[i] * c;
  }
  const double det = ss * cc - sc * sc;
  const double a = (ys * cc - yc * sc) / det, b = (yc * ss - ys * sc) / det;
  return std::hypot(a, b);
}

double db(double ratio) { return 20 * std::log10(ratio); }

// Bilinear-transform Butterworth magnitude, written from the definition.
double analytic_gain(double f, double fc, double fs, int order) {
  const double r = std::tan(kPi * f / fs) / std::tan(kPi * fc / fs);
  return 1 / std::sqrt(1 + std::pow(r, 2 * order));
}

// Single pass with enough run-in that the transient is gone.
double measured_gain(double f, double fc, double fs, int order) {
  const std::size_t n = static_cast<std::size_t>(std::max(40.0 / f, 20.0 / fc) * fs) + 2000;
  const auto y = sosfilt(butterworth_sos(order, fc, fs), tone(f, fs, n));
  return amplitude(y, f, fs, n / 2);
}

}  // namespace

TEST(Butterworth, ConstantSignalUnchanged) {
  for (double fc : {0.3, 5.0, 20.0}) {
    const Signal x(500, 9.81);
    const auto y = butterworth_lowpass(x, fc, 3, 50.0);
    for (double v : y) EXPECT_NEAR(v, 9.81, 1e-9);
  }
}

TEST(Butterworth, UnitDcGainPerSection) {
  for (int order = 1; order <= 7; ++order)
    for (const auto& q : butterworth_sos(order, 2.0, 50.0)) EXPECT_NEAR(q.dc_gain(), 1.0, 1e-12);
  EXPECT_EQ(butterworth_sos(3, 1.0, 50.0).size(), 2u);
  EXPECT_EQ(butterworth_sos(4, 1.0, 50.0).size(), 2u);
}

TEST(Butterworth, SinglePassGainAtCutoffIsMinus3dB) {
  for (int order : {1, 2, 3, 4, 6})
    for (auto [fc, fs] : {std::pair{0.3, 50.0}, {20.0, 50.0}, {5.0, 100.0}}) {
      const double g = db(measured_gain(fc, fc, fs, order));
      EXPECT_NEAR(g, -3.0103, 0.1) << "order " << order << " fc " << fc << " fs " << fs;
    }
}

TEST(Butterworth, TenTimesCutoffRolloff) {
  for (int order : {1, 2, 3, 4}) {
    const double fc = 0.3, fs = 50.0;
    const double g = db(measured_gain(10 * fc, fc, fs, order));
    EXPECT_LE(g, -(order * 20.0 * std::log10(10.0) - 3)) << "order " << order;
  }
}

TEST(Butterworth, MatchesAnalyticMagnitude) {
  for (double f : {0.5, 2.0, 4.0, 8.0, 12.0, 18.0})
    EXPECT_NEAR(db(measured_gain(f, 4.0, 50.0, 3)), db(analytic_gain(f, 4.0, 50.0, 3)), 0.01)
        << "f " << f;
}

TEST(Butterworth, ZeroPhaseHasNoLag) {
  const double fs = 50.0;
  const auto x = tone(0.05, fs, 4000);
  const auto y = butterworth_lowpass(x, 0.3, 3, fs);
  const double gain = analytic_gain(0.05, 0.3, fs, 3);
  for (std::size_t i = 1000; i < 3000; ++i) EXPECT_NEAR(y[i], gain * gain * x[i], 1e-3);
}

TEST(Butterworth, RejectsBadParameters) {
  EXPECT_THROW(butterworth_sos(3, 25.0, 50.0), InvalidArgument);
  EXPECT_THROW(butterworth_sos(3, 30.0, 50.0), InvalidArgument);
  EXPECT_THROW(butterworth_sos(3, 0.0, 50.0), InvalidArgument);
  EXPECT_THROW(butterworth_sos(0, 1.0, 50.0), InvalidArgument);
  EXPECT_THROW(butterworth_sos(3, 1.0, 0.0), InvalidArgument);
}

TEST(Butterworth, ShortSignals) {
  EXPECT_TRUE(butterworth_lowpass(Signal{}, 1.0, 3, 50.0).empty());
  EXPECT_NEAR(butterworth_lowpass(Signal{4.0}, 1.0, 3, 50.0).at(0), 4.0, 1e-12);
  EXPECT_EQ(butterworth_lowpass(Signal{1, 2, 3}, 1.0, 3, 50.0).size(), 3u);
}

TEST(Gravity, StationarySensor) {
  const Signal z(256, 9.81);
  const auto g = separate_gravity(z, 50.0);
  for (std::size_t i = 0; i < z.size(); ++i) {
    EXPECT_NEAR(g.gravity[i], 9.81, 9.81 * 0.01);
    EXPECT_NEAR(g.body[i], 0.0, 1e-9);
  }
}

TEST(Gravity, ReconstructionIsExactWhenGravityDominates) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0, 1);
  for (int trial = 0; trial < 40; ++trial) {
    Signal x(300);
    const double scale = std::pow(10.0, trial % 4 - 3);  // 1e-3 .. 1 around 9.81
    const double sign = trial % 2 ? 1.0 : -1.0;
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = sign * 9.81 + scale * n(rng);
    const auto g = separate_gravity(x, 50.0);
    for (std::size_t i = 0; i < x.size(); ++i)
      ASSERT_EQ(g.body[i] + g.gravity[i], x[i]) << "trial " << trial << " i " << i;
  }
}

TEST(Gravity, ReconstructionWithinOneRoundingEverywhere) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0, 1);
  for (int trial = 0; trial < 40; ++trial) {
    Signal x(300);
    const double scale = std::pow(10.0, trial % 8 - 4);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = (trial % 3 ? 0.0 : 9.81) + scale * n(rng);
    x[17] = 0.0;
    const auto g = separate_gravity(x, 50.0);
    const auto raw = butterworth_lowpass(x, 0.3, 3, 50.0);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double big = std::max(std::abs(g.body[i]), std::abs(g.gravity[i]));
      const double ulp = std::nextafter(big, 1e300) - big;
      ASSERT_LE(std::abs(g.body[i] + g.gravity[i] - x[i]), ulp) << trial << " " << i;
      const double tq = std::nextafter(std::abs(x[i]), 1e300) - std::abs(x[i]);
      ASSERT_LE(std::abs(g.gravity[i] - raw[i]), tq / 2) << trial << " " << i;
    }
  }
}

TEST(Gravity, OneHertzRiderSurvivesInBody) {
  const double fs = 50.0;
  const auto x = tone(1.0, fs, 1500, 0.5, 9.81);
  const auto g = separate_gravity(x, fs);
  EXPECT_GE(amplitude(g.body, 1.0, fs, 250) / 0.5, 0.95);
  double mean = 0;
  for (std::size_t i = 250; i < 1250; ++i) mean += g.gravity[i] / 1000;
  EXPECT_NEAR(mean, 9.81, 0.01);
}

TEST(Median, Examples) {
  EXPECT_EQ(median_filter(Signal{1, 100, 2, 3}), (Signal{1, 2, 3, 3}));
  EXPECT_EQ(median_filter(Signal{5}), Signal{5});
  // Edge-replicated: 3 3 [3 1 2 5 4] 4 4
  EXPECT_EQ(median_filter(Signal{3, 1, 2, 5, 4}, 5), (Signal{3, 3, 3, 4, 4}));
  EXPECT_THROW(median_filter(Signal{1, 2}, 2), InvalidArgument);
}

TEST(Impute, Examples) {
  EXPECT_EQ(impute_missing(Signal{1, kNaN, 3}), (Signal{1, 2, 3}));
  EXPECT_EQ(impute_missing(Signal{1, 2, 3}), (Signal{1, 2, 3}));
  EXPECT_EQ(impute_missing(Signal{kNaN, 5, kNaN}), (Signal{5, 5, 5}));
  EXPECT_EQ(impute_missing(Signal{0, kNaN, kNaN, 3}), (Signal{0, 1, 2, 3}));
  EXPECT_THROW(impute_missing(Signal{kNaN, kNaN}), InputError);
}

TEST(Windows, Examples) {
  EXPECT_EQ(window_starts(256, 128, 0.5), (std::vector<std::size_t>{0, 64, 128}));
  EXPECT_EQ(window_starts(500, 100, 0.0).size(), 5u);
  EXPECT_EQ(window_step(25, 0.8), 5u);
  EXPECT_EQ(window_starts(100, 25, 0.8).size(), 16u);
  Signal x(10);
  for (std::size_t i = 0; i < 10; ++i) x[i] = static_cast<double>(i);
  const auto w = sliding_windows(x, 4, 0.5);
  ASSERT_EQ(w.size(), 4u);
  EXPECT_EQ(w[3], (Signal{6, 7, 8, 9}));
}

TEST(Windows, Errors) {
  EXPECT_THROW(window_starts(10, 11, 0.5), InvalidArgument);
  EXPECT_THROW(window_starts(10, 5, 1.0), InvalidArgument);
  EXPECT_THROW(window_starts(10, 5, -0.1), InvalidArgument);
  EXPECT_THROW(window_starts(10, 0, 0.5), InvalidArgument);
}

TEST(Windows, CountMatchesClosedFormSweep) {
  for (std::size_t n : {1, 2, 7, 25, 64, 100, 128, 257, 1000, 7353})
    for (std::size_t w : {1, 2, 3, 25, 64, 128, 300})
      for (double o : {0.0, 0.1, 0.25, 0.5, 0.8, 0.9, 0.99}) {
        if (w > n) continue;
        const long step = std::max(1L, std::lround(w * (1 - o)));
        const std::size_t expected = (n - w) / static_cast<std::size_t>(step) + 1;
        const auto starts = window_starts(n, w, o);
        ASSERT_EQ(starts.size(), expected) << n << " " << w << " " << o;
        EXPECT_LE(starts.back() + w, n);
        EXPECT_GT(starts.back() + w + static_cast<std::size_t>(step), n);
      }
}
