#pragma once

// Raw-signal preprocessing: Butterworth low-pass as cascaded biquads,
// zero-phase filtering, gravity separation, median filtering, gap filling and
// sliding-window segmentation. Missing samples are NaN.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "hmresnet/error.hpp"

namespace hmresnet::signal {

using Signal = std::vector<double>;

/// One second-order section, direct form II transposed, a0 == 1.
struct Biquad {
  double b0, b1, b2, a1, a2;
  double dc_gain() const { return (b0 + b1 + b2) / (1 + a1 + a2); }
};

using Sos = std::vector<Biquad>;

/// Digital Butterworth low-pass via the bilinear transform with a prewarped
/// cutoff. Every section has unit DC gain. An odd order gets one first-order
/// section (b2 = a2 = 0).
inline Sos butterworth_sos(int order, double cutoff_hz, double sample_rate) {
  if (order < 1) throw InvalidArgument("butterworth order must be >= 1, got " + std::to_string(order));
  if (!(sample_rate > 0)) throw InvalidArgument("sample rate must be positive");
  const double nyquist = sample_rate / 2;
  if (!(cutoff_hz > 0 && cutoff_hz < nyquist))
    throw InvalidArgument("butterworth cutoff " + std::to_string(cutoff_hz) +
                          " Hz must lie in (0, " + std::to_string(nyquist) + ") Hz");
  const double k = 2 * sample_rate;
  const double wc = k * std::tan(std::numbers::pi * cutoff_hz / sample_rate);
  Sos sos;
  for (int i = 0; i < order / 2; ++i) {
    // Analog pole pair at wc * exp(+-j theta), Re < 0.
    const double theta = std::numbers::pi * (2.0 * i + 1 + order) / (2.0 * order);
    const double re = std::cos(theta);
    const double a0 = k * k - 2 * re * wc * k + wc * wc;
    const double g = wc * wc / a0;
    sos.push_back({g, 2 * g, g, (2 * wc * wc - 2 * k * k) / a0,
                   (k * k + 2 * re * wc * k + wc * wc) / a0});
  }
  if (order % 2 == 1) {
    const double a0 = k + wc;
    sos.push_back({wc / a0, wc / a0, 0.0, (wc - k) / a0, 0.0});
  }
  return sos;
}

/// Runs the cascade once. `zi` (two states per section) is the initial state
/// and is updated in place when given.
inline Signal sosfilt(const Sos& sos, std::span<const double> x,
                      std::vector<std::array<double, 2>>* zi = nullptr) {
  std::vector<std::array<double, 2>> z(sos.size(), {0.0, 0.0});
  if (zi) {
    if (zi->size() != sos.size()) throw InvalidArgument("sosfilt: state size mismatch");
    z = *zi;
  }
  Signal y(x.begin(), x.end());
  for (std::size_t s = 0; s < sos.size(); ++s) {
    const Biquad& q = sos[s];
    double z1 = z[s][0], z2 = z[s][1];
    for (double& v : y) {
      const double in = v;
      const double out = q.b0 * in + z1;
      z1 = q.b1 * in - q.a1 * out + z2;
      z2 = q.b2 * in - q.a2 * out;
      v = out;
    }
    z[s] = {z1, z2};
  }
  if (zi) *zi = z;
  return y;
}

/// State that makes the cascade start at rest on a constant input of 1.
inline std::vector<std::array<double, 2>> sosfilt_zi(const Sos& sos) {
  std::vector<std::array<double, 2>> zi;
  double level = 1.0;
  for (const Biquad& q : sos) {
    const double g = q.dc_gain();
    const double out = g * level;
    const double z2 = q.b2 * level - q.a2 * out;
    const double z1 = out - q.b0 * level;
    zi.push_back({z1, z2});
    level = out;
  }
  return zi;
}

/// Forward-backward filtering with odd extension at both ends and
/// steady-state initial conditions; zero phase, squared magnitude.
inline Signal sosfiltfilt(const Sos& sos, std::span<const double> x) {
  const std::size_t n = x.size();
  if (n == 0) return {};
  const std::size_t pad = std::min<std::size_t>(3 * (2 * sos.size() + 1), n - 1);
  Signal ext;
  ext.reserve(n + 2 * pad);
  for (std::size_t i = pad; i >= 1; --i) ext.push_back(2 * x[0] - x[i]);
  ext.insert(ext.end(), x.begin(), x.end());
  for (std::size_t i = 1; i <= pad; ++i) ext.push_back(2 * x[n - 1] - x[n - 1 - i]);

  const auto zi = sosfilt_zi(sos);
  auto scaled = [&](double v) {
    auto z = zi;
    for (auto& s : z) s = {s[0] * v, s[1] * v};
    return z;
  };
  auto z = scaled(ext.front());
  Signal y = sosfilt(sos, ext, &z);
  std::reverse(y.begin(), y.end());
  z = scaled(y.front());
  y = sosfilt(sos, y, &z);
  std::reverse(y.begin(), y.end());
  return Signal(y.begin() + static_cast<std::ptrdiff_t>(pad),
                y.begin() + static_cast<std::ptrdiff_t>(pad + n));
}

inline Signal butterworth_lowpass(std::span<const double> x, double cutoff_hz, int order,
                                  double sample_rate) {
  return sosfiltfilt(butterworth_sos(order, cutoff_hz, sample_rate), x);
}

struct GravitySplit {
  Signal gravity;
  Signal body;
};

/// gravity = low-pass(total), body = total - gravity. Where it can, gravity is
/// rounded to a multiple of ulp(total) (a shift of at most half that ulp),
/// which makes the subtraction exact and body + gravity == total bit for bit.
/// That grid cannot hold gravity much larger than the total (zero crossings of
/// an axis without gravity); there body is the correctly rounded difference
/// and the sum is off by at most one rounding.
inline GravitySplit separate_gravity(std::span<const double> total, double sample_rate,
                                     double cutoff_hz = 0.3, int order = 3) {
  GravitySplit out{butterworth_lowpass(total, cutoff_hz, order, sample_rate), {}};
  out.body.resize(total.size());
  constexpr double kGrid = 9007199254740992.0;  // 2^53
  for (std::size_t i = 0; i < total.size(); ++i) {
    const double t = total[i];
    double g = out.gravity[i];
    const double at = std::abs(t);
    if (at > 0 && std::isfinite(t)) {
      const double q = std::nextafter(at, std::numeric_limits<double>::infinity()) - at;
      const double steps = std::nearbyint(g / q);
      if (std::abs(steps) < kGrid) {
        const double snapped = steps * q;
        if ((t - snapped) + snapped == t) g = snapped;
      }
    }
    out.gravity[i] = g;
    out.body[i] = t - g;
  }
  return out;
}

/// Running median over an odd width with edge replication.
inline Signal median_filter(std::span<const double> x, std::size_t width = 3) {
  if (width == 0 || width % 2 == 0)
    throw InvalidArgument("median filter width must be odd, got " + std::to_string(width));
  const std::size_t n = x.size(), half = width / 2;
  Signal y(n);
  std::vector<double> win(width);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < width; ++j) {
      const std::ptrdiff_t at = static_cast<std::ptrdiff_t>(i + j) - static_cast<std::ptrdiff_t>(half);
      win[j] = x[static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(at, 0, static_cast<std::ptrdiff_t>(n) - 1))];
    }
    std::nth_element(win.begin(), win.begin() + static_cast<std::ptrdiff_t>(half), win.end());
    y[i] = win[half];
  }
  return y;
}

/// Interior gaps linearly interpolated, leading/trailing gaps copy the
/// nearest present sample.
inline Signal impute_missing(std::span<const double> x) {
  Signal y(x.begin(), x.end());
  std::vector<std::size_t> present;
  for (std::size_t i = 0; i < y.size(); ++i)
    if (!std::isnan(y[i])) present.push_back(i);
  if (present.empty()) throw InputError("channel has no present samples to impute from");
  for (std::size_t i = 0; i < present.front(); ++i) y[i] = y[present.front()];
  for (std::size_t i = present.back() + 1; i < y.size(); ++i) y[i] = y[present.back()];
  for (std::size_t k = 0; k + 1 < present.size(); ++k) {
    const std::size_t a = present[k], b = present[k + 1];
    for (std::size_t i = a + 1; i < b; ++i)
      y[i] = y[a] + (y[b] - y[a]) * static_cast<double>(i - a) / static_cast<double>(b - a);
  }
  return y;
}

inline std::size_t window_step(std::size_t window, double overlap) {
  if (!(overlap >= 0 && overlap < 1))
    throw InvalidArgument("window overlap must lie in [0, 1), got " + std::to_string(overlap));
  if (window == 0) throw InvalidArgument("window length must be positive");
  const auto step = static_cast<std::size_t>(std::llround(static_cast<double>(window) * (1 - overlap)));
  return std::max<std::size_t>(step, 1);
}

/// Start offsets of every full window; the trailing remainder is dropped.
inline std::vector<std::size_t> window_starts(std::size_t n, std::size_t window, double overlap) {
  const std::size_t step = window_step(window, overlap);
  if (window > n)
    throw InvalidArgument("window of " + std::to_string(window) + " samples exceeds signal of " +
                          std::to_string(n));
  std::vector<std::size_t> starts;
  for (std::size_t s = 0; s + window <= n; s += step) starts.push_back(s);
  return starts;
}

inline std::vector<Signal> sliding_windows(std::span<const double> x, std::size_t window,
                                           double overlap) {
  std::vector<Signal> out;
  for (std::size_t s : window_starts(x.size(), window, overlap))
    out.emplace_back(x.begin() + static_cast<std::ptrdiff_t>(s),
                     x.begin() + static_cast<std::ptrdiff_t>(s + window));
  return out;
}

}  // namespace hmresnet::signal
