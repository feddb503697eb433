#pragma once

// Central finite-difference checks of every layer's backward pass and of a
// tiny end-to-end network, all in double precision. Each check reduces the
// layer output to a scalar with a fixed random projection R, so the analytic
// gradient is backward(R).

#include <algorithm>
#include <cmath>
#include <limits>
#include <functional>
#include <iomanip>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "hmresnet/model.hpp"

namespace hmresnet {

struct GradcheckOptions {
  std::uint64_t seed = 1;
  double tolerance = 1e-5;
  // Relative error is |a - n| / max(|a|, |n|, floor * max(1, S)), S the sum
  // of absolute terms of the objective: central-difference roundoff grows
  // with S, and gradients that are pure roundoff (conv biases in front of
  // batch norm) are then compared in absolute terms.
  double floor = 1e-4;
  // Test hook: scales the analytic gradients of the named check by 1.01.
  std::optional<std::string> corrupt;
};

struct GradcheckResult {
  std::string name;
  double worst_rel_error = 0;
  std::string worst_at;  // "<tensor>[<flat index>]"
  std::size_t coordinates = 0;
  bool passed = false;
};

namespace detail {

inline double rel_error(double a, double n, double floor) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

inline void fill_normal(Tensor<double>& t, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> d(0.0, sd);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = d(rng);
}

// Sum of |y_i r_i|, the roundoff scale of project(y, r).
inline double magnitude(const Tensor<double>& y, const Tensor<double>& r) {
  double s = 0;
  for (std::size_t i = 0; i < y.size(); ++i) s += std::abs(y[i] * r[i]);
  return s;
}

inline double project(const Tensor<double>& y, const Tensor<double>& r) {
  r.require_same_shape(y, "gradcheck projection");
  double s = 0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * r[i];
  return s;
}

struct Probe {
  std::string name;
  Tensor<double>* value;
  Tensor<double> analytic;
};

// Central difference of the objective along `dir` at the probe's value,
// retried at three step sizes; returns the best relative error. A nearby
// ReLU kink spoils one step size but rarely all three.
inline double best_difference(Tensor<double>& value, const std::vector<std::pair<std::size_t, double>>& dir,
                              double analytic, const std::function<double()>& objective, double tolerance,
                              double floor) {
  double best = std::numeric_limits<double>::infinity();
  std::vector<double> saved;
  for (const auto& [i, w] : dir) saved.push_back(value[i]);
  auto shift = [&](double h) {
    for (std::size_t k = 0; k < dir.size(); ++k) value[dir[k].first] = saved[k] + h * dir[k].second;
  };
  for (double h : {1e-6, 1e-5, 1e-7}) {
    shift(h);
    const double up = objective();
    shift(-h);
    const double down = objective();
    shift(0);
    best = std::min(best, rel_error(analytic, (up - down) / (2 * h), floor));
    if (best < tolerance) break;
  }
  return best;
}

// Differences the probes coordinate by coordinate. With `sample` > 0, a
// tensor larger than that is covered by one random unit-direction derivative
// (every coordinate at once) plus `sample` randomly chosen coordinates.
inline GradcheckResult difference(const std::string& name, std::vector<Probe>& probes,
                                  const std::function<double()>& objective,
                                  double scale, const GradcheckOptions& opt, std::size_t sample = 0) {
  GradcheckResult r{name, 0.0, "", 0, false};
  const double floor = opt.floor * std::max(1.0, scale);
  const bool corrupt = opt.corrupt && *opt.corrupt == name;
  std::mt19937_64 pick(opt.seed ^ 0x9e3779b97f4a7c15ULL);
  auto record = [&](double err, const std::string& where) {
    ++r.coordinates;
    if (err > r.worst_rel_error || r.worst_at.empty()) {
      r.worst_rel_error = err;
      r.worst_at = where;
    }
  };
  for (auto& p : probes) {
    if (corrupt)
      for (std::size_t i = 0; i < p.analytic.size(); ++i) p.analytic[i] = p.analytic[i] * 1.01 + 1e-3;
    const std::size_t n = p.value->size();
    std::vector<std::size_t> coords(n);
    for (std::size_t i = 0; i < n; ++i) coords[i] = i;
    if (sample && n > sample) {
      std::vector<std::pair<std::size_t, double>> dir;
      std::normal_distribution<double> g(0.0, 1.0);
      double norm = 0, analytic = 0;
      for (std::size_t i = 0; i < n; ++i) {
        dir.emplace_back(i, g(pick));
        norm += dir.back().second * dir.back().second;
      }
      norm = std::sqrt(norm);
      for (auto& [i, w] : dir) {
        w /= norm;
        analytic += w * p.analytic[i];
      }
      record(best_difference(*p.value, dir, analytic, objective, opt.tolerance, floor), p.name + "[direction]");
      std::shuffle(coords.begin(), coords.end(), pick);
      coords.resize(sample);
      std::sort(coords.begin(), coords.end());
    }
    for (std::size_t i : coords)
      record(best_difference(*p.value, {{i, 1.0}}, p.analytic[i], objective, opt.tolerance, floor),
             p.name + "[" + std::to_string(i) + "]");
  }
  r.passed = r.worst_rel_error < opt.tolerance;
  return r;
}

inline std::vector<Probe> param_probes(LayerParams<double>& lp, const std::string& prefix = "") {
  std::vector<Probe> out;
  for (auto& [key, value] : lp.tensors) out.push_back({prefix + key, &value, lp.grads.at(key)});
  return out;
}

template <typename Layer>
void randomize(Layer& layer, std::mt19937_64& rng) {
  for (auto& [key, value] : layer.params().tensors) fill_normal(value, rng, 0.5);
}

}  // namespace detail

// --- individual checks ------------------------------------------------------

inline GradcheckResult gradcheck_conv1d(const GradcheckOptions& opt) {
  std::mt19937_64 rng(opt.seed);
  Conv1d<double> conv(3, 4, 5);
  detail::randomize(conv, rng);
  Tensor<double> x({2, 3, 11}), r({2, 4, 11});
  detail::fill_normal(x, rng);
  detail::fill_normal(r, rng);
  typename Conv1d<double>::Context ctx;
  const double scale = detail::magnitude(conv.forward(x, ctx), r);
  conv.params().zero_grad();
  const auto dx = conv.backward(ctx, r);
  auto probes = detail::param_probes(conv.params());
  probes.push_back({"input", &x, dx});
  return detail::difference("conv1d", probes, [&] {
    typename Conv1d<double>::Context c;
    return detail::project(conv.forward(x, c), r);
  }, scale, opt);
}

inline GradcheckResult gradcheck_batchnorm(const GradcheckOptions& opt) {
  std::mt19937_64 rng(opt.seed + 1);
  BatchNorm1d<double> bn(3, 1e-5, 0.9);
  detail::randomize(bn, rng);
  Tensor<double> x({4, 3, 6}), r({4, 3, 6});
  detail::fill_normal(x, rng, 2.0);
  detail::fill_normal(r, rng);
  typename BatchNorm1d<double>::Context ctx;
  const double scale = detail::magnitude(bn.forward(x, Mode::train, ctx), r);
  bn.params().zero_grad();
  const auto dx = bn.backward(ctx, r);
  auto probes = detail::param_probes(bn.params());
  probes.push_back({"input", &x, dx});
  return detail::difference("batchnorm", probes, [&] {
    typename BatchNorm1d<double>::Context c;
    return detail::project(bn.forward(x, Mode::train, c), r);
  }, scale, opt);
}

inline GradcheckResult gradcheck_relu(const GradcheckOptions& opt) {
  std::mt19937_64 rng(opt.seed + 2);
  Tensor<double> x({3, 2, 7}), r({3, 2, 7});
  detail::fill_normal(x, rng);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += x[i] >= 0 ? 0.1 : -0.1;  // keep clear of the kink
  detail::fill_normal(r, rng);
  Relu<double> relu;
  typename Relu<double>::Context ctx;
  const double scale = detail::magnitude(relu.forward(x, ctx), r);
  std::vector<detail::Probe> probes{{"input", &x, relu.backward(ctx, r)}};
  return detail::difference("relu", probes, [&] {
    typename Relu<double>::Context c;
    return detail::project(relu.forward(x, c), r);
  }, scale, opt);
}

inline GradcheckResult gradcheck_dropout(const GradcheckOptions& opt) {
  std::mt19937_64 rng(opt.seed + 3);
  Tensor<double> x({4, 9}), r({4, 9});
  detail::fill_normal(x, rng);
  detail::fill_normal(r, rng);
  Dropout<double> drop(0.3);
  const std::uint64_t mask_seed = opt.seed * 7919 + 1;
  typename Dropout<double>::Context ctx;
  Rng mask_rng(mask_seed);
  const double scale = detail::magnitude(drop.forward(x, Mode::train, mask_rng, ctx), r);
  std::vector<detail::Probe> probes{{"input", &x, drop.backward(ctx, r)}};
  return detail::difference("dropout", probes, [&] {
    Rng same(mask_seed);
    typename Dropout<double>::Context c;
    return detail::project(drop.forward(x, Mode::train, same, c), r);
  }, scale, opt);
}

inline GradcheckResult gradcheck_dense(Activation act, const std::string& name, const GradcheckOptions& opt) {
  std::mt19937_64 rng(opt.seed + 4);
  Dense<double> dense(6, 5, act);
  detail::randomize(dense, rng);
  Tensor<double> x({3, 6}), r({3, 5});
  detail::fill_normal(x, rng);
  detail::fill_normal(r, rng);
  typename Dense<double>::Context ctx;
  const double scale = detail::magnitude(dense.forward(x, ctx), r);
  dense.params().zero_grad();
  const auto dx = dense.backward(ctx, r);
  auto probes = detail::param_probes(dense.params());
  probes.push_back({"input", &x, dx});
  return detail::difference(name, probes, [&] {
    typename Dense<double>::Context c;
    return detail::project(dense.forward(x, c), r);
  }, scale, opt);
}

inline GradcheckResult gradcheck_global_average_pool(const GradcheckOptions& opt) {
  std::mt19937_64 rng(opt.seed + 5);
  Tensor<double> x({2, 3, 8}), r({2, 3});
  detail::fill_normal(x, rng);
  detail::fill_normal(r, rng);
  std::vector<detail::Probe> probes{{"input", &x, global_average_pool_grad(x.shape(), r)}};
  return detail::difference("global_average_pool", probes,
                            [&] { return detail::project(global_average_pool(x), r); },
                            detail::magnitude(global_average_pool(x), r), opt);
}

inline GradcheckResult gradcheck_softmax_xent(const GradcheckOptions& opt) {
  std::mt19937_64 rng(opt.seed + 6);
  Tensor<double> z({5});
  detail::fill_normal(z, rng, 2.0);
  const std::size_t target = 3;
  std::vector<detail::Probe> probes{{"logits", &z, softmax_xent(z, target).dlogits}};
  return detail::difference("softmax_xent", probes, [&] { return softmax_xent(z, target).loss; }, 1.0, opt);
}

namespace detail {

inline ModelConfig tiny_config() {
  ModelConfig c;
  c.sensors = {{"a", 2}, {"b", 2}};
  c.window_length = 16;
  c.mcfeu_stack_depth = 1;
  c.bottleneck_widths = {8, 8};
  c.decision_hidden_widths = {8, 8};
  c.decision_stack_depth = 1;
  c.class_count = 3;
  c.class_names = {"c0", "c1", "c2"};
  return c;
}

// Zero biases put units exactly on ReLU kinks when a whole previous layer is
// dead; small random offsets move them away.
inline void jitter_offsets(LayerParams<double>& lp, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-0.1, 0.1);
  for (auto& [key, value] : lp.tensors)
    if (key == "b" || key == "beta")
      for (std::size_t i = 0; i < value.size(); ++i) value[i] = u(rng);
}

}  // namespace detail

inline GradcheckResult gradcheck_mcfeu(bool projection, const GradcheckOptions& opt) {
  const std::string name = projection ? "mcfeu_projection" : "mcfeu_identity";
  std::mt19937_64 rng(opt.seed + (projection ? 7 : 8));
  ModelConfig cfg = detail::tiny_config();
  McfeuBlock<double> block(projection ? 2 : 64, cfg, true);
  block.visit("", [&](const std::string&, LayerParams<double>& lp) {
    for (auto& [key, value] : lp.tensors) {
      if (key == "W") detail::fill_normal(value, rng, 0.4);
      if (key == "gamma") value.fill(1.0);
    }
    detail::jitter_offsets(lp, rng);
  });
  Tensor<double> x({3, block.in_channels(), 10}), r({3, 64, 10});
  detail::fill_normal(x, rng);
  detail::fill_normal(r, rng);
  typename McfeuBlock<double>::Context ctx;
  const double scale = detail::magnitude(block.forward(x, Mode::train, ctx), r);
  block.visit("", [](const std::string&, LayerParams<double>& lp) { lp.zero_grad(); });
  const auto dx = block.backward(ctx, r);
  std::vector<detail::Probe> probes;
  block.visit("", [&](const std::string& prefix, LayerParams<double>& lp) {
    for (auto& p : detail::param_probes(lp, prefix)) probes.push_back(std::move(p));
  });
  probes.push_back({"input", &x, dx});
  return detail::difference(name, probes, [&] {
    typename McfeuBlock<double>::Context c;
    return detail::project(block.forward(x, Mode::train, c), r);
  }, scale, opt, 64);
}

inline GradcheckResult gradcheck_mlp(const GradcheckOptions& opt) {
  std::mt19937_64 rng(opt.seed + 9);
  Mlp<double> mlp(6, {7, 5}, 0.3);
  mlp.visit("", [&](const std::string&, LayerParams<double>& lp) {
    for (auto& [key, value] : lp.tensors) detail::fill_normal(value, rng, 0.5);
  });
  Tensor<double> x({4, 6}), r({4, 5});
  detail::fill_normal(x, rng);
  detail::fill_normal(r, rng);
  const std::uint64_t mask_seed = opt.seed * 31 + 5;
  typename Mlp<double>::Context ctx;
  Rng mask_rng(mask_seed);
  const double scale = detail::magnitude(mlp.forward(x, Mode::train, mask_rng, ctx), r);
  mlp.visit("", [](const std::string&, LayerParams<double>& lp) { lp.zero_grad(); });
  const auto dx = mlp.backward(ctx, r);
  std::vector<detail::Probe> probes;
  mlp.visit("", [&](const std::string& prefix, LayerParams<double>& lp) {
    for (auto& p : detail::param_probes(lp, prefix)) probes.push_back(std::move(p));
  });
  probes.push_back({"input", &x, dx});
  return detail::difference("mlp", probes, [&] {
    Rng same(mask_seed);
    typename Mlp<double>::Context c;
    return detail::project(mlp.forward(x, Mode::train, same, c), r);
  }, scale, opt);
}

/// Whole network: stack depth 1, MLP widths 8, window 16, two sensors of two
/// channels, three classes; train mode with dropout under a fixed mask seed.
/// Objective is the mean cross-entropy of a 4-window batch. Large tensors
/// are covered by a directional derivative plus sampled coordinates.
inline GradcheckResult gradcheck_end_to_end(const GradcheckOptions& opt) {
  auto model = build<double>(detail::tiny_config(), opt.seed);
  std::mt19937_64 rng(opt.seed + 10);
  model.visit_layers([&](const std::string&, LayerParams<double>& lp) { detail::jitter_offsets(lp, rng); });
  Tensor<double> x({4, 4, 16});
  detail::fill_normal(x, rng);
  const std::vector<std::size_t> y{0, 2, 1, 2};
  const std::uint64_t mask_seed = opt.seed * 131 + 7;

  auto objective = [&] {
    Rng same(mask_seed);
    typename HmresnetModel<double>::ForwardContext c;
    model.forward(x, Mode::train, same, c);
    return static_cast<double>(model.loss(c, y).mean_loss);
  };

  Rng mask_rng(mask_seed);
  typename HmresnetModel<double>::ForwardContext ctx;
  model.forward(x, Mode::train, mask_rng, ctx);
  const auto lg = model.loss(ctx, y);
  model.zero_grad();
  const auto dx = model.backward(ctx, lg.dlogits);
  std::vector<detail::Probe> probes;
  for (auto& p : model.parameters()) probes.push_back({p.name, p.value, *p.grad});
  probes.push_back({"input", &x, dx});
  return detail::difference("end_to_end", probes, objective, std::abs(lg.mean_loss), opt, 24);
}

inline std::vector<std::string> gradcheck_names() {
  return {"conv1d", "batchnorm", "relu", "dropout", "dense_identity", "dense_relu", "global_average_pool",
          "softmax_xent", "mcfeu_identity", "mcfeu_projection", "mlp", "end_to_end"};
}

/// Every check, in gradcheck_names() order.
inline std::vector<GradcheckResult> run_gradcheck(const GradcheckOptions& opt = {}) {
  if (opt.corrupt) {
    const auto names = gradcheck_names();
    if (std::find(names.begin(), names.end(), *opt.corrupt) == names.end())
      throw InvalidArgument("unknown gradcheck '" + *opt.corrupt + "'");
  }
  return {gradcheck_conv1d(opt),
          gradcheck_batchnorm(opt),
          gradcheck_relu(opt),
          gradcheck_dropout(opt),
          gradcheck_dense(Activation::identity, "dense_identity", opt),
          gradcheck_dense(Activation::relu, "dense_relu", opt),
          gradcheck_global_average_pool(opt),
          gradcheck_softmax_xent(opt),
          gradcheck_mcfeu(false, opt),
          gradcheck_mcfeu(true, opt),
          gradcheck_mlp(opt),
          gradcheck_end_to_end(opt)};
}

inline std::string render_gradcheck(const std::vector<GradcheckResult>& results, double tolerance) {
  std::ostringstream out;
  out << std::left << std::setw(22) << "check" << std::setw(14) << "worst rel err" << std::setw(8)
      << "coords"
      << "status  worst at\n";
  for (const auto& r : results) {
    std::ostringstream err;
    err << std::scientific << std::setprecision(3) << r.worst_rel_error;
    out << std::left << std::setw(22) << r.name << std::setw(14) << err.str() << std::setw(8) << r.coordinates
        << (r.passed ? "PASS    " : "FAIL    ") << r.worst_at << "\n";
  }
  std::size_t failed = 0;
  for (const auto& r : results) failed += r.passed ? 0 : 1;
  std::ostringstream tol;
  tol << std::scientific << std::setprecision(0) << tolerance;
  out << (failed ? "FAILED " : "passed ") << results.size() - failed << "/" << results.size()
      << " checks (tolerance " << tol.str() << ")\n";
  return out.str();
}

}  // namespace hmresnet
