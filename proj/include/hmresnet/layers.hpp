#pragma once

// Differentiable layers. Each layer owns its LayerParams; forward() fills a
// layer-specific Context that backward() consumes. backward() returns the
// input gradient and accumulates parameter gradients into params().grads.

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "hmresnet/error.hpp"
#include "hmresnet/tensor.hpp"

namespace hmresnet {

using Rng = std::mt19937_64;

enum class Mode { train, infer };

inline const char* to_string(Mode m) {
  return m == Mode::train ? "train" : "infer";
}

// 53-bit uniform draw in [0, 1), independent of the standard library's
// distribution implementations.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

template <typename T>
struct LayerParams {
  std::map<std::string, Tensor<T>> tensors;  // learned
  std::map<std::string, Tensor<T>> grads;    // same keys and shapes
  std::map<std::string, Tensor<T>> state;    // non-learned buffers

  Tensor<T>& add(const std::string& name, Tensor<T> value) {
    grads[name] = Tensor<T>(value.shape());
    return tensors[name] = std::move(value);
  }

  void zero_grad() {
    for (auto& [_, g] : grads) g.fill(T{0});
  }

  Tensor<T>& get(const std::string& name) { return tensors.at(name); }
  const Tensor<T>& get(const std::string& name) const {
    return tensors.at(name);
  }
  Tensor<T>& grad(const std::string& name) { return grads.at(name); }
};

namespace detail {

inline void check_owner(const void* expected, const void* actual,
                        const char* layer) {
  if (expected != actual)
    throw InvalidArgument(std::string(layer) +
                          ": backward called with a context produced by a "
                          "different layer");
}

}  // namespace detail

template <typename T>
class Conv1d {
 public:
  struct Context {
    const void* owner = nullptr;
    Tensor<T> input;
  };

  Conv1d() = default;
  Conv1d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel) {
    params_.add("W", Tensor<T>({out_channels, in_channels, kernel}));
    params_.add("b", Tensor<T>({out_channels}));
  }

  std::size_t in_channels() const { return params_.get("W").dim(1); }
  std::size_t out_channels() const { return params_.get("W").dim(0); }
  std::size_t kernel_size() const { return params_.get("W").dim(2); }

  Tensor<T> forward(const Tensor<T>& x, Context& ctx) const {
    ctx.owner = this;
    ctx.input = x;
    return conv1d(x, params_.get("W"), params_.get("b"));
  }

  Tensor<T> backward(const Context& ctx, const Tensor<T>& upstream) {
    detail::check_owner(this, ctx.owner, "Conv1d");
    auto g = conv1d_grad(ctx.input, params_.get("W"), upstream);
    params_.grad("W") += g.kernels;
    params_.grad("b") += g.bias;
    return std::move(g.input);
  }

  LayerParams<T>& params() { return params_; }
  const LayerParams<T>& params() const { return params_; }

 private:
  LayerParams<T> params_;
};

/// Per-channel batch normalization over (batch, time) for [B x C x L] input.
/// Running statistics move as running = momentum * running + (1 - momentum) *
/// batch and are only touched in train mode.
template <typename T>
class BatchNorm1d {
 public:
  struct Context {
    const void* owner = nullptr;
    Mode mode = Mode::infer;
    Tensor<T> normalized;
    std::vector<T> inv_std;
  };

  BatchNorm1d() = default;
  BatchNorm1d(std::size_t channels, double epsilon, double momentum)
      : epsilon_(epsilon), momentum_(momentum) {
    params_.add("gamma", Tensor<T>({channels}, T{1}));
    params_.add("beta", Tensor<T>({channels}));
    params_.state["running_mean"] = Tensor<T>({channels});
    params_.state["running_var"] = Tensor<T>({channels}, T{1});
  }

  std::size_t channels() const { return params_.get("gamma").dim(0); }

  Tensor<T> forward(const Tensor<T>& x, Mode mode, Context& ctx) {
    if (x.rank() != 3 || x.dim(1) != channels())
      throw ShapeError("BatchNorm1d: expected [B x " +
                       std::to_string(channels()) + " x L], got " +
                       to_string(x.shape()));
    const std::size_t b = x.dim(0), c = x.dim(1), l = x.dim(2);
    const std::size_t n = b * l;
    if (mode == Mode::train && n < 2)
      throw InvalidArgument(
          "BatchNorm1d: train mode needs batch * length > 1 (variance of a "
          "single value is undefined)");

    const auto& gamma = params_.get("gamma");
    const auto& beta = params_.get("beta");
    auto& run_mean = params_.state.at("running_mean");
    auto& run_var = params_.state.at("running_var");

    ctx.owner = this;
    ctx.mode = mode;
    ctx.normalized = Tensor<T>(x.shape());
    ctx.inv_std.assign(c, T{0});
    Tensor<T> y(x.shape());

    for (std::size_t ch = 0; ch < c; ++ch) {
      T mean, var;
      if (mode == Mode::train) {
        double sum = 0;
        for (std::size_t i = 0; i < b; ++i)
          for (std::size_t t = 0; t < l; ++t) sum += x(i, ch, t);
        const double mu = sum / static_cast<double>(n);
        double sq = 0;
        for (std::size_t i = 0; i < b; ++i)
          for (std::size_t t = 0; t < l; ++t) {
            const double d = x(i, ch, t) - mu;
            sq += d * d;
          }
        mean = static_cast<T>(mu);
        var = static_cast<T>(sq / static_cast<double>(n));
        const double unbiased = sq / static_cast<double>(n - 1);
        run_mean[ch] = static_cast<T>(momentum_ * run_mean[ch] +
                                      (1.0 - momentum_) * mu);
        run_var[ch] = static_cast<T>(momentum_ * run_var[ch] +
                                     (1.0 - momentum_) * unbiased);
      } else {
        mean = run_mean[ch];
        var = run_var[ch];
      }
      const T inv = T{1} / std::sqrt(var + static_cast<T>(epsilon_));
      ctx.inv_std[ch] = inv;
      for (std::size_t i = 0; i < b; ++i)
        for (std::size_t t = 0; t < l; ++t) {
          const T xh = (x(i, ch, t) - mean) * inv;
          ctx.normalized(i, ch, t) = xh;
          y(i, ch, t) = gamma[ch] * xh + beta[ch];
        }
    }
    return y;
  }

  Tensor<T> backward(const Context& ctx, const Tensor<T>& upstream) {
    detail::check_owner(this, ctx.owner, "BatchNorm1d");
    if (ctx.mode != Mode::train)
      throw InvalidArgument(
          "BatchNorm1d: backward requires a train-mode forward context");
    ctx.normalized.require_same_shape(upstream, "BatchNorm1d backward");
    const std::size_t b = upstream.dim(0), c = upstream.dim(1),
                      l = upstream.dim(2);
    const T n = static_cast<T>(b * l);
    const auto& gamma = params_.get("gamma");
    auto& dgamma = params_.grad("gamma");
    auto& dbeta = params_.grad("beta");
    Tensor<T> dx(upstream.shape());
    for (std::size_t ch = 0; ch < c; ++ch) {
      T sum_up{0}, sum_up_xh{0};
      for (std::size_t i = 0; i < b; ++i)
        for (std::size_t t = 0; t < l; ++t) {
          sum_up += upstream(i, ch, t);
          sum_up_xh += upstream(i, ch, t) * ctx.normalized(i, ch, t);
        }
      dgamma[ch] += sum_up_xh;
      dbeta[ch] += sum_up;
      const T k = gamma[ch] * ctx.inv_std[ch] / n;
      for (std::size_t i = 0; i < b; ++i)
        for (std::size_t t = 0; t < l; ++t)
          dx(i, ch, t) = k * (n * upstream(i, ch, t) - sum_up -
                              ctx.normalized(i, ch, t) * sum_up_xh);
    }
    return dx;
  }

  double epsilon() const { return epsilon_; }
  double momentum() const { return momentum_; }
  LayerParams<T>& params() { return params_; }
  const LayerParams<T>& params() const { return params_; }

 private:
  LayerParams<T> params_;
  double epsilon_ = 1e-5;
  double momentum_ = 0.9;
};

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> y = x;
  for (auto& v : y.data()) v = v > T{0} ? v : T{0};
  return y;
}

// Subgradient at exactly zero is 0.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& input, const Tensor<T>& upstream) {
  input.require_same_shape(upstream, "relu_backward");
  Tensor<T> dx(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i)
    dx[i] = input[i] > T{0} ? upstream[i] : T{0};
  return dx;
}

template <typename T>
class Relu {
 public:
  struct Context {
    const void* owner = nullptr;
    Tensor<T> input;
  };
  Tensor<T> forward(const Tensor<T>& x, Context& ctx) const {
    ctx.owner = this;
    ctx.input = x;
    return relu(x);
  }
  Tensor<T> backward(const Context& ctx, const Tensor<T>& upstream) const {
    detail::check_owner(this, ctx.owner, "Relu");
    return relu_backward(ctx.input, upstream);
  }
};

/// Inverted dropout: in train mode each element is zeroed with probability
/// `rate` and survivors are scaled by 1 / (1 - rate); infer mode is the
/// identity.
template <typename T>
class Dropout {
 public:
  struct Context {
    const void* owner = nullptr;
    Tensor<T> mask;  // empty when the forward was an identity
  };

  explicit Dropout(double rate = 0.0) : rate_(rate) {
    if (!(rate >= 0.0 && rate < 1.0))
      throw ConfigError("dropout rate must lie in [0, 1), got " +
                        std::to_string(rate));
  }

  double rate() const { return rate_; }

  Tensor<T> forward(const Tensor<T>& x, Mode mode, Rng& rng,
                    Context& ctx) const {
    ctx.owner = this;
    ctx.mask = Tensor<T>();
    if (mode == Mode::infer || rate_ == 0.0) return x;
    ctx.mask = Tensor<T>(x.shape());
    const T keep_scale = static_cast<T>(1.0 / (1.0 - rate_));
    Tensor<T> y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
      const T m = uniform01(rng) < rate_ ? T{0} : keep_scale;
      ctx.mask[i] = m;
      y[i] = x[i] * m;
    }
    return y;
  }

  Tensor<T> backward(const Context& ctx, const Tensor<T>& upstream) const {
    detail::check_owner(this, ctx.owner, "Dropout");
    if (ctx.mask.empty()) return upstream;
    ctx.mask.require_same_shape(upstream, "Dropout backward");
    Tensor<T> dx(upstream.shape());
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = upstream[i] * ctx.mask[i];
    return dx;
  }

 private:
  double rate_;
};

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, Mode mode, Rng& rng) {
  typename Dropout<T>::Context ctx;
  return Dropout<T>(rate).forward(x, mode, rng, ctx);
}

/// Row-wise softmax with max subtraction. [K] or [B x K].
template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
  if (logits.rank() != 1 && logits.rank() != 2)
    throw ShapeError("softmax: expected [K] or [B x K], got " +
                     to_string(logits.shape()));
  const std::size_t k = logits.shape().back();
  const std::size_t rows = logits.size() / k;
  Tensor<T> p(logits.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* z = logits.ptr() + r * k;
    T* out = p.ptr() + r * k;
    const T zmax = *std::max_element(z, z + k);
    T sum{0};
    for (std::size_t i = 0; i < k; ++i) sum += (out[i] = std::exp(z[i] - zmax));
    for (std::size_t i = 0; i < k; ++i) out[i] /= sum;
  }
  return p;
}

template <typename T>
struct SoftmaxXent {
  Tensor<T> probabilities;
  T loss;
  Tensor<T> dlogits;
};

/// Softmax followed by categorical cross-entropy, with the gradient fused:
/// dlogits = p - onehot(target).
template <typename T>
SoftmaxXent<T> softmax_xent(const Tensor<T>& logits, std::size_t target) {
  if (logits.rank() != 1 || logits.dim(0) < 2)
    throw ShapeError("softmax_xent: logits must be [K] with K >= 2, got " +
                     to_string(logits.shape()));
  const std::size_t k = logits.dim(0);
  if (target >= k)
    throw InvalidArgument("softmax_xent: target " + std::to_string(target) +
                          " outside [0, " + std::to_string(k) + ")");
  const T zmax = *std::max_element(logits.ptr(), logits.ptr() + k);
  T sum{0};
  for (std::size_t i = 0; i < k; ++i) sum += std::exp(logits[i] - zmax);
  const T log_sum = std::log(sum);
  SoftmaxXent<T> r{Tensor<T>({k}), T{0}, Tensor<T>({k})};
  for (std::size_t i = 0; i < k; ++i) {
    r.probabilities[i] = std::exp(logits[i] - zmax - log_sum);
    r.dlogits[i] = r.probabilities[i] - (i == target ? T{1} : T{0});
  }
  r.loss = -(logits[target] - zmax - log_sum);
  return r;
}

// Lowest index wins ties.
template <typename T>
std::size_t argmax(std::span<const T> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = i;
  return best;
}

enum class Activation { identity, relu, softmax };

/// Fully connected layer: activation(x W^T + b). Input [n] or [B x n].
template <typename T>
class Dense {
 public:
  struct Context {
    const void* owner = nullptr;
    Tensor<T> input;
    Tensor<T> output;  // post-activation
  };

  Dense() = default;
  Dense(std::size_t in, std::size_t out, Activation act) : act_(act) {
    params_.add("W", Tensor<T>({out, in}));
    params_.add("b", Tensor<T>({out}));
  }

  std::size_t in_features() const { return params_.get("W").dim(1); }
  std::size_t out_features() const { return params_.get("W").dim(0); }
  Activation activation() const { return act_; }

  Tensor<T> forward(const Tensor<T>& x, Context& ctx) const {
    ctx.owner = this;
    ctx.input = x;
    Tensor<T> z = matmul_affine(x, params_.get("W"), params_.get("b"));
    switch (act_) {
      case Activation::relu: z = relu(z); break;
      case Activation::softmax: z = softmax(z); break;
      case Activation::identity: break;
    }
    ctx.output = z;
    return z;
  }

  Tensor<T> backward(const Context& ctx, const Tensor<T>& upstream) {
    detail::check_owner(this, ctx.owner, "Dense");
    ctx.output.require_same_shape(upstream, "Dense backward");
    Tensor<T> dz = upstream;
    if (act_ == Activation::relu) {
      for (std::size_t i = 0; i < dz.size(); ++i)
        if (!(ctx.output[i] > T{0})) dz[i] = T{0};
    } else if (act_ == Activation::softmax) {
      // J^T g = p * (g - <p, g>) row by row
      const std::size_t k = dz.shape().back();
      for (std::size_t r = 0; r < dz.size() / k; ++r) {
        const T* p = ctx.output.ptr() + r * k;
        T* g = dz.ptr() + r * k;
        T dot{0};
        for (std::size_t i = 0; i < k; ++i) dot += p[i] * g[i];
        for (std::size_t i = 0; i < k; ++i) g[i] = p[i] * (g[i] - dot);
      }
    }
    auto grads = matmul_affine_grad(ctx.input, params_.get("W"), dz);
    params_.grad("W") += grads.weights;
    params_.grad("b") += grads.bias;
    return std::move(grads.input);
  }

  LayerParams<T>& params() { return params_; }
  const LayerParams<T>& params() const { return params_; }

 private:
  LayerParams<T> params_;
  Activation act_ = Activation::identity;
};

}  // namespace hmresnet
