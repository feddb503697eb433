#pragma once

// The hierarchical multichannel residual network:
//
//   window channels --> per-channel residual extractor (stacked MCFEU + GAP)
//                   --> per-sensor bottleneck MLP (feature-level fusion)
//                   --> concatenation over sensors
//                   --> decision residual extractor over the fused vector
//                   --> decision MLP --> softmax
//
// Everything is trained jointly; no stop-gradient anywhere.

#include <array>
#include <cmath>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "hmresnet/error.hpp"
#include "hmresnet/layers.hpp"
#include "hmresnet/model_config.hpp"
#include "hmresnet/tensor.hpp"

namespace hmresnet {

template <typename T>
struct ParamRef {
  std::string name;
  Tensor<T>* value;
  Tensor<T>* grad;
};

template <typename T>
struct StateRef {
  std::string name;
  Tensor<T>* value;
};

/// Multilayer convolution feature extractor unit: three conv + BN blocks with
/// 32/64/64 feature maps and a residual shortcut. The first two blocks end in
/// ReLU; the third block's ReLU is applied after the residual add:
///   out = relu(bn2(conv2(h1)) + shortcut(x))
/// The shortcut is the identity when channel counts match and a learned
/// size-1 convolution otherwise.
template <typename T>
class McfeuBlock {
 public:
  struct Context {
    const void* owner = nullptr;
    std::array<typename Conv1d<T>::Context, 3> conv;
    std::array<typename BatchNorm1d<T>::Context, 3> bn;
    std::array<typename Relu<T>::Context, 2> relu;
    typename Conv1d<T>::Context projection;
    Tensor<T> pre_activation;
  };

  McfeuBlock(std::size_t in_channels, const ModelConfig& cfg, bool shortcut)
      : in_channels_(in_channels), shortcut_(shortcut) {
    std::size_t c = in_channels;
    for (std::size_t i = 0; i < 3; ++i) {
      convs_[i] = Conv1d<T>(c, cfg.feature_maps[i], cfg.kernel_sizes[i]);
      bns_[i] = BatchNorm1d<T>(cfg.feature_maps[i], cfg.bn_epsilon,
                               cfg.bn_momentum);
      c = cfg.feature_maps[i];
    }
    if (shortcut_ && in_channels != c) projection_.emplace(in_channels, c, 1);
  }

  std::size_t in_channels() const { return in_channels_; }
  std::size_t out_channels() const { return convs_[2].out_channels(); }
  bool has_shortcut() const { return shortcut_; }
  bool has_projection() const { return projection_.has_value(); }

  Tensor<T> forward(const Tensor<T>& x, Mode mode, Context& ctx) {
    if (x.rank() != 3 || x.dim(1) != in_channels_)
      throw ShapeError("MCFEU: expected [B x " + std::to_string(in_channels_) +
                       " x L], got " + to_string(x.shape()));
    ctx.owner = this;
    Tensor<T> h = x;
    for (std::size_t i = 0; i < 3; ++i) {
      h = convs_[i].forward(h, ctx.conv[i]);
      h = bns_[i].forward(h, mode, ctx.bn[i]);
      if (i < 2) h = relus_[i].forward(h, ctx.relu[i]);
    }
    if (shortcut_) {
      if (projection_)
        h += projection_->forward(x, ctx.projection);
      else
        h += x;
    }
    ctx.pre_activation = h;
    return relu(h);
  }

  Tensor<T> backward(const Context& ctx, const Tensor<T>& upstream) {
    detail::check_owner(this, ctx.owner, "MCFEU");
    const Tensor<T> d_sum = relu_backward(ctx.pre_activation, upstream);
    Tensor<T> d = d_sum;
    for (std::size_t step = 0; step < 3; ++step) {
      const std::size_t i = 2 - step;
      if (i < 2) d = relus_[i].backward(ctx.relu[i], d);
      d = bns_[i].backward(ctx.bn[i], d);
      d = convs_[i].backward(ctx.conv[i], d);
    }
    if (shortcut_) {
      if (projection_)
        d += projection_->backward(ctx.projection, d_sum);
      else
        d += d_sum;
    }
    return d;
  }

  // f(layer_prefix, LayerParams&) in a fixed order.
  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    for (std::size_t i = 0; i < 3; ++i) {
      f(prefix + "conv" + std::to_string(i) + ".", convs_[i].params());
      f(prefix + "bn" + std::to_string(i) + ".", bns_[i].params());
    }
    if (projection_) f(prefix + "proj.", projection_->params());
  }

 private:
  std::size_t in_channels_;
  bool shortcut_;
  std::array<Conv1d<T>, 3> convs_;
  std::array<BatchNorm1d<T>, 3> bns_;
  std::array<Relu<T>, 2> relus_;
  std::optional<Conv1d<T>> projection_;
};

/// Stacked MCFEU units followed by global average pooling:
/// [B x C x L] -> [B x 64].
template <typename T>
class ResidualExtractor {
 public:
  struct Context {
    const void* owner = nullptr;
    std::vector<typename McfeuBlock<T>::Context> units;
    Shape pooled_shape;
  };

  ResidualExtractor(std::size_t in_channels, std::size_t depth,
                    const ModelConfig& cfg) {
    std::size_t c = in_channels;
    for (std::size_t i = 0; i < depth; ++i) {
      units_.emplace_back(c, cfg, cfg.residual_shortcuts);
      c = units_.back().out_channels();
    }
  }

  std::size_t in_channels() const { return units_.front().in_channels(); }
  std::size_t depth() const { return units_.size(); }
  std::size_t out_features() const { return units_.back().out_channels(); }

  Tensor<T> forward(const Tensor<T>& x, Mode mode, Context& ctx) {
    ctx.owner = this;
    ctx.units.resize(units_.size());
    Tensor<T> h = x;
    for (std::size_t i = 0; i < units_.size(); ++i)
      h = units_[i].forward(h, mode, ctx.units[i]);
    ctx.pooled_shape = h.shape();
    return global_average_pool(h);
  }

  Tensor<T> backward(const Context& ctx, const Tensor<T>& upstream) {
    detail::check_owner(this, ctx.owner, "ResidualExtractor");
    Tensor<T> d = global_average_pool_grad(ctx.pooled_shape, upstream);
    for (std::size_t i = units_.size(); i-- > 0;)
      d = units_[i].backward(ctx.units[i], d);
    return d;
  }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    for (std::size_t i = 0; i < units_.size(); ++i)
      units_[i].visit(prefix + "unit" + std::to_string(i) + ".", f);
  }

  McfeuBlock<T>& unit(std::size_t i) { return units_.at(i); }

 private:
  std::vector<McfeuBlock<T>> units_;
};

/// Dense + ReLU + dropout, repeated once per width. Used for the per-sensor
/// bottleneck and for the hidden part of the decision classifier.
template <typename T>
class Mlp {
 public:
  struct Context {
    const void* owner = nullptr;
    std::vector<typename Dense<T>::Context> dense;
    std::vector<typename Dropout<T>::Context> drop;
  };

  Mlp(std::size_t in, const std::vector<std::size_t>& widths,
      double dropout_rate) {
    for (std::size_t w : widths) {
      layers_.emplace_back(in, w, Activation::relu);
      drops_.emplace_back(dropout_rate);
      in = w;
    }
  }

  std::size_t in_features() const { return layers_.front().in_features(); }
  std::size_t out_features() const { return layers_.back().out_features(); }

  Tensor<T> forward(const Tensor<T>& x, Mode mode, Rng& rng, Context& ctx) {
    ctx.owner = this;
    ctx.dense.resize(layers_.size());
    ctx.drop.resize(layers_.size());
    Tensor<T> h = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      h = layers_[i].forward(h, ctx.dense[i]);
      h = drops_[i].forward(h, mode, rng, ctx.drop[i]);
    }
    return h;
  }

  Tensor<T> backward(const Context& ctx, const Tensor<T>& upstream) {
    detail::check_owner(this, ctx.owner, "Mlp");
    Tensor<T> d = upstream;
    for (std::size_t i = layers_.size(); i-- > 0;) {
      d = drops_[i].backward(ctx.drop[i], d);
      d = layers_[i].backward(ctx.dense[i], d);
    }
    return d;
  }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    for (std::size_t i = 0; i < layers_.size(); ++i)
      f(prefix + "fc" + std::to_string(i) + ".", layers_[i].params());
  }

 private:
  std::vector<Dense<T>> layers_;
  std::vector<Dropout<T>> drops_;
};

namespace detail {

// x[:, first:first+count, :]
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, std::size_t first,
                         std::size_t count) {
  const std::size_t b = x.dim(0), c = x.dim(1), l = x.dim(2);
  Tensor<T> out({b, count, l});
  for (std::size_t i = 0; i < b; ++i)
    std::copy_n(x.ptr() + (i * c + first) * l, count * l,
                out.ptr() + i * count * l);
  return out;
}

// Concatenate [B x n_i] blocks along the feature axis.
template <typename T>
Tensor<T> concat_features(const std::vector<Tensor<T>>& parts) {
  const std::size_t b = parts.front().dim(0);
  std::size_t total = 0;
  for (const auto& p : parts) total += p.dim(1);
  Tensor<T> out({b, total});
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t n = p.dim(1);
    for (std::size_t i = 0; i < b; ++i)
      std::copy_n(p.ptr() + i * n, n, out.ptr() + i * total + off);
    off += n;
  }
  return out;
}

template <typename T>
Tensor<T> feature_slice(const Tensor<T>& x, std::size_t first,
                        std::size_t count) {
  const std::size_t b = x.dim(0), n = x.dim(1);
  Tensor<T> out({b, count});
  for (std::size_t i = 0; i < b; ++i)
    std::copy_n(x.ptr() + i * n + first, count, out.ptr() + i * count);
  return out;
}

inline bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() &&
         s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace detail

template <typename T>
struct Prediction {
  Tensor<T> probabilities;  // [B x K]
  std::vector<std::size_t> classes;
};

template <typename T>
class HmresnetModel {
 public:
  struct ForwardContext {
    const void* owner = nullptr;
    Mode mode = Mode::infer;
    Shape input_shape;
    std::vector<typename ResidualExtractor<T>::Context> extractors;
    std::vector<typename Mlp<T>::Context> bottlenecks;
    typename ResidualExtractor<T>::Context decision;
    typename Mlp<T>::Context head;
    typename Dense<T>::Context output;
    Tensor<T> logits;
  };

  /// Builds the architecture with every weight zero; see build() for the
  /// seeded initialisation.
  explicit HmresnetModel(ModelConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    const std::size_t feat = cfg_.feature_width();
    if (cfg_.channel_mode == ChannelMode::per_channel) {
      for (std::size_t c = 0; c < cfg_.total_channels(); ++c)
        extractors_.emplace_back(1, cfg_.mcfeu_stack_depth, cfg_);
    } else {
      for (const auto& s : cfg_.sensors)
        extractors_.emplace_back(s.channels, cfg_.mcfeu_stack_depth, cfg_);
    }
    for (const auto& s : cfg_.sensors) {
      const std::size_t in =
          cfg_.channel_mode == ChannelMode::per_channel ? feat * s.channels : feat;
      bottlenecks_.emplace_back(in, cfg_.bottleneck_widths, cfg_.dropout_rate);
    }
    decision_.emplace(1, cfg_.decision_stack_depth, cfg_);
    head_.emplace(feat, cfg_.decision_hidden_widths, cfg_.dropout_rate);
    output_ = Dense<T>(cfg_.decision_hidden_widths.back(), cfg_.class_count,
                       Activation::identity);
    const std::size_t c = cfg_.total_channels();
    input_norm_.state["mean"] = Tensor<T>({c});
    input_norm_.state["std"] = Tensor<T>({c}, T{1});
  }

  HmresnetModel(const HmresnetModel&) = delete;
  HmresnetModel& operator=(const HmresnetModel&) = delete;
  HmresnetModel(HmresnetModel&&) = default;
  HmresnetModel& operator=(HmresnetModel&&) = default;

  const ModelConfig& config() const { return cfg_; }

  /// Draws every weight tensor ("...W") from N(0, init_sigma2) in parameter
  /// order; biases and BN shifts start at 0, BN scales at 1.
  void initialize(Rng& rng) {
    std::normal_distribution<double> normal(0.0, std::sqrt(cfg_.init_sigma2));
    for (auto& p : parameters()) {
      if (detail::ends_with(p.name, ".W")) {
        for (auto& v : p.value->data()) v = static_cast<T>(normal(rng));
      } else if (detail::ends_with(p.name, ".gamma")) {
        p.value->fill(T{1});
      } else {
        p.value->fill(T{0});
      }
    }
    for (auto& s : state_buffers()) {
      const bool ones = detail::ends_with(s.name, "running_var") ||
                        detail::ends_with(s.name, "input.std");
      s.value->fill(ones ? T{1} : T{0});
    }
    zero_grad();
  }

  std::vector<ParamRef<T>> parameters() {
    std::vector<ParamRef<T>> out;
    visit_layers([&](const std::string& prefix, LayerParams<T>& lp) {
      for (auto& [name, value] : lp.tensors)
        out.push_back({prefix + name, &value, &lp.grads.at(name)});
    });
    return out;
  }

  std::vector<StateRef<T>> state_buffers() {
    std::vector<StateRef<T>> out;
    visit_layers([&](const std::string& prefix, LayerParams<T>& lp) {
      for (auto& [name, value] : lp.state) out.push_back({prefix + name, &value});
    });
    for (auto& [name, value] : input_norm_.state)
      out.push_back({"input." + name, &value});
    return out;
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += p.value->size();
    return n;
  }

  void zero_grad() {
    visit_layers([](const std::string&, LayerParams<T>& lp) { lp.zero_grad(); });
  }

  std::map<std::string, Tensor<T>> gradient_map() {
    std::map<std::string, Tensor<T>> out;
    for (const auto& p : parameters()) out.emplace(p.name, *p.grad);
    return out;
  }

  /// Batch forward. x is [B x C_total x L] with channels ordered sensor by
  /// sensor as in the config.
  Prediction<T> forward(const Tensor<T>& x, Mode mode, Rng& rng,
                        ForwardContext& ctx) {
    check_input(x);
    ctx.owner = this;
    ctx.mode = mode;
    ctx.input_shape = x.shape();
    ctx.extractors.resize(extractors_.size());
    ctx.bottlenecks.resize(bottlenecks_.size());

    const std::size_t b = x.dim(0);
    std::vector<Tensor<T>> sensor_out;
    std::size_t channel = 0;
    for (std::size_t s = 0; s < cfg_.sensors.size(); ++s) {
      const std::size_t nc = cfg_.sensors[s].channels;
      Tensor<T> features;
      if (cfg_.channel_mode == ChannelMode::per_channel) {
        std::vector<Tensor<T>> per_channel;
        for (std::size_t c = 0; c < nc; ++c, ++channel)
          per_channel.push_back(extractors_[channel].forward(
              detail::slice_channels(x, channel, 1), mode,
              ctx.extractors[channel]));
        features = detail::concat_features(per_channel);
      } else {
        features = extractors_[s].forward(
            detail::slice_channels(x, channel, nc), mode, ctx.extractors[s]);
        channel += nc;
      }
      sensor_out.push_back(
          bottlenecks_[s].forward(features, mode, rng, ctx.bottlenecks[s]));
    }
    const Tensor<T> fused = detail::concat_features(sensor_out);
    return decide(fused.reshaped({b, 1, fused.dim(1)}), mode, rng, ctx);
  }

  Prediction<T> forward(const Tensor<T>& x, Mode mode, Rng& rng) {
    ForwardContext ctx;
    return forward(x, mode, rng, ctx);
  }

  struct LossGrad {
    T mean_loss;
    Tensor<T> dlogits;
    std::size_t correct;
  };

  /// Mean categorical cross-entropy of the batch in ctx and its gradient
  /// with respect to the logits (already divided by the batch size).
  LossGrad loss(const ForwardContext& ctx,
                std::span<const std::size_t> targets) const {
    detail::check_owner(this, ctx.owner, "HmresnetModel");
    const std::size_t b = ctx.logits.dim(0), k = ctx.logits.dim(1);
    if (targets.size() != b)
      throw InvalidArgument("loss: " + std::to_string(targets.size()) +
                            " targets for a batch of " + std::to_string(b));
    LossGrad out{T{0}, Tensor<T>({b, k}), 0};
    const T inv_b = T{1} / static_cast<T>(b);
    for (std::size_t i = 0; i < b; ++i) {
      if (targets[i] >= k)
        throw InvalidArgument("label " + std::to_string(targets[i]) +
                              " of sample " + std::to_string(i) +
                              " outside [0, " + std::to_string(k) + ")");
      Tensor<T> row({k});
      std::copy_n(ctx.logits.ptr() + i * k, k, row.ptr());
      const auto r = softmax_xent(row, targets[i]);
      out.mean_loss += r.loss * inv_b;
      for (std::size_t j = 0; j < k; ++j) out.dlogits(i, j) = r.dlogits[j] * inv_b;
      if (argmax(r.probabilities.data()) == targets[i]) ++out.correct;
    }
    return out;
  }

  /// Accumulates parameter gradients for the given logit cotangent and
  /// returns the gradient with respect to the input batch.
  Tensor<T> backward(const ForwardContext& ctx, const Tensor<T>& dlogits) {
    detail::check_owner(this, ctx.owner, "HmresnetModel");
    if (ctx.mode != Mode::train)
      throw InvalidArgument("backward requires a train-mode forward context");
    if (dlogits.shape() != ctx.logits.shape())
      throw ShapeError("backward: dlogits " + to_string(dlogits.shape()) +
                       " vs logits " + to_string(ctx.logits.shape()));
    const std::size_t b = dlogits.dim(0);
    Tensor<T> d = output_.backward(ctx.output, dlogits);
    d = head_->backward(ctx.head, d);
    d = decision_->backward(ctx.decision, d);
    const Tensor<T> d_fused = std::move(d).reshaped({b, cfg_.fused_width()});

    Tensor<T> dx(ctx.input_shape);
    const std::size_t c_total = dx.dim(1), l = dx.dim(2);
    const std::size_t feat = cfg_.feature_width();
    const std::size_t width = cfg_.bottleneck_widths.back();
    auto scatter = [&](const Tensor<T>& g, std::size_t first) {
      const std::size_t nc = g.dim(1);
      for (std::size_t i = 0; i < b; ++i)
        std::copy_n(g.ptr() + i * nc * l, nc * l,
                    dx.ptr() + (i * c_total + first) * l);
    };
    std::size_t channel = 0;
    for (std::size_t s = 0; s < cfg_.sensors.size(); ++s) {
      const std::size_t nc = cfg_.sensors[s].channels;
      const Tensor<T> d_features = bottlenecks_[s].backward(
          ctx.bottlenecks[s], detail::feature_slice(d_fused, s * width, width));
      if (cfg_.channel_mode == ChannelMode::per_channel) {
        for (std::size_t c = 0; c < nc; ++c, ++channel)
          scatter(extractors_[channel].backward(
                      ctx.extractors[channel],
                      detail::feature_slice(d_features, c * feat, feat)),
                  channel);
      } else {
        scatter(extractors_[s].backward(ctx.extractors[s], d_features), channel);
        channel += nc;
      }
    }
    return dx;
  }

  /// Convenience: backward for the mean cross-entropy of the given targets.
  Tensor<T> backward(const ForwardContext& ctx,
                     std::span<const std::size_t> targets) {
    return backward(ctx, loss(ctx, targets).dlogits);
  }

  // --- single-window entry points ---------------------------------------

  /// One extractor on one window [1 x L] (per_channel) or [C_s x L]
  /// (per_sensor) -> [64].
  Tensor<T> channel_resnet_forward(std::size_t extractor,
                                   const Tensor<T>& window,
                                   Mode mode = Mode::infer) {
    auto& ex = extractors_.at(extractor);
    if (window.rank() != 2 || window.dim(0) != ex.in_channels() ||
        window.dim(1) != cfg_.window_length)
      throw ShapeError("channel_resnet_forward: expected [" +
                       std::to_string(ex.in_channels()) + " x " +
                       std::to_string(cfg_.window_length) + "], got " +
                       to_string(window.shape()));
    typename ResidualExtractor<T>::Context ctx;
    return detail::drop_batch(
        ex.forward(detail::as_batch(window, 2), mode, ctx));
  }

  /// Bottleneck fusion of one sensor's extractor features -> [width].
  Tensor<T> bottleneck_fuse(std::size_t sensor,
                            const std::vector<Tensor<T>>& features, Mode mode,
                            Rng& rng) {
    if (features.empty())
      throw InvalidArgument("bottleneck_fuse: empty feature list");
    auto& mlp = bottlenecks_.at(sensor);
    std::vector<Tensor<T>> rows;
    for (const auto& f : features) rows.push_back(detail::as_batch(f, 1));
    const Tensor<T> flat = detail::concat_features(rows);
    if (flat.dim(1) != mlp.in_features())
      throw ShapeError("bottleneck_fuse: flattened length " +
                       std::to_string(flat.dim(1)) + " but sensor expects " +
                       std::to_string(mlp.in_features()));
    typename Mlp<T>::Context ctx;
    return detail::drop_batch(mlp.forward(flat, mode, rng, ctx));
  }

  /// Decision-level classifier on one fused vector.
  std::pair<Tensor<T>, std::size_t> decision_forward(const Tensor<T>& fused,
                                                     Mode mode, Rng& rng) {
    if (fused.rank() != 1 || fused.dim(0) != cfg_.fused_width())
      throw ShapeError("decision_forward: fused vector must be [" +
                       std::to_string(cfg_.fused_width()) + "], got " +
                       to_string(fused.shape()));
    ForwardContext ctx;
    ctx.owner = this;
    ctx.mode = mode;
    auto p = decide(fused.reshaped({1, 1, fused.dim(0)}), mode, rng, ctx);
    return {detail::drop_batch(std::move(p.probabilities)), p.classes[0]};
  }

  // --- input normalisation carried with the model -----------------------

  void set_input_normalization(const std::vector<double>& mean,
                               const std::vector<double>& stddev) {
    const std::size_t c = cfg_.total_channels();
    if (mean.size() != c || stddev.size() != c)
      throw ShapeError("input normalization needs " + std::to_string(c) +
                       " channel statistics");
    for (std::size_t i = 0; i < c; ++i) {
      input_norm_.state["mean"][i] = static_cast<T>(mean[i]);
      input_norm_.state["std"][i] = static_cast<T>(stddev[i]);
    }
  }

  /// Applies (x - mean) / std per channel to raw [B x C x L] windows.
  void normalize_input(Tensor<T>& x) const {
    check_input(x);
    const auto& mean = input_norm_.state.at("mean");
    const auto& sd = input_norm_.state.at("std");
    const std::size_t b = x.dim(0), c = x.dim(1), l = x.dim(2);
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t t = 0; t < l; ++t)
          x(i, ch, t) = (x(i, ch, t) - mean[ch]) / sd[ch];
  }

  std::size_t extractor_count() const { return extractors_.size(); }
  ResidualExtractor<T>& extractor(std::size_t i) { return extractors_.at(i); }
  ResidualExtractor<T>& decision_extractor() { return *decision_; }

  template <typename F>
  void visit_layers(F&& f) {
    for (std::size_t i = 0; i < extractors_.size(); ++i)
      extractors_[i].visit("extractor" + std::to_string(i) + ".", f);
    for (std::size_t s = 0; s < bottlenecks_.size(); ++s)
      bottlenecks_[s].visit("sensor" + std::to_string(s) + ".", f);
    decision_->visit("decision.", f);
    head_->visit("head.", f);
    f(std::string("head.out."), output_.params());
  }

 private:
  void check_input(const Tensor<T>& x) const {
    if (x.rank() != 3 || x.dim(1) != cfg_.total_channels() ||
        x.dim(2) != cfg_.window_length)
      throw ShapeError("model input must be [B x " +
                       std::to_string(cfg_.total_channels()) + " x " +
                       std::to_string(cfg_.window_length) + "], got " +
                       to_string(x.shape()));
  }

  Prediction<T> decide(const Tensor<T>& fused_seq, Mode mode, Rng& rng,
                       ForwardContext& ctx) {
    Tensor<T> h = decision_->forward(fused_seq, mode, ctx.decision);
    h = head_->forward(h, mode, rng, ctx.head);
    ctx.logits = output_.forward(h, ctx.output);
    Prediction<T> p{softmax(ctx.logits), {}};
    const std::size_t k = cfg_.class_count;
    for (std::size_t i = 0; i < p.probabilities.dim(0); ++i)
      p.classes.push_back(argmax(std::span<const T>(p.probabilities.ptr() + i * k, k)));
    return p;
  }

  ModelConfig cfg_;
  std::vector<ResidualExtractor<T>> extractors_;
  std::vector<Mlp<T>> bottlenecks_;
  std::optional<ResidualExtractor<T>> decision_;
  std::optional<Mlp<T>> head_;
  Dense<T> output_;
  LayerParams<T> input_norm_;
};

/// Validates the config, allocates the network and draws its weights from a
/// generator seeded with `seed`.
template <typename T>
HmresnetModel<T> build(const ModelConfig& cfg, std::uint64_t seed) {
  HmresnetModel<T> model(cfg);
  Rng rng(seed);
  model.initialize(rng);
  return model;
}

}  // namespace hmresnet
