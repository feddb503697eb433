#pragma once

// Dense row-major tensor value type and the numeric kernels the layers are
// built from. Layout is channels-major, time-minor: a batch of windows is
// [B x C x L] with L contiguous.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "hmresnet/error.hpp"

namespace hmresnet {

using Shape = std::vector<std::size_t>;

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << " x ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

inline std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

// Channel/length pair describing one window: channels >= 1, length >= 1.
struct Shape1D {
  std::size_t channels = 1;
  std::size_t length = 1;

  Shape1D(std::size_t c, std::size_t l) : channels(c), length(l) {
    if (c == 0 || l == 0)
      throw ShapeError("Shape1D requires channels >= 1 and length >= 1, got " +
                       std::to_string(c) + " x " + std::to_string(l));
  }
  friend bool operator==(const Shape1D&, const Shape1D&) = default;
};

// Heap storage aligned for Eigen's widest packet. Vectorized reductions peel
// according to pointer alignment, so a fixed alignment keeps summation order,
// and therefore results, independent of where the allocator put the buffer.
template <typename T>
using Buffer = std::vector<T, Eigen::aligned_allocator<T>>;

template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T{0})
      : shape_(std::move(shape)), data_(element_count(shape_), fill) {
    check_extents();
  }

  Tensor(Shape shape, const std::vector<T>& data)
      : Tensor(adopt, std::move(shape), Buffer<T>(data.begin(), data.end())) {}

  struct adopt_t {};
  static constexpr adopt_t adopt{};

  // Takes ownership of an already aligned buffer.
  Tensor(adopt_t, Shape shape, Buffer<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check_extents();
    if (data_.size() != element_count(shape_))
      throw ShapeError("tensor buffer holds " + std::to_string(data_.size()) +
                       " values but shape " + to_string(shape_) + " needs " +
                       std::to_string(element_count(shape_)));
  }

  // 1-D convenience: Tensor<double>::vector({1, 2, 3}).
  static Tensor vector(std::initializer_list<T> values) {
    return Tensor({values.size()}, std::vector<T>(values));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  T* ptr() noexcept { return data_.data(); }
  const T* ptr() const noexcept { return data_.data(); }
  std::vector<T> values() const { return {data_.begin(), data_.end()}; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& operator()(std::size_t i, std::size_t j) {
    return data_[i * shape_[1] + j];
  }
  const T& operator()(std::size_t i, std::size_t j) const {
    return data_[i * shape_[1] + j];
  }
  T& operator()(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  const T& operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  Tensor reshaped(Shape shape) const& {
    return Tensor(adopt, std::move(shape), data_);
  }
  Tensor reshaped(Shape shape) && {
    return Tensor(adopt, std::move(shape), std::move(data_));
  }

  template <typename U>
  Tensor<U> cast() const {
    Buffer<U> out(data_.begin(), data_.end());
    return Tensor<U>(Tensor<U>::adopt, shape_, std::move(out));
  }

  Tensor& operator+=(const Tensor& other) {
    require_same_shape(other, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
  }

  Tensor& operator*=(T scale) {
    for (auto& v : data_) v *= scale;
    return *this;
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(),
                       [](T v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

  void require_same_shape(const Tensor& other, const char* what) const {
    if (shape_ != other.shape_)
      throw ShapeError(std::string(what) + ": shape " + to_string(shape_) +
                       " does not match " + to_string(other.shape_));
  }

 private:
  void check_extents() const {
    for (std::size_t i = 0; i < shape_.size(); ++i)
      if (shape_[i] == 0)
        throw ShapeError("tensor extent " + std::to_string(i) +
                         " is zero in shape " + to_string(shape_));
  }

  Shape shape_;
  Buffer<T> data_;
};

namespace detail {

template <typename T>
using RowMatrix =
    Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

// Zeros inserted before the first sample. Even kernels put the extra zero on
// the right.
constexpr std::ptrdiff_t left_padding(std::size_t kernel) {
  return static_cast<std::ptrdiff_t>((kernel - 1) / 2);
}

struct ConvDims {
  std::size_t batch, in_channels, out_channels, length, kernel;
};

template <typename T>
ConvDims conv_dims(const Tensor<T>& input, const Tensor<T>& kernels) {
  if (input.rank() != 3)
    throw ShapeError("conv1d: input must be [B x C_in x L], got " +
                     to_string(input.shape()));
  if (kernels.rank() != 3)
    throw ShapeError("conv1d: kernels must be [C_out x C_in x s], got " +
                     to_string(kernels.shape()));
  ConvDims d{input.dim(0), input.dim(1), kernels.dim(0), input.dim(2),
             kernels.dim(2)};
  if (kernels.dim(1) != d.in_channels)
    throw ShapeError("conv1d: kernel C_in " + std::to_string(kernels.dim(1)) +
                     " does not match input C_in " +
                     std::to_string(d.in_channels));
  if (d.kernel > d.length + 2 * (d.kernel / 2))
    throw ShapeError("conv1d: kernel size " + std::to_string(d.kernel) +
                     " too large for length " + std::to_string(d.length));
  return d;
}

// cols is [(C_in * s) x (B * L)]; row c*s + j holds input channel c shifted by
// j - left_padding(s).
template <typename T>
void im2col(const T* x, const ConvDims& d, T* cols) {
  const std::size_t bl = d.batch * d.length;
  const auto len = static_cast<std::ptrdiff_t>(d.length);
  const auto pad = left_padding(d.kernel);
  for (std::size_t c = 0; c < d.in_channels; ++c) {
    for (std::size_t j = 0; j < d.kernel; ++j) {
      T* row = cols + (c * d.kernel + j) * bl;
      const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(j) - pad;
      for (std::size_t b = 0; b < d.batch; ++b) {
        const T* src = x + (b * d.in_channels + c) * d.length;
        T* dst = row + b * d.length;
        for (std::ptrdiff_t t = 0; t < len; ++t) {
          const std::ptrdiff_t s = t + off;
          dst[t] = (s >= 0 && s < len) ? src[s] : T{0};
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* cols, const ConvDims& d, T* dx) {
  const std::size_t bl = d.batch * d.length;
  const auto len = static_cast<std::ptrdiff_t>(d.length);
  const auto pad = left_padding(d.kernel);
  for (std::size_t c = 0; c < d.in_channels; ++c) {
    for (std::size_t j = 0; j < d.kernel; ++j) {
      const T* row = cols + (c * d.kernel + j) * bl;
      const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(j) - pad;
      for (std::size_t b = 0; b < d.batch; ++b) {
        T* dst = dx + (b * d.in_channels + c) * d.length;
        const T* src = row + b * d.length;
        for (std::ptrdiff_t t = 0; t < len; ++t) {
          const std::ptrdiff_t s = t + off;
          if (s >= 0 && s < len) dst[s] += src[t];
        }
      }
    }
  }
}

// [B x C x L] <-> [C x (B*L)]
template <typename T>
void batch_to_channel_major(const T* x, std::size_t b, std::size_t c,
                            std::size_t l, T* out) {
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t ch = 0; ch < c; ++ch)
      std::copy_n(x + (i * c + ch) * l, l, out + ch * b * l + i * l);
}

template <typename T>
void channel_major_to_batch(const T* x, std::size_t b, std::size_t c,
                            std::size_t l, T* out) {
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t ch = 0; ch < c; ++ch)
      std::copy_n(x + ch * b * l + i * l, l, out + (i * c + ch) * l);
}

template <typename T>
Tensor<T> as_batch(const Tensor<T>& x, std::size_t unbatched_rank) {
  if (x.rank() == unbatched_rank) {
    Shape s{1};
    s.insert(s.end(), x.shape().begin(), x.shape().end());
    return x.reshaped(std::move(s));
  }
  return x;
}

template <typename T>
Tensor<T> drop_batch(Tensor<T> x) {
  Shape s(x.shape().begin() + 1, x.shape().end());
  return std::move(x).reshaped(std::move(s));
}

}  // namespace detail

/// Stride-1, same-zero-padded 1-D convolution (cross-correlation).
/// Accepts [C_in x L] or a batch [B x C_in x L]; output has C_out channels
/// and the same length and batch rank as the input.
template <typename T>
Tensor<T> conv1d(const Tensor<T>& input, const Tensor<T>& kernels,
                 const Tensor<T>& bias) {
  const bool unbatched = input.rank() == 2;
  const Tensor<T> x = detail::as_batch(input, 2);
  const auto d = detail::conv_dims(x, kernels);
  if (bias.rank() != 1 || bias.dim(0) != d.out_channels)
    throw ShapeError("conv1d: bias must be [" +
                     std::to_string(d.out_channels) + "], got " +
                     to_string(bias.shape()));

  const std::size_t bl = d.batch * d.length;
  const std::size_t ck = d.in_channels * d.kernel;
  Buffer<T> cols(ck * bl);
  detail::im2col(x.ptr(), d, cols.data());

  Buffer<T> out_cm(d.out_channels * bl);
  detail::MatrixMap<T> out(out_cm.data(), d.out_channels, bl);
  detail::ConstMatrixMap<T> w(kernels.ptr(), d.out_channels, ck);
  detail::ConstMatrixMap<T> c(cols.data(), ck, bl);
  out.noalias() = w * c;
  for (std::size_t o = 0; o < d.out_channels; ++o)
    out.row(o).array() += bias[o];

  Tensor<T> y({d.batch, d.out_channels, d.length});
  detail::channel_major_to_batch(out_cm.data(), d.batch, d.out_channels,
                                 d.length, y.ptr());
  return unbatched ? detail::drop_batch(std::move(y)) : y;
}

template <typename T>
struct Conv1dGrads {
  Tensor<T> input;
  Tensor<T> kernels;
  Tensor<T> bias;
};

/// Gradients of sum(upstream * conv1d(input, kernels, b)) with respect to the
/// input, the kernels and the bias.
template <typename T>
Conv1dGrads<T> conv1d_grad(const Tensor<T>& input, const Tensor<T>& kernels,
                           const Tensor<T>& upstream) {
  const bool unbatched = input.rank() == 2;
  const Tensor<T> x = detail::as_batch(input, 2);
  const Tensor<T> up = detail::as_batch(upstream, 2);
  const auto d = detail::conv_dims(x, kernels);
  const Shape expected{d.batch, d.out_channels, d.length};
  if (up.shape() != expected)
    throw ShapeError("conv1d_grad: upstream shape " + to_string(up.shape()) +
                     " does not match output shape " + to_string(expected));

  const std::size_t bl = d.batch * d.length;
  const std::size_t ck = d.in_channels * d.kernel;
  Buffer<T> cols(ck * bl);
  detail::im2col(x.ptr(), d, cols.data());
  Buffer<T> up_cm(d.out_channels * bl);
  detail::batch_to_channel_major(up.ptr(), d.batch, d.out_channels, d.length,
                                 up_cm.data());

  detail::ConstMatrixMap<T> g(up_cm.data(), d.out_channels, bl);
  detail::ConstMatrixMap<T> c(cols.data(), ck, bl);
  detail::ConstMatrixMap<T> w(kernels.ptr(), d.out_channels, ck);

  Conv1dGrads<T> grads{Tensor<T>(x.shape()), Tensor<T>(kernels.shape()),
                       Tensor<T>({d.out_channels})};
  detail::MatrixMap<T> dw(grads.kernels.ptr(), d.out_channels, ck);
  dw.noalias() = g * c.transpose();
  for (std::size_t o = 0; o < d.out_channels; ++o) grads.bias[o] = g.row(o).sum();

  Buffer<T> dcols(ck * bl);
  detail::MatrixMap<T> dc(dcols.data(), ck, bl);
  dc.noalias() = w.transpose() * g;
  detail::col2im(dcols.data(), d, grads.input.ptr());
  if (unbatched) grads.input = detail::drop_batch(std::move(grads.input));
  return grads;
}

/// Temporal mean per channel: [C x L] -> [C], [B x C x L] -> [B x C].
template <typename T>
Tensor<T> global_average_pool(const Tensor<T>& input) {
  if (input.rank() != 2 && input.rank() != 3)
    throw ShapeError("global_average_pool: expected [C x L] or [B x C x L], got " +
                     to_string(input.shape()));
  const bool unbatched = input.rank() == 2;
  const Tensor<T> x = detail::as_batch(input, 2);
  const std::size_t b = x.dim(0), c = x.dim(1), l = x.dim(2);
  Tensor<T> out({b, c});
  for (std::size_t i = 0; i < b * c; ++i) {
    const T* row = x.ptr() + i * l;
    T sum{0};
    for (std::size_t t = 0; t < l; ++t) sum += row[t];
    out[i] = sum / static_cast<T>(l);
  }
  return unbatched ? detail::drop_batch(std::move(out)) : out;
}

template <typename T>
Tensor<T> global_average_pool_grad(const Shape& input_shape,
                                   const Tensor<T>& upstream) {
  if (input_shape.size() < 2 ||
      upstream.size() != element_count(input_shape) / input_shape.back())
    throw ShapeError("global_average_pool_grad: upstream " +
                     to_string(upstream.shape()) + " vs input " +
                     to_string(input_shape));
  const std::size_t l = input_shape.back();
  Tensor<T> dx(input_shape);
  const T scale = T{1} / static_cast<T>(l);
  for (std::size_t i = 0; i < upstream.size(); ++i)
    std::fill_n(dx.ptr() + i * l, l, upstream[i] * scale);
  return dx;
}

/// out[k] = sum_j weights[k][j] * input[j] + bias[k]. Input may be [n] or a
/// batch [B x n].
template <typename T>
Tensor<T> matmul_affine(const Tensor<T>& input, const Tensor<T>& weights,
                        const Tensor<T>& bias) {
  if (weights.rank() != 2)
    throw ShapeError("matmul_affine: weights must be [m x n], got " +
                     to_string(weights.shape()));
  const std::size_t m = weights.dim(0), n = weights.dim(1);
  const bool unbatched = input.rank() == 1;
  const Tensor<T> x = detail::as_batch(input, 1);
  if (x.rank() != 2 || x.dim(1) != n)
    throw ShapeError("matmul_affine: input " + to_string(input.shape()) +
                     " does not have inner dimension n = " + std::to_string(n) +
                     " of weights " + to_string(weights.shape()));
  if (bias.rank() != 1 || bias.dim(0) != m)
    throw ShapeError("matmul_affine: bias must be [" + std::to_string(m) +
                     "], got " + to_string(bias.shape()));
  const std::size_t b = x.dim(0);
  Tensor<T> out({b, m});
  detail::MatrixMap<T> y(out.ptr(), b, m);
  y.noalias() = detail::ConstMatrixMap<T>(x.ptr(), b, n) *
                detail::ConstMatrixMap<T>(weights.ptr(), m, n).transpose();
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t k = 0; k < m; ++k) out(i, k) += bias[k];
  return unbatched ? detail::drop_batch(std::move(out)) : out;
}

template <typename T>
struct AffineGrads {
  Tensor<T> input;
  Tensor<T> weights;
  Tensor<T> bias;
};

template <typename T>
AffineGrads<T> matmul_affine_grad(const Tensor<T>& input,
                                  const Tensor<T>& weights,
                                  const Tensor<T>& upstream) {
  const bool unbatched = input.rank() == 1;
  const Tensor<T> x = detail::as_batch(input, 1);
  const Tensor<T> g = detail::as_batch(upstream, 1);
  if (weights.rank() != 2 || x.rank() != 2 || x.dim(1) != weights.dim(1) ||
      g.rank() != 2 || g.dim(0) != x.dim(0) || g.dim(1) != weights.dim(0))
    throw ShapeError("matmul_affine_grad: input " + to_string(input.shape()) +
                     ", weights " + to_string(weights.shape()) +
                     ", upstream " + to_string(upstream.shape()) +
                     " are inconsistent");
  const std::size_t b = x.dim(0), m = weights.dim(0), n = weights.dim(1);
  AffineGrads<T> grads{Tensor<T>(x.shape()), Tensor<T>(weights.shape()),
                       Tensor<T>({m})};
  detail::ConstMatrixMap<T> gm(g.ptr(), b, m);
  detail::MatrixMap<T>(grads.input.ptr(), b, n).noalias() =
      gm * detail::ConstMatrixMap<T>(weights.ptr(), m, n);
  detail::MatrixMap<T>(grads.weights.ptr(), m, n).noalias() =
      gm.transpose() * detail::ConstMatrixMap<T>(x.ptr(), b, n);
  for (std::size_t k = 0; k < m; ++k) grads.bias[k] = gm.col(k).sum();
  if (unbatched) grads.input = detail::drop_batch(std::move(grads.input));
  return grads;
}

}  // namespace hmresnet
