#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace spikedelay {

using Index = Eigen::Index;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using RowMatrixMap = Eigen::Map<RowMatrix<Scalar>>;

template <typename Scalar>
using ConstRowMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

std::string shape_string(std::span<const Index> shape);

/// Dense row-major array of real values with an explicit shape.
///
/// Batched time series use the layout [batch, channels, time]; connection
/// parameters use [out, in, taps]. A rank-3 buffer exposes each leading
/// slice as a row-major Eigen matrix through `slice()`.
template <typename Scalar>
class DenseBuffer {
 public:
  DenseBuffer() = default;

  explicit DenseBuffer(std::vector<Index> shape)
      : shape_(std::move(shape)), data_(Vector<Scalar>::Zero(count(shape_))) {}

  DenseBuffer(std::vector<Index> shape, std::initializer_list<Scalar> values)
      : DenseBuffer(std::move(shape)) {
    if (static_cast<Index>(values.size()) != data_.size()) {
      throw ShapeError("initializer length " + std::to_string(values.size()) +
                       " does not match shape " + shape_string(shape_));
    }
    std::copy(values.begin(), values.end(), data_.data());
  }

  static DenseBuffer constant(std::vector<Index> shape, Scalar value) {
    DenseBuffer out(std::move(shape));
    out.data_.setConstant(value);
    return out;
  }

  const std::vector<Index>& shape() const noexcept { return shape_; }
  Index rank() const noexcept { return static_cast<Index>(shape_.size()); }
  Index dim(Index axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  Index size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.size() == 0; }

  Scalar* data() noexcept { return data_.data(); }
  const Scalar* data() const noexcept { return data_.data(); }
  Vector<Scalar>& values() noexcept { return data_; }
  const Vector<Scalar>& values() const noexcept { return data_; }

  Scalar& operator[](Index i) { return data_[i]; }
  Scalar operator[](Index i) const { return data_[i]; }

  Scalar& operator()(Index i, Index j) { return data_[i * shape_[1] + j]; }
  Scalar operator()(Index i, Index j) const { return data_[i * shape_[1] + j]; }

  Scalar& operator()(Index i, Index j, Index k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  Scalar operator()(Index i, Index j, Index k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  /// Leading slice `i` of a rank-3 buffer as a [dim(1), dim(2)] matrix.
  RowMatrixMap<Scalar> slice(Index i) {
    return {data_.data() + i * shape_[1] * shape_[2], shape_[1], shape_[2]};
  }
  ConstRowMatrixMap<Scalar> slice(Index i) const {
    return {data_.data() + i * shape_[1] * shape_[2], shape_[1], shape_[2]};
  }

  /// Rank-2 view as a matrix.
  RowMatrixMap<Scalar> matrix() { return {data_.data(), shape_.at(0), shape_.at(1)}; }
  ConstRowMatrixMap<Scalar> matrix() const { return {data_.data(), shape_.at(0), shape_.at(1)}; }

  void set_zero() { data_.setZero(); }

  bool all_finite() const { return data_.allFinite(); }

  template <typename Other>
  DenseBuffer<Other> cast() const {
    DenseBuffer<Other> out(shape_);
    out.values() = data_.template cast<Other>();
    return out;
  }

  bool operator==(const DenseBuffer& other) const {
    return shape_ == other.shape_ && data_ == other.data_;
  }

 private:
  static Index count(const std::vector<Index>& shape) {
    Index n = 1;
    for (Index d : shape) {
      if (d < 0) throw ShapeError("negative dimension in " + shape_string(shape));
      n *= d;
    }
    return shape.empty() ? 0 : n;
  }

  std::vector<Index> shape_;
  Vector<Scalar> data_;
};

template <typename Scalar>
void require_finite(const DenseBuffer<Scalar>& buffer, const char* what) {
  if (!buffer.all_finite()) {
    throw NumericError(std::string(what) + " contains non-finite values");
  }
}

template <typename Scalar>
void require_rank(const DenseBuffer<Scalar>& buffer, Index rank, const char* what) {
  if (buffer.rank() != rank) {
    throw ShapeError(std::string(what) + " must have rank " + std::to_string(rank) +
                     ", got shape " + shape_string(buffer.shape()));
  }
}

template <typename Scalar>
void require_shape(const DenseBuffer<Scalar>& buffer, const std::vector<Index>& shape,
                   const char* what) {
  if (buffer.shape() != shape) {
    throw ShapeError(std::string(what) + " has shape " + shape_string(buffer.shape()) +
                     ", expected " + shape_string(shape));
  }
}

/// Flushes subnormal floats to zero on this thread for the guard's lifetime.
class DenormalGuard {
 public:
  DenormalGuard();
  ~DenormalGuard();
  DenormalGuard(const DenormalGuard&) = delete;
  DenormalGuard& operator=(const DenormalGuard&) = delete;

 private:
  unsigned saved_ = 0;
};

/// Deterministic random stream keyed by (seed, stream id).
///
/// All draws are derived from the raw 64-bit output of mt19937_64, whose
/// sequence is fixed by the standard, so streams agree across platforms.
class SeededRng {
 public:
  SeededRng(std::uint64_t seed, std::uint64_t stream = 0);

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream() const noexcept { return stream_; }

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer on [0, n).
  std::uint64_t uniform_int(std::uint64_t n);
  std::uint64_t poisson(double rate);
  bool bernoulli(double p) { return uniform() < p; }

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[uniform_int(i)]);
    }
  }

  /// Independent child stream; the parent is not advanced.
  SeededRng fork(std::uint64_t stream) const;

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::mt19937_64 engine_;
};

struct ConvOptions {
  // Extends the output by T_d - 1 steps past the end of the input.
  bool pad_right = false;
  bool need_input_grad = true;
};

inline Index conv_output_length(Index input_length, Index kernel_size, const ConvOptions& opts) {
  return opts.pad_right ? input_length + kernel_size - 1 : input_length;
}

namespace detail {

// Inputs at most this dense take the event-driven convolution path.
inline constexpr double kEventDensity = 0.15;

template <typename Scalar>
bool event_driven(const DenseBuffer<Scalar>& input) {
  if (input.size() == 0) return false;
  const Index nonzero = (input.values().array() != Scalar(0)).count();
  return static_cast<double>(nonzero) <= kEventDensity * static_cast<double>(input.size());
}

// Kernel rows reordered so row (j, m) holds kernels[:, j, T_d - 1 - m]: an
// input event at time s reaches output s + m through row (j, m).
template <typename Scalar>
RowMatrix<Scalar> reversed_taps(const ConstRowMatrixMap<Scalar>& kmat, Index c_in, Index taps) {
  RowMatrix<Scalar> out(c_in * taps, kmat.rows());
  for (Index j = 0; j < c_in; ++j) {
    for (Index m = 0; m < taps; ++m) out.row(j * taps + m) = kmat.col(j * taps + taps - 1 - m).transpose();
  }
  return out;
}

// Calls f(j, s, len, value) for every nonzero input[j, s]; len is the
// number of output steps the event reaches.
template <typename Scalar, typename F>
void for_each_event(const ConstRowMatrixMap<Scalar>& x, Index taps, Index out_len, F&& f) {
  for (Index j = 0; j < x.rows(); ++j) {
    for (Index s = 0; s < std::min(x.cols(), out_len); ++s) {
      const Scalar v = x(j, s);
      if (v != Scalar(0)) f(j, s, std::min(taps, out_len - s), v);
    }
  }
}

// Unfolds one [C_in, T] slice into [C_in * T_d, T_out] so that row (j, n)
// holds input[j, t - (T_d - 1 - n)], zero outside the input.
template <typename Scalar>
void unfold_causal(const ConstRowMatrixMap<Scalar>& x, Index kernel_size, Index out_len,
                   RowMatrix<Scalar>& cols) {
  const Index c_in = x.rows();
  const Index t_in = x.cols();
  cols.setZero(c_in * kernel_size, out_len);
  for (Index j = 0; j < c_in; ++j) {
    for (Index n = 0; n < kernel_size; ++n) {
      const Index shift = kernel_size - 1 - n;
      const Index stop = std::min(out_len, t_in + shift);
      if (stop <= shift) continue;
      cols.row(j * kernel_size + n).segment(shift, stop - shift) =
          x.row(j).segment(0, stop - shift);
    }
  }
}

}  // namespace detail

/// Causal temporal correlation against a (T_d - 1)-step zero left-padding:
///   out[b, i, t] = sum_j sum_n k[i, j, n] * x[b, j, t - (T_d - 1 - n)].
/// A kernel whose only nonzero tap sits at n = T_d - d - 1 delays by d steps.
template <typename Scalar>
DenseBuffer<Scalar> conv1d_causal_forward(const DenseBuffer<Scalar>& input,
                                          const DenseBuffer<Scalar>& kernels,
                                          const ConvOptions& opts = {}) {
  require_rank(input, 3, "conv input");
  require_rank(kernels, 3, "conv kernels");
  const Index batch = input.dim(0), c_in = input.dim(1), t_in = input.dim(2);
  const Index c_out = kernels.dim(0), taps = kernels.dim(2);
  if (kernels.dim(1) != c_in) {
    throw ShapeError("conv kernels " + shape_string(kernels.shape()) +
                     " incompatible with input " + shape_string(input.shape()));
  }
  if (t_in < 1 || taps < 1) throw ShapeError("conv requires T >= 1 and T_d >= 1");
  require_finite(input, "conv input");
  require_finite(kernels, "conv kernels");

  const Index t_out = conv_output_length(t_in, taps, opts);
  DenseBuffer<Scalar> out({batch, c_out, t_out});
  ConstRowMatrixMap<Scalar> kmat(kernels.data(), c_out, c_in * taps);
  if (detail::event_driven(input)) {
    const auto reversed = detail::reversed_taps<Scalar>(kmat, c_in, taps);
    RowMatrix<Scalar> out_t;
    for (Index b = 0; b < batch; ++b) {
      out_t.setZero(t_out, c_out);
      detail::for_each_event<Scalar>(input.slice(b), taps, t_out, [&](Index j, Index s, Index len, Scalar v) {
        out_t.middleRows(s, len).noalias() += v * reversed.middleRows(j * taps, len);
      });
      out.slice(b) = out_t.transpose();
    }
    return out;
  }
  RowMatrix<Scalar> cols;
  for (Index b = 0; b < batch; ++b) {
    detail::unfold_causal<Scalar>(input.slice(b), taps, t_out, cols);
    out.slice(b).noalias() = kmat * cols;
  }
  return out;
}

template <typename Scalar>
struct ConvGradients {
  DenseBuffer<Scalar> input;    // empty when not requested
  DenseBuffer<Scalar> kernels;
};

/// Adjoint of conv1d_causal_forward.
template <typename Scalar>
ConvGradients<Scalar> conv1d_causal_backward(const DenseBuffer<Scalar>& input,
                                             const DenseBuffer<Scalar>& kernels,
                                             const DenseBuffer<Scalar>& grad_output,
                                             const ConvOptions& opts = {}) {
  require_rank(input, 3, "conv input");
  require_rank(kernels, 3, "conv kernels");
  const Index batch = input.dim(0), c_in = input.dim(1), t_in = input.dim(2);
  const Index c_out = kernels.dim(0), taps = kernels.dim(2);
  if (kernels.dim(1) != c_in) throw ShapeError("conv kernels incompatible with input");
  require_shape(grad_output, {batch, c_out, conv_output_length(t_in, taps, opts)},
                "conv grad_output");

  const Index t_out = grad_output.dim(2);
  ConvGradients<Scalar> grads;
  grads.kernels = DenseBuffer<Scalar>(kernels.shape());
  RowMatrixMap<Scalar> gk(grads.kernels.data(), c_out, c_in * taps);
  ConstRowMatrixMap<Scalar> kmat(kernels.data(), c_out, c_in * taps);
  if (opts.need_input_grad) grads.input = DenseBuffer<Scalar>(input.shape());

  const bool events = detail::event_driven(input);
  RowMatrix<Scalar> cols;
  RowMatrix<Scalar> grad_cols;
  RowMatrix<Scalar> g_t;
  RowMatrix<Scalar> gk_reversed;
  if (events) gk_reversed.setZero(c_in * taps, c_out);
  for (Index b = 0; b < batch; ++b) {
    const auto g = grad_output.slice(b);
    if (events) {
      g_t = g.transpose();
      detail::for_each_event<Scalar>(input.slice(b), taps, t_out, [&](Index j, Index s, Index len, Scalar v) {
        gk_reversed.middleRows(j * taps, len).noalias() += v * g_t.middleRows(s, len);
      });
    } else {
      detail::unfold_causal<Scalar>(input.slice(b), taps, t_out, cols);
      gk.noalias() += g * cols.transpose();
    }
    if (!opts.need_input_grad) continue;
    grad_cols.noalias() = kmat.transpose() * g;
    auto gx = grads.input.slice(b);
    for (Index j = 0; j < c_in; ++j) {
      for (Index n = 0; n < taps; ++n) {
        const Index shift = taps - 1 - n;
        const Index stop = std::min(t_out, t_in + shift);
        if (stop <= shift) continue;
        gx.row(j).segment(0, stop - shift) +=
            grad_cols.row(j * taps + n).segment(shift, stop - shift);
      }
    }
  }
  if (events) {
    for (Index j = 0; j < c_in; ++j) {
      for (Index n = 0; n < taps; ++n) gk.col(j * taps + n) += gk_reversed.row(j * taps + taps - 1 - n).transpose();
    }
  }
  return grads;
}

/// One nonzero kernel entry: output channel, input channel, tap index, value.
template <typename Scalar>
struct SparseTap {
  Index out;
  Index in;
  Index tap;
  Scalar weight;
};

/// Causal convolution with an explicit tap list. Each output element
/// accumulates its taps in list order, so a list sorted by (out, in, tap)
/// sums over input channels in ascending order.
template <typename Scalar>
DenseBuffer<Scalar> conv1d_sparse_forward(const DenseBuffer<Scalar>& input,
                                          std::span<const SparseTap<Scalar>> taps,
                                          Index out_channels, Index kernel_size,
                                          const ConvOptions& opts = {}) {
  require_rank(input, 3, "conv input");
  require_finite(input, "conv input");
  const Index batch = input.dim(0), c_in = input.dim(1), t_in = input.dim(2);
  const Index t_out = conv_output_length(t_in, kernel_size, opts);
  DenseBuffer<Scalar> out({batch, out_channels, t_out});
  for (const auto& tap : taps) {
    if (tap.out < 0 || tap.out >= out_channels || tap.in < 0 || tap.in >= c_in ||
        tap.tap < 0 || tap.tap >= kernel_size) {
      throw ShapeError("sparse tap out of range");
    }
  }
  for (Index b = 0; b < batch; ++b) {
    auto y = out.slice(b);
    const auto x = input.slice(b);
    for (const auto& tap : taps) {
      const Index shift = kernel_size - 1 - tap.tap;
      const Index stop = std::min(t_out, t_in + shift);
      for (Index t = shift; t < stop; ++t) y(tap.out, t) += tap.weight * x(tap.in, t - shift);
    }
  }
  return out;
}

/// Softmax over the last axis, stabilized by max-subtraction.
template <typename Scalar>
DenseBuffer<Scalar> softmax_lastdim(const DenseBuffer<Scalar>& x) {
  if (x.rank() < 1 || x.shape().back() < 1) throw ShapeError("softmax needs a nonempty last axis");
  require_finite(x, "softmax input");
  const Index k = x.shape().back();
  const Index rows = x.size() / k;
  DenseBuffer<Scalar> out(x.shape());
  ConstRowMatrixMap<Scalar> in(x.data(), rows, k);
  RowMatrixMap<Scalar> y(out.data(), rows, k);
  for (Index r = 0; r < rows; ++r) {
    const Scalar peak = in.row(r).maxCoeff();
    y.row(r) = (in.row(r).array() - peak).exp();
    y.row(r) /= y.row(r).sum();
  }
  return out;
}

}  // namespace spikedelay
