#pragma once

#include "spikedelay/core_math.hpp"

#include <tuple>

namespace spikedelay {

/// Added to the Gaussian tap sum before normalizing.
inline constexpr double kKernelEpsilon = 1e-7;
inline constexpr double kSigmaMin = 0.5;
/// Tolerated excursion of a delay past [0, T_d - 1] when building kernels,
/// wide enough for finite-difference probes at the boundary.
inline constexpr double kDelayRangeSlack = 1e-3;

/// A dense connection in which each (out, in) pair carries `kernel_count`
/// Gaussian taps, each with its own weight and real-valued delay. All
/// kernels share one standard deviation.
template <typename Scalar>
struct DelayedSynapseLayer {
  DenseBuffer<Scalar> weights;  // [C_out, C_in, m]
  DenseBuffer<Scalar> delays;   // [C_out, C_in, m], timesteps in [0, T_d - 1]
  double sigma = kSigmaMin;
  Index kernel_size = 1;        // T_d
  DenseBuffer<Scalar> mask;     // [C_out, C_in] of 0/1; empty means fully connected

  DelayedSynapseLayer() = default;
  DelayedSynapseLayer(Index c_out, Index c_in, Index kernel_count, Index t_d, double sigma_ = kSigmaMin)
      : weights({c_out, c_in, kernel_count}),
        delays({c_out, c_in, kernel_count}),
        sigma(sigma_),
        kernel_size(t_d) {}

  Index out_channels() const { return weights.dim(0); }
  Index in_channels() const { return weights.dim(1); }
  Index kernel_count() const { return weights.dim(2); }
  bool connected(Index i, Index j) const { return mask.empty() || mask(i, j) != Scalar(0); }
};

namespace detail {

template <typename Scalar>
void check_layer(const DelayedSynapseLayer<Scalar>& layer) {
  require_rank(layer.weights, 3, "layer weights");
  require_shape(layer.delays, layer.weights.shape(), "layer delays");
  if (!layer.mask.empty()) {
    require_shape(layer.mask, {layer.out_channels(), layer.in_channels()}, "layer mask");
  }
  if (layer.kernel_size < 1) throw ShapeError("kernel size must be >= 1");
  if (!(layer.sigma > 0.0)) throw std::invalid_argument("sigma must be > 0");
}

// Gaussian profile over the T_d taps for a delay `d`: returns the tap sum.
inline double gaussian_taps(double d, double sigma, Index t_d, double* taps) {
  double total = 0.0;
  for (Index n = 0; n < t_d; ++n) {
    const double x = (static_cast<double>(n - t_d + 1) + d) / sigma;
    taps[n] = std::exp(-0.5 * x * x);
    total += taps[n];
  }
  return total;
}

}  // namespace detail

/// kernels[i, j, n] = sum_p mask[i, j] * W[i, j, p] / c * exp(-((n - T_d + D[i, j, p] + 1) / sigma)^2 / 2)
/// with c = eps + sum_n exp(...). Returns [C_out, C_in, T_d].
template <typename Scalar>
DenseBuffer<Scalar> build_gaussian_kernels(const DelayedSynapseLayer<Scalar>& layer) {
  detail::check_layer(layer);
  const Index c_out = layer.out_channels(), c_in = layer.in_channels();
  const Index m = layer.kernel_count(), t_d = layer.kernel_size;
  DenseBuffer<Scalar> kernels({c_out, c_in, t_d});
  std::vector<double> taps(static_cast<std::size_t>(t_d));
  std::vector<double> acc(static_cast<std::size_t>(t_d));
  for (Index i = 0; i < c_out; ++i) {
    for (Index j = 0; j < c_in; ++j) {
      if (!layer.connected(i, j)) continue;
      std::fill(acc.begin(), acc.end(), 0.0);
      for (Index p = 0; p < m; ++p) {
        const double d = layer.delays(i, j, p);
        if (!(d >= -kDelayRangeSlack && d <= static_cast<double>(t_d - 1) + kDelayRangeSlack)) {
          throw std::out_of_range("delay " + std::to_string(d) + " outside [0, T_d - 1]");
        }
        const double c = kKernelEpsilon + detail::gaussian_taps(d, layer.sigma, t_d, taps.data());
        const double scale = static_cast<double>(layer.weights(i, j, p)) / c;
        for (Index n = 0; n < t_d; ++n) acc[n] += scale * taps[n];
      }
      for (Index n = 0; n < t_d; ++n) kernels(i, j, n) = static_cast<Scalar>(acc[n]);
    }
  }
  return kernels;
}

template <typename Scalar>
struct DelayGradients {
  DenseBuffer<Scalar> weights;
  DenseBuffer<Scalar> delays;
};

/// Adjoint of build_gaussian_kernels, including the delay dependence of the
/// normalization term. Masked synapses receive zero.
template <typename Scalar>
DelayGradients<Scalar> gaussian_kernels_backward(const DelayedSynapseLayer<Scalar>& layer,
                                                 const DenseBuffer<Scalar>& grad_kernels) {
  detail::check_layer(layer);
  const Index c_out = layer.out_channels(), c_in = layer.in_channels();
  const Index m = layer.kernel_count(), t_d = layer.kernel_size;
  require_shape(grad_kernels, {c_out, c_in, t_d}, "grad_kernels");

  DelayGradients<Scalar> grads{DenseBuffer<Scalar>(layer.weights.shape()),
                               DenseBuffer<Scalar>(layer.delays.shape())};
  std::vector<double> taps(static_cast<std::size_t>(t_d));
  const double sigma = layer.sigma;
  for (Index i = 0; i < c_out; ++i) {
    for (Index j = 0; j < c_in; ++j) {
      if (!layer.connected(i, j)) continue;
      for (Index p = 0; p < m; ++p) {
        const double d = layer.delays(i, j, p);
        const double w = layer.weights(i, j, p);
        const double c = kKernelEpsilon + detail::gaussian_taps(d, sigma, t_d, taps.data());
        // d(tap_n)/dd = -tap_n * x_n / sigma
        double g_dot_taps = 0.0, g_dot_dtaps = 0.0, dc = 0.0;
        for (Index n = 0; n < t_d; ++n) {
          const double x = (static_cast<double>(n - t_d + 1) + d) / sigma;
          const double dtap = -taps[n] * x / sigma;
          const double g = grad_kernels(i, j, n);
          g_dot_taps += g * taps[n];
          g_dot_dtaps += g * dtap;
          dc += dtap;
        }
        grads.weights(i, j, p) = static_cast<Scalar>(g_dot_taps / c);
        grads.delays(i, j, p) = static_cast<Scalar>(w / c * (g_dot_dtaps - g_dot_taps * dc / c));
      }
    }
  }
  return grads;
}

/// Per-synapse single-tap kernels obtained by rounding the delays.
template <typename Scalar>
struct DiscreteKernels {
  Index out_channels = 0;
  Index in_channels = 0;
  Index kernel_size = 1;
  std::vector<SparseTap<Scalar>> taps;  // sorted by (out, in, tap)
};

inline Index round_delay(double d) { return static_cast<Index>(std::floor(d + 0.5)); }

/// Tap n = T_d - round(D) - 1 with value W for every unmasked (i, j, p);
/// rounding is half-up.
template <typename Scalar>
DiscreteKernels<Scalar> discretize(const DelayedSynapseLayer<Scalar>& layer) {
  detail::check_layer(layer);
  DiscreteKernels<Scalar> out{layer.out_channels(), layer.in_channels(), layer.kernel_size, {}};
  const Index m = layer.kernel_count();
  out.taps.reserve(static_cast<std::size_t>(layer.weights.size()));
  for (Index i = 0; i < out.out_channels; ++i) {
    for (Index j = 0; j < out.in_channels; ++j) {
      if (!layer.connected(i, j)) continue;
      for (Index p = 0; p < m; ++p) {
        const Index d = std::clamp<Index>(round_delay(layer.delays(i, j, p)), 0, layer.kernel_size - 1);
        out.taps.push_back({i, j, layer.kernel_size - d - 1, layer.weights(i, j, p)});
      }
    }
  }
  std::stable_sort(out.taps.begin(), out.taps.end(), [](const auto& a, const auto& b) {
    return std::tie(a.out, a.in, a.tap) < std::tie(b.out, b.in, b.tap);
  });
  return out;
}

template <typename Scalar>
DenseBuffer<Scalar> to_dense(const DiscreteKernels<Scalar>& kernels) {
  DenseBuffer<Scalar> out({kernels.out_channels, kernels.in_channels, kernels.kernel_size});
  for (const auto& tap : kernels.taps) out(tap.out, tap.in, tap.tap) += tap.weight;
  return out;
}

enum class SigmaMode { exponential, constant };

struct SigmaSchedule {
  double sigma0 = 1.0;
  double sigma_min = kSigmaMin;
  int total_epochs = 2;
  SigmaMode mode = SigmaMode::exponential;

  static SigmaSchedule for_kernel_size(Index t_d, int total_epochs,
                                       SigmaMode mode = SigmaMode::exponential) {
    return {static_cast<double>(t_d) / 2.0, kSigmaMin, total_epochs, mode};
  }
};

/// Exponential decay from sigma0 that lands on sigma_min at the last epoch;
/// constant mode pins sigma_min.
double sigma_at_epoch(const SigmaSchedule& sched, int epoch);

template <typename Scalar>
void clamp_delays(DelayedSynapseLayer<Scalar>& layer) {
  const Scalar hi = static_cast<Scalar>(layer.kernel_size - 1);
  layer.delays.values() = layer.delays.values().cwiseMax(Scalar(0)).cwiseMin(hi);
}

/// i.i.d. uniform delays on [0, T_d - 1].
template <typename Scalar>
DenseBuffer<Scalar> init_delays(SeededRng& rng, std::vector<Index> shape, Index t_d) {
  if (t_d < 1) throw std::invalid_argument("init_delays: T_d must be >= 1");
  DenseBuffer<Scalar> delays(std::move(shape));
  const double hi = static_cast<double>(t_d - 1);
  for (Index k = 0; k < delays.size(); ++k) delays[k] = static_cast<Scalar>(rng.uniform() * hi);
  return delays;
}

/// Each output row gets exactly `fan_in` ones at distinct, uniformly chosen inputs.
template <typename Scalar>
DenseBuffer<Scalar> make_sparse_mask(SeededRng& rng, Index c_out, Index c_in, Index fan_in) {
  if (fan_in < 0 || fan_in > c_in) {
    throw std::invalid_argument("make_sparse_mask: fan_in " + std::to_string(fan_in) +
                                " outside [0, " + std::to_string(c_in) + "]");
  }
  DenseBuffer<Scalar> mask({c_out, c_in});
  std::vector<Index> order(static_cast<std::size_t>(c_in));
  for (Index i = 0; i < c_out; ++i) {
    std::iota(order.begin(), order.end(), Index{0});
    for (Index k = 0; k < fan_in; ++k) {
      const auto pick = k + static_cast<Index>(rng.uniform_int(static_cast<std::uint64_t>(c_in - k)));
      std::swap(order[k], order[pick]);
      mask(i, order[k]) = Scalar(1);
    }
  }
  return mask;
}

}  // namespace spikedelay
