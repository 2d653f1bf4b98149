#pragma once

#include "spikedelay/core_math.hpp"

#include <numbers>

namespace spikedelay {

struct LIFConfig {
  double tau_steps = 2.0;  // membrane time constant in timesteps, > 1
  double v_threshold = 1.0;
  double surrogate_alpha = 2.0;
  bool infinite_threshold = false;
  // Sigmoid spikes with exact derivative; for gradient checking only.
  bool smooth_mode = false;

  double beta() const { return 1.0 - 1.0 / tau_steps; }
  void validate() const;
};

/// tau in milliseconds converted to timesteps of width delta_t_ms.
inline double tau_steps_from_ms(double tau_ms, double delta_t_ms) { return tau_ms / delta_t_ms; }

/// ATan surrogate derivative of the Heaviside step.
inline double surrogate_grad(double x, double alpha) {
  const double s = std::numbers::pi / 2.0 * alpha * x;
  return alpha / (2.0 * (1.0 + s * s));
}

/// Membrane potentials before reset and the emitted spikes, both [B, C, T].
template <typename Scalar>
struct LIFTrace {
  DenseBuffer<Scalar> potentials;
  DenseBuffer<Scalar> spikes;
};

namespace detail {

inline double smooth_spike(double u, const LIFConfig& cfg) {
  return 1.0 / (1.0 + std::exp(-cfg.surrogate_alpha * (u - cfg.v_threshold)));
}

}  // namespace detail

/// u[t] = beta * u[t-1] * (1 - S[t-1]) + I[t],  S[t] = H(u[t] - threshold), u[-1] = 0.
template <typename Scalar>
LIFTrace<Scalar> lif_forward(const DenseBuffer<Scalar>& current, const LIFConfig& cfg) {
  cfg.validate();
  require_rank(current, 3, "LIF input");
  require_finite(current, "LIF input");
  const Index lanes = current.dim(0) * current.dim(1);
  const Index steps = current.dim(2);
  const auto beta = static_cast<Scalar>(cfg.beta());
  const auto threshold = static_cast<Scalar>(cfg.v_threshold);

  LIFTrace<Scalar> trace{DenseBuffer<Scalar>(current.shape()), DenseBuffer<Scalar>(current.shape())};
  for (Index lane = 0; lane < lanes; ++lane) {
    const Scalar* in = current.data() + lane * steps;
    Scalar* u = trace.potentials.data() + lane * steps;
    Scalar* s = trace.spikes.data() + lane * steps;
    Scalar carried = 0;
    for (Index t = 0; t < steps; ++t) {
      u[t] = beta * carried + in[t];
      if (cfg.infinite_threshold) {
        s[t] = 0;
      } else if (cfg.smooth_mode) {
        s[t] = static_cast<Scalar>(detail::smooth_spike(static_cast<double>(u[t]), cfg));
      } else {
        s[t] = u[t] >= threshold ? Scalar(1) : Scalar(0);
      }
      carried = u[t] * (Scalar(1) - s[t]);
    }
  }
  return trace;
}

/// Reverse sweep of lif_forward. The spike derivative is the surrogate (or the
/// exact sigmoid derivative in smooth mode) both where the spike is emitted
/// and where it gates the reset. Empty gradient buffers are read as zero.
template <typename Scalar>
DenseBuffer<Scalar> lif_backward(const LIFTrace<Scalar>& trace, const LIFConfig& cfg,
                                 const DenseBuffer<Scalar>& grad_spikes,
                                 const DenseBuffer<Scalar>& grad_potentials) {
  cfg.validate();
  const auto& shape = trace.potentials.shape();
  if (!grad_spikes.empty()) require_shape(grad_spikes, shape, "LIF grad_spikes");
  if (!grad_potentials.empty()) require_shape(grad_potentials, shape, "LIF grad_potentials");

  const Index lanes = shape[0] * shape[1];
  const Index steps = shape[2];
  const double beta = cfg.beta();
  DenseBuffer<Scalar> grad_current(shape);
  for (Index lane = 0; lane < lanes; ++lane) {
    const Index base = lane * steps;
    // Gradient w.r.t. the post-reset potential carried into step t + 1.
    double grad_carried = 0.0;
    for (Index t = steps - 1; t >= 0; --t) {
      const double u = trace.potentials[base + t];
      const double s = trace.spikes[base + t];
      double grad_u = grad_potentials.empty() ? 0.0 : grad_potentials[base + t];
      if (!cfg.infinite_threshold) {
        const double ds_du = cfg.smooth_mode ? cfg.surrogate_alpha * s * (1.0 - s)
                                             : surrogate_grad(u - cfg.v_threshold, cfg.surrogate_alpha);
        const double grad_s = (grad_spikes.empty() ? 0.0 : grad_spikes[base + t]) - grad_carried * u;
        grad_u += grad_s * ds_du + grad_carried * (1.0 - s);
      } else {
        grad_u += grad_carried;
      }
      grad_current[base + t] = static_cast<Scalar>(grad_u);
      grad_carried = beta * grad_u;
    }
  }
  return grad_current;
}

}  // namespace spikedelay
