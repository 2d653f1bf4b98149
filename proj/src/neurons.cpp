#include "spikedelay/neurons.hpp"

namespace spikedelay {

void LIFConfig::validate() const {
  if (!(tau_steps > 1.0) || !std::isfinite(tau_steps)) {
    throw std::invalid_argument("LIF tau_steps must be finite and > 1, got " +
                                std::to_string(tau_steps));
  }
  if (!(surrogate_alpha > 0.0)) throw std::invalid_argument("LIF surrogate_alpha must be > 0");
  if (!std::isfinite(v_threshold)) throw std::invalid_argument("LIF threshold must be finite");
}

}  // namespace spikedelay
