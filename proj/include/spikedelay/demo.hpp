#pragma once

#include "spikedelay/delay_layers.hpp"
#include "spikedelay/neurons.hpp"

#include <optional>
#include <string>

namespace spikedelay {

/// Coincidence detection with two input trains and two LIF neurons. S1
/// fires at t=8 and S2 at t=0; every synapse has weight 0.6. N1 receives
/// both trains without delay, N2 receives S2 through a delay d21.
struct CoincidenceDemo {
  double weight = 0.6;
  double d21 = 8.0;
  Index s1_spike = 8;
  Index s2_spike = 0;
  double tau_ms = 2.0;
  double delta_t_ms = 1.0;
  double threshold = 1.0;
  Index duration = 20;
  Index kernel_size = 16;
};

struct CoincidenceResult {
  LIFTrace<double> trace;  // [1, 2, duration]; channel 0 is N1, 1 is N2
  std::optional<Index> n1_first_spike;
  std::optional<Index> n2_first_spike;
  double n1_max_u = 0.0;
  double n2_max_u = 0.0;
};

CoincidenceResult run_coincidence(const CoincidenceDemo& demo);

/// One-line summary, e.g. "N2 spiked at t=8; N1 max u=0.6 < 1".
std::string describe(const CoincidenceDemo& demo, const CoincidenceResult& result);

}  // namespace spikedelay
