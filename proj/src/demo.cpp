#include "spikedelay/demo.hpp"

#include <iomanip>
#include <sstream>

namespace spikedelay {

namespace {

std::optional<Index> first_spike(const LIFTrace<double>& trace, Index channel) {
  for (Index t = 0; t < trace.spikes.dim(2); ++t) {
    if (trace.spikes(0, channel, t) != 0.0) return t;
  }
  return std::nullopt;
}

double max_potential(const LIFTrace<double>& trace, Index channel) {
  return trace.potentials.slice(0).row(channel).maxCoeff();
}

}  // namespace

CoincidenceResult run_coincidence(const CoincidenceDemo& demo) {
  if (demo.s1_spike < 0 || demo.s1_spike >= demo.duration || demo.s2_spike < 0 || demo.s2_spike >= demo.duration) {
    throw std::invalid_argument("demo spike times must lie inside the window");
  }
  DelayedSynapseLayer<double> layer(2, 2, 1, demo.kernel_size, kSigmaMin);
  layer.weights.values().setConstant(demo.weight);
  layer.delays(1, 1, 0) = demo.d21;
  clamp_delays(layer);

  DenseBuffer<double> input({1, 2, demo.duration});
  input(0, 0, demo.s1_spike) = 1.0;
  input(0, 1, demo.s2_spike) = 1.0;
  const auto discrete = discretize(layer);
  const auto current = conv1d_sparse_forward<double>(input, discrete.taps, 2, demo.kernel_size);

  LIFConfig cfg;
  cfg.tau_steps = tau_steps_from_ms(demo.tau_ms, demo.delta_t_ms);
  cfg.v_threshold = demo.threshold;
  CoincidenceResult result;
  result.trace = lif_forward(current, cfg);
  result.n1_first_spike = first_spike(result.trace, 0);
  result.n2_first_spike = first_spike(result.trace, 1);
  result.n1_max_u = max_potential(result.trace, 0);
  result.n2_max_u = max_potential(result.trace, 1);
  return result;
}

std::string describe(const CoincidenceDemo& demo, const CoincidenceResult& r) {
  std::ostringstream out;
  out << std::setprecision(2);
  if (r.n2_first_spike) {
    out << "N2 spiked at t=" << *r.n2_first_spike;
  } else {
    out << "N2 silent, max u=" << r.n2_max_u;
  }
  out << "; ";
  if (r.n1_first_spike) {
    out << "N1 spiked at t=" << *r.n1_first_spike;
  } else {
    out << "N1 max u=" << r.n1_max_u << " < " << demo.threshold;
  }
  return out.str();
}

}  // namespace spikedelay
