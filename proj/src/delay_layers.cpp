#include "spikedelay/delay_layers.hpp"

namespace spikedelay {

double sigma_at_epoch(const SigmaSchedule& sched, int epoch) {
  if (sched.mode == SigmaMode::constant) return sched.sigma_min;
  if (sched.total_epochs < 2) {
    throw std::invalid_argument("exponential sigma schedule needs at least 2 epochs");
  }
  if (epoch < 0 || epoch >= sched.total_epochs) {
    throw std::out_of_range("epoch " + std::to_string(epoch) + " outside schedule");
  }
  if (!(sched.sigma_min > 0.0) || sched.sigma0 < sched.sigma_min) {
    throw std::invalid_argument("sigma schedule needs sigma0 >= sigma_min > 0");
  }
  if (epoch == sched.total_epochs - 1) return sched.sigma_min;
  const double rate = std::pow(sched.sigma_min / sched.sigma0, 1.0 / (sched.total_epochs - 1));
  return std::max(sched.sigma_min, sched.sigma0 * std::pow(rate, epoch));
}

}  // namespace spikedelay
