#include "spikedelay/core_math.hpp"

#include <sstream>

#if defined(__SSE__)
#include <xmmintrin.h>
#endif

namespace spikedelay {

std::string shape_string(std::span<const Index> shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

#if defined(__SSE__)
DenormalGuard::DenormalGuard() : saved_(_mm_getcsr()) { _mm_setcsr(saved_ | 0x8040u); }
DenormalGuard::~DenormalGuard() { _mm_setcsr(saved_); }
#else
DenormalGuard::DenormalGuard() = default;
DenormalGuard::~DenormalGuard() = default;
#endif

namespace {

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t state = seed;
  std::uint64_t a = splitmix64(state);
  state ^= stream * 0xD1B54A32D192ED03ULL;
  std::uint64_t b = splitmix64(state);
  return a ^ (b + 0x632BE59BD9B4E019ULL);
}

}  // namespace

SeededRng::SeededRng(std::uint64_t seed, std::uint64_t stream)
    : seed_(seed), stream_(stream), engine_(mix_seed(seed, stream)) {}

double SeededRng::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

std::uint64_t SeededRng::uniform_int(std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("uniform_int: empty range");
  // Rejection keeps the draw exactly uniform.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return x % n;
}

std::uint64_t SeededRng::poisson(double rate) {
  if (rate < 0.0 || !std::isfinite(rate)) throw std::invalid_argument("poisson: bad rate");
  if (rate == 0.0) return 0;
  if (rate > 30.0) {
    // Normal approximation; only hit by unusually dense generators.
    const double u1 = std::max(uniform(), 1e-300);
    const double u2 = uniform();
    const double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    return static_cast<std::uint64_t>(std::max(0.0, std::round(rate + std::sqrt(rate) * z)));
  }
  const double limit = std::exp(-rate);
  std::uint64_t k = 0;
  double p = uniform();
  while (p > limit) {
    ++k;
    p *= uniform();
  }
  return k;
}

SeededRng SeededRng::fork(std::uint64_t stream) const {
  return SeededRng(mix_seed(seed_, stream_), stream);
}

}  // namespace spikedelay
