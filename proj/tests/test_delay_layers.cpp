#include "doctest.h"
#include "test_util.hpp"

#include "spikedelay/delay_layers.hpp"

using namespace spikedelay;
using testutil::random_buffer;

namespace {

DelayedSynapseLayer<double> random_layer(SeededRng& rng, Index c_out, Index c_in, Index m, Index t_d, double sigma) {
  DelayedSynapseLayer<double> layer(c_out, c_in, m, t_d, sigma);
  layer.weights = random_buffer<double>(rng, layer.weights.shape());
  layer.delays = init_delays<double>(rng, layer.delays.shape(), t_d);
  return layer;
}

// Shift-and-scale reference: y[i, t] = sum_j w_ij * x[j, t - round(d_ij)].
DenseBuffer<double> shift_oracle(const DelayedSynapseLayer<double>& layer, const DenseBuffer<double>& x) {
  const Index B = x.dim(0), T = x.dim(2);
  DenseBuffer<double> y({B, layer.out_channels(), T});
  for (Index b = 0; b < B; ++b)
    for (Index i = 0; i < layer.out_channels(); ++i)
      for (Index j = 0; j < layer.in_channels(); ++j) {
        if (!layer.connected(i, j)) continue;
        for (Index p = 0; p < layer.kernel_count(); ++p) {
          const Index d = round_delay(layer.delays(i, j, p));
          for (Index t = d; t < T; ++t) y(b, i, t) += layer.weights(i, j, p) * x(b, j, t - d);
        }
      }
  return y;
}

}  // namespace

TEST_CASE("gaussian kernel: worked example") {
  DelayedSynapseLayer<double> layer(1, 1, 1, 3, 0.5);
  layer.weights[0] = 1.0;
  layer.delays[0] = 1.0;
  const auto k = build_gaussian_kernels(layer);
  const double e2 = std::exp(-2.0);
  const double c = 1e-7 + 1.0 + 2.0 * e2;
  CHECK(k[0] == doctest::Approx(e2 / c).epsilon(1e-12));
  CHECK(k[1] == doctest::Approx(1.0 / c).epsilon(1e-12));
  CHECK(k[2] == doctest::Approx(e2 / c).epsilon(1e-12));
  CHECK(k[0] == doctest::Approx(0.10651).epsilon(1e-4));
  CHECK(k[1] == doctest::Approx(0.78699).epsilon(1e-5));

  layer.weights[0] = 0.0;
  CHECK(build_gaussian_kernels(layer).values().isZero(0.0));
}

TEST_CASE("gaussian kernel mass and concentration") {
  SeededRng rng(12);
  for (int trial = 0; trial < 1000; ++trial) {
    const Index t_d = 2 + rng.uniform_int(30);
    const double sigma = rng.uniform(0.5, std::max(0.5, t_d / 2.0));
    DelayedSynapseLayer<double> layer(1, 1, 1, t_d, sigma);
    layer.weights[0] = rng.uniform(-3, 3);
    layer.delays[0] = rng.uniform(0, static_cast<double>(t_d - 1));
    const double mass = build_gaussian_kernels(layer).values().sum();
    REQUIRE(std::abs(mass - layer.weights[0]) <= std::abs(layer.weights[0]) * 1e-6 + 1e-9);
  }
  // Integer delays at sigma 0.5: the argmax tap is the discretized tap and holds >= 78% of the mass.
  auto layer = random_layer(rng, 3, 4, 1, 12, 0.5);
  for (Index k = 0; k < layer.delays.size(); ++k) {
    layer.delays[k] = std::round(layer.delays[k]);
    layer.weights[k] = std::abs(layer.weights[k]) + 0.1;
  }
  const auto kernels = build_gaussian_kernels(layer);
  const auto disc = discretize(layer);
  for (const auto& tap : disc.taps) {
    Index arg = 0;
    for (Index n = 1; n < 12; ++n)
      if (kernels(tap.out, tap.in, n) > kernels(tap.out, tap.in, arg)) arg = n;
    CHECK(arg == tap.tap);
    CHECK(kernels(tap.out, tap.in, arg) >= 0.78 * tap.weight);
  }
}

TEST_CASE("gaussian kernel with several taps per synapse sums the components") {
  SeededRng rng(30);
  auto layer = random_layer(rng, 2, 2, 3, 9, 1.3);
  const auto k = build_gaussian_kernels(layer);
  DenseBuffer<double> sum(k.shape());
  for (Index p = 0; p < 3; ++p) {
    DelayedSynapseLayer<double> one(2, 2, 1, 9, 1.3);
    for (Index i = 0; i < 2; ++i)
      for (Index j = 0; j < 2; ++j) {
        one.weights(i, j, 0) = layer.weights(i, j, p);
        one.delays(i, j, 0) = layer.delays(i, j, p);
      }
    sum.values() += build_gaussian_kernels(one).values();
  }
  CHECK((sum.values() - k.values()).cwiseAbs().maxCoeff() <= 1e-14);
}

TEST_CASE("gaussian kernel errors") {
  DelayedSynapseLayer<double> layer(1, 1, 1, 5, 0.0);
  CHECK_THROWS_AS(build_gaussian_kernels(layer), std::invalid_argument);
  layer.sigma = 1.0;
  layer.delays[0] = 4.5;
  CHECK_THROWS_AS(build_gaussian_kernels(layer), std::out_of_range);
  layer.delays[0] = -0.2;
  CHECK_THROWS_AS(build_gaussian_kernels(layer), std::out_of_range);
  CHECK_THROWS_AS(gaussian_kernels_backward(layer, DenseBuffer<double>({1, 1, 4})), ShapeError);
}

TEST_CASE("gaussian kernel backward matches finite differences") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    SeededRng rng(seed, 4);
    const Index m = 1 + static_cast<Index>(seed % 2);
    auto layer = random_layer(rng, 2, 3, m, 7, rng.uniform(0.5, 3.5));
    if (seed % 3 == 0) {
      layer.delays[0] = 0.0;
      layer.delays[1] = 6.0;
      layer.delays[2] = 0.02;
      layer.delays[3] = 5.97;
    }
    if (seed % 4 == 1) layer.mask = DenseBuffer<double>({2, 3}, {1, 0, 1, 1, 1, 0});
    const auto g = random_buffer<double>(rng, {2, 3, 7});
    auto loss = [&](const DelayedSynapseLayer<double>& l) { return build_gaussian_kernels(l).values().dot(g.values()); };
    const auto grads = gaussian_kernels_backward(layer, g);
    double worst = 0.0;
    const double h = 1e-5;
    for (Index k = 0; k < layer.weights.size(); ++k) {
      auto p = layer, q = layer;
      p.weights[k] += h;
      q.weights[k] -= h;
      worst = std::max(worst, testutil::rel_err(grads.weights[k], (loss(p) - loss(q)) / (2 * h), 1e-8));
      p = layer;
      q = layer;
      p.delays[k] += h;
      q.delays[k] -= h;
      worst = std::max(worst, testutil::rel_err(grads.delays[k], (loss(p) - loss(q)) / (2 * h), 1e-8));
    }
    CHECK(worst <= 1e-6);
    if (!layer.mask.empty()) {
      CHECK(grads.weights(0, 1, 0) == 0.0);
      CHECK(grads.delays(1, 2, 0) == 0.0);
    }
  }
}

TEST_CASE("gaussian kernel backward: zero and symmetric cases") {
  SeededRng rng(1);
  auto layer = random_layer(rng, 2, 2, 1, 9, 1.0);
  const auto zero = gaussian_kernels_backward(layer, DenseBuffer<double>({2, 2, 9}));
  CHECK(zero.weights.values().isZero(0.0));
  CHECK(zero.delays.values().isZero(0.0));

  DelayedSynapseLayer<double> sym(1, 1, 1, 9, 1.2);
  sym.weights[0] = 0.7;
  sym.delays[0] = 4.0;  // center tap n = 4
  DenseBuffer<double> g({1, 1, 9}, {0.1, -0.3, 0.5, 0.2, 0.9, 0.2, 0.5, -0.3, 0.1});
  CHECK(std::abs(gaussian_kernels_backward(sym, g).delays[0]) <= 1e-12);
}

TEST_CASE("discretize") {
  DelayedSynapseLayer<double> layer(1, 1, 1, 25, 0.5);
  layer.weights[0] = 0.5;
  layer.delays[0] = 8.0;
  auto d = discretize(layer);
  REQUIRE(d.taps.size() == 1);
  CHECK(d.taps[0].tap == 16);
  CHECK(d.taps[0].weight == 0.5);
  layer.delays[0] = 7.5;
  CHECK(discretize(layer).taps[0].tap == 25 - 9);
  layer.delays[0] = 7.4999;
  CHECK(discretize(layer).taps[0].tap == 25 - 8);
  CHECK(round_delay(2.5) == 3);
  CHECK(round_delay(0.0) == 0);

  DelayedSynapseLayer<double> t1(2, 3, 1, 1, 0.5);
  t1.weights.values().setConstant(0.3);
  for (const auto& tap : discretize(t1).taps) CHECK(tap.tap == 0);

  SeededRng rng(77);
  auto masked = random_layer(rng, 3, 3, 2, 10, 0.5);
  masked.mask = DenseBuffer<double>({3, 3}, {1, 0, 0, 1, 1, 0, 0, 0, 1});
  CHECK(discretize(masked).taps.size() == 2 * 4);
}

TEST_CASE("discretized convolution equals the shift oracle exactly") {
  SeededRng rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    const Index t_d = 1 + rng.uniform_int(20), m = 1 + rng.uniform_int(2);
    auto layer = random_layer(rng, 1 + rng.uniform_int(5), 1 + rng.uniform_int(6), m, t_d, 0.5);
    const auto x = testutil::random_spikes<double>(rng, {2, layer.in_channels(), 5 + static_cast<Index>(rng.uniform_int(30))}, 0.15);
    const auto disc = discretize(layer);
    const auto y = conv1d_sparse_forward<double>(x, disc.taps, disc.out_channels, disc.kernel_size);
    REQUIRE(y == shift_oracle(layer, x));
    const auto dense = conv1d_causal_forward(x, to_dense(disc));
    CHECK((dense.values() - y.values()).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("sigma schedule") {
  auto s = SigmaSchedule::for_kernel_size(26, 150);
  CHECK(sigma_at_epoch(s, 0) == 13.0);
  CHECK(sigma_at_epoch(s, 149) == 0.5);
  CHECK(sigma_at_epoch(s, 75) == doctest::Approx(13.0 * std::pow(0.5 / 13.0, 75.0 / 149.0)).epsilon(1e-14));
  double prev = 1e9;
  for (int e = 0; e < 150; ++e) {
    const double v = sigma_at_epoch(s, e);
    CHECK(v <= prev);
    CHECK(v >= 0.5);
    prev = v;
  }
  s.mode = SigmaMode::constant;
  CHECK(sigma_at_epoch(s, 0) == 0.5);
  CHECK(sigma_at_epoch(s, 100) == 0.5);
  auto bad = SigmaSchedule::for_kernel_size(26, 1);
  CHECK_THROWS(sigma_at_epoch(bad, 0));
  CHECK_THROWS(sigma_at_epoch(SigmaSchedule::for_kernel_size(26, 10), 10));
  CHECK_THROWS(sigma_at_epoch(SigmaSchedule::for_kernel_size(26, 10), -1));
}

TEST_CASE("clamp and init delays") {
  DelayedSynapseLayer<double> layer(1, 3, 1, 26, 0.5);
  layer.delays = DenseBuffer<double>({1, 3, 1}, {-0.3, 25.5, 3.2});
  clamp_delays(layer);
  CHECK(layer.delays[0] == 0.0);
  CHECK(layer.delays[1] == 25.0);
  CHECK(layer.delays[2] == 3.2);

  SeededRng rng(5);
  CHECK(init_delays<double>(rng, {4, 4, 1}, 1).values().isZero(0.0));
  const auto d = init_delays<double>(rng, {100000}, 26);
  CHECK(d.values().mean() == doctest::Approx(12.5).epsilon(0.01));
  CHECK(d.values().minCoeff() >= 0.0);
  CHECK(d.values().maxCoeff() <= 25.0);
  SeededRng a(9), b(9);
  CHECK(init_delays<float>(a, {3, 5, 2}, 10) == init_delays<float>(b, {3, 5, 2}, 10));
}

TEST_CASE("sparse masks") {
  SeededRng rng(3);
  CHECK(make_sparse_mask<float>(rng, 4, 6, 6).values().isOnes(0.0f));
  const auto m = make_sparse_mask<float>(rng, 256, 256, 10);
  for (Index i = 0; i < 256; ++i) CHECK(m.matrix().row(i).sum() == 10.0f);
  const double sparsity = 1.0 - m.values().sum() / static_cast<double>(m.size());
  CHECK(sparsity == doctest::Approx(0.961).epsilon(1e-3));
  CHECK_THROWS_AS(make_sparse_mask<float>(rng, 2, 3, 4), std::invalid_argument);

  // Zero fan-in produces a zero layer; masked W and D values are absorbed.
  auto layer = random_layer(rng, 3, 4, 1, 6, 1.0);
  layer.mask = make_sparse_mask<double>(rng, 3, 4, 0);
  CHECK(build_gaussian_kernels(layer).values().isZero(0.0));

  layer.mask = make_sparse_mask<double>(rng, 3, 4, 2);
  const auto k = build_gaussian_kernels(layer);
  auto other = layer;
  for (Index i = 0; i < 3; ++i)
    for (Index j = 0; j < 4; ++j)
      if (!layer.connected(i, j)) {
        other.weights(i, j, 0) = 42.0;
        other.delays(i, j, 0) = 0.0;
      }
  CHECK(build_gaussian_kernels(other) == k);
  const auto g = random_buffer<double>(rng, k.shape());
  const auto ga = gaussian_kernels_backward(layer, g), gb = gaussian_kernels_backward(other, g);
  CHECK(ga.weights == gb.weights);
  CHECK(ga.delays == gb.delays);
}
