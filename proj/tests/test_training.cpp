#include "doctest.h"
#include "test_util.hpp"

#include "spikedelay/training.hpp"

#include <numeric>

using namespace spikedelay;

namespace {

ModelConfig planted_model(Index hidden = 12, Index t_d = 8) {
  ModelConfig cfg;
  cfg.input_channels = 8;
  cfg.hidden_sizes = {hidden, hidden};
  cfg.n_classes = 4;
  cfg.kernel_sizes = {t_d};
  cfg.tau_ms = {20.0};
  cfg.delta_t_ms = 10.0;
  return cfg;
}

DatasetSplit planted_data(std::uint32_t per_class = 20) {
  PlantedDelaySpec spec;
  spec.n_classes = 4;
  spec.channels = 8;
  spec.duration = 30;
  spec.pattern_channels = 3;
  spec.max_offset = 7;
  spec.samples_per_class = per_class;
  SeededRng g(1);
  const auto task = generate_planted_delay(spec, g);
  SeededRng s(2);
  return split(task.dataset, {0.6, 0.2, 0.2}, s);
}

TrainConfig short_run(int epochs = 3) {
  TrainConfig t;
  t.epochs = epochs;
  t.batch_size = 16;
  t.lr_w = 5e-3;
  return t;
}

}  // namespace

TEST_CASE("adam: zero gradient and unit first step") {
  AdamState<double> st;
  DenseBuffer<double> p({3}, {1.0, -2.0, 0.5});
  const auto before = p;
  DenseBuffer<double> g({3});
  DenseBuffer<double>* params[] = {&p};
  const DenseBuffer<double>* grads[] = {&g};
  adam_step<double>(st, params, grads, 0.1);
  CHECK(p == before);

  AdamState<double> s2;
  DenseBuffer<double> q({1}, {0.0});
  DenseBuffer<double> gq({1}, {0.37});
  DenseBuffer<double>* qp[] = {&q};
  const DenseBuffer<double>* qg[] = {&gq};
  adam_step<double>(s2, qp, qg, 0.01);
  CHECK(q[0] == doctest::Approx(-0.01).epsilon(1e-6));

  DenseBuffer<double> bad({3});
  bad[1] = std::numeric_limits<double>::quiet_NaN();
  const DenseBuffer<double>* badg[] = {&bad};
  CHECK_THROWS_AS(adam_step<double>(st, params, badg, 0.1), NumericError);
  CHECK(p == before);
}

TEST_CASE("adam matches a long-double reference on a quadratic") {
  // f(x) = 0.5 * sum a_i (x_i - c_i)^2, gradients recomputed each step.
  const std::vector<long double> a{1.0L, 3.0L, 0.2L}, c{0.5L, -1.0L, 2.0L};
  std::vector<long double> x{0.0L, 0.0L, 0.0L}, m(3, 0.0L), v(3, 0.0L);
  AdamState<double> st;
  DenseBuffer<double> p({3});
  DenseBuffer<double> g({3});
  DenseBuffer<double>* params[] = {&p};
  const DenseBuffer<double>* grads[] = {&g};
  const long double lr = 0.05L, b1 = 0.9L, b2 = 0.999L, eps = 1e-8L;
  for (int step = 1; step <= 10; ++step) {
    for (int i = 0; i < 3; ++i) {
      const long double gi = a[i] * (x[i] - c[i]);
      m[i] = b1 * m[i] + (1 - b1) * gi;
      v[i] = b2 * v[i] + (1 - b2) * gi * gi;
      const long double mhat = m[i] / (1 - std::pow(b1, static_cast<long double>(step)));
      const long double vhat = v[i] / (1 - std::pow(b2, static_cast<long double>(step)));
      x[i] -= lr * mhat / (std::sqrt(vhat) + eps);
      g[i] = static_cast<double>(a[i]) * (p[i] - static_cast<double>(c[i]));
    }
    adam_step<double>(st, params, grads, static_cast<double>(lr));
    for (int i = 0; i < 3; ++i) CHECK(std::abs(p[i] - static_cast<double>(x[i])) <= 1e-10);
  }
}

TEST_CASE("one-cycle and cosine schedules") {
  const double peak = 1e-3;
  CHECK(one_cycle_lr(0, 1000, peak) == doctest::Approx(peak / 25));
  CHECK(one_cycle_lr(300, 1000, peak) == doctest::Approx(peak));
  CHECK(one_cycle_lr(999, 1000, peak) == doctest::Approx(peak / 1e4));
  // Continuous at the junction and unimodal.
  CHECK(one_cycle_lr(299, 1000, peak) == doctest::Approx(peak).epsilon(1e-3));
  CHECK(one_cycle_lr(301, 1000, peak) == doctest::Approx(peak).epsilon(1e-3));
  for (std::int64_t s = 1; s < 1000; ++s) {
    const double prev = one_cycle_lr(s - 1, 1000, peak), cur = one_cycle_lr(s, 1000, peak);
    if (s <= 300) CHECK(cur >= prev);
    else CHECK(cur <= prev);
  }
  CHECK_THROWS(one_cycle_lr(1000, 1000, peak));

  CHECK(cosine_anneal_lr(0, 11, 0.1) == 0.1);
  CHECK(cosine_anneal_lr(10, 11, 0.1) == 0.0);
  CHECK(cosine_anneal_lr(5, 11, 0.1) == doctest::Approx(0.05));
  CHECK_THROWS(cosine_anneal_lr(0, 1, 0.1));
}

TEST_CASE("t quantile and confidence interval") {
  CHECK(t_quantile_975(9) == doctest::Approx(2.262).epsilon(2e-4));
  CHECK(t_quantile_975(4) == doctest::Approx(2.776).epsilon(2e-4));
  const std::vector<double> v{0.9, 0.92, 0.91, 0.95, 0.89, 0.93, 0.9, 0.94, 0.92, 0.91};
  const auto ci = mean_confidence_95(v);
  double mean = 0, sq = 0;
  for (double x : v) mean += x / 10;
  for (double x : v) sq += (x - mean) * (x - mean);
  const double s = std::sqrt(sq / 9);
  CHECK(ci.mean == doctest::Approx(mean));
  CHECK(ci.stddev == doctest::Approx(s));
  CHECK(ci.half_width == doctest::Approx(t_quantile_975(9) * s / std::sqrt(10.0)));
  CHECK(mean_confidence_95(std::vector<double>{0.5}).half_width == 0.0);
}

TEST_CASE("ablation modes") {
  for (auto mode : all_ablation_modes()) CHECK(parse_ablation_mode(to_string(mode)) == mode);
  CHECK(all_ablation_modes().size() == 7);
  CHECK_THROWS(parse_ablation_mode("bogus"));
  CHECK(trains_delays(AblationMode::decreasing_sigma));
  CHECK(!trains_delays(AblationMode::fixed_random_delays));
  CHECK(!trains_weights(AblationMode::fixed_weights_decreasing_sigma));
  CHECK(trains_weights(AblationMode::no_delays_wider));

  ModelConfig base = planted_model(64, 26);
  base.input_channels = 20;
  base.n_classes = 10;
  const auto target = count_parameters(base);
  for (Index fan_in : {Index{0}, Index{10}}) {
    const auto t = count_parameters(ablation_model_config(base, AblationMode::decreasing_sigma, fan_in));
    for (auto mode : {AblationMode::no_delays_wider, AblationMode::no_delays_deeper}) {
      const auto cfg = ablation_model_config(base, mode, fan_in);
      CHECK(!cfg.use_delays);
      CHECK(std::abs(static_cast<double>(count_parameters(cfg) - t)) <= 0.02 * static_cast<double>(t));
    }
  }
  const auto wider = ablation_model_config(base, AblationMode::no_delays_wider, 0);
  CHECK(wider.hidden_sizes.size() == 2);
  CHECK(wider.hidden_sizes[0] > 64);
  CHECK(ablation_model_config(base, AblationMode::no_delays_deeper, 0).hidden_sizes.size() == 3);
  CHECK(ablation_model_config(base, AblationMode::dense_conv_baseline, 0).dense_conv_baseline);
  CHECK(count_parameters(ablation_model_config(base, AblationMode::constant_sigma, 0)) == target);
}

TEST_CASE("sigma schedule from the train config") {
  TrainConfig t;
  t.epochs = 150;
  auto s = sigma_schedule(t, 26);
  CHECK(sigma_at_epoch(s, 0) == 13.0);
  CHECK(sigma_at_epoch(s, 149) == 0.5);
  t.mode = AblationMode::constant_sigma;
  CHECK(sigma_at_epoch(sigma_schedule(t, 26), 0) == 0.5);
  t.mode = AblationMode::decreasing_sigma;
  t.sigma0 = 4.0;
  CHECK(sigma_at_epoch(sigma_schedule(t, 26), 0) == 4.0);
}

TEST_CASE("trainer: zero learning rates leave parameters unchanged") {
  const auto data = planted_data();
  auto t = short_run(1);
  t.lr_w = 0.0;
  t.lr_d = 0.0;
  const auto model = init_model<float>(planted_model(), 0);
  Trainer<float> trainer(model, t, data.train.size());
  trainer.train_epoch(data.train, 0);
  for (std::size_t c = 0; c < model.connections.size(); ++c) {
    CHECK(trainer.model().connections[c].weights == model.connections[c].weights);
    CHECK(trainer.model().connections[c].delays == model.connections[c].delays);
  }
  for (std::size_t l = 0; l < model.norms.size(); ++l) {
    CHECK(trainer.model().norms[l].gamma == model.norms[l].gamma);
    CHECK(trainer.model().norms[l].beta == model.norms[l].beta);
  }
}

TEST_CASE("trainer: frozen groups stay bit-identical and delays stay clamped") {
  const auto data = planted_data();
  const auto base = init_model<float>(planted_model(), 3);
  {
    auto t = short_run(3);
    t.mode = AblationMode::fixed_random_delays;
    Trainer<float> trainer(base, t, data.train.size());
    for (int e = 0; e < 3; ++e) trainer.train_epoch(data.train, e);
    for (std::size_t c = 0; c < base.connections.size(); ++c) {
      CHECK(trainer.model().connections[c].delays == base.connections[c].delays);
      CHECK(!(trainer.model().connections[c].weights == base.connections[c].weights));
    }
  }
  {
    auto t = short_run(3);
    t.mode = AblationMode::fixed_weights_decreasing_sigma;
    t.lr_d = 5.0;  // large steps push delays against the bounds
    Trainer<float> trainer(base, t, data.train.size());
    for (int e = 0; e < 3; ++e) {
      trainer.train_epoch(data.train, e);
      for (const auto& conn : trainer.model().connections) {
        CHECK(conn.delays.values().minCoeff() >= 0.0f);
        CHECK(conn.delays.values().maxCoeff() <= static_cast<float>(conn.kernel_size - 1));
      }
    }
    for (std::size_t c = 0; c < base.connections.size(); ++c) {
      CHECK(trainer.model().connections[c].weights == base.connections[c].weights);
      CHECK(!(trainer.model().connections[c].delays == base.connections[c].delays));
    }
  }
}

TEST_CASE("training runs are reproducible and log the schedules") {
  const auto data = planted_data();
  auto t = short_run(4);
  const auto a = run_training<float>(planted_model(), t, data);
  const auto b = run_training<float>(planted_model(), t, data);
  REQUIRE(a.log.size() == 4);
  for (std::size_t e = 0; e < 4; ++e) {
    CHECK(a.log[e].train_loss == b.log[e].train_loss);
    CHECK(a.log[e].val_acc == b.log[e].val_acc);
    CHECK(a.log[e].sigma == b.log[e].sigma);
  }
  CHECK(a.test.accuracy == b.test.accuracy);
  CHECK(a.log.front().sigma == 4.0);
  CHECK(a.log.back().sigma == 0.5);
  CHECK(a.log.front().lr_d == 0.1);
  CHECK(a.log.back().lr_d == 0.0);
  for (std::size_t e = 1; e < 4; ++e) CHECK(a.log[e].sigma <= a.log[e - 1].sigma);

  t.epochs = 0;
  const auto untrained = run_training<float>(planted_model(), t, data);
  CHECK(untrained.log.empty());
  CHECK(untrained.best_epoch == -1);
}

TEST_CASE("evaluation is deterministic and an untrained model is near chance") {
  const auto data = planted_data(60);
  double mean = 0.0;
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    const auto model = init_model<float>(planted_model(), seed);
    const auto e1 = evaluate(model, data.test);
    const auto e2 = evaluate(model, data.test);
    CHECK(e1.accuracy == e2.accuracy);
    CHECK(e1.loss == e2.loss);
    mean += e1.accuracy / 8.0;
  }
  CHECK(std::abs(mean - 0.25) <= 0.1);
}

TEST_CASE("one epoch lowers the training loss for most seeds") {
  const auto data = planted_data(40);
  std::vector<std::size_t> all(data.train.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  const auto batch = make_batch<float>(data.train, all);
  // Train-mode loss on the whole training set, without touching running statistics.
  auto loss_of = [&](const Model<float>& m) {
    return cross_entropy_loss(model_forward(batch, m, Mode::train).y_hat, batch.labels).loss;
  };
  int improved = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto t = short_run(2);
    t.seed = seed;
    Trainer<float> trainer(init_model<float>(planted_model(), seed), t, data.train.size());
    trainer.model().set_sigma(trainer.sigma_for_epoch(0));
    const double before = loss_of(trainer.model());
    trainer.train_epoch(data.train, 0);
    improved += loss_of(trainer.model()) < before ? 1 : 0;
  }
  CHECK(improved >= 6);
}

TEST_CASE("ablation suite shares seeds across modes") {
  const auto data = planted_data();
  auto t = short_run(2);
  const std::vector<std::uint64_t> seeds{0, 1};
  const std::vector<AblationMode> modes{AblationMode::decreasing_sigma, AblationMode::decreasing_sigma,
                                        AblationMode::no_delays_wider};
  const auto rows = run_ablation_suite(planted_model(), t, data, modes, seeds);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].accuracies == rows[1].accuracies);
  CHECK(rows[0].seeds == seeds);
  CHECK(rows[2].seeds == seeds);
  CHECK(rows[2].accuracies.size() == 2);

  int calls = 0;
  const auto threaded = run_ablation_suite(planted_model(), t, data, modes, seeds,
                                           [&](AblationMode, std::uint64_t, double) { ++calls; }, 3);
  CHECK(calls == 6);
  for (std::size_t r = 0; r < rows.size(); ++r) CHECK(threaded[r].accuracies == rows[r].accuracies);
}

TEST_CASE("grad check") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto r = grad_check(tiny_grad_check_config(), seed);
    CHECK_MESSAGE(r.passed, "seed " << seed << " worst " << r.worst << " = " << r.worst_rel_err);
    REQUIRE(r.groups.size() == 4);
  }
  auto cfg = tiny_grad_check_config();
  cfg.kernel_count = 2;
  cfg.kernel_sizes = {7};
  CHECK(grad_check(cfg, 3).passed);

  GradCheckOptions boundary;
  boundary.boundary_delays = true;
  CHECK(grad_check(tiny_grad_check_config(), 4, boundary).passed);

  cfg = tiny_grad_check_config();
  cfg.kernel_sizes = {1};
  CHECK(grad_check(cfg, 5).passed);
  cfg.use_delays = false;
  CHECK(grad_check(cfg, 5).passed);
  cfg.use_delays = true;
  cfg.dense_conv_baseline = true;
  cfg.kernel_sizes = {5};
  CHECK(grad_check(cfg, 6).passed);

  GradCheckOptions corrupt;
  corrupt.corrupt_delay_grad = 1.5;
  const auto bad = grad_check(tiny_grad_check_config(), 0, corrupt);
  CHECK(!bad.passed);
  CHECK(bad.worst.rfind("D[", 0) == 0);
}
