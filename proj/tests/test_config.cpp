#include "doctest.h"

#include "spikedelay/config.hpp"

#include <filesystem>
#include <fstream>

using namespace spikedelay;
using nlohmann::json;

namespace {

json synthetic_run() {
  return json::parse(R"({
    "model": {"hidden_sizes": [6, 6], "kernel_sizes": [5], "tau_ms": [20.0]},
    "train": {"epochs": 2, "batch_size": 8, "lr_w": 0.01},
    "data": {"synthetic": {"n_classes": 3, "channels": 6, "duration": 20, "pattern_channels": 2,
                           "max_offset": 4, "samples_per_class": 10, "seed": 7},
             "split": [0.6, 0.2, 0.2], "split_seed": 3}
  })");
}

std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("spikedelay_test_config_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("unknown keys and wrong types are rejected") {
  auto j = synthetic_run();
  j["model"]["hiden_sizes"] = json::array({4});
  CHECK_THROWS_AS(run_config_from_json(j), ConfigError);

  j = synthetic_run();
  j["extra"] = 1;
  CHECK_THROWS_AS(run_config_from_json(j), ConfigError);

  j = synthetic_run();
  j["train"]["epochs"] = "many";
  try {
    run_config_from_json(j);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("train.epochs") != std::string::npos);
  }

  j = synthetic_run();
  j["train"]["one_cycle"] = {{"warmup", 0.3}};
  CHECK_THROWS_AS(run_config_from_json(j), ConfigError);

  j = synthetic_run();
  j["data"]["synthetic"]["rate"] = 0.1;
  CHECK_THROWS_AS(run_config_from_json(j), ConfigError);

  j = synthetic_run();
  j["ablation"] = {{"modes", {"decreasing_sigma", "bogus"}}};
  CHECK_THROWS_AS(run_config_from_json(j), ConfigError);
}

TEST_CASE("data section rules") {
  auto j = synthetic_run();
  j.erase("data");
  CHECK_THROWS_AS(run_config_from_json(j), ConfigError);

  j = synthetic_run();
  j["data"]["train"] = "train.spkds";
  CHECK_THROWS_AS(run_config_from_json(j), ConfigError);

  j = synthetic_run();
  j["data"] = {{"train", "train.spkds"}};
  CHECK_THROWS_AS(run_config_from_json(j), ConfigError);

  j = synthetic_run();
  j["train"]["lr_w"] = -1.0;
  CHECK_THROWS_AS(run_config_from_json(j), ConfigError);

  j = synthetic_run();
  j["train"]["sigma_decay_epochs"] = 2;
  CHECK_THROWS_AS(run_config_from_json(j), ConfigError);
}

TEST_CASE("model, train and planted spec round trip through json") {
  ModelConfig m;
  m.input_channels = 12;
  m.hidden_sizes = {8, 4};
  m.n_classes = 5;
  m.kernel_sizes = {7, 7, 3};
  m.kernel_count = 2;
  m.dropout_rate = 0.25;
  m.tau_ms = {15.0, 20.0, 30.0};
  m.sparse_fan_in = 3;
  const auto m2 = model_config_from_json(to_json(m));
  CHECK(to_json(m2) == to_json(m));
  CHECK(m2.kernel_sizes == m.kernel_sizes);
  CHECK(m2.tau_ms == m.tau_ms);

  TrainConfig t;
  t.lr_w = 0.02;
  t.epochs = 9;
  t.sigma0 = 3.0;
  t.sigma_decay_epochs = 4;
  t.mode = AblationMode::fixed_random_delays;
  t.one_cycle.warmup_fraction = 0.2;
  const auto t2 = train_config_from_json(to_json(t));
  CHECK(to_json(t2) == to_json(t));
  CHECK(t2.mode == AblationMode::fixed_random_delays);
  CHECK(*t2.sigma0 == 3.0);
  CHECK(*t2.sigma_decay_epochs == 4);

  PlantedDelaySpec p;
  p.signatures = {{0, 3}, {2, 0}};
  p.pattern_channel_ids = {1, 4};
  p.n_classes = 2;
  p.pattern_channels = 2;
  std::uint64_t seed = 0;
  auto pj = to_json(p);
  pj["seed"] = 11;
  const auto p2 = planted_spec_from_json(pj, &seed);
  CHECK(seed == 11);
  CHECK(p2.signatures == p.signatures);
  CHECK(to_json(p2) == to_json(p));
}

TEST_CASE("ablation section") {
  auto j = synthetic_run();
  j["ablation"] = {{"mode", "fixed_random_delays"}, {"seeds", {0, 1, 2}}, {"fan_ins", {0, 3}}};
  const auto rc = run_config_from_json(j);
  CHECK(rc.train.mode == AblationMode::fixed_random_delays);
  CHECK(rc.ablation.modes == std::vector<AblationMode>{AblationMode::fixed_random_delays});
  CHECK(rc.ablation.seeds == std::vector<std::uint64_t>{0, 1, 2});
  CHECK(rc.ablation.fan_ins == std::vector<Index>{0, 3});

  j["ablation"] = {{"seeds", json::array()}};
  CHECK_THROWS_AS(run_config_from_json(j), ConfigError);
}

TEST_CASE("load_data infers channels and classes and is deterministic") {
  const auto rc = run_config_from_json(synthetic_run());
  ModelConfig m = rc.model;
  const auto a = load_data(rc.data, m);
  CHECK(m.input_channels == 6);
  CHECK(m.n_classes == 3);
  CHECK(a.train.size() + a.valid.size() + a.test.size() == 30);

  ModelConfig m2 = rc.model;
  const auto b = load_data(rc.data, m2);
  REQUIRE(a.train.size() == b.train.size());
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    CHECK(a.train.samples[i].label == b.train.samples[i].label);
    CHECK(a.train.samples[i].events == b.train.samples[i].events);
  }

  ModelConfig wrong = rc.model;
  wrong.input_channels = 5;
  CHECK_THROWS_AS(load_data(rc.data, wrong), FormatError);
}

TEST_CASE("load_run_config resolves data files next to the config") {
  const auto dir = scratch_dir("files");
  const auto rc = run_config_from_json(synthetic_run());
  ModelConfig m = rc.model;
  const auto split = load_data(rc.data, m);
  save_spkds(split.train, dir / "train.spkds");
  save_spkds(split.test, dir / "test.spkds");
  {
    auto j = synthetic_run();
    j["data"] = {{"train", "train.spkds"}, {"test", "test.spkds"}};
    std::ofstream(dir / "run.json") << j.dump(2);
  }
  const auto loaded = load_run_config(dir / "run.json");
  REQUIRE(loaded.data.train_path);
  CHECK(*loaded.data.train_path == dir / "train.spkds");
  ModelConfig m2 = loaded.model;
  const auto files = load_data(loaded.data, m2);
  CHECK(files.train.size() == split.train.size());
  CHECK(files.valid.size() == 0);
  CHECK(m2.n_classes == 3);

  std::ofstream(dir / "broken.json") << "{ not json";
  CHECK_THROWS_AS(load_run_config(dir / "broken.json"), ConfigError);
  CHECK_THROWS_AS(load_run_config(dir / "missing.json"), ConfigError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("kernel export") {
  ModelConfig m;
  m.input_channels = 3;
  m.hidden_sizes = {4};
  m.n_classes = 2;
  m.kernel_sizes = {1};
  m.tau_ms = {20.0};
  const auto model = init_model<double>(m, 5);
  const auto doc = export_kernels(model);
  CHECK(doc["format"] == "spikedelay-kernels");
  CHECK(doc["version"] == 1);
  REQUIRE(doc["layers"].size() == 2);
  for (const auto& layer : doc["layers"]) {
    CHECK(layer["T_d"] == 1);
    CHECK(layer["taps"].size() == layer["c_out"].get<std::size_t>() * layer["c_in"].get<std::size_t>());
    for (const auto& tap : layer["taps"]) CHECK(tap[2] == 0);
  }

  // Two taps landing on one position merge; output is sorted by (i, j, n).
  ModelConfig two = m;
  two.kernel_sizes = {6};
  two.kernel_count = 2;
  auto model2 = init_model<double>(two, 1);
  auto& conn = model2.connections[0];
  conn.delays(0, 0, 0) = 2.2;
  conn.delays(0, 0, 1) = 1.9;
  conn.weights(0, 0, 0) = 0.25;
  conn.weights(0, 0, 1) = 0.5;
  const auto layer = export_kernels(model2)["layers"][0];
  const auto& taps = layer["taps"];
  CHECK(taps[0] == json::array({0, 0, 3, 0.75}));
  for (std::size_t k = 1; k < taps.size(); ++k) {
    const auto prev = std::tuple(taps[k - 1][0].get<int>(), taps[k - 1][1].get<int>(), taps[k - 1][2].get<int>());
    const auto cur = std::tuple(taps[k][0].get<int>(), taps[k][1].get<int>(), taps[k][2].get<int>());
    CHECK(prev < cur);
  }
}

TEST_CASE("metrics json") {
  EpochMetrics e;
  e.epoch = 3;
  e.sigma = 0.5;
  auto j = to_json(e);
  CHECK(j["val_acc"].is_null());
  CHECK(j.size() == 8);
  e.val_acc = 0.75;
  CHECK(to_json(e)["val_acc"] == 0.75);

  AblationRow row;
  row.seeds = {0, 1};
  row.accuracies = {0.5, 0.7};
  row.summary = mean_confidence_95(row.accuracies);
  const auto r = to_json(row);
  CHECK(r["mode"] == "decreasing_sigma");
  CHECK(r["seeds"] == json::array({0, 1}));
  CHECK(r["mean"].get<double>() == doctest::Approx(0.6));
}
