#include "spikedelay/config.hpp"

#include <fstream>
#include <set>

namespace spikedelay {

using nlohmann::json;

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& section) {
  if (!j.is_object()) throw ConfigError(section + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!allowed.contains(key)) throw ConfigError("unknown key '" + key + "' in " + section);
  }
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& section) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(section + "." + key + ": " + e.what());
  }
}

}  // namespace

ModelConfig model_config_from_json(const json& j) {
  const std::string s = "model";
  check_keys(j, {"input_channels", "hidden_sizes", "n_classes", "kernel_sizes", "kernel_count", "dropout_rate",
                 "tau_ms", "delta_t_ms", "bn_momentum", "bn_eps", "use_delays", "dense_conv_baseline", "pad_right",
                 "v_threshold", "surrogate_alpha", "smooth_mode", "sparse_fan_in"},
             s);
  ModelConfig c;
  read(j, "input_channels", c.input_channels, s);
  read(j, "hidden_sizes", c.hidden_sizes, s);
  read(j, "n_classes", c.n_classes, s);
  read(j, "kernel_sizes", c.kernel_sizes, s);
  read(j, "kernel_count", c.kernel_count, s);
  read(j, "dropout_rate", c.dropout_rate, s);
  read(j, "tau_ms", c.tau_ms, s);
  read(j, "delta_t_ms", c.delta_t_ms, s);
  read(j, "bn_momentum", c.bn_momentum, s);
  read(j, "bn_eps", c.bn_eps, s);
  read(j, "use_delays", c.use_delays, s);
  read(j, "dense_conv_baseline", c.dense_conv_baseline, s);
  read(j, "pad_right", c.pad_right, s);
  read(j, "v_threshold", c.v_threshold, s);
  read(j, "surrogate_alpha", c.surrogate_alpha, s);
  read(j, "smooth_mode", c.smooth_mode, s);
  read(j, "sparse_fan_in", c.sparse_fan_in, s);
  return c;
}

json to_json(const ModelConfig& c) {
  return {{"input_channels", c.input_channels}, {"hidden_sizes", c.hidden_sizes},
          {"n_classes", c.n_classes},           {"kernel_sizes", c.kernel_sizes},
          {"kernel_count", c.kernel_count},     {"dropout_rate", c.dropout_rate},
          {"tau_ms", c.tau_ms},                 {"delta_t_ms", c.delta_t_ms},
          {"bn_momentum", c.bn_momentum},       {"bn_eps", c.bn_eps},
          {"use_delays", c.use_delays},         {"dense_conv_baseline", c.dense_conv_baseline},
          {"pad_right", c.pad_right},           {"v_threshold", c.v_threshold},
          {"surrogate_alpha", c.surrogate_alpha}, {"smooth_mode", c.smooth_mode},
          {"sparse_fan_in", c.sparse_fan_in}};
}

TrainConfig train_config_from_json(const json& j) {
  const std::string s = "train";
  check_keys(j, {"lr_w", "lr_d", "epochs", "batch_size", "seed", "sigma0", "sigma_min", "sigma_decay_epochs", "mode", "sparse_fan_in",
                 "eval_every", "validate_on_test", "one_cycle"},
             s);
  TrainConfig c;
  read(j, "lr_w", c.lr_w, s);
  read(j, "lr_d", c.lr_d, s);
  read(j, "epochs", c.epochs, s);
  read(j, "batch_size", c.batch_size, s);
  read(j, "seed", c.seed, s);
  if (j.contains("sigma0")) {
    double v = 0.0;
    read(j, "sigma0", v, s);
    c.sigma0 = v;
  }
  read(j, "sigma_min", c.sigma_min, s);
  if (j.contains("sigma_decay_epochs")) {
    int v = 0;
    read(j, "sigma_decay_epochs", v, s);
    c.sigma_decay_epochs = v;
  }
  if (j.contains("mode")) {
    std::string name;
    read(j, "mode", name, s);
    try {
      c.mode = parse_ablation_mode(name);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("train.mode: ") + e.what());
    }
  }
  read(j, "sparse_fan_in", c.sparse_fan_in, s);
  read(j, "eval_every", c.eval_every, s);
  read(j, "validate_on_test", c.validate_on_test, s);
  if (j.contains("one_cycle")) {
    const auto& oc = j.at("one_cycle");
    check_keys(oc, {"warmup_fraction", "initial_divisor", "final_divisor"}, "train.one_cycle");
    read(oc, "warmup_fraction", c.one_cycle.warmup_fraction, "train.one_cycle");
    read(oc, "initial_divisor", c.one_cycle.initial_divisor, "train.one_cycle");
    read(oc, "final_divisor", c.one_cycle.final_divisor, "train.one_cycle");
  }
  return c;
}

json to_json(const TrainConfig& c) {
  json j = {{"lr_w", c.lr_w},
            {"lr_d", c.lr_d},
            {"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"seed", c.seed},
            {"sigma_min", c.sigma_min},
            {"mode", std::string(to_string(c.mode))},
            {"sparse_fan_in", c.sparse_fan_in},
            {"eval_every", c.eval_every},
            {"validate_on_test", c.validate_on_test},
            {"one_cycle",
             {{"warmup_fraction", c.one_cycle.warmup_fraction},
              {"initial_divisor", c.one_cycle.initial_divisor},
              {"final_divisor", c.one_cycle.final_divisor}}}};
  if (c.sigma0) j["sigma0"] = *c.sigma0;
  if (c.sigma_decay_epochs) j["sigma_decay_epochs"] = *c.sigma_decay_epochs;
  return j;
}

PlantedDelaySpec planted_spec_from_json(const json& j, std::uint64_t* seed) {
  const std::string s = "planted-delay spec";
  check_keys(j, {"n_classes", "channels", "duration", "pattern_channels", "max_offset", "background_rate", "jitter",
                 "samples_per_class", "delta_t_us", "pattern_channel_ids", "signatures", "seed"},
             s);
  PlantedDelaySpec p;
  read(j, "n_classes", p.n_classes, s);
  read(j, "channels", p.channels, s);
  read(j, "duration", p.duration, s);
  read(j, "pattern_channels", p.pattern_channels, s);
  read(j, "max_offset", p.max_offset, s);
  read(j, "background_rate", p.background_rate, s);
  read(j, "jitter", p.jitter, s);
  read(j, "samples_per_class", p.samples_per_class, s);
  read(j, "delta_t_us", p.delta_t_us, s);
  read(j, "pattern_channel_ids", p.pattern_channel_ids, s);
  read(j, "signatures", p.signatures, s);
  if (seed) read(j, "seed", *seed, s);
  return p;
}

json to_json(const PlantedDelaySpec& p) {
  json j = {{"n_classes", p.n_classes},
            {"channels", p.channels},
            {"duration", p.duration},
            {"pattern_channels", p.pattern_channels},
            {"max_offset", p.max_offset},
            {"background_rate", p.background_rate},
            {"jitter", p.jitter},
            {"samples_per_class", p.samples_per_class},
            {"delta_t_us", p.delta_t_us}};
  if (!p.pattern_channel_ids.empty()) j["pattern_channel_ids"] = p.pattern_channel_ids;
  if (!p.signatures.empty()) j["signatures"] = p.signatures;
  return j;
}

RunConfig run_config_from_json(const json& j) {
  check_keys(j, {"model", "train", "data", "ablation"}, "run config");
  RunConfig rc;
  if (j.contains("model")) rc.model = model_config_from_json(j.at("model"));
  if (j.contains("train")) rc.train = train_config_from_json(j.at("train"));
  if (j.contains("data")) {
    const auto& d = j.at("data");
    const std::string s = "data";
    check_keys(d, {"train", "valid", "test", "synthetic", "split", "split_seed"}, s);
    std::string path;
    if (d.contains("train")) { read(d, "train", path, s); rc.data.train_path = path; }
    if (d.contains("valid")) { read(d, "valid", path, s); rc.data.valid_path = path; }
    if (d.contains("test")) { read(d, "test", path, s); rc.data.test_path = path; }
    if (d.contains("synthetic")) rc.data.synthetic = planted_spec_from_json(d.at("synthetic"), &rc.data.synthetic_seed);
    read(d, "split", rc.data.split, s);
    read(d, "split_seed", rc.data.split_seed, s);
    if (rc.data.synthetic && rc.data.train_path) throw ConfigError("data: give either files or a synthetic spec");
    if (!rc.data.synthetic && !rc.data.train_path) throw ConfigError("data: a train file or synthetic spec is required");
    if (rc.data.train_path && !rc.data.test_path) throw ConfigError("data: test file is required with a train file");
  } else {
    throw ConfigError("run config: data section is required");
  }
  if (j.contains("ablation")) {
    const auto& a = j.at("ablation");
    const std::string s = "ablation";
    check_keys(a, {"mode", "modes", "seeds", "fan_ins"}, s);
    std::vector<std::string> names;
    if (a.contains("mode")) {
      std::string name;
      read(a, "mode", name, s);
      names.push_back(name);
    }
    if (a.contains("modes")) {
      std::vector<std::string> more;
      read(a, "modes", more, s);
      names.insert(names.end(), more.begin(), more.end());
    }
    try {
      for (const auto& n : names) rc.ablation.modes.push_back(parse_ablation_mode(n));
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("ablation: ") + e.what());
    }
    if (a.contains("mode")) rc.train.mode = rc.ablation.modes.front();
    read(a, "seeds", rc.ablation.seeds, s);
    read(a, "fan_ins", rc.ablation.fan_ins, s);
    if (rc.ablation.seeds.empty()) throw ConfigError("ablation.seeds must not be empty");
  }
  try {
    rc.train.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return rc;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  auto rc = run_config_from_json(j);
  // Relative data paths resolve against the config file's directory.
  const auto base = path.parent_path();
  for (auto* p : {&rc.data.train_path, &rc.data.valid_path, &rc.data.test_path}) {
    if (*p && p->value().is_relative()) *p = base / p->value();
  }
  return rc;
}

DatasetSplit load_data(const DataSource& source, ModelConfig& model) {
  DatasetSplit out;
  if (source.synthetic) {
    SeededRng gen(source.synthetic_seed, 0x5e7);
    const auto task = generate_planted_delay(*source.synthetic, gen);
    SeededRng split_rng(source.split_seed, 0x5b1);
    out = split(task.dataset, source.split, split_rng);
  } else {
    out.train = load_spkds(*source.train_path);
    out.test = load_spkds(*source.test_path);
    out.valid = source.valid_path ? load_spkds(*source.valid_path)
                                  : SpikeDataset{out.train.encoding, out.train.num_channels, out.train.num_classes,
                                                 out.train.delta_t_us, {}};
    for (const auto* ds : {&out.valid, &out.test}) {
      if (ds->num_channels != out.train.num_channels || ds->num_classes != out.train.num_classes) {
        throw FormatError("train/valid/test files disagree on channels or classes");
      }
    }
  }
  if (model.input_channels == 0) model.input_channels = out.train.num_channels;
  if (model.n_classes == 0) model.n_classes = out.train.num_classes;
  if (model.input_channels != static_cast<Index>(out.train.num_channels)) {
    throw FormatError("model expects " + std::to_string(model.input_channels) + " channels, data has " +
                      std::to_string(out.train.num_channels));
  }
  if (model.n_classes != static_cast<Index>(out.train.num_classes)) {
    throw FormatError("model expects " + std::to_string(model.n_classes) + " classes, data has " +
                      std::to_string(out.train.num_classes));
  }
  return out;
}

json to_json(const EpochMetrics& m) {
  json j = {{"epoch", m.epoch},          {"sigma", m.sigma},         {"lr_w", m.lr_w},
            {"lr_d", m.lr_d},            {"train_loss", m.train_loss}, {"train_acc", m.train_acc},
            {"val_acc", nullptr},        {"wall_ms", m.wall_ms}};
  if (m.val_acc) j["val_acc"] = *m.val_acc;
  return j;
}

json to_json(const AblationRow& row) {
  return {{"mode", std::string(to_string(row.mode))},
          {"sparse_fan_in", row.sparse_fan_in},
          {"hidden_sizes", row.hidden_sizes},
          {"parameters", row.parameters},
          {"seeds", row.seeds},
          {"accuracies", row.accuracies},
          {"mean", row.summary.mean},
          {"ci95_half_width", row.summary.half_width},
          {"stddev", row.summary.stddev}};
}

}  // namespace spikedelay
