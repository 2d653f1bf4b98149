#include "spikedelay/config.hpp"
#include "spikedelay/demo.hpp"

#include "CLI11.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>

using namespace spikedelay;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum Exit : int { kOk = 0, kConfig = 1, kData = 2, kNumeric = 3, kGradCheck = 4 };

std::size_t thread_limit() {
  if (const char* env = std::getenv("SPIKEDELAY_THREADS")) {
    try {
      const long n = std::stol(env);
      if (n >= 1) return static_cast<std::size_t>(n);
    } catch (const std::exception&) {
    }
    throw ConfigError(std::string("SPIKEDELAY_THREADS must be a positive integer, got '") + env + "'");
  }
  return 1;
}

void write_json(const fs::path& path, const json& doc) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

struct TrainArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out_dir = "run";
  std::optional<int> epochs;
  std::optional<std::string> mode;
  int precision = 32;
};

RunConfig resolve_run(const std::string& path, const std::optional<std::uint64_t>& seed,
                      const std::optional<int>& epochs, const std::optional<std::string>& mode) {
  auto rc = load_run_config(path);
  if (seed) rc.train.seed = *seed;
  if (epochs) rc.train.epochs = *epochs;
  if (mode) {
    try {
      rc.train.mode = parse_ablation_mode(*mode);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }
  try {
    rc.train.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return rc;
}

template <typename Scalar>
int train_with(const RunConfig& rc, const ModelConfig& model_cfg, const DatasetSplit& data, const fs::path& out) {
  std::ofstream log(out / "train_log.jsonl");
  if (!log) throw FormatError("cannot write " + (out / "train_log.jsonl").string());
  const auto result = run_training<Scalar>(model_cfg, rc.train, data, [&](const EpochMetrics& m, const Model<Scalar>&) {
    log << to_json(m).dump() << '\n';
    log.flush();
    std::cerr << "epoch " << m.epoch << " sigma " << m.sigma << " loss " << m.train_loss << " train_acc "
              << m.train_acc;
    if (m.val_acc) std::cerr << " val_acc " << *m.val_acc;
    std::cerr << '\n';
  });
  save_checkpoint(result.best_model, out / "best.ckpt");
  json metrics = {{"schema", "spikedelay-metrics"},
                  {"version", 1},
                  {"mode", std::string(to_string(rc.train.mode))},
                  {"seed", rc.train.seed},
                  {"epochs", rc.train.epochs},
                  {"parameters", count_parameters(model_cfg)},
                  {"hidden_sizes", model_cfg.hidden_sizes},
                  {"best_epoch", result.best_epoch},
                  {"best_val_acc", result.best_val_acc},
                  {"test_acc", result.test.accuracy},
                  {"test_loss", result.test.loss}};
  write_json(out / "metrics.json", metrics);
  std::cout << "test accuracy " << std::fixed << std::setprecision(4) << result.test.accuracy << '\n';
  return kOk;
}

int cmd_train(const TrainArgs& args) {
  auto rc = resolve_run(args.config, args.seed, args.epochs, args.mode);
  auto model_cfg = rc.model;
  const auto data = load_data(rc.data, model_cfg);
  model_cfg = ablation_model_config(model_cfg, rc.train.mode, rc.train.sparse_fan_in);
  try {
    model_cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  const fs::path out = args.out_dir;
  fs::create_directories(out);
  json resolved = {{"model", to_json(model_cfg)}, {"train", to_json(rc.train)}};
  write_json(out / "config.resolved.json", resolved);
  return args.precision == 64 ? train_with<double>(rc, model_cfg, data, out)
                              : train_with<float>(rc, model_cfg, data, out);
}

struct EvalArgs {
  std::string checkpoint;
  std::string data;
};

int cmd_eval(const EvalArgs& args) {
  const auto model = load_checkpoint<float>(args.checkpoint);
  const auto data = load_spkds(args.data);
  if (static_cast<Index>(data.num_channels) != model.config.input_channels ||
      static_cast<Index>(data.num_classes) != model.config.n_classes) {
    throw FormatError("dataset does not match the checkpoint's channels or classes");
  }
  const auto m = evaluate(model, data);
  std::cout << json{{"accuracy", m.accuracy}, {"loss", m.loss}, {"samples", data.size()}}.dump() << '\n';
  return kOk;
}

struct GradCheckArgs {
  std::uint64_t seed = 0;
  int seeds = 1;
  bool corrupt = false;
  bool boundary = false;
};

int cmd_gradcheck(const GradCheckArgs& args) {
  GradCheckOptions opts;
  opts.boundary_delays = args.boundary;
  if (args.corrupt) opts.corrupt_delay_grad = 1.5;
  bool ok = true;
  for (int k = 0; k < args.seeds; ++k) {
    const auto seed = args.seed + static_cast<std::uint64_t>(k);
    const auto r = grad_check(tiny_grad_check_config(), seed, opts);
    std::cout << "seed " << seed << (r.passed ? " ok" : " FAILED");
    for (const auto& g : r.groups) {
      std::cout << "  " << g.name << " n=" << g.checked << " max_rel=" << std::scientific << std::setprecision(2)
                << g.max_rel_err << std::defaultfloat;
    }
    std::cout << "  worst " << r.worst << '\n';
    ok = ok && r.passed;
  }
  return ok ? kOk : kGradCheck;
}

struct AblateArgs {
  std::string config;
  std::optional<std::string> out;
  std::optional<int> epochs;
};

int cmd_ablate(const AblateArgs& args) {
  auto rc = resolve_run(args.config, std::nullopt, args.epochs, std::nullopt);
  auto base = rc.model;
  const auto data = load_data(rc.data, base);
  auto modes = rc.ablation.modes;
  if (modes.empty()) modes = all_ablation_modes();
  const std::size_t threads = thread_limit();

  json suites = json::array();
  for (const Index fan_in : rc.ablation.fan_ins) {
    auto train = rc.train;
    train.sparse_fan_in = fan_in;
    const auto rows = run_ablation_suite(base, train, data, modes, rc.ablation.seeds,
                                         [&](AblationMode mode, std::uint64_t seed, double acc) {
                                           std::cerr << "fan_in " << fan_in << ' ' << to_string(mode) << " seed "
                                                     << seed << " test_acc " << acc << '\n';
                                         },
                                         threads);
    std::cout << (fan_in == 0 ? "fully connected" : "sparse fan_in " + std::to_string(fan_in)) << '\n';
    std::cout << std::left << std::setw(34) << "mode" << std::setw(12) << "params" << "test accuracy (95% CI)\n";
    json table = json::array();
    for (const auto& row : rows) {
      std::cout << std::left << std::setw(34) << to_string(row.mode) << std::setw(12) << row.parameters << std::fixed
                << std::setprecision(2) << 100.0 * row.summary.mean << " +- " << 100.0 * row.summary.half_width
                << '\n'
                << std::defaultfloat;
      table.push_back(to_json(row));
    }
    suites.push_back({{"sparse_fan_in", fan_in}, {"rows", table}});
  }
  const json doc = {{"schema", "spikedelay-ablation"},
                    {"version", 1},
                    {"seeds", rc.ablation.seeds},
                    {"epochs", rc.train.epochs},
                    {"suites", suites}};
  if (args.out) write_json(*args.out, doc);
  std::cout << doc.dump() << '\n';
  return kOk;
}

struct SynthArgs {
  std::string spec;
  std::string out;
  std::optional<std::uint64_t> seed;
};

int cmd_synth(const SynthArgs& args) {
  std::uint64_t seed = 0;
  const auto spec = planted_spec_from_json(read_json(args.spec), &seed);
  if (args.seed) seed = *args.seed;
  SeededRng rng(seed, 0x5e7);
  PlantedDelayTask task;
  try {
    task = generate_planted_delay(spec, rng);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  save_spkds(task.dataset, args.out);
  json sidecar = {{"schema", "spikedelay-planted"},
                  {"version", 1},
                  {"seed", seed},
                  {"spec", to_json(spec)},
                  {"pattern_channel_ids", task.pattern_channel_ids},
                  {"signatures", task.signatures},
                  {"class_counts", task.dataset.class_counts()}};
  write_json(args.out + ".json", sidecar);
  std::cout << "wrote " << task.dataset.size() << " samples to " << args.out << '\n';
  return kOk;
}

int cmd_verify(const std::string& path) {
  const auto ds = load_spkds(path);
  validate(ds);
  std::cout << json{{"samples", ds.size()},
                    {"channels", ds.num_channels},
                    {"classes", ds.num_classes},
                    {"delta_t_us", ds.delta_t_us},
                    {"encoding", ds.encoding == Encoding::sparse ? "sparse" : "dense"},
                    {"class_counts", ds.class_counts()}}
                   .dump()
            << '\n';
  return kOk;
}

int cmd_export(const std::string& checkpoint, const std::string& out) {
  const auto model = load_checkpoint<float>(checkpoint);
  write_json(out, export_kernels(model));
  std::cout << "wrote " << model.connections.size() << " layers to " << out << '\n';
  return kOk;
}

int cmd_demo() {
  const CoincidenceDemo demo;
  const auto r = run_coincidence(demo);
  std::cout << "t   u_N1    u_N2\n";
  for (Index t = 0; t < demo.duration; ++t) {
    std::cout << std::left << std::setw(4) << t << std::fixed << std::setprecision(4)
              << r.trace.potentials(0, 0, t) << "  " << r.trace.potentials(0, 1, t)
              << (r.trace.spikes(0, 1, t) != 0.0 ? "  N2 spike" : "") << '\n';
  }
  std::cout << std::defaultfloat << describe(demo, r) << '\n';
  return r.n2_first_spike && !r.n1_first_spike ? kOk : kNumeric;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spiking networks with learnable synaptic delays"};
  app.require_subcommand(1);

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "train one model and report test accuracy");
  train_cmd->add_option("--config", train.config, "run config JSON")->required();
  train_cmd->add_option("--seed", train.seed, "override train.seed");
  train_cmd->add_option("--out-dir", train.out_dir, "directory for log, checkpoint and metrics");
  train_cmd->add_option("--epochs", train.epochs, "override train.epochs");
  train_cmd->add_option("--mode", train.mode, "override the ablation mode");
  train_cmd->add_option("--precision", train.precision, "32 or 64")->check(CLI::IsMember({32, 64}));

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on an SPKDS file");
  eval_cmd->add_option("--checkpoint", eval.checkpoint)->required();
  eval_cmd->add_option("--data", eval.data)->required();

  GradCheckArgs gc;
  auto* gc_cmd = app.add_subcommand("gradcheck", "finite-difference check of every gradient group");
  gc_cmd->add_option("--seed", gc.seed, "first seed");
  gc_cmd->add_option("--seeds", gc.seeds, "number of consecutive seeds")->check(CLI::PositiveNumber);
  gc_cmd->add_flag("--boundary", gc.boundary, "pin delays to the clamp boundaries");
  gc_cmd->add_flag("--corrupt-backward", gc.corrupt, "scale the delay gradient (negative control)");

  AblateArgs ablate;
  auto* ablate_cmd = app.add_subcommand("ablate", "run the ablation suite");
  ablate_cmd->add_option("--config", ablate.config)->required();
  ablate_cmd->add_option("--out", ablate.out, "JSON results file");
  ablate_cmd->add_option("--epochs", ablate.epochs, "override train.epochs");

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "generate a planted-delay SPKDS file");
  synth_cmd->add_option("--spec", synth.spec, "planted-delay spec JSON")->required();
  synth_cmd->add_option("--out", synth.out)->required();
  synth_cmd->add_option("--seed", synth.seed, "override the spec seed");

  std::string verify_path;
  auto* verify_cmd = app.add_subcommand("verify", "validate an SPKDS file and print its summary");
  verify_cmd->add_option("--in", verify_path)->required();

  std::string checkpoint, export_out;
  auto* export_cmd = app.add_subcommand("export-kernels", "write discretized kernels as JSON");
  export_cmd->alias("export");
  export_cmd->add_option("--checkpoint", checkpoint)->required();
  export_cmd->add_option("--out", export_out)->required();

  auto* demo_cmd = app.add_subcommand("demo-fig1", "coincidence detection with two LIF neurons");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) return cmd_train(train);
    if (*eval_cmd) return cmd_eval(eval);
    if (*gc_cmd) return cmd_gradcheck(gc);
    if (*ablate_cmd) return cmd_ablate(ablate);
    if (*synth_cmd) return cmd_synth(synth);
    if (*verify_cmd) return cmd_verify(verify_path);
    if (*export_cmd) return cmd_export(checkpoint, export_out);
    if (*demo_cmd) return cmd_demo();
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const FormatError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kNumeric;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  }
  return kOk;
}
