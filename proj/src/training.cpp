#include "spikedelay/training.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <atomic>
#include <exception>
#include <limits>
#include <mutex>
#include <numbers>
#include <sstream>
#include <thread>

namespace spikedelay {

double one_cycle_lr(std::int64_t step, std::int64_t total_steps, double peak_lr, const OneCycleShape& shape) {
  if (total_steps < 1 || step < 0 || step >= total_steps) {
    throw std::out_of_range("one_cycle_lr: step " + std::to_string(step) + " outside [0, " +
                            std::to_string(total_steps) + ")");
  }
  const double initial = peak_lr / shape.initial_divisor;
  const double final_lr = peak_lr / shape.final_divisor;
  const double peak_step = shape.warmup_fraction * static_cast<double>(total_steps);
  const double last = static_cast<double>(total_steps - 1);
  const auto s = static_cast<double>(step);
  if (s <= peak_step) {
    if (peak_step <= 0.0) return peak_lr;
    return initial + (peak_lr - initial) * (1.0 - std::cos(std::numbers::pi * s / peak_step)) / 2.0;
  }
  if (last <= peak_step) return peak_lr;
  const double frac = (s - peak_step) / (last - peak_step);
  return final_lr + (peak_lr - final_lr) * (1.0 + std::cos(std::numbers::pi * frac)) / 2.0;
}

double cosine_anneal_lr(int epoch, int total_epochs, double lr0) {
  if (total_epochs < 2) throw std::invalid_argument("cosine_anneal_lr needs at least 2 epochs");
  if (epoch < 0 || epoch >= total_epochs) throw std::out_of_range("cosine_anneal_lr: epoch outside schedule");
  if (epoch == total_epochs - 1) return 0.0;
  return lr0 * (1.0 + std::cos(std::numbers::pi * epoch / (total_epochs - 1))) / 2.0;
}

namespace {

constexpr std::pair<AblationMode, std::string_view> kModeNames[] = {
    {AblationMode::decreasing_sigma, "decreasing_sigma"},
    {AblationMode::constant_sigma, "constant_sigma"},
    {AblationMode::fixed_random_delays, "fixed_random_delays"},
    {AblationMode::fixed_weights_decreasing_sigma, "fixed_weights_decreasing_sigma"},
    {AblationMode::no_delays_wider, "no_delays_wider"},
    {AblationMode::no_delays_deeper, "no_delays_deeper"},
    {AblationMode::dense_conv_baseline, "dense_conv_baseline"},
};

}  // namespace

std::string_view to_string(AblationMode mode) {
  for (const auto& [m, name] : kModeNames) {
    if (m == mode) return name;
  }
  return "unknown";
}

AblationMode parse_ablation_mode(std::string_view name) {
  for (const auto& [m, n] : kModeNames) {
    if (n == name) return m;
  }
  throw std::invalid_argument("unknown ablation mode '" + std::string(name) + "'");
}

std::vector<AblationMode> all_ablation_modes() {
  std::vector<AblationMode> out;
  for (const auto& entry : kModeNames) out.push_back(entry.first);
  return out;
}

void TrainConfig::validate() const {
  if (!(lr_w >= 0.0) || !(lr_d >= 0.0)) throw std::invalid_argument("learning rates must be >= 0");
  if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
  if (batch_size == 0) throw std::invalid_argument("batch_size must be >= 1");
  if (eval_every < 1) throw std::invalid_argument("eval_every must be >= 1");
  if (!(sigma_min > 0.0)) throw std::invalid_argument("sigma_min must be > 0");
  if (sigma0 && *sigma0 < sigma_min) throw std::invalid_argument("sigma0 must be >= sigma_min");
  if (sparse_fan_in < 0) throw std::invalid_argument("sparse_fan_in must be >= 0");
  if (sigma_decay_epochs && (*sigma_decay_epochs < 1 || *sigma_decay_epochs >= std::max(epochs, 1))) {
    throw std::invalid_argument("sigma_decay_epochs must be in [1, epochs)");
  }
}

bool trains_weights(AblationMode mode) { return mode != AblationMode::fixed_weights_decreasing_sigma; }

bool trains_delays(AblationMode mode) {
  switch (mode) {
    case AblationMode::decreasing_sigma:
    case AblationMode::constant_sigma:
    case AblationMode::fixed_weights_decreasing_sigma:
      return true;
    default:
      return false;
  }
}

ModelConfig ablation_model_config(const ModelConfig& base, AblationMode mode, Index sparse_fan_in) {
  ModelConfig cfg = base;
  cfg.sparse_fan_in = sparse_fan_in;
  cfg.use_delays = true;
  cfg.dense_conv_baseline = false;
  if (mode == AblationMode::dense_conv_baseline) cfg.dense_conv_baseline = true;
  if (mode != AblationMode::no_delays_wider && mode != AblationMode::no_delays_deeper) return cfg;

  const Index target = count_parameters(cfg);
  cfg.use_delays = false;
  const std::size_t layers = base.hidden_sizes.size() + (mode == AblationMode::no_delays_deeper ? 1 : 0);
  // tau entries are per layer; extend with the last hidden value when deepening.
  if (cfg.tau_ms.size() > 1 && mode == AblationMode::no_delays_deeper) {
    const double readout_tau = cfg.tau_ms.back();
    cfg.tau_ms.pop_back();
    cfg.tau_ms.push_back(cfg.tau_ms.back());
    cfg.tau_ms.push_back(readout_tau);
  }
  if (cfg.kernel_sizes.size() > 1) cfg.kernel_sizes = {1};
  Index best_width = 1;
  Index best_gap = std::numeric_limits<Index>::max();
  Index max_width = 1;
  for (Index h : base.hidden_sizes) max_width = std::max(max_width, h);
  for (Index width = 1; width <= 16 * max_width + 64; ++width) {
    cfg.hidden_sizes.assign(layers, width);
    const Index gap = std::abs(count_parameters(cfg) - target);
    if (gap < best_gap) {
      best_gap = gap;
      best_width = width;
    }
  }
  cfg.hidden_sizes.assign(layers, best_width);
  return cfg;
}

SigmaSchedule sigma_schedule(const TrainConfig& cfg, Index kernel_size) {
  SigmaSchedule s;
  s.sigma_min = cfg.sigma_min;
  s.sigma0 = std::max(cfg.sigma_min, cfg.sigma0.value_or(static_cast<double>(kernel_size) / 2.0));
  s.total_epochs = cfg.sigma_decay_epochs ? *cfg.sigma_decay_epochs + 1 : cfg.epochs;
  s.mode = cfg.mode == AblationMode::constant_sigma || s.total_epochs < 2 ? SigmaMode::constant : SigmaMode::exponential;
  return s;
}

double t_quantile_975(int dof) {
  if (dof < 1) throw std::invalid_argument("t quantile needs at least one degree of freedom");
  return boost::math::quantile(boost::math::students_t(static_cast<double>(dof)), 0.975);
}

MeanInterval mean_confidence_95(std::span<const double> values) {
  MeanInterval out;
  if (values.empty()) return out;
  const auto n = static_cast<double>(values.size());
  for (double v : values) out.mean += v;
  out.mean /= n;
  if (values.size() < 2) return out;
  double sq = 0.0;
  for (double v : values) sq += (v - out.mean) * (v - out.mean);
  out.stddev = std::sqrt(sq / (n - 1.0));
  out.half_width = t_quantile_975(static_cast<int>(values.size()) - 1) * out.stddev / std::sqrt(n);
  return out;
}

AblationRow run_ablation_arm(const ModelConfig& base, const TrainConfig& train, const DatasetSplit& data,
                             AblationMode mode, std::span<const std::uint64_t> seeds, const RunCallback& on_run,
                             std::size_t threads) {
  const AblationMode modes[] = {mode};
  return run_ablation_suite(base, train, data, modes, seeds, on_run, threads).front();
}

std::vector<AblationRow> run_ablation_suite(const ModelConfig& base, const TrainConfig& train,
                                            const DatasetSplit& data, std::span<const AblationMode> modes,
                                            std::span<const std::uint64_t> seeds, const RunCallback& on_run,
                                            std::size_t threads) {
  std::vector<AblationRow> rows;
  std::vector<ModelConfig> configs;
  for (auto mode : modes) {
    AblationRow row;
    row.mode = mode;
    row.sparse_fan_in = train.sparse_fan_in;
    configs.push_back(ablation_model_config(base, mode, train.sparse_fan_in));
    row.hidden_sizes = configs.back().hidden_sizes;
    row.parameters = count_parameters(configs.back());
    row.seeds.assign(seeds.begin(), seeds.end());
    row.accuracies.assign(seeds.size(), 0.0);
    rows.push_back(std::move(row));
  }

  const std::size_t jobs = modes.size() * seeds.size();
  std::atomic<std::size_t> next{0};
  std::mutex mutex;
  std::exception_ptr failure;
  auto worker = [&] {
    for (std::size_t job = next++; job < jobs; job = next++) {
      const std::size_t m = job / seeds.size(), s = job % seeds.size();
      try {
        TrainConfig run = train;
        run.mode = modes[m];
        run.seed = seeds[s];
        const double acc = run_training<float>(configs[m], run, data).test.accuracy;
        const std::lock_guard lock(mutex);
        rows[m].accuracies[s] = acc;
        if (on_run) on_run(modes[m], seeds[s], acc);
      } catch (...) {
        const std::lock_guard lock(mutex);
        if (!failure) failure = std::current_exception();
        next = jobs;
      }
    }
  };
  const std::size_t n_threads = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(jobs, 1));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  for (auto& row : rows) row.summary = mean_confidence_95(row.accuracies);
  return rows;
}

ModelConfig tiny_grad_check_config() {
  ModelConfig cfg;
  cfg.input_channels = 3;
  cfg.hidden_sizes = {4, 4};
  cfg.n_classes = 3;
  cfg.kernel_sizes = {6};
  cfg.kernel_count = 1;
  cfg.dropout_rate = 0.25;
  cfg.tau_ms = {2.0};
  cfg.delta_t_ms = 1.0;
  return cfg;
}

namespace {

struct ParamRef {
  std::string group;
  std::string label;
  DenseBuffer<double>* value;
  const DenseBuffer<double>* grad;
};

std::string index_label(const DenseBuffer<double>& t, Index flat) {
  std::ostringstream os;
  os << '(';
  Index rest = flat;
  std::vector<Index> idx(t.shape().size());
  for (std::size_t d = t.shape().size(); d-- > 0;) {
    idx[d] = rest % t.shape()[d];
    rest /= t.shape()[d];
  }
  for (std::size_t d = 0; d < idx.size(); ++d) os << (d ? "," : "") << idx[d];
  os << ')';
  return os.str();
}

}  // namespace

GradCheckReport grad_check(const ModelConfig& model_cfg, std::uint64_t seed, const GradCheckOptions& opts) {
  ModelConfig cfg = model_cfg;
  cfg.smooth_mode = true;
  auto model = init_model<double>(cfg, seed);
  if (cfg.kind() == ConnectionKind::gaussian) {
    model.set_sigma(opts.sigma);
    if (opts.boundary_delays) {
      for (auto& c : model.connections) {
        for (Index k = 0; k < c.delays.size(); ++k) {
          c.delays[k] = k % 2 == 0 ? 0.0 : static_cast<double>(c.kernel_size - 1);
        }
      }
    }
  }
  // Nontrivial BN parameters so their gradients are exercised away from identity.
  SeededRng prng(seed, 0x9a4a);
  for (auto& bn : model.norms) {
    for (Index k = 0; k < bn.gamma.size(); ++k) {
      bn.gamma[k] = prng.uniform(0.5, 1.5);
      bn.beta[k] = prng.uniform(-0.3, 0.3);
    }
  }

  SeededRng drng(seed, 0xba7c);
  SpikeBatch<double> batch{DenseBuffer<double>({opts.batch, cfg.input_channels, opts.duration}), {}, {}};
  for (Index b = 0; b < opts.batch; ++b) {
    const Index valid = std::max<Index>(1, opts.duration - 3 * b);
    batch.valid_lengths.push_back(valid);
    batch.labels.push_back(static_cast<int>(drng.uniform_int(static_cast<std::uint64_t>(cfg.n_classes))));
    for (Index c = 0; c < cfg.input_channels; ++c) {
      for (Index t = 0; t < valid; ++t) batch.data(b, c, t) = drng.bernoulli(0.35) ? 1.0 : 0.0;
    }
  }

  auto loss_of = [&](const Model<double>& m) {
    SeededRng dropout(seed, 0xd0d0);
    const auto fwd = model_forward(batch, m, Mode::train, &dropout);
    return cross_entropy_loss(fwd.y_hat, batch.labels).loss;
  };

  SeededRng dropout(seed, 0xd0d0);
  const auto fwd = model_forward(batch, std::as_const(model), Mode::train, &dropout);
  const auto loss = cross_entropy_loss(fwd.y_hat, batch.labels);
  auto grads = model_backward(model, fwd.cache, loss.grad_y_hat);
  for (auto& g : grads.delays) g.values() *= opts.corrupt_delay_grad;

  std::vector<ParamRef> refs;
  for (std::size_t c = 0; c < model.connections.size(); ++c) {
    refs.push_back({"W", "W[" + std::to_string(c) + "]", &model.connections[c].weights, &grads.weights[c]});
    if (!model.connections[c].delays.empty()) {
      refs.push_back({"D", "D[" + std::to_string(c) + "]", &model.connections[c].delays, &grads.delays[c]});
    }
  }
  for (std::size_t l = 0; l < model.norms.size(); ++l) {
    refs.push_back({"gamma", "gamma[" + std::to_string(l) + "]", &model.norms[l].gamma, &grads.gamma[l]});
    refs.push_back({"beta", "beta[" + std::to_string(l) + "]", &model.norms[l].beta, &grads.beta[l]});
  }

  GradCheckReport report;
  for (const auto& ref : refs) {
    auto it = std::find_if(report.groups.begin(), report.groups.end(), [&](const auto& g) { return g.name == ref.group; });
    if (it == report.groups.end()) {
      report.groups.push_back({ref.group, 0, 0.0, ""});
      it = std::prev(report.groups.end());
    }
    for (Index k = 0; k < ref.value->size(); ++k) {
      const double saved = (*ref.value)[k];
      (*ref.value)[k] = saved + opts.step;
      const double up = loss_of(model);
      (*ref.value)[k] = saved - opts.step;
      const double down = loss_of(model);
      (*ref.value)[k] = saved;
      const double numeric = (up - down) / (2.0 * opts.step);
      const double analytic = (*ref.grad)[k];
      const double rel = std::abs(analytic - numeric) /
                         std::max({std::abs(analytic), std::abs(numeric), opts.abs_floor});
      ++it->checked;
      if (it->worst.empty() || rel > it->max_rel_err) {
        it->max_rel_err = rel;
        it->worst = ref.label + index_label(*ref.value, k);
      }
    }
  }
  report.passed = true;
  for (const auto& g : report.groups) {
    if (g.max_rel_err >= report.worst_rel_err) {
      report.worst_rel_err = g.max_rel_err;
      report.worst = g.worst;
    }
    if (!(g.max_rel_err <= opts.tolerance)) report.passed = false;
  }
  return report;
}

}  // namespace spikedelay
