#pragma once

#include "spikedelay/datasets.hpp"
#include "spikedelay/network.hpp"

#include <chrono>
#include <functional>
#include <optional>
#include <string_view>

namespace spikedelay {

/// Bias-corrected Adam over one parameter group.
template <typename Scalar>
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t step = 0;
  std::vector<Vector<Scalar>> first;
  std::vector<Vector<Scalar>> second;
};

/// Updates each params[k] with grads[k]. Moments are allocated on the first
/// call; non-finite gradients throw before anything is modified.
template <typename Scalar>
void adam_step(AdamState<Scalar>& state, std::span<DenseBuffer<Scalar>* const> params,
               std::span<const DenseBuffer<Scalar>* const> grads, double lr) {
  if (params.size() != grads.size()) throw ShapeError("adam: parameter and gradient counts differ");
  for (std::size_t k = 0; k < params.size(); ++k) {
    require_shape(*grads[k], params[k]->shape(), "adam gradient");
    if (!grads[k]->all_finite()) throw NumericError("adam: non-finite gradient in tensor " + std::to_string(k));
  }
  if (state.first.empty()) {
    for (const auto* p : params) {
      state.first.push_back(Vector<Scalar>::Zero(p->size()));
      state.second.push_back(Vector<Scalar>::Zero(p->size()));
    }
  } else if (state.first.size() != params.size()) {
    throw ShapeError("adam: parameter group changed size");
  }
  ++state.step;
  const double correction1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double correction2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  const auto b1 = static_cast<Scalar>(state.beta1), b2 = static_cast<Scalar>(state.beta2);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& m = state.first[k];
    auto& v = state.second[k];
    const auto& g = grads[k]->values();
    m = b1 * m + (Scalar(1) - b1) * g;
    v = b2 * v + (Scalar(1) - b2) * g.cwiseProduct(g);
    auto denom = ((v.array() / static_cast<Scalar>(correction2)).sqrt() + static_cast<Scalar>(state.eps));
    params[k]->values().array() -= static_cast<Scalar>(lr / correction1) * m.array() / denom;
  }
}

struct OneCycleShape {
  double warmup_fraction = 0.3;
  double initial_divisor = 25.0;
  double final_divisor = 1e4;
};

/// Cosine warmup from peak/initial_divisor to peak over the first
/// warmup_fraction of steps, then cosine decay to peak/final_divisor at
/// the last step.
double one_cycle_lr(std::int64_t step, std::int64_t total_steps, double peak_lr, const OneCycleShape& shape = {});

/// lr0 * (1 + cos(pi * epoch / (total_epochs - 1))) / 2.
double cosine_anneal_lr(int epoch, int total_epochs, double lr0);

enum class AblationMode {
  decreasing_sigma,
  constant_sigma,
  fixed_random_delays,
  fixed_weights_decreasing_sigma,
  no_delays_wider,
  no_delays_deeper,
  dense_conv_baseline,
};

std::string_view to_string(AblationMode mode);
AblationMode parse_ablation_mode(std::string_view name);
std::vector<AblationMode> all_ablation_modes();

struct TrainConfig {
  double lr_w = 1e-3;
  double lr_d = 0.1;
  int epochs = 150;
  std::size_t batch_size = 256;
  std::uint64_t seed = 0;
  std::optional<double> sigma0;  // defaults to T_d / 2
  // Epoch at which sigma reaches sigma_min; defaults to the last epoch.
  std::optional<int> sigma_decay_epochs;
  double sigma_min = kSigmaMin;
  AblationMode mode = AblationMode::decreasing_sigma;
  Index sparse_fan_in = 0;
  int eval_every = 1;
  // Use the test split for model selection when no validation split exists.
  bool validate_on_test = false;
  OneCycleShape one_cycle;

  void validate() const;
};

bool trains_weights(AblationMode mode);
bool trains_delays(AblationMode mode);

/// Model configuration the given ablation arm trains. No-delay arms are
/// resized to match the learnable-parameter count of `base` (wider keeps
/// the depth, deeper adds one hidden layer) within about 2%.
ModelConfig ablation_model_config(const ModelConfig& base, AblationMode mode, Index sparse_fan_in);

SigmaSchedule sigma_schedule(const TrainConfig& cfg, Index kernel_size);

struct EvalMetrics {
  double accuracy = 0.0;
  double loss = 0.0;
};

/// Eval-mode pass over the whole dataset.
template <typename Scalar>
EvalMetrics evaluate(const Model<Scalar>& model, const SpikeDataset& data, std::size_t batch_size = 256) {
  EvalMetrics out;
  if (data.size() == 0) return out;
  const DenormalGuard guard;
  double correct = 0.0, loss = 0.0;
  for (const auto& group : batch_indices(data.size(), batch_size, nullptr)) {
    const auto batch = make_batch<Scalar>(data, group);
    const auto fwd = model_forward(batch, model, Mode::eval);
    const auto n = static_cast<double>(group.size());
    correct += accuracy(fwd.y_hat, batch.labels) * n;
    loss += cross_entropy_loss(fwd.y_hat, batch.labels).loss * n;
  }
  out.accuracy = correct / static_cast<double>(data.size());
  out.loss = loss / static_cast<double>(data.size());
  return out;
}

struct EpochMetrics {
  int epoch = 0;
  double sigma = 0.0;
  double lr_w = 0.0;  // at the first step of the epoch
  double lr_d = 0.0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  std::optional<double> val_acc;
  double wall_ms = 0.0;
};

/// Owns a model and the two Adam groups: weights with BN parameters on a
/// one-cycle schedule per step, delays on cosine annealing per epoch.
template <typename Scalar>
class Trainer {
 public:
  Trainer(Model<Scalar> model, TrainConfig cfg, std::size_t train_size)
      : model_(std::move(model)), cfg_(std::move(cfg)) {
    cfg_.validate();
    const auto per_epoch = (train_size + cfg_.batch_size - 1) / cfg_.batch_size;
    total_steps_ = static_cast<std::int64_t>(per_epoch) * cfg_.epochs;
  }

  Model<Scalar>& model() { return model_; }
  const Model<Scalar>& model() const { return model_; }
  const TrainConfig& config() const { return cfg_; }
  std::int64_t global_step() const { return global_step_; }

  /// Sigma for the epoch, shared by every connection.
  double sigma_for_epoch(int epoch) const {
    Index t_d = 1;
    for (const auto& c : model_.connections) t_d = std::max(t_d, c.kernel_size);
    const auto sched = sigma_schedule(cfg_, t_d);
    return sigma_at_epoch(sched, std::min(epoch, std::max(sched.total_epochs - 1, 0)));
  }

  double delay_lr(int epoch) const {
    return cfg_.epochs >= 2 ? cosine_anneal_lr(epoch, cfg_.epochs, cfg_.lr_d) : cfg_.lr_d;
  }

  double weight_lr() const {
    return total_steps_ > 1 ? one_cycle_lr(std::min(global_step_, total_steps_ - 1), total_steps_, cfg_.lr_w, cfg_.one_cycle)
                            : cfg_.lr_w;
  }

  EpochMetrics train_epoch(const SpikeDataset& train, int epoch) {
    const DenormalGuard guard;
    const auto start = std::chrono::steady_clock::now();
    EpochMetrics metrics;
    metrics.epoch = epoch;
    const bool gaussian = model_.config.kind() == ConnectionKind::gaussian;
    metrics.sigma = gaussian ? sigma_for_epoch(epoch) : 0.0;
    if (gaussian) model_.set_sigma(metrics.sigma);
    metrics.lr_d = delay_lr(epoch);
    metrics.lr_w = weight_lr();

    SeededRng shuffle_rng = SeededRng(cfg_.seed, 0x5f00).fork(static_cast<std::uint64_t>(epoch));
    SeededRng dropout_rng = SeededRng(cfg_.seed, 0xd709).fork(static_cast<std::uint64_t>(epoch));
    double loss_sum = 0.0, correct = 0.0;
    const bool step_weights = trains_weights(cfg_.mode);
    const bool step_delays = gaussian && trains_delays(cfg_.mode);
    for (const auto& group : batch_indices(train.size(), cfg_.batch_size, &shuffle_rng)) {
      const auto batch = make_batch<Scalar>(train, group);
      auto fwd = model_forward(batch, model_, Mode::train, &dropout_rng);
      const auto loss = cross_entropy_loss(fwd.y_hat, batch.labels);
      if (!std::isfinite(loss.loss)) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                           std::to_string(global_step_));
      }
      const auto n = static_cast<double>(group.size());
      loss_sum += loss.loss * n;
      correct += accuracy(fwd.y_hat, batch.labels) * n;
      const auto grads = model_backward(model_, fwd.cache, loss.grad_y_hat);

      if (step_weights) {
        std::vector<DenseBuffer<Scalar>*> params;
        std::vector<const DenseBuffer<Scalar>*> g;
        for (std::size_t c = 0; c < model_.connections.size(); ++c) {
          params.push_back(&model_.connections[c].weights);
          g.push_back(&grads.weights[c]);
        }
        for (std::size_t l = 0; l < model_.norms.size(); ++l) {
          params.push_back(&model_.norms[l].gamma);
          g.push_back(&grads.gamma[l]);
          params.push_back(&model_.norms[l].beta);
          g.push_back(&grads.beta[l]);
        }
        adam_step<Scalar>(weight_state_, params, g, weight_lr());
      }
      if (step_delays) {
        std::vector<DenseBuffer<Scalar>*> params;
        std::vector<const DenseBuffer<Scalar>*> g;
        for (std::size_t c = 0; c < model_.connections.size(); ++c) {
          params.push_back(&model_.connections[c].delays);
          g.push_back(&grads.delays[c]);
        }
        adam_step<Scalar>(delay_state_, params, g, metrics.lr_d);
      }
      model_.clamp_delays();
      ++model_.revision;
      ++global_step_;
    }
    metrics.train_loss = loss_sum / static_cast<double>(std::max<std::size_t>(train.size(), 1));
    metrics.train_acc = correct / static_cast<double>(std::max<std::size_t>(train.size(), 1));
    metrics.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    return metrics;
  }

 private:
  Model<Scalar> model_;
  TrainConfig cfg_;
  AdamState<Scalar> weight_state_;
  AdamState<Scalar> delay_state_;
  std::int64_t global_step_ = 0;
  std::int64_t total_steps_ = 0;
};

template <typename Scalar>
struct RunResult {
  std::vector<EpochMetrics> log;
  int best_epoch = -1;  // -1: the initial model was never beaten
  double best_val_acc = 0.0;
  EvalMetrics test;
  Model<Scalar> best_model;
  Model<Scalar> final_model;
};

/// Called after every epoch with its metrics and the model as trained so far.
template <typename Scalar>
using EpochCallback = std::function<void(const EpochMetrics&, const Model<Scalar>&)>;

/// Trains for cfg.epochs, keeps the model with the best validation accuracy
/// and reports its test metrics. The initial model is the first candidate.
template <typename Scalar>
RunResult<Scalar> run_training(const ModelConfig& model_cfg, const TrainConfig& cfg, const DatasetSplit& data,
                               const EpochCallback<Scalar>& on_epoch = {}) {
  cfg.validate();
  Trainer<Scalar> trainer(init_model<Scalar>(model_cfg, cfg.seed), cfg, data.train.size());
  const SpikeDataset& valid = cfg.validate_on_test || data.valid.size() == 0 ? data.test : data.valid;
  RunResult<Scalar> result;
  result.best_model = trainer.model();
  result.best_val_acc = evaluate(trainer.model(), valid, cfg.batch_size).accuracy;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto metrics = trainer.train_epoch(data.train, epoch);
    const bool last = epoch + 1 == cfg.epochs;
    if ((epoch + 1) % cfg.eval_every == 0 || last) {
      const double acc = evaluate(trainer.model(), valid, cfg.batch_size).accuracy;
      metrics.val_acc = acc;
      if (acc > result.best_val_acc) {
        result.best_val_acc = acc;
        result.best_epoch = epoch;
        result.best_model = trainer.model();
      }
    }
    result.log.push_back(metrics);
    if (on_epoch) on_epoch(metrics, trainer.model());
  }
  result.final_model = trainer.model();
  result.test = evaluate(result.best_model, data.test, cfg.batch_size);
  return result;
}

struct MeanInterval {
  double mean = 0.0;
  double half_width = 0.0;  // 95% two-sided, Student t
  double stddev = 0.0;
};

/// Two-sided 97.5% Student t quantile for `dof` degrees of freedom.
double t_quantile_975(int dof);
MeanInterval mean_confidence_95(std::span<const double> values);

struct AblationRow {
  AblationMode mode = AblationMode::decreasing_sigma;
  Index sparse_fan_in = 0;
  std::vector<Index> hidden_sizes;
  Index parameters = 0;
  std::vector<std::uint64_t> seeds;
  std::vector<double> accuracies;
  MeanInterval summary;
};

using RunCallback = std::function<void(AblationMode, std::uint64_t seed, double test_acc)>;

/// Trains every (mode, seed) pair on the same data and summarizes test
/// accuracy per mode. A given seed yields the same weight and delay
/// initialization in every arm whose tensor shapes agree. Runs are
/// independent, so up to `threads` of them proceed at once; results do not
/// depend on the thread count. `on_run` is called under a lock.
AblationRow run_ablation_arm(const ModelConfig& base, const TrainConfig& train, const DatasetSplit& data,
                             AblationMode mode, std::span<const std::uint64_t> seeds, const RunCallback& on_run = {},
                             std::size_t threads = 1);
std::vector<AblationRow> run_ablation_suite(const ModelConfig& base, const TrainConfig& train,
                                            const DatasetSplit& data, std::span<const AblationMode> modes,
                                            std::span<const std::uint64_t> seeds, const RunCallback& on_run = {},
                                            std::size_t threads = 1);

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  // Denominator floor of the relative error, below finite-difference noise.
  double abs_floor = 1e-6;
  Index batch = 3;
  Index duration = 16;
  double sigma = 1.5;
  // Pins alternate delays to 0 and T_d - 1.
  bool boundary_delays = false;
  // Scales the analytic delay gradient; negative control for the harness.
  double corrupt_delay_grad = 1.0;
};

struct GradGroupReport {
  std::string name;
  Index checked = 0;
  double max_rel_err = 0.0;
  std::string worst;  // e.g. "D[1](0,2,0)"
};

struct GradCheckReport {
  std::vector<GradGroupReport> groups;
  double worst_rel_err = 0.0;
  std::string worst;
  bool passed = false;
};

/// Central finite differences against model_backward in 64-bit smooth mode
/// on a random batch, for every W, D, gamma and beta entry.
GradCheckReport grad_check(const ModelConfig& model_cfg, std::uint64_t seed, const GradCheckOptions& opts = {});

/// Tiny default model for grad_check: two hidden layers of 4, T_d = 6.
ModelConfig tiny_grad_check_config();

}  // namespace spikedelay
