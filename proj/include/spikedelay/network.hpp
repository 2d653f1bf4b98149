#pragma once

#include "spikedelay/core_math.hpp"
#include "spikedelay/datasets.hpp"
#include "spikedelay/delay_layers.hpp"
#include "spikedelay/neurons.hpp"

#include <filesystem>
#include <utility>

namespace spikedelay {

/// How a connection turns its parameters into convolution kernels.
enum class ConnectionKind {
  gaussian,  // learnable weights and delays through Gaussian interpolation
  dense,     // free [C_out, C_in, T_d] kernels
  plain,     // no delays: a T_d = 1 weight matrix
};

struct ModelConfig {
  Index input_channels = 0;
  std::vector<Index> hidden_sizes;
  Index n_classes = 0;
  // Per connection (hidden layers, then readout); a single entry applies to all.
  std::vector<Index> kernel_sizes{26};
  Index kernel_count = 1;
  double dropout_rate = 0.0;
  // Per hidden layer, then readout; a single entry applies to all.
  std::vector<double> tau_ms{10.05};
  double delta_t_ms = 10.0;
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;
  bool use_delays = true;
  bool dense_conv_baseline = false;
  bool pad_right = false;
  double v_threshold = 1.0;
  double surrogate_alpha = 2.0;
  bool smooth_mode = false;
  Index sparse_fan_in = 0;  // 0 keeps every connection dense

  Index connection_count() const { return static_cast<Index>(hidden_sizes.size()) + 1; }
  Index in_size(Index conn) const { return conn == 0 ? input_channels : hidden_sizes.at(conn - 1); }
  Index out_size(Index conn) const {
    return conn + 1 == connection_count() ? n_classes : hidden_sizes.at(conn);
  }
  ConnectionKind kind() const {
    if (!use_delays) return ConnectionKind::plain;
    return dense_conv_baseline ? ConnectionKind::dense : ConnectionKind::gaussian;
  }
  Index kernel_size(Index conn) const;
  Index taps_per_synapse() const { return kind() == ConnectionKind::gaussian ? kernel_count : 1; }
  double tau_steps(Index layer) const;
  /// LIF settings for hidden layer `layer`, or the readout when layer == hidden count.
  LIFConfig lif(Index layer) const;
  void validate() const;
};

/// Learnable parameters (weights, delays, BN scale and shift), not running statistics.
Index count_parameters(const ModelConfig& config);

template <typename Scalar>
struct BatchNormParams {
  DenseBuffer<Scalar> gamma;
  DenseBuffer<Scalar> beta;
  DenseBuffer<Scalar> running_mean;
  DenseBuffer<Scalar> running_var;

  explicit BatchNormParams(Index channels = 0)
      : gamma(DenseBuffer<Scalar>::constant({channels}, Scalar(1))),
        beta({channels}),
        running_mean({channels}),
        running_var(DenseBuffer<Scalar>::constant({channels}, Scalar(1))) {}
};

template <typename Scalar>
struct Model {
  ModelConfig config;
  // Hidden connections in order, then the readout connection. Dense and
  // plain kinds keep their kernels in `weights` and leave `delays` empty.
  std::vector<DelayedSynapseLayer<Scalar>> connections;
  std::vector<BatchNormParams<Scalar>> norms;
  // Bumped by every parameter update; forward caches record it.
  std::uint64_t revision = 0;

  Index hidden_count() const { return static_cast<Index>(norms.size()); }
  const DelayedSynapseLayer<Scalar>& readout() const { return connections.back(); }
  void set_sigma(double sigma) {
    for (auto& c : connections) c.sigma = sigma;
  }
  void clamp_delays() {
    if (config.kind() != ConnectionKind::gaussian) return;
    for (auto& c : connections) spikedelay::clamp_delays(c);
  }
};

/// Weights uniform in +-1/sqrt(fan_in) (fan_in counts taps per synapse),
/// delays uniform on [0, T_d - 1], fixed sparse masks. Each tensor uses its
/// own rng stream so equal shapes get equal draws across configurations.
template <typename Scalar>
Model<Scalar> init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Model<Scalar> model;
  model.config = config;
  const SeededRng root(seed, 0x5eed);
  for (Index c = 0; c < config.connection_count(); ++c) {
    const Index c_out = config.out_size(c), c_in = config.in_size(c);
    const Index t_d = config.kernel_size(c);
    DelayedSynapseLayer<Scalar> conn;
    conn.kernel_size = t_d;
    conn.sigma = std::max(kSigmaMin, static_cast<double>(t_d) / 2.0);
    double fan_in = static_cast<double>(c_in);
    switch (config.kind()) {
      case ConnectionKind::gaussian: {
        conn.weights = DenseBuffer<Scalar>({c_out, c_in, config.kernel_count});
        auto drng = root.fork(200 + static_cast<std::uint64_t>(c));
        conn.delays = init_delays<Scalar>(drng, conn.weights.shape(), t_d);
        fan_in *= static_cast<double>(config.kernel_count);
        break;
      }
      case ConnectionKind::dense:
        conn.weights = DenseBuffer<Scalar>({c_out, c_in, t_d});
        fan_in *= static_cast<double>(t_d);
        break;
      case ConnectionKind::plain:
        conn.weights = DenseBuffer<Scalar>({c_out, c_in, 1});
        break;
    }
    auto wrng = root.fork(100 + static_cast<std::uint64_t>(c));
    const double bound = 1.0 / std::sqrt(fan_in);
    for (Index k = 0; k < conn.weights.size(); ++k) {
      conn.weights[k] = static_cast<Scalar>(wrng.uniform(-bound, bound));
    }
    if (config.sparse_fan_in > 0) {
      auto mrng = root.fork(300 + static_cast<std::uint64_t>(c));
      conn.mask = make_sparse_mask<Scalar>(mrng, c_out, c_in, std::min(config.sparse_fan_in, c_in));
    }
    model.connections.push_back(std::move(conn));
  }
  for (Index size : config.hidden_sizes) model.norms.emplace_back(size);
  return model;
}

enum class Mode { train, eval };

template <typename Scalar>
struct HiddenLayerCache {
  DenseBuffer<Scalar> input;
  DenseBuffer<Scalar> kernels;
  DenseBuffer<Scalar> normalized;
  std::vector<double> inv_std;
  LIFTrace<Scalar> trace;
  DenseBuffer<Scalar> dropout_scale;  // [B, C]; empty without dropout
  std::vector<Index> valid_lengths;   // of this layer's output
};

template <typename Scalar>
struct ForwardCache {
  Mode mode = Mode::eval;
  std::uint64_t revision = 0;
  std::vector<HiddenLayerCache<Scalar>> hidden;
  DenseBuffer<Scalar> readout_input;
  DenseBuffer<Scalar> readout_kernels;
  LIFTrace<Scalar> readout_trace;
  DenseBuffer<Scalar> step_softmax;  // [B, K, T]
  std::vector<Index> readout_valid;
};

template <typename Scalar>
struct ForwardResult {
  DenseBuffer<Scalar> y_hat;  // [B, n_classes]
  ForwardCache<Scalar> cache;
};

namespace detail {

template <typename Scalar>
void zero_padding(DenseBuffer<Scalar>& x, const std::vector<Index>& valid) {
  const Index steps = x.dim(2);
  for (Index b = 0; b < x.dim(0); ++b) {
    if (valid[b] >= steps) continue;
    x.slice(b).rightCols(steps - valid[b]).setZero();
  }
}

template <typename Scalar>
DenseBuffer<Scalar> masked_weights(const DelayedSynapseLayer<Scalar>& conn) {
  DenseBuffer<Scalar> kernels = conn.weights;
  if (conn.mask.empty()) return kernels;
  const Index taps = kernels.dim(2);
  for (Index i = 0; i < kernels.dim(0); ++i) {
    for (Index j = 0; j < kernels.dim(1); ++j) {
      if (conn.mask(i, j) == Scalar(0)) {
        for (Index n = 0; n < taps; ++n) kernels(i, j, n) = 0;
      }
    }
  }
  return kernels;
}

template <typename Scalar>
DenseBuffer<Scalar> training_kernels(const DelayedSynapseLayer<Scalar>& conn, ConnectionKind kind) {
  return kind == ConnectionKind::gaussian ? build_gaussian_kernels(conn) : masked_weights(conn);
}

// Evaluation kernels: rounded single-tap delays for Gaussian connections.
template <typename Scalar>
DenseBuffer<Scalar> eval_convolve(const DelayedSynapseLayer<Scalar>& conn, ConnectionKind kind,
                                  const DenseBuffer<Scalar>& input, const ConvOptions& opts) {
  if (kind == ConnectionKind::gaussian) {
    const auto discrete = discretize(conn);
    return conv1d_sparse_forward<Scalar>(input, discrete.taps, conn.out_channels(), conn.kernel_size, opts);
  }
  return conv1d_causal_forward(input, masked_weights(conn), opts);
}

inline std::vector<Index> grow_valid(const std::vector<Index>& valid, Index t_d, const ConvOptions& opts) {
  std::vector<Index> out = valid;
  if (opts.pad_right) {
    for (auto& v : out) v += t_d - 1;
  }
  return out;
}

}  // namespace detail

/// Full forward pass. Train mode uses Gaussian kernels, batch statistics
/// and dropout drawn from `dropout_rng`; batch statistics are folded into
/// `running_stats` when given. Eval mode uses rounded delays, running
/// statistics and no dropout.
template <typename Scalar>
ForwardResult<Scalar> model_forward(const SpikeBatch<Scalar>& batch, const Model<Scalar>& model, Mode mode,
                                    SeededRng* dropout_rng = nullptr,
                                    std::vector<BatchNormParams<Scalar>>* running_stats = nullptr) {
  const auto& cfg = model.config;
  require_rank(batch.data, 3, "batch data");
  const Index batch_size = batch.data.dim(0);
  if (batch.data.dim(1) != cfg.input_channels) {
    throw ShapeError("batch has " + std::to_string(batch.data.dim(1)) + " channels, model expects " +
                     std::to_string(cfg.input_channels));
  }
  if (static_cast<Index>(batch.valid_lengths.size()) != batch_size) {
    throw ShapeError("valid_lengths size does not match batch");
  }
  for (Index v : batch.valid_lengths) {
    if (v < 0 || v > batch.data.dim(2)) throw ShapeError("valid length exceeds batch duration");
    if (mode == Mode::train && v == 0) throw std::invalid_argument("zero-length sample in train mode");
  }
  const bool train = mode == Mode::train;
  const bool dropout = train && cfg.dropout_rate > 0.0;
  if (dropout && dropout_rng == nullptr) throw std::invalid_argument("train-mode dropout needs an rng");
  const auto kind = cfg.kind();
  const ConvOptions opts{cfg.pad_right, true};

  ForwardResult<Scalar> result;
  auto& cache = result.cache;
  cache.mode = mode;
  cache.revision = model.revision;

  DenseBuffer<Scalar> x = batch.data;
  std::vector<Index> valid = batch.valid_lengths;
  for (Index l = 0; l < model.hidden_count(); ++l) {
    const auto& conn = model.connections[l];
    const auto& bn = model.norms[l];
    HiddenLayerCache<Scalar> layer;
    DenseBuffer<Scalar> current;
    if (train) {
      layer.kernels = detail::training_kernels(conn, kind);
      current = conv1d_causal_forward(x, layer.kernels, opts);
    } else {
      current = detail::eval_convolve(conn, kind, x, opts);
    }
    valid = detail::grow_valid(valid, conn.kernel_size, opts);
    const Index channels = current.dim(1), steps = current.dim(2);

    // Batch norm per channel over (batch, valid time).
    DenseBuffer<Scalar> normalized(current.shape());
    layer.inv_std.assign(static_cast<std::size_t>(channels), 0.0);
    for (Index c = 0; c < channels; ++c) {
      double mean, var;
      if (train) {
        double sum = 0.0, count = 0.0;
        for (Index b = 0; b < batch_size; ++b) {
          for (Index t = 0; t < valid[b]; ++t) sum += current(b, c, t);
          count += static_cast<double>(valid[b]);
        }
        mean = sum / count;
        double sq = 0.0;
        for (Index b = 0; b < batch_size; ++b) {
          for (Index t = 0; t < valid[b]; ++t) {
            const double dx = current(b, c, t) - mean;
            sq += dx * dx;
          }
        }
        var = sq / count;
        const double unbiased = count > 1.0 ? sq / (count - 1.0) : var;
        if (running_stats) {
          auto& stats = (*running_stats)[l];
          stats.running_mean[c] = static_cast<Scalar>((1.0 - cfg.bn_momentum) * stats.running_mean[c] +
                                                      cfg.bn_momentum * mean);
          stats.running_var[c] = static_cast<Scalar>((1.0 - cfg.bn_momentum) * stats.running_var[c] +
                                                     cfg.bn_momentum * unbiased);
        }
      } else {
        mean = bn.running_mean[c];
        var = bn.running_var[c];
      }
      const double inv_std = 1.0 / std::sqrt(var + cfg.bn_eps);
      layer.inv_std[c] = inv_std;
      const double g = bn.gamma[c], shift = bn.beta[c];
      for (Index b = 0; b < batch_size; ++b) {
        for (Index t = 0; t < valid[b]; ++t) {
          const double xhat = (current(b, c, t) - mean) * inv_std;
          normalized(b, c, t) = static_cast<Scalar>(xhat);
          current(b, c, t) = static_cast<Scalar>(g * xhat + shift);
        }
        for (Index t = valid[b]; t < steps; ++t) current(b, c, t) = 0;
      }
    }

    layer.trace = lif_forward(current, cfg.lif(l));
    DenseBuffer<Scalar> spikes = layer.trace.spikes;
    detail::zero_padding(spikes, valid);
    if (dropout) {
      const double keep = 1.0 - cfg.dropout_rate;
      layer.dropout_scale = DenseBuffer<Scalar>({batch_size, channels});
      for (Index k = 0; k < layer.dropout_scale.size(); ++k) {
        layer.dropout_scale[k] = dropout_rng->bernoulli(keep) ? static_cast<Scalar>(1.0 / keep) : Scalar(0);
      }
      for (Index b = 0; b < batch_size; ++b) {
        for (Index c = 0; c < channels; ++c) spikes.slice(b).row(c) *= layer.dropout_scale(b, c);
      }
    }
    layer.valid_lengths = valid;
    if (train) {
      layer.input = std::move(x);
      layer.normalized = std::move(normalized);
      cache.hidden.push_back(std::move(layer));
    }
    x = std::move(spikes);
  }

  const auto& readout = model.readout();
  DenseBuffer<Scalar> current;
  if (train) {
    cache.readout_kernels = detail::training_kernels(readout, kind);
    current = conv1d_causal_forward(x, cache.readout_kernels, opts);
  } else {
    current = detail::eval_convolve(readout, kind, x, opts);
  }
  valid = detail::grow_valid(valid, readout.kernel_size, opts);
  cache.readout_trace = lif_forward(current, cfg.lif(model.hidden_count()));

  // Softmax over classes at every step, summed over valid steps.
  const Index classes = current.dim(1), steps = current.dim(2);
  const auto& u = cache.readout_trace.potentials;
  cache.step_softmax = DenseBuffer<Scalar>(u.shape());
  result.y_hat = DenseBuffer<Scalar>({batch_size, classes});
  for (Index b = 0; b < batch_size; ++b) {
    const auto ub = u.slice(b);
    auto pb = cache.step_softmax.slice(b);
    for (Index t = 0; t < steps; ++t) {
      const Scalar peak = ub.col(t).maxCoeff();
      pb.col(t) = (ub.col(t).array() - peak).exp();
      pb.col(t) /= pb.col(t).sum();
    }
    for (Index k = 0; k < classes; ++k) {
      double sum = 0.0;
      for (Index t = 0; t < valid[b]; ++t) sum += pb(k, t);
      result.y_hat(b, k) = static_cast<Scalar>(sum);
    }
  }
  cache.readout_valid = valid;
  if (train) cache.readout_input = std::move(x);
  return result;
}

/// Train-mode convenience that updates the model's running statistics.
template <typename Scalar>
ForwardResult<Scalar> model_forward(const SpikeBatch<Scalar>& batch, Model<Scalar>& model, Mode mode,
                                    SeededRng* dropout_rng = nullptr) {
  return model_forward(batch, std::as_const(model), mode, dropout_rng,
                       mode == Mode::train ? &model.norms : nullptr);
}

template <typename Scalar>
struct LossResult {
  double loss = 0.0;
  DenseBuffer<Scalar> grad_y_hat;
};

/// Mean over the batch of -log softmax(y_hat[n])[label[n]].
template <typename Scalar>
LossResult<Scalar> cross_entropy_loss(const DenseBuffer<Scalar>& y_hat, std::span<const int> labels) {
  require_rank(y_hat, 2, "y_hat");
  const Index n = y_hat.dim(0), k = y_hat.dim(1);
  if (static_cast<Index>(labels.size()) != n) throw ShapeError("label count does not match y_hat");
  LossResult<Scalar> out{0.0, DenseBuffer<Scalar>(y_hat.shape())};
  for (Index b = 0; b < n; ++b) {
    const int label = labels[b];
    if (label < 0 || label >= k) throw std::invalid_argument("label " + std::to_string(label) + " out of range");
    double peak = y_hat(b, 0);
    for (Index c = 1; c < k; ++c) peak = std::max<double>(peak, y_hat(b, c));
    double z = 0.0;
    for (Index c = 0; c < k; ++c) z += std::exp(y_hat(b, c) - peak);
    out.loss += -(y_hat(b, label) - peak - std::log(z));
    for (Index c = 0; c < k; ++c) {
      const double p = std::exp(y_hat(b, c) - peak) / z;
      out.grad_y_hat(b, c) = static_cast<Scalar>((p - (c == label ? 1.0 : 0.0)) / static_cast<double>(n));
    }
  }
  out.loss /= static_cast<double>(n);
  return out;
}

/// Top-1 accuracy; ties go to the lowest class index.
template <typename Scalar>
double accuracy(const DenseBuffer<Scalar>& y_hat, std::span<const int> labels) {
  require_rank(y_hat, 2, "y_hat");
  const Index n = y_hat.dim(0);
  if (n == 0) return 0.0;
  Index correct = 0;
  for (Index b = 0; b < n; ++b) {
    Index best = 0;
    for (Index c = 1; c < y_hat.dim(1); ++c) {
      if (y_hat(b, c) > y_hat(b, best)) best = c;
    }
    correct += best == labels[b] ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

/// Per-connection weight/delay gradients and per-hidden-layer BN gradients.
/// Delay gradients are empty for connections without delays.
template <typename Scalar>
struct ModelGradients {
  std::vector<DenseBuffer<Scalar>> weights;
  std::vector<DenseBuffer<Scalar>> delays;
  std::vector<DenseBuffer<Scalar>> gamma;
  std::vector<DenseBuffer<Scalar>> beta;
};

class StaleCacheError : public Error {
 public:
  using Error::Error;
};

namespace detail {

template <typename Scalar>
void connection_gradients(const DelayedSynapseLayer<Scalar>& conn, ConnectionKind kind,
                          const DenseBuffer<Scalar>& grad_kernels, ModelGradients<Scalar>& grads) {
  if (kind == ConnectionKind::gaussian) {
    auto g = gaussian_kernels_backward(conn, grad_kernels);
    grads.weights.push_back(std::move(g.weights));
    grads.delays.push_back(std::move(g.delays));
  } else {
    DelayedSynapseLayer<Scalar> probe;
    probe.weights = grad_kernels;
    probe.mask = conn.mask;
    grads.weights.push_back(masked_weights(probe));
    grads.delays.emplace_back();
  }
}

}  // namespace detail

/// Reverse-mode pass through the cached train-mode forward.
template <typename Scalar>
ModelGradients<Scalar> model_backward(const Model<Scalar>& model, const ForwardCache<Scalar>& cache,
                                      const DenseBuffer<Scalar>& grad_y_hat) {
  if (cache.mode != Mode::train) throw StaleCacheError("backward needs a train-mode forward cache");
  if (cache.revision != model.revision) throw StaleCacheError("forward cache predates a parameter update");
  const auto& cfg = model.config;
  const auto kind = cfg.kind();
  const ConvOptions opts{cfg.pad_right, true};
  const auto& probs = cache.step_softmax;
  const Index batch_size = probs.dim(0), classes = probs.dim(1), steps = probs.dim(2);
  require_shape(grad_y_hat, {batch_size, classes}, "grad_y_hat");

  DenseBuffer<Scalar> grad_u(probs.shape());
  for (Index b = 0; b < batch_size; ++b) {
    const auto pb = probs.slice(b);
    auto gb = grad_u.slice(b);
    for (Index t = 0; t < cache.readout_valid[b]; ++t) {
      double dot = 0.0;
      for (Index k = 0; k < classes; ++k) dot += pb(k, t) * grad_y_hat(b, k);
      for (Index k = 0; k < classes; ++k) gb(k, t) = static_cast<Scalar>(pb(k, t) * (grad_y_hat(b, k) - dot));
    }
  }
  (void)steps;

  const Index hidden = model.hidden_count();
  ModelGradients<Scalar> reversed;
  DenseBuffer<Scalar> grad_current = lif_backward(cache.readout_trace, cfg.lif(hidden), DenseBuffer<Scalar>{}, grad_u);
  ConvOptions ro = opts;
  ro.need_input_grad = hidden > 0;
  auto conv_grads = conv1d_causal_backward(cache.readout_input, cache.readout_kernels, grad_current, ro);
  detail::connection_gradients(model.readout(), kind, conv_grads.kernels, reversed);
  DenseBuffer<Scalar> grad_x = std::move(conv_grads.input);

  for (Index l = hidden - 1; l >= 0; --l) {
    const auto& layer = cache.hidden[l];
    const auto& bn = model.norms[l];
    detail::zero_padding(grad_x, layer.valid_lengths);
    if (!layer.dropout_scale.empty()) {
      for (Index b = 0; b < grad_x.dim(0); ++b) {
        for (Index c = 0; c < grad_x.dim(1); ++c) grad_x.slice(b).row(c) *= layer.dropout_scale(b, c);
      }
    }
    DenseBuffer<Scalar> grad_z = lif_backward(layer.trace, cfg.lif(l), grad_x, DenseBuffer<Scalar>{});

    const Index channels = grad_z.dim(1);
    DenseBuffer<Scalar> grad_gamma({channels}), grad_beta({channels});
    DenseBuffer<Scalar> grad_in(grad_z.shape());
    for (Index c = 0; c < channels; ++c) {
      double sum_g = 0.0, sum_gx = 0.0, count = 0.0;
      for (Index b = 0; b < batch_size; ++b) {
        for (Index t = 0; t < layer.valid_lengths[b]; ++t) {
          sum_g += grad_z(b, c, t);
          sum_gx += grad_z(b, c, t) * layer.normalized(b, c, t);
        }
        count += static_cast<double>(layer.valid_lengths[b]);
      }
      grad_gamma[c] = static_cast<Scalar>(sum_gx);
      grad_beta[c] = static_cast<Scalar>(sum_g);
      const double scale = static_cast<double>(bn.gamma[c]) * layer.inv_std[c] / count;
      for (Index b = 0; b < batch_size; ++b) {
        for (Index t = 0; t < layer.valid_lengths[b]; ++t) {
          grad_in(b, c, t) = static_cast<Scalar>(
              scale * (count * grad_z(b, c, t) - sum_g - layer.normalized(b, c, t) * sum_gx));
        }
      }
    }
    reversed.gamma.push_back(std::move(grad_gamma));
    reversed.beta.push_back(std::move(grad_beta));

    ConvOptions lo = opts;
    lo.need_input_grad = l > 0;
    conv_grads = conv1d_causal_backward(layer.input, layer.kernels, grad_in, lo);
    detail::connection_gradients(model.connections[l], kind, conv_grads.kernels, reversed);
    grad_x = std::move(conv_grads.input);
  }

  ModelGradients<Scalar> grads;
  grads.weights.assign(std::make_move_iterator(reversed.weights.rbegin()), std::make_move_iterator(reversed.weights.rend()));
  grads.delays.assign(std::make_move_iterator(reversed.delays.rbegin()), std::make_move_iterator(reversed.delays.rend()));
  grads.gamma.assign(std::make_move_iterator(reversed.gamma.rbegin()), std::make_move_iterator(reversed.gamma.rend()));
  grads.beta.assign(std::make_move_iterator(reversed.beta.rbegin()), std::make_move_iterator(reversed.beta.rend()));
  return grads;
}

// Checkpoint: "SNNDLY01", u32 entry count, tagged config entries, u32
// connection count, then per connection W, D, mask and per hidden layer
// gamma, beta, running mean, running var. Each tensor is u32 rank, u32
// dims, float32 values, little-endian.
inline constexpr std::array<char, 8> kCheckpointMagic{'S', 'N', 'N', 'D', 'L', 'Y', '0', '1'};

struct CheckpointData {
  ModelConfig config;
  double sigma = kSigmaMin;
  std::vector<DenseBuffer<float>> tensors;
};

std::vector<std::uint8_t> encode_checkpoint(const CheckpointData& data);
CheckpointData decode_checkpoint(std::span<const std::uint8_t> bytes);

template <typename Scalar>
CheckpointData checkpoint_of(const Model<Scalar>& model) {
  CheckpointData data{model.config, model.connections.front().sigma, {}};
  for (const auto& c : model.connections) {
    data.tensors.push_back(c.weights.template cast<float>());
    data.tensors.push_back(c.delays.template cast<float>());
    data.tensors.push_back(c.mask.template cast<float>());
  }
  for (const auto& bn : model.norms) {
    data.tensors.push_back(bn.gamma.template cast<float>());
    data.tensors.push_back(bn.beta.template cast<float>());
    data.tensors.push_back(bn.running_mean.template cast<float>());
    data.tensors.push_back(bn.running_var.template cast<float>());
  }
  return data;
}

template <typename Scalar>
Model<Scalar> model_from_checkpoint(const CheckpointData& data) {
  Model<Scalar> model = init_model<Scalar>(data.config, 0);
  const auto expected = 3 * model.connections.size() + 4 * model.norms.size();
  if (data.tensors.size() != expected) throw FormatError("checkpoint tensor count does not match config");
  std::size_t k = 0;
  auto next = [&](DenseBuffer<Scalar>& dst, bool may_be_empty) {
    const auto& src = data.tensors[k++];
    if (!(may_be_empty && src.empty()) && src.shape() != dst.shape()) {
      throw FormatError("checkpoint tensor " + std::to_string(k - 1) + " has shape " + shape_string(src.shape()) +
                        ", expected " + shape_string(dst.shape()));
    }
    dst = src.template cast<Scalar>();
  };
  for (auto& c : model.connections) {
    next(c.weights, false);
    next(c.delays, false);
    next(c.mask, true);
    c.sigma = data.sigma;
  }
  for (auto& bn : model.norms) {
    next(bn.gamma, false);
    next(bn.beta, false);
    next(bn.running_mean, false);
    next(bn.running_var, false);
  }
  return model;
}

void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path);

template <typename Scalar>
void save_checkpoint(const Model<Scalar>& model, const std::filesystem::path& path) {
  write_bytes(path, encode_checkpoint(checkpoint_of(model)));
}

template <typename Scalar>
Model<Scalar> load_checkpoint(const std::filesystem::path& path) {
  return model_from_checkpoint<Scalar>(decode_checkpoint(read_bytes(path)));
}

}  // namespace spikedelay
