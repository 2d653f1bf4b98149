#pragma once

#include "spikedelay/datasets.hpp"
#include "spikedelay/network.hpp"
#include "spikedelay/training.hpp"

#include "json.hpp"

#include <filesystem>
#include <optional>

namespace spikedelay {

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Where the training data comes from: SPKDS files, or a planted-delay
/// generator followed by a stratified split.
struct DataSource {
  std::optional<std::filesystem::path> train_path;
  std::optional<std::filesystem::path> valid_path;
  std::optional<std::filesystem::path> test_path;
  std::optional<PlantedDelaySpec> synthetic;
  std::uint64_t synthetic_seed = 0;
  std::array<double, 3> split{0.8, 0.1, 0.1};
  std::uint64_t split_seed = 0;
};

struct AblationPlan {
  std::vector<AblationMode> modes;
  std::vector<std::uint64_t> seeds{0};
  std::vector<Index> fan_ins{0};  // one suite per entry; 0 is fully connected
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DataSource data;
  AblationPlan ablation;
};

// Every parser rejects unknown keys and wrong types with a ConfigError
// naming the offending field.
ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ModelConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TrainConfig& cfg);
PlantedDelaySpec planted_spec_from_json(const nlohmann::json& j, std::uint64_t* seed = nullptr);
nlohmann::json to_json(const PlantedDelaySpec& spec);
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

/// Materializes the data source; fills model input_channels / n_classes when unset.
DatasetSplit load_data(const DataSource& source, ModelConfig& model);

nlohmann::json to_json(const EpochMetrics& m);
nlohmann::json to_json(const AblationRow& row);

template <typename Scalar>
nlohmann::json discrete_kernels_to_json(const DiscreteKernels<Scalar>& kernels) {
  std::vector<SparseTap<Scalar>> merged;
  for (const auto& tap : kernels.taps) {
    if (!merged.empty() && merged.back().out == tap.out && merged.back().in == tap.in && merged.back().tap == tap.tap) {
      merged.back().weight += tap.weight;
    } else {
      merged.push_back(tap);
    }
  }
  nlohmann::json taps = nlohmann::json::array();
  for (const auto& t : merged) taps.push_back({t.out, t.in, t.tap, static_cast<double>(t.weight)});
  return {{"c_out", kernels.out_channels}, {"c_in", kernels.in_channels}, {"T_d", kernels.kernel_size}, {"taps", taps}};
}

/// Discretized-kernel export: {"layers": [{c_out, c_in, T_d, taps}]}.
template <typename Scalar>
nlohmann::json export_kernels(const Model<Scalar>& model) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& conn : model.connections) {
    DiscreteKernels<Scalar> discrete;
    if (model.config.kind() == ConnectionKind::gaussian) {
      discrete = discretize(conn);
    } else {
      const auto dense = detail::masked_weights(conn);
      discrete = {dense.dim(0), dense.dim(1), dense.dim(2), {}};
      for (Index i = 0; i < dense.dim(0); ++i) {
        for (Index j = 0; j < dense.dim(1); ++j) {
          for (Index n = 0; n < dense.dim(2); ++n) {
            if (conn.connected(i, j)) discrete.taps.push_back({i, j, n, dense(i, j, n)});
          }
        }
      }
    }
    layers.push_back(discrete_kernels_to_json(discrete));
  }
  return {{"format", "spikedelay-kernels"}, {"version", 1}, {"layers", layers}};
}

}  // namespace spikedelay
