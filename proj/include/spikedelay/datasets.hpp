#pragma once

#include "spikedelay/core_math.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace spikedelay {

class FormatError : public Error {
 public:
  using Error::Error;
};

enum class Encoding : std::uint8_t { sparse = 0, dense = 1 };

struct SpikeEvent {
  std::uint16_t t = 0;
  std::uint16_t channel = 0;
  std::uint8_t count = 1;

  bool operator==(const SpikeEvent&) const = default;
};

/// One recording. Sparse datasets fill `events`; dense datasets fill
/// `dense` with length * channels values in time-major order.
struct SpikeSample {
  std::uint32_t length = 0;
  std::uint16_t label = 0;
  std::vector<SpikeEvent> events;
  std::vector<float> dense;

  bool operator==(const SpikeSample&) const = default;
};

struct SpikeDataset {
  Encoding encoding = Encoding::sparse;
  std::uint32_t num_channels = 0;
  std::uint32_t num_classes = 0;
  std::uint32_t delta_t_us = 10000;
  std::vector<SpikeSample> samples;

  std::size_t size() const { return samples.size(); }
  /// Sample `index` as a [channels, length] array; duplicate events add up.
  RowMatrix<float> densify(std::size_t index) const;
  double total_count(std::size_t index) const;
  std::vector<std::size_t> class_counts() const;

  bool operator==(const SpikeDataset&) const = default;
};

// SPKDS container: "SPKDS1", encoding u8, reserved u8, then u32 num_samples,
// num_channels, num_classes, delta_t_us; per sample u32 T, u16 label and
// either u32 num_events + (u16 t, u16 channel, u8 count) records or T * C
// float32 values. Little-endian throughout.
inline constexpr std::array<char, 6> kSpkdsMagic{'S', 'P', 'K', 'D', 'S', '1'};
inline constexpr std::size_t kSpkdsHeaderSize = 24;

/// Throws FormatError naming the offending sample.
void validate(const SpikeDataset& dataset);

std::vector<std::uint8_t> encode_spkds(const SpikeDataset& dataset);
SpikeDataset decode_spkds(std::span<const std::uint8_t> bytes);
void save_spkds(const SpikeDataset& dataset, const std::filesystem::path& path);
SpikeDataset load_spkds(const std::filesystem::path& path);

/// Sums each run of `factor` adjacent channels.
SpikeSample bin_spatial(const SpikeSample& sample, Encoding encoding, std::uint32_t channels,
                        std::uint32_t factor);
SpikeDataset bin_spatial(const SpikeDataset& dataset, std::uint32_t factor);

/// Sums each run of `ratio` timesteps; a trailing partial bin is kept.
SpikeSample bin_temporal(const SpikeSample& sample, Encoding encoding, std::uint32_t channels,
                         std::uint32_t ratio);
SpikeDataset bin_temporal(const SpikeDataset& dataset, std::uint32_t delta_t_target_us);

/// Dense [B, C, T_max] batch, zero past each sample's valid length.
template <typename Scalar>
struct SpikeBatch {
  DenseBuffer<Scalar> data;
  std::vector<Index> valid_lengths;
  std::vector<int> labels;

  Index size() const { return data.dim(0); }
};

/// Index groups of at most `batch_size`; shuffled by `rng` when given.
std::vector<std::vector<std::size_t>> batch_indices(std::size_t count, std::size_t batch_size,
                                                    SeededRng* rng);

template <typename Scalar>
SpikeBatch<Scalar> make_batch(const SpikeDataset& dataset, std::span<const std::size_t> indices) {
  Index t_max = 0;
  for (auto k : indices) t_max = std::max<Index>(t_max, dataset.samples.at(k).length);
  const auto b = static_cast<Index>(indices.size());
  const auto c = static_cast<Index>(dataset.num_channels);
  SpikeBatch<Scalar> batch{DenseBuffer<Scalar>({b, c, t_max}), {}, {}};
  for (Index i = 0; i < b; ++i) {
    const auto& sample = dataset.samples[indices[i]];
    batch.valid_lengths.push_back(sample.length);
    batch.labels.push_back(sample.label);
    auto slice = batch.data.slice(i);
    if (dataset.encoding == Encoding::sparse) {
      for (const auto& e : sample.events) slice(e.channel, e.t) += static_cast<Scalar>(e.count);
    } else {
      for (Index t = 0; t < static_cast<Index>(sample.length); ++t) {
        for (Index ch = 0; ch < c; ++ch) slice(ch, t) = static_cast<Scalar>(sample.dense[t * c + ch]);
      }
    }
  }
  return batch;
}

template <typename Scalar>
std::vector<SpikeBatch<Scalar>> make_batches(const SpikeDataset& dataset, std::size_t batch_size,
                                             SeededRng* rng) {
  std::vector<SpikeBatch<Scalar>> out;
  for (const auto& group : batch_indices(dataset.size(), batch_size, rng)) {
    out.push_back(make_batch<Scalar>(dataset, group));
  }
  return out;
}

/// Synthetic task whose classes differ only in the relative spike timing of a
/// shared set of pattern channels.
struct PlantedDelaySpec {
  std::uint32_t n_classes = 10;
  std::uint32_t channels = 20;
  std::uint32_t duration = 100;
  std::uint32_t pattern_channels = 5;
  std::uint32_t max_offset = 25;
  double background_rate = 0.02;
  std::uint32_t jitter = 1;
  std::uint32_t samples_per_class = 500;
  std::uint32_t delta_t_us = 10000;
  // Optional explicit layout; drawn from the generator's rng when empty.
  std::vector<std::uint32_t> pattern_channel_ids;
  std::vector<std::vector<std::uint32_t>> signatures;  // [class][pattern channel] offsets
};

struct PlantedDelayTask {
  SpikeDataset dataset;
  std::vector<std::uint32_t> pattern_channel_ids;
  std::vector<std::vector<std::uint32_t>> signatures;
};

PlantedDelayTask generate_planted_delay(const PlantedDelaySpec& spec, SeededRng& rng);

struct DatasetSplit {
  SpikeDataset train;
  SpikeDataset valid;
  SpikeDataset test;
};

/// Stratified split by class; deterministic for a given rng state.
DatasetSplit split(const SpikeDataset& dataset, std::array<double, 3> fractions, SeededRng& rng);

}  // namespace spikedelay
