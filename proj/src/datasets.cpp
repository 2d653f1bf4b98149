#include "spikedelay/datasets.hpp"

#include <bit>
#include <fstream>
#include <map>
#include <set>

namespace spikedelay {

RowMatrix<float> SpikeDataset::densify(std::size_t index) const {
  const auto& s = samples.at(index);
  RowMatrix<float> out = RowMatrix<float>::Zero(num_channels, s.length);
  if (encoding == Encoding::sparse) {
    for (const auto& e : s.events) out(e.channel, e.t) += static_cast<float>(e.count);
  } else {
    for (std::uint32_t t = 0; t < s.length; ++t) {
      for (std::uint32_t c = 0; c < num_channels; ++c) {
        out(c, t) = s.dense[static_cast<std::size_t>(t) * num_channels + c];
      }
    }
  }
  return out;
}

double SpikeDataset::total_count(std::size_t index) const {
  const auto& s = samples.at(index);
  double total = 0.0;
  if (encoding == Encoding::sparse) {
    for (const auto& e : s.events) total += e.count;
  } else {
    for (float v : s.dense) total += v;
  }
  return total;
}

std::vector<std::size_t> SpikeDataset::class_counts() const {
  std::vector<std::size_t> counts(num_classes, 0);
  for (const auto& s : samples) {
    if (s.label < num_classes) ++counts[s.label];
  }
  return counts;
}

void validate(const SpikeDataset& dataset) {
  if (dataset.encoding != Encoding::sparse && dataset.encoding != Encoding::dense) {
    throw FormatError("unknown encoding");
  }
  for (std::size_t k = 0; k < dataset.samples.size(); ++k) {
    const auto& s = dataset.samples[k];
    const std::string where = "sample " + std::to_string(k) + ": ";
    if (s.label >= dataset.num_classes) {
      throw FormatError(where + "label " + std::to_string(s.label) + " >= num_classes " +
                        std::to_string(dataset.num_classes));
    }
    if (dataset.encoding == Encoding::sparse) {
      if (!s.dense.empty()) throw FormatError(where + "dense payload in sparse dataset");
      for (const auto& e : s.events) {
        if (e.t >= s.length) throw FormatError(where + "event time " + std::to_string(e.t) + " >= T");
        if (e.channel >= dataset.num_channels) {
          throw FormatError(where + "event channel " + std::to_string(e.channel) + " out of range");
        }
        if (e.count < 1) throw FormatError(where + "event count must be >= 1");
      }
    } else {
      if (!s.events.empty()) throw FormatError(where + "events in dense dataset");
      if (s.dense.size() != static_cast<std::size_t>(s.length) * dataset.num_channels) {
        throw FormatError(where + "dense payload size mismatch");
      }
    }
  }
}

namespace {

class Writer {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint8_t u8() {
    need(1);
    return bytes_[pos_++];
  }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = static_cast<std::uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) {
      throw FormatError("truncated file at offset " + std::to_string(pos_));
    }
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_spkds(const SpikeDataset& dataset) {
  validate(dataset);
  Writer w;
  for (char c : kSpkdsMagic) w.u8(static_cast<std::uint8_t>(c));
  w.u8(static_cast<std::uint8_t>(dataset.encoding));
  w.u8(0);
  w.u32(static_cast<std::uint32_t>(dataset.samples.size()));
  w.u32(dataset.num_channels);
  w.u32(dataset.num_classes);
  w.u32(dataset.delta_t_us);
  for (const auto& s : dataset.samples) {
    w.u32(s.length);
    w.u16(s.label);
    if (dataset.encoding == Encoding::sparse) {
      w.u32(static_cast<std::uint32_t>(s.events.size()));
      for (const auto& e : s.events) {
        w.u16(e.t);
        w.u16(e.channel);
        w.u8(e.count);
      }
    } else {
      for (float v : s.dense) w.f32(v);
    }
  }
  return w.take();
}

SpikeDataset decode_spkds(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  r.need(kSpkdsHeaderSize);
  for (char c : kSpkdsMagic) {
    if (r.u8() != static_cast<std::uint8_t>(c)) throw FormatError("bad magic: not an SPKDS1 file");
  }
  SpikeDataset ds;
  const auto encoding = r.u8();
  if (encoding > 1) throw FormatError("unknown encoding " + std::to_string(encoding));
  ds.encoding = static_cast<Encoding>(encoding);
  if (r.u8() != 0) throw FormatError("reserved byte must be 0");
  const auto n = r.u32();
  ds.num_channels = r.u32();
  ds.num_classes = r.u32();
  ds.delta_t_us = r.u32();
  // Every sample needs at least 6 bytes; guards huge reserve() on garbage.
  if (static_cast<std::uint64_t>(n) * 6 > r.remaining()) {
    throw FormatError("truncated file at offset " + std::to_string(r.offset()) + ": header claims " +
                      std::to_string(n) + " samples");
  }
  ds.samples.reserve(n);
  for (std::uint32_t k = 0; k < n; ++k) {
    SpikeSample s;
    s.length = r.u32();
    s.label = r.u16();
    if (ds.encoding == Encoding::sparse) {
      const auto events = r.u32();
      r.need(static_cast<std::size_t>(events) * 5);
      s.events.resize(events);
      for (auto& e : s.events) {
        e.t = r.u16();
        e.channel = r.u16();
        e.count = r.u8();
      }
    } else {
      const auto values = static_cast<std::size_t>(s.length) * ds.num_channels;
      r.need(values * 4);
      s.dense.resize(values);
      for (auto& v : s.dense) v = r.f32();
    }
    ds.samples.push_back(std::move(s));
  }
  if (r.remaining() != 0) {
    throw FormatError("trailing bytes after sample " + std::to_string(n) + " at offset " +
                      std::to_string(r.offset()));
  }
  validate(ds);
  return ds;
}

void save_spkds(const SpikeDataset& dataset, const std::filesystem::path& path) {
  const auto bytes = encode_spkds(dataset);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

SpikeDataset load_spkds(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_spkds(bytes);
}

namespace {

// Collapses (t, channel) -> count into sorted events of at most 255 each.
std::vector<SpikeEvent> events_from_counts(const std::map<std::pair<std::uint32_t, std::uint32_t>, std::uint64_t>& counts) {
  std::vector<SpikeEvent> events;
  for (const auto& [key, total] : counts) {
    auto left = total;
    while (left > 0) {
      const auto chunk = static_cast<std::uint8_t>(std::min<std::uint64_t>(left, 255));
      events.push_back({static_cast<std::uint16_t>(key.first), static_cast<std::uint16_t>(key.second), chunk});
      left -= chunk;
    }
  }
  return events;
}

}  // namespace

SpikeSample bin_spatial(const SpikeSample& sample, Encoding encoding, std::uint32_t channels,
                        std::uint32_t factor) {
  if (factor == 0 || channels % factor != 0) {
    throw std::invalid_argument("bin_spatial: " + std::to_string(channels) +
                                " channels not divisible by " + std::to_string(factor));
  }
  SpikeSample out{sample.length, sample.label, {}, {}};
  const std::uint32_t reduced = channels / factor;
  if (encoding == Encoding::sparse) {
    std::map<std::pair<std::uint32_t, std::uint32_t>, std::uint64_t> counts;
    for (const auto& e : sample.events) counts[{e.t, e.channel / factor}] += e.count;
    out.events = events_from_counts(counts);
  } else {
    out.dense.assign(static_cast<std::size_t>(sample.length) * reduced, 0.0f);
    for (std::uint32_t t = 0; t < sample.length; ++t) {
      for (std::uint32_t c = 0; c < channels; ++c) {
        out.dense[static_cast<std::size_t>(t) * reduced + c / factor] +=
            sample.dense[static_cast<std::size_t>(t) * channels + c];
      }
    }
  }
  return out;
}

SpikeDataset bin_spatial(const SpikeDataset& dataset, std::uint32_t factor) {
  SpikeDataset out = dataset;
  if (factor == 0 || dataset.num_channels % factor != 0) {
    throw std::invalid_argument("bin_spatial: channel count not divisible by factor");
  }
  out.num_channels = dataset.num_channels / factor;
  for (auto& s : out.samples) s = bin_spatial(s, dataset.encoding, dataset.num_channels, factor);
  return out;
}

SpikeSample bin_temporal(const SpikeSample& sample, Encoding encoding, std::uint32_t channels,
                         std::uint32_t ratio) {
  if (ratio == 0) throw std::invalid_argument("bin_temporal: ratio must be >= 1");
  SpikeSample out{(sample.length + ratio - 1) / ratio, sample.label, {}, {}};
  if (encoding == Encoding::sparse) {
    std::map<std::pair<std::uint32_t, std::uint32_t>, std::uint64_t> counts;
    for (const auto& e : sample.events) counts[{e.t / ratio, e.channel}] += e.count;
    out.events = events_from_counts(counts);
  } else {
    out.dense.assign(static_cast<std::size_t>(out.length) * channels, 0.0f);
    for (std::uint32_t t = 0; t < sample.length; ++t) {
      for (std::uint32_t c = 0; c < channels; ++c) {
        out.dense[static_cast<std::size_t>(t / ratio) * channels + c] +=
            sample.dense[static_cast<std::size_t>(t) * channels + c];
      }
    }
  }
  return out;
}

SpikeDataset bin_temporal(const SpikeDataset& dataset, std::uint32_t delta_t_target_us) {
  if (dataset.delta_t_us == 0 || delta_t_target_us % dataset.delta_t_us != 0) {
    throw std::invalid_argument("bin_temporal: target step " + std::to_string(delta_t_target_us) +
                                " us is not a multiple of " + std::to_string(dataset.delta_t_us) + " us");
  }
  const std::uint32_t ratio = delta_t_target_us / dataset.delta_t_us;
  SpikeDataset out = dataset;
  out.delta_t_us = delta_t_target_us;
  for (auto& s : out.samples) s = bin_temporal(s, dataset.encoding, dataset.num_channels, ratio);
  return out;
}

std::vector<std::vector<std::size_t>> batch_indices(std::size_t count, std::size_t batch_size,
                                                    SeededRng* rng) {
  if (batch_size == 0) throw std::invalid_argument("batch size must be >= 1");
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (rng) rng->shuffle(order);
  std::vector<std::vector<std::size_t>> groups;
  for (std::size_t start = 0; start < count; start += batch_size) {
    const auto stop = std::min(count, start + batch_size);
    groups.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                        order.begin() + static_cast<std::ptrdiff_t>(stop));
  }
  return groups;
}

namespace {

std::vector<std::uint32_t> draw_distinct(SeededRng& rng, std::uint32_t k, std::uint32_t range) {
  std::vector<std::uint32_t> pool(range);
  std::iota(pool.begin(), pool.end(), 0u);
  for (std::uint32_t i = 0; i < k; ++i) {
    std::swap(pool[i], pool[i + rng.uniform_int(range - i)]);
  }
  pool.resize(k);
  return pool;
}

}  // namespace

PlantedDelayTask generate_planted_delay(const PlantedDelaySpec& spec, SeededRng& rng) {
  if (spec.n_classes == 0 || spec.channels == 0 || spec.pattern_channels == 0) {
    throw std::invalid_argument("planted-delay spec needs classes, channels and pattern channels");
  }
  if (spec.pattern_channels > spec.channels) {
    throw std::invalid_argument("more pattern channels than channels");
  }
  if (spec.duration > 65535) throw std::invalid_argument("duration exceeds the SPKDS time range");
  if (spec.background_rate < 0.0) throw std::invalid_argument("negative background rate");

  PlantedDelayTask task;
  task.pattern_channel_ids = spec.pattern_channel_ids;
  if (task.pattern_channel_ids.empty()) {
    task.pattern_channel_ids = draw_distinct(rng, spec.pattern_channels, spec.channels);
  } else if (task.pattern_channel_ids.size() != spec.pattern_channels) {
    throw std::invalid_argument("pattern_channel_ids length must equal pattern_channels");
  }
  for (auto ch : task.pattern_channel_ids) {
    if (ch >= spec.channels) throw std::invalid_argument("pattern channel id out of range");
  }

  task.signatures = spec.signatures;
  if (task.signatures.empty()) {
    if (spec.max_offset + 1 < spec.pattern_channels) {
      throw std::invalid_argument("max_offset too small for distinct offsets");
    }
    // Offsets are distinct within a class so no two pattern spikes coincide.
    std::set<std::vector<std::uint32_t>> seen;
    while (task.signatures.size() < spec.n_classes) {
      auto offsets = draw_distinct(rng, spec.pattern_channels, spec.max_offset + 1);
      const auto lowest = *std::min_element(offsets.begin(), offsets.end());
      for (auto& o : offsets) o -= lowest;
      if (seen.insert(offsets).second) task.signatures.push_back(std::move(offsets));
    }
  } else if (task.signatures.size() != spec.n_classes) {
    throw std::invalid_argument("signatures must list one offset vector per class");
  }

  std::uint32_t span = 0;
  for (const auto& sig : task.signatures) {
    if (sig.size() != spec.pattern_channels) {
      throw std::invalid_argument("signature length must equal pattern_channels");
    }
    for (auto o : sig) {
      if (o > spec.max_offset) throw std::invalid_argument("signature offset exceeds max_offset");
      span = std::max(span, o);
    }
  }
  if (static_cast<std::uint64_t>(span) + 2ull * spec.jitter >= spec.duration) {
    throw std::invalid_argument("pattern exceeds duration");
  }
  const std::uint32_t onset_range = spec.duration - span - 2 * spec.jitter;

  auto& ds = task.dataset;
  ds.encoding = Encoding::sparse;
  ds.num_channels = spec.channels;
  ds.num_classes = spec.n_classes;
  ds.delta_t_us = spec.delta_t_us;
  ds.samples.reserve(static_cast<std::size_t>(spec.n_classes) * spec.samples_per_class);
  for (std::uint32_t cls = 0; cls < spec.n_classes; ++cls) {
    for (std::uint32_t k = 0; k < spec.samples_per_class; ++k) {
      std::map<std::pair<std::uint32_t, std::uint32_t>, std::uint64_t> counts;
      for (std::uint32_t t = 0; t < spec.duration; ++t) {
        for (std::uint32_t ch = 0; ch < spec.channels; ++ch) {
          if (const auto n = rng.poisson(spec.background_rate)) counts[{t, ch}] += n;
        }
      }
      const auto onset = spec.jitter + static_cast<std::uint32_t>(rng.uniform_int(onset_range));
      for (std::uint32_t p = 0; p < spec.pattern_channels; ++p) {
        const auto shift = static_cast<std::int64_t>(rng.uniform_int(2 * spec.jitter + 1)) - spec.jitter;
        const auto t = static_cast<std::uint32_t>(onset + task.signatures[cls][p] + shift);
        counts[{t, task.pattern_channel_ids[p]}] += 1;
      }
      ds.samples.push_back({spec.duration, static_cast<std::uint16_t>(cls), events_from_counts(counts), {}});
    }
  }
  rng.shuffle(ds.samples);
  return task;
}

DatasetSplit split(const SpikeDataset& dataset, std::array<double, 3> fractions, SeededRng& rng) {
  for (double f : fractions) {
    if (f < 0.0) throw std::invalid_argument("split fractions must be non-negative");
  }
  if (std::abs(fractions[0] + fractions[1] + fractions[2] - 1.0) > 1e-9) {
    throw std::invalid_argument("split fractions must sum to 1");
  }
  std::vector<std::vector<std::size_t>> by_class(dataset.num_classes);
  for (std::size_t k = 0; k < dataset.samples.size(); ++k) by_class.at(dataset.samples[k].label).push_back(k);

  std::array<std::vector<std::size_t>, 3> parts;
  for (std::size_t cls = 0; cls < by_class.size(); ++cls) {
    auto& members = by_class[cls];
    if (members.empty()) continue;
    rng.shuffle(members);
    const auto n = members.size();
    const auto n_train = std::min(n, static_cast<std::size_t>(std::floor(fractions[0] * n + 0.5)));
    const auto n_valid = std::min(n - n_train, static_cast<std::size_t>(std::floor(fractions[1] * n + 0.5)));
    const std::array<std::size_t, 3> sizes{n_train, n_valid, n - n_train - n_valid};
    std::size_t start = 0;
    for (int part = 0; part < 3; ++part) {
      if (fractions[part] > 0.0 && sizes[part] == 0) {
        throw std::invalid_argument("split leaves class " + std::to_string(cls) + " empty in part " +
                                    std::to_string(part));
      }
      parts[part].insert(parts[part].end(), members.begin() + static_cast<std::ptrdiff_t>(start),
                         members.begin() + static_cast<std::ptrdiff_t>(start + sizes[part]));
      start += sizes[part];
    }
  }

  auto take = [&](std::vector<std::size_t>& idx) {
    std::sort(idx.begin(), idx.end());
    SpikeDataset out{dataset.encoding, dataset.num_channels, dataset.num_classes, dataset.delta_t_us, {}};
    out.samples.reserve(idx.size());
    for (auto k : idx) out.samples.push_back(dataset.samples[k]);
    return out;
  };
  return {take(parts[0]), take(parts[1]), take(parts[2])};
}

}  // namespace spikedelay
