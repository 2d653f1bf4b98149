#include "spikedelay/network.hpp"

#include <bit>
#include <fstream>

namespace spikedelay {

Index ModelConfig::kernel_size(Index conn) const {
  if (kind() == ConnectionKind::plain) return 1;
  if (kernel_sizes.size() == 1) return kernel_sizes.front();
  return kernel_sizes.at(static_cast<std::size_t>(conn));
}

double ModelConfig::tau_steps(Index layer) const {
  const double tau = tau_ms.size() == 1 ? tau_ms.front() : tau_ms.at(static_cast<std::size_t>(layer));
  return tau_steps_from_ms(tau, delta_t_ms);
}

LIFConfig ModelConfig::lif(Index layer) const {
  LIFConfig cfg;
  cfg.tau_steps = tau_steps(layer);
  cfg.v_threshold = v_threshold;
  cfg.surrogate_alpha = surrogate_alpha;
  cfg.smooth_mode = smooth_mode;
  cfg.infinite_threshold = layer == static_cast<Index>(hidden_sizes.size());
  return cfg;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("model config: " + what); };
  if (input_channels < 1) fail("input_channels must be >= 1");
  if (n_classes < 1) fail("n_classes must be >= 1");
  if (hidden_sizes.empty()) fail("at least one hidden layer is required");
  for (Index h : hidden_sizes) {
    if (h < 1) fail("hidden sizes must be >= 1");
  }
  const auto conns = static_cast<std::size_t>(connection_count());
  if (kernel_sizes.size() != 1 && kernel_sizes.size() != conns) {
    fail("kernel_sizes needs 1 or " + std::to_string(conns) + " entries");
  }
  for (Index t : kernel_sizes) {
    if (t < 1) fail("kernel sizes must be >= 1");
  }
  if (tau_ms.size() != 1 && tau_ms.size() != conns) fail("tau_ms needs 1 or " + std::to_string(conns) + " entries");
  if (!(delta_t_ms > 0.0)) fail("delta_t_ms must be > 0");
  for (std::size_t l = 0; l < conns; ++l) {
    if (!(tau_steps(static_cast<Index>(l)) > 1.0)) fail("tau_ms must exceed delta_t_ms");
  }
  if (kernel_count < 1) fail("kernel_count must be >= 1");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) fail("dropout_rate must be in [0, 1)");
  if (!(bn_momentum >= 0.0 && bn_momentum <= 1.0)) fail("bn_momentum must be in [0, 1]");
  if (!(bn_eps > 0.0)) fail("bn_eps must be > 0");
  if (!(surrogate_alpha > 0.0)) fail("surrogate_alpha must be > 0");
  if (sparse_fan_in < 0) fail("sparse_fan_in must be >= 0");
}

Index count_parameters(const ModelConfig& config) {
  Index total = 0;
  for (Index c = 0; c < config.connection_count(); ++c) {
    const Index c_in = config.in_size(c);
    const Index fan = config.sparse_fan_in > 0 ? std::min(config.sparse_fan_in, c_in) : c_in;
    const Index synapses = config.out_size(c) * fan;
    switch (config.kind()) {
      case ConnectionKind::gaussian: total += 2 * synapses * config.kernel_count; break;
      case ConnectionKind::dense: total += synapses * config.kernel_size(c); break;
      case ConnectionKind::plain: total += synapses; break;
    }
  }
  for (Index h : config.hidden_sizes) total += 2 * h;
  return total;
}

namespace {

enum class Tag : std::uint8_t { integer = 0, real = 1, boolean = 2, integers = 3, reals = 4 };

class Writer {
 public:
  void u8(std::uint8_t v) { bytes.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes.insert(bytes.end(), s.begin(), s.end());
  }
  void key(const std::string& name, Tag tag) {
    str(name);
    u8(static_cast<std::uint8_t>(tag));
  }
  void entry(const std::string& name, std::int64_t v) { key(name, Tag::integer); i64(v); }
  void entry(const std::string& name, double v) { key(name, Tag::real); f64(v); }
  void entry(const std::string& name, bool v) { key(name, Tag::boolean); u8(v ? 1 : 0); }
  void entry(const std::string& name, const std::vector<Index>& v) {
    key(name, Tag::integers);
    u32(static_cast<std::uint32_t>(v.size()));
    for (auto x : v) i64(x);
  }
  void entry(const std::string& name, const std::vector<double>& v) {
    key(name, Tag::reals);
    u32(static_cast<std::uint32_t>(v.size()));
    for (auto x : v) f64(x);
  }

  std::vector<std::uint8_t> bytes;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : bytes(b) {}
  void need(std::size_t n) const {
    if (bytes.size() - pos < n) throw FormatError("truncated checkpoint at offset " + std::to_string(pos));
  }
  std::uint8_t u8() { need(1); return bytes[pos++]; }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[pos + i]) << (8 * i);
    pos += 8;
    return v;
  }
  std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
  double f64() { return std::bit_cast<double>(u64()); }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string str() {
    const auto n = u32();
    need(n);
    std::string s(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.begin() + static_cast<std::ptrdiff_t>(pos + n));
    pos += n;
    return s;
  }

  std::span<const std::uint8_t> bytes;
  std::size_t pos = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const CheckpointData& data) {
  const auto& c = data.config;
  Writer w;
  for (char ch : kCheckpointMagic) w.u8(static_cast<std::uint8_t>(ch));
  w.u32(20);
  w.entry("input_channels", static_cast<std::int64_t>(c.input_channels));
  w.entry("hidden_sizes", c.hidden_sizes);
  w.entry("n_classes", static_cast<std::int64_t>(c.n_classes));
  w.entry("kernel_sizes", c.kernel_sizes);
  w.entry("kernel_count", static_cast<std::int64_t>(c.kernel_count));
  w.entry("dropout_rate", c.dropout_rate);
  w.entry("tau_ms", c.tau_ms);
  w.entry("delta_t_ms", c.delta_t_ms);
  w.entry("bn_momentum", c.bn_momentum);
  w.entry("bn_eps", c.bn_eps);
  w.entry("use_delays", c.use_delays);
  w.entry("dense_conv_baseline", c.dense_conv_baseline);
  w.entry("pad_right", c.pad_right);
  w.entry("v_threshold", c.v_threshold);
  w.entry("surrogate_alpha", c.surrogate_alpha);
  w.entry("smooth_mode", c.smooth_mode);
  w.entry("sparse_fan_in", static_cast<std::int64_t>(c.sparse_fan_in));
  w.entry("sigma", data.sigma);
  w.entry("tensor_layout", std::int64_t{1});
  w.entry("connection_count", static_cast<std::int64_t>(c.connection_count()));

  w.u32(static_cast<std::uint32_t>(data.tensors.size()));
  for (const auto& t : data.tensors) {
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (Index k = 0; k < t.size(); ++k) w.f32(t[k]);
  }
  return std::move(w.bytes);
}

CheckpointData decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  r.need(kCheckpointMagic.size());
  for (char ch : kCheckpointMagic) {
    if (r.u8() != static_cast<std::uint8_t>(ch)) throw FormatError("bad magic: not an SNNDLY01 checkpoint");
  }
  CheckpointData data;
  auto& c = data.config;
  const auto entries = r.u32();
  for (std::uint32_t e = 0; e < entries; ++e) {
    const auto name = r.str();
    const auto tag = static_cast<Tag>(r.u8());
    std::int64_t integer = 0;
    double real = 0.0;
    bool flag = false;
    std::vector<std::int64_t> integers;
    std::vector<double> reals;
    switch (tag) {
      case Tag::integer: integer = r.i64(); break;
      case Tag::real: real = r.f64(); break;
      case Tag::boolean: flag = r.u8() != 0; break;
      case Tag::integers: {
        const auto n = r.u32();
        r.need(static_cast<std::size_t>(n) * 8);
        for (std::uint32_t k = 0; k < n; ++k) integers.push_back(r.i64());
        break;
      }
      case Tag::reals: {
        const auto n = r.u32();
        r.need(static_cast<std::size_t>(n) * 8);
        for (std::uint32_t k = 0; k < n; ++k) reals.push_back(r.f64());
        break;
      }
      default: throw FormatError("unknown config tag for " + name);
    }
    if (name == "input_channels") c.input_channels = integer;
    else if (name == "hidden_sizes") c.hidden_sizes.assign(integers.begin(), integers.end());
    else if (name == "n_classes") c.n_classes = integer;
    else if (name == "kernel_sizes") c.kernel_sizes.assign(integers.begin(), integers.end());
    else if (name == "kernel_count") c.kernel_count = integer;
    else if (name == "dropout_rate") c.dropout_rate = real;
    else if (name == "tau_ms") c.tau_ms = reals;
    else if (name == "delta_t_ms") c.delta_t_ms = real;
    else if (name == "bn_momentum") c.bn_momentum = real;
    else if (name == "bn_eps") c.bn_eps = real;
    else if (name == "use_delays") c.use_delays = flag;
    else if (name == "dense_conv_baseline") c.dense_conv_baseline = flag;
    else if (name == "pad_right") c.pad_right = flag;
    else if (name == "v_threshold") c.v_threshold = real;
    else if (name == "surrogate_alpha") c.surrogate_alpha = real;
    else if (name == "smooth_mode") c.smooth_mode = flag;
    else if (name == "sparse_fan_in") c.sparse_fan_in = integer;
    else if (name == "sigma") data.sigma = real;
    // Unknown keys from newer writers are skipped.
  }
  c.validate();

  const auto count = r.u32();
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto rank = r.u32();
    if (rank > 8) throw FormatError("implausible tensor rank " + std::to_string(rank));
    std::vector<Index> shape;
    std::size_t n = rank == 0 ? 0 : 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      shape.push_back(r.u32());
      n *= static_cast<std::size_t>(shape.back());
    }
    r.need(n * 4);
    DenseBuffer<float> t(shape);
    for (std::size_t i = 0; i < n; ++i) t[static_cast<Index>(i)] = r.f32();
    data.tensors.push_back(std::move(t));
  }
  if (r.pos != bytes.size()) throw FormatError("trailing bytes in checkpoint");
  return data;
}

void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace spikedelay
