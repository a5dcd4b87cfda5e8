// Binary checkpoint container; byte layout in README.md.

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <zlib.h>

#include "mild/errors.hpp"
#include "mild/pipeline.hpp"

namespace mild::pipeline {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

namespace {

constexpr char kMagic[8] = {'M', 'I', 'L', 'D', 'C', 'K', 'P', 'T'};
constexpr std::size_t kHeaderSize = 8 + 4 + 4 + 8 + 8;

std::uint32_t crc(std::span<const std::uint8_t> bytes) {
  uLong c = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  std::size_t off = 0;
  while (off < bytes.size()) {
    const auto n = static_cast<uInt>(std::min<std::size_t>(bytes.size() - off, 1u << 30));
    c = crc32(c, bytes.data() + off, n);
    off += n;
  }
  return static_cast<std::uint32_t>(c);
}

class Writer {
 public:
  template <typename T>
  void pod(T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    buf_.insert(buf_.end(), p, p + sizeof(T));
  }
  void u8(std::uint8_t v) { pod(v); }
  void u32(std::uint32_t v) { pod(v); }
  void u64(std::uint64_t v) { pod(v); }
  void i64(std::int64_t v) { pod(v); }
  void f64(double v) { pod(v); }
  void str(const std::string& s) {
    u64(s.size());
    buf_.insert(buf_.end(), s.begin(), s.end());
  }
  void bytes(std::span<const std::uint8_t> b) { buf_.insert(buf_.end(), b.begin(), b.end()); }
  void matrix(const Matrix& m) {
    u64(static_cast<std::uint64_t>(m.rows()));
    u64(static_cast<std::uint64_t>(m.cols()));
    for (Index i = 0; i < m.rows(); ++i) {
      for (Index j = 0; j < m.cols(); ++j) f64(m(i, j));
    }
  }
  void vector(const Vector& v) {
    u64(static_cast<std::uint64_t>(v.size()));
    for (Index i = 0; i < v.size(); ++i) f64(v(i));
  }
  void indices(const std::vector<Index>& v) {
    u64(v.size());
    for (Index i : v) i64(i);
  }
  std::vector<std::uint8_t>& buffer() { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}

  template <typename T>
  T pod() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, b_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::uint8_t u8() { return pod<std::uint8_t>(); }
  std::uint32_t u32() { return pod<std::uint32_t>(); }
  std::uint64_t u64() { return pod<std::uint64_t>(); }
  std::int64_t i64() { return pod<std::int64_t>(); }
  double f64() { return pod<double>(); }
  std::string str() {
    const auto n = count(1);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::span<const std::uint8_t> bytes(std::size_t n) {
    need(n);
    auto s = b_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  Matrix matrix() {
    const auto r = count(0);
    const auto c = count(0);
    need(r * c * sizeof(double));
    Matrix m(static_cast<Index>(r), static_cast<Index>(c));
    for (Index i = 0; i < m.rows(); ++i) {
      for (Index j = 0; j < m.cols(); ++j) m(i, j) = f64();
    }
    return m;
  }
  Vector vector() {
    const auto n = count(sizeof(double));
    Vector v(static_cast<Index>(n));
    for (Index i = 0; i < v.size(); ++i) v(i) = f64();
    return v;
  }
  std::vector<Index> indices() {
    const auto n = count(sizeof(std::int64_t));
    std::vector<Index> v(n);
    for (auto& i : v) i = static_cast<Index>(i64());
    return v;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  // Element count whose payload of `elem` bytes each must fit the buffer.
  std::size_t count(std::size_t elem) {
    const auto n = u64();
    if (elem > 0 && n > (b_.size() - pos_) / elem) throw CorruptChecksum("checkpoint: length field out of range");
    if (n > b_.size()) throw CorruptChecksum("checkpoint: length field out of range");
    return static_cast<std::size_t>(n);
  }
  void need(std::size_t n) const {
    if (n > b_.size() - pos_) throw CorruptChecksum("checkpoint: unexpected end of data");
  }

  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

void write_config(Writer& w, const TrainConfig& c) {
  w.i64(c.latent_dim);
  w.indices(c.hidden);
  w.f64(c.leaky_slope);
  w.i64(c.window);
  w.f64(c.kl_scale);
  w.i64(c.n_samples);
  w.i64(c.batch_size);
  w.f64(c.optimizer.learning_rate);
  w.f64(c.optimizer.beta1);
  w.f64(c.optimizer.beta2);
  w.f64(c.optimizer.epsilon);
  w.f64(c.optimizer.weight_decay);
  w.i64(c.epochs);
  w.u64(c.seed);
  w.i64(c.hsmm.components);
  w.i64(c.hsmm.max_iters);
  w.f64(c.hsmm.tol);
  w.f64(c.hsmm.duration_std_floor);
  w.f64(c.hsmm.dmax_factor);
  w.f64(c.hsmm.initial_leak);
  w.f64(c.hsmm.min_component_mass);
  w.u8(c.warm_start ? 1 : 0);
  w.u8(c.sampled_refit ? 1 : 0);
  w.u8(c.share_weights ? 1 : 0);
  w.u8(c.early_stopping ? 1 : 0);
  w.f64(c.validation_fraction);
  w.i64(c.patience);
}

TrainConfig read_config(Reader& r) {
  TrainConfig c;
  c.latent_dim = static_cast<Index>(r.i64());
  c.hidden = r.indices();
  c.leaky_slope = r.f64();
  c.window = static_cast<Index>(r.i64());
  c.kl_scale = r.f64();
  c.n_samples = static_cast<Index>(r.i64());
  c.batch_size = static_cast<Index>(r.i64());
  c.optimizer.learning_rate = r.f64();
  c.optimizer.beta1 = r.f64();
  c.optimizer.beta2 = r.f64();
  c.optimizer.epsilon = r.f64();
  c.optimizer.weight_decay = r.f64();
  c.epochs = static_cast<int>(r.i64());
  c.seed = r.u64();
  c.hsmm.components = static_cast<Index>(r.i64());
  c.hsmm.max_iters = static_cast<int>(r.i64());
  c.hsmm.tol = r.f64();
  c.hsmm.duration_std_floor = r.f64();
  c.hsmm.dmax_factor = r.f64();
  c.hsmm.initial_leak = r.f64();
  c.hsmm.min_component_mass = r.f64();
  c.warm_start = r.u8() != 0;
  c.sampled_refit = r.u8() != 0;
  c.share_weights = r.u8() != 0;
  c.early_stopping = r.u8() != 0;
  c.validation_fraction = r.f64();
  c.patience = static_cast<int>(r.i64());
  return c;
}

std::vector<std::uint8_t> config_bytes(const TrainConfig& c) {
  Writer w;
  write_config(w, c);
  return std::move(w.buffer());
}

void write_net(Writer& w, const nnet::DenseNet& net) {
  w.f64(net.leaky_slope());
  w.u64(net.size());
  for (const auto& layer : net.layers()) {
    w.u8(layer.activation == nnet::Activation::kLeakyRelu ? 1 : 0);
    w.matrix(layer.weight);
    w.vector(layer.bias);
  }
}

nnet::DenseNet read_net(Reader& r) {
  const double slope = r.f64();
  const auto n = r.u64();
  if (n > 1024) throw CorruptChecksum("checkpoint: implausible layer count");
  std::vector<nnet::DenseLayer> layers;
  for (std::uint64_t i = 0; i < n; ++i) {
    nnet::DenseLayer l;
    l.activation = r.u8() != 0 ? nnet::Activation::kLeakyRelu : nnet::Activation::kLinear;
    l.weight = r.matrix();
    l.bias = r.vector();
    layers.push_back(std::move(l));
  }
  return nnet::DenseNet(std::move(layers), slope);
}

void write_agent(Writer& w, const vae::VaeAgent& a) {
  write_net(w, a.trunk());
  write_net(w, a.mean_head());
  write_net(w, a.chol_head());
  write_net(w, a.decoder());
}

vae::VaeAgent read_agent(Reader& r) {
  auto trunk = read_net(r);
  auto mean = read_net(r);
  auto chol = read_net(r);
  auto dec = read_net(r);
  return vae::VaeAgent(std::move(trunk), std::move(mean), std::move(chol), std::move(dec));
}

void write_hsmm(Writer& w, const hsmm::HsmmModel& m) {
  w.indices(m.split.first);
  w.indices(m.split.second);
  w.vector(m.initial);
  w.matrix(m.transition);
  w.u64(m.components.size());
  for (const auto& c : m.components) {
    w.vector(c.mean());
    w.matrix(c.chol());
  }
  for (const auto& d : m.durations) {
    w.f64(d.mean);
    w.f64(d.std);
  }
  w.i64(m.max_duration);
  w.f64(m.duration_std_floor);
}

hsmm::HsmmModel read_hsmm(Reader& r) {
  hsmm::HsmmModel m;
  m.split.first = r.indices();
  m.split.second = r.indices();
  m.initial = r.vector();
  m.transition = r.matrix();
  const auto k = r.u64();
  if (k > 1u << 20) throw CorruptChecksum("checkpoint: implausible component count");
  for (std::uint64_t i = 0; i < k; ++i) {
    Vector mean = r.vector();
    const Matrix chol = r.matrix();
    m.components.emplace_back(std::move(mean), chol);
  }
  for (std::uint64_t i = 0; i < k; ++i) {
    hsmm::DurationStats d;
    d.mean = r.f64();
    d.std = r.f64();
    m.durations.push_back(d);
  }
  m.max_duration = static_cast<Index>(r.i64());
  m.duration_std_floor = r.f64();
  return m;
}

}  // namespace

std::uint32_t config_hash(const TrainConfig& config) { return crc(config_bytes(config)); }

std::vector<std::uint8_t> serialize(const TrainedModel& model) {
  Writer payload;
  const auto cfg = config_bytes(model.config);
  payload.u64(cfg.size());
  payload.bytes(cfg);
  payload.u8(model.config.share_weights ? 1 : 0);
  write_agent(payload, model.vae.agent1);
  if (!model.config.share_weights) write_agent(payload, model.vae.agent2);
  payload.u64(model.hsmms.size());
  for (const auto& [label, m] : model.hsmms) {
    payload.str(label);
    write_hsmm(payload, m);
  }

  Writer out;
  out.bytes(std::span(reinterpret_cast<const std::uint8_t*>(kMagic), sizeof(kMagic)));
  out.u32(kCheckpointVersion);
  out.u32(crc(cfg));
  out.i64(model.config.timestamp);
  out.u64(payload.buffer().size());
  out.bytes(payload.buffer());
  out.u32(crc(out.buffer()));
  return std::move(out.buffer());
}

TrainedModel deserialize(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw CorruptChecksum("not a checkpoint file (bad magic)");
  }
  Reader head(bytes.subspan(sizeof(kMagic)));
  const auto version = head.u32();
  if (version != kCheckpointVersion) {
    throw VersionMismatch("checkpoint format version " + std::to_string(version) +
                          ", this build reads version " + std::to_string(kCheckpointVersion));
  }
  if (bytes.size() < kHeaderSize + 4) throw CorruptChecksum("checkpoint truncated");
  const auto body = bytes.first(bytes.size() - 4);
  std::uint32_t stored = 0;
  std::memcpy(&stored, bytes.data() + body.size(), 4);
  if (crc(body) != stored) throw CorruptChecksum("checkpoint checksum mismatch");

  const auto hash = head.u32();
  const auto timestamp = head.i64();
  const auto payload_size = head.u64();
  if (payload_size != body.size() - kHeaderSize) throw CorruptChecksum("checkpoint payload size mismatch");

  Reader r(body.subspan(kHeaderSize));
  const auto cfg_size = r.u64();
  if (cfg_size > payload_size) throw CorruptChecksum("checkpoint: config block out of range");
  const auto cfg = r.bytes(static_cast<std::size_t>(cfg_size));
  if (crc(cfg) != hash) throw CorruptChecksum("checkpoint config hash mismatch");
  Reader cr(cfg);
  TrainedModel model;
  model.config = read_config(cr);
  model.config.timestamp = timestamp;

  const bool shared = r.u8() != 0;
  model.vae.agent1 = read_agent(r);
  model.vae.agent2 = shared ? model.vae.agent1 : read_agent(r);
  const auto classes = r.u64();
  for (std::uint64_t i = 0; i < classes; ++i) {
    auto label = r.str();
    auto m = read_hsmm(r);
    model.hsmms.emplace(std::move(label), std::move(m));
  }
  if (!r.done()) throw CorruptChecksum("checkpoint: trailing bytes in payload");
  return model;
}

void save(const TrainedModel& model, const std::filesystem::path& path) {
  const auto bytes = serialize(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoFailure("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoFailure("write failed for '" + path.string() + "'");
}

namespace {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoFailure("cannot open checkpoint '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoFailure("read failed for '" + path.string() + "'");
  return bytes;
}

}  // namespace

TrainedModel load(const std::filesystem::path& path) { return deserialize(read_file(path)); }

CheckpointHeader read_header(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  if (bytes.size() < kHeaderSize || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw CorruptChecksum("not a checkpoint file");
  }
  Reader r(std::span<const std::uint8_t>(bytes).subspan(sizeof(kMagic)));
  CheckpointHeader h;
  h.version = r.u32();
  h.config_hash = r.u32();
  h.timestamp = r.i64();
  return h;
}

}  // namespace mild::pipeline
