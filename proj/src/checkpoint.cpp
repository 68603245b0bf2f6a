#include "seqvcr/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "seqvcr/dataset_io.hpp"

namespace seqvcr {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'S', 'E', 'Q', 'V', 'C', 'R', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kDigestBytes = 32;

class Writer {
 public:
  template <typename T>
  void pod(const T& v) {
    const auto* p = reinterpret_cast<const char*>(&v);
    buf_.append(p, sizeof(T));
  }
  void str(const std::string& s) {
    pod<std::uint64_t>(s.size());
    buf_ += s;
  }
  void doubles(std::span<const double> v) { buf_.append(reinterpret_cast<const char*>(v.data()), v.size_bytes()); }
  std::string& bytes() { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}
  template <typename T>
  T pod() {
    T v;
    std::memcpy(&v, take(sizeof(T)), sizeof(T));
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint64_t>();
    return std::string(take(n), n);
  }
  void doubles(std::span<double> out) { std::memcpy(out.data(), take(out.size_bytes()), out.size_bytes()); }
  bool done() const { return pos_ == data_.size(); }

 private:
  const char* take(std::size_t n) {
    if (n > data_.size() - pos_) throw std::runtime_error("checkpoint is truncated");
    const char* p = data_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::string_view data_;
  std::size_t pos_ = 0;
};

std::string hex_to_bytes(const std::string& hex) {
  std::string out;
  for (std::size_t i = 0; i + 1 < hex.size(); i += 2) out += static_cast<char>(std::stoi(hex.substr(i, 2), nullptr, 16));
  return out;
}

}  // namespace

std::string model_config_to_text(const ModelConfig& c) {
  std::ostringstream s;
  s.precision(17);
  s << "vocab_size=" << c.vocab_size << "\nd_model=" << c.d_model << "\nn_layers=" << c.n_layers
    << "\nn_heads=" << c.n_heads << "\nmax_seq_len=" << c.max_seq_len << "\ndropout=" << c.dropout_p
    << "\nproj_dim=" << c.proj_dim << "\n";
  return s.str();
}

ModelConfig model_config_from_text(const std::string& text) {
  ModelConfig c;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::runtime_error("malformed model config line '" + line + "'");
    const std::string key = line.substr(0, eq), val = line.substr(eq + 1);
    if (key == "vocab_size") c.vocab_size = std::stoull(val);
    else if (key == "d_model") c.d_model = std::stoull(val);
    else if (key == "n_layers") c.n_layers = std::stoull(val);
    else if (key == "n_heads") c.n_heads = std::stoull(val);
    else if (key == "max_seq_len") c.max_seq_len = std::stoull(val);
    else if (key == "dropout") c.dropout_p = std::stod(val);
    else if (key == "proj_dim") c.proj_dim = std::stoull(val);
    else throw std::runtime_error("unknown model config key '" + key + "'");
  }
  c.validate();
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Transformer& model, const AdamState& adam,
                     const std::string& train_config, const TrainerState& tr) {
  const auto& params = model.parameters();
  if (adam.m.size() != params.size() || adam.v.size() != params.size()) {
    throw std::invalid_argument("optimizer state does not match model parameters");
  }
  Writer w;
  w.bytes().append(kMagic, sizeof(kMagic));
  w.pod(kVersion);
  w.str(model_config_to_text(model.config()));
  w.str(train_config);
  w.pod(tr.step);
  w.pod(tr.window_total);
  w.pod(tr.window_next);
  w.pod(tr.window_reg);
  w.pod(tr.window_count);
  w.pod(tr.last_eval);
  w.pod<std::uint64_t>(tr.has_eval ? 1 : 0);
  w.pod<std::uint64_t>(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor& t = params[i].tensor;
    w.str(params[i].name);
    w.pod<std::uint64_t>(t.rank());
    for (auto d : t.shape()) w.pod<std::uint64_t>(d);
    w.doubles(t.values());
    w.doubles(adam.m[i]);
    w.doubles(adam.v[i]);
  }
  w.pod(adam.step);
  w.bytes() += hex_to_bytes(sha256_hex(w.bytes()));

  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write checkpoint " + tmp.string());
    out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
    if (!out.flush()) throw std::runtime_error("checkpoint write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string data = ss.str();
  if (data.size() < sizeof(kMagic) + kDigestBytes || std::memcmp(data.data(), kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error(path.string() + " is not a checkpoint");
  }
  const std::string_view body(data.data(), data.size() - kDigestBytes);
  if (hex_to_bytes(sha256_hex(body)) != data.substr(body.size())) {
    throw std::runtime_error(path.string() + " failed its integrity check");
  }
  Reader r(body.substr(sizeof(kMagic)));
  if (const auto v = r.pod<std::uint32_t>(); v != kVersion) {
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(v));
  }
  Checkpoint ck;
  ck.model_config = model_config_from_text(r.str());
  ck.train_config = r.str();
  ck.trainer.step = r.pod<std::uint64_t>();
  ck.trainer.window_total = r.pod<double>();
  ck.trainer.window_next = r.pod<double>();
  ck.trainer.window_reg = r.pod<double>();
  ck.trainer.window_count = r.pod<std::uint64_t>();
  ck.trainer.last_eval = r.pod<double>();
  ck.trainer.has_eval = r.pod<std::uint64_t>() != 0;
  const auto n = r.pod<std::uint64_t>();
  for (std::uint64_t i = 0; i < n; ++i) {
    Parameter p;
    p.name = r.str();
    Shape shape(r.pod<std::uint64_t>());
    for (auto& d : shape) d = r.pod<std::uint64_t>();
    p.tensor = Tensor(shape);
    r.doubles(p.tensor.values());
    ck.adam.m.emplace_back(p.tensor.numel());
    ck.adam.v.emplace_back(p.tensor.numel());
    r.doubles(ck.adam.m.back());
    r.doubles(ck.adam.v.back());
    ck.params.push_back(std::move(p));
  }
  ck.adam.step = r.pod<std::uint64_t>();
  if (!r.done()) throw std::runtime_error(path.string() + " has trailing bytes");
  return ck;
}

Transformer restore_model(const Checkpoint& ck) {
  Transformer model(ck.model_config, 0);
  auto& params = model.parameters();
  if (params.size() != ck.params.size()) {
    throw std::runtime_error("checkpoint holds " + std::to_string(ck.params.size()) + " parameters, model has " +
                             std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].name != ck.params[i].name || params[i].tensor.shape() != ck.params[i].tensor.shape()) {
      throw std::runtime_error("checkpoint parameter " + ck.params[i].name + " " +
                               shape_string(ck.params[i].tensor.shape()) + " does not match model parameter " +
                               params[i].name + " " + shape_string(params[i].tensor.shape()));
    }
    std::copy(ck.params[i].tensor.values().begin(), ck.params[i].tensor.values().end(), params[i].tensor.values().begin());
  }
  return model;
}

}  // namespace seqvcr
