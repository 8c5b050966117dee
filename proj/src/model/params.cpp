#include "profchat/model/params.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "profchat/errors.hpp"
#include "profchat/rng.hpp"

namespace profchat::model {

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[8] = {'P', 'C', 'H', 'K', 'P', 'T', '0', '1'};

void register_gru(ModelParams& p, const std::string& prefix, std::size_t in,
                  std::size_t hidden) {
  p.add(prefix + ".w_x", Tensor::zeros({3 * hidden, in}, true));
  p.add(prefix + ".u_rz", Tensor::zeros({2 * hidden, hidden}, true));
  p.add(prefix + ".u_n", Tensor::zeros({hidden, hidden}, true));
  p.add(prefix + ".b", Tensor::zeros({3 * hidden}, true));
}

class Writer {
 public:
  template <typename T>
  void put(T value) {
    const auto* raw = reinterpret_cast<const std::uint8_t*>(&value);
    bytes.insert(bytes.end(), raw, raw + sizeof(T));
  }
  void put_bytes(const std::string& s) { bytes.insert(bytes.end(), s.begin(), s.end()); }
  std::vector<std::uint8_t> bytes;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}
  template <typename T>
  T get() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }
  std::string get_string(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw ParseError("checkpoint truncated");
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

ModelParams::ModelParams(const ModelConfig& config, std::uint64_t seed)
    : config_(config) {
  config.validate();
  const std::size_t V = config.vocab_size, E = config.emb_dim,
                    H = config.hidden_dim, L = config.num_layers;
  add("embed.word", Tensor::zeros({V, E}, true));
  add("embed.key", Tensor::zeros({V, E}, true));
  if (!config.tie_value_embeddings) add("embed.value", Tensor::zeros({V, E}, true));

  for (std::size_t l = 0; l < L; ++l)
    register_gru(*this, "encoder.l" + std::to_string(l), l == 0 ? E : H, H);

  add("detector.gate.w", Tensor::zeros({1, H}, true));
  const std::size_t M = config.key_mlp_dim();
  add("detector.key.w", Tensor::zeros({M, H + 2 * E}, true));
  add("detector.key.b", Tensor::zeros({M}, true));
  add("detector.key.u", Tensor::zeros({M}, true));

  const std::size_t A = config.attention_dim();
  for (const char* d : {"fr", "b", "f"}) {
    const std::string prefix = std::string("decoder.") + d;
    add(prefix + ".init.w", Tensor::zeros({L * H, H}, true));
    add(prefix + ".init.b", Tensor::zeros({L * H}, true));
    for (std::size_t l = 0; l < L; ++l)
      register_gru(*this, prefix + ".l" + std::to_string(l), l == 0 ? E + H : H, H);
    add(prefix + ".attn.w_s", Tensor::zeros({A, H}, true));
    add(prefix + ".attn.w_h", Tensor::zeros({A, H}, true));
    add(prefix + ".attn.b", Tensor::zeros({A}, true));
    add(prefix + ".attn.v", Tensor::zeros({A}, true));
    add(prefix + ".out.w", Tensor::zeros({V, H + E + H}, true));
    add(prefix + ".out.b", Tensor::zeros({V}, true));
  }

  Rng rng(seed);
  for (NamedTensor& t : tensors_) {
    const double bound = init_bound(t.tensor.shape());
    for (double& v : t.tensor.mutable_data()) v = rng.uniform(-bound, bound);
  }
}

double ModelParams::init_bound(const numgrad::Shape& shape) {
  const std::size_t fan_in = shape.empty() ? 1 : shape.back();
  return std::sqrt(3.0 / static_cast<double>(fan_in));
}

const Tensor& ModelParams::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("no parameter named " + name);
  return tensors_[it->second].tensor;
}

Tensor& ModelParams::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("no parameter named " + name);
  return tensors_[it->second].tensor;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const NamedTensor& t : tensors_) n += t.tensor.size();
  return n;
}

void ModelParams::add(std::string name, Tensor tensor) {
  if (index_.contains(name)) throw ContractError("duplicate parameter " + name);
  index_.emplace(name, tensors_.size());
  tensors_.push_back({std::move(name), std::move(tensor)});
}

void ModelParams::zero_grad() {
  for (NamedTensor& t : tensors_) t.tensor.zero_grad();
}

ModelParams ModelParams::clone() const {
  ModelParams copy;
  copy.config_ = config_;
  for (const NamedTensor& t : tensors_) copy.add(t.name, t.tensor.clone());
  return copy;
}

void ModelParams::copy_values_from(const ModelParams& other) {
  if (other.tensors_.size() != tensors_.size()) {
    throw ContractError("copy_values_from: parameter sets differ");
  }
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    auto src = other.tensors_[i].tensor.data();
    auto dst = tensors_[i].tensor.mutable_data();
    if (src.size() != dst.size() || other.tensors_[i].name != tensors_[i].name) {
      throw ContractError("copy_values_from: mismatch at " + tensors_[i].name);
    }
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

bool ModelParams::all_finite() const {
  for (const NamedTensor& t : tensors_)
    for (double v : t.tensor.data())
      if (!std::isfinite(v)) return false;
  return true;
}

std::vector<std::uint8_t> checkpoint_bytes(const Checkpoint& checkpoint) {
  const ModelParams& params = checkpoint.params;
  nlohmann::ordered_json header;
  header["format_version"] = Checkpoint::kFormatVersion;
  header["config"] = params.config().to_json();
  header["vocab"] = checkpoint.vocab.tokens();
  header["vocab_hash"] = checkpoint.vocab.hash();
  header["regime"] = checkpoint.regime;
  header["precision"] = checkpoint.precision == Precision::kDouble ? "f64" : "f32";
  header["conventions"] = {
      {"response_suffix", "<eos>"},
      {"backward_terminator", "<bos>"},
      {"gru", "r=s(Wr x+Ur h+br) z=s(Wz x+Uz h+bz) n=tanh(Wn x+Un(r*h)+bn) "
              "h'=(1-z)h+z n"}};
  const std::string header_text = header.dump();

  Writer w;
  w.put_bytes(std::string(kMagic, sizeof(kMagic)));
  w.put<std::uint32_t>(Checkpoint::kFormatVersion);
  w.put<std::uint64_t>(header_text.size());
  w.put_bytes(header_text);
  w.put<std::uint64_t>(params.tensors().size());
  const bool single = checkpoint.precision == Precision::kSingle;
  for (const NamedTensor& t : params.tensors()) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.name.size()));
    w.put_bytes(t.name);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.tensor.rank()));
    for (std::size_t d : t.tensor.shape()) w.put<std::uint64_t>(d);
    w.put<std::uint8_t>(single ? 4 : 8);
    for (double v : t.tensor.data()) {
      if (single) {
        w.put<float>(static_cast<float>(v));
      } else {
        w.put<double>(v);
      }
    }
  }
  return std::move(w.bytes);
}

void save_checkpoint(const Checkpoint& checkpoint,
                     const std::filesystem::path& path) {
  const auto bytes = checkpoint_bytes(checkpoint);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

Checkpoint checkpoint_from_bytes(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  if (r.get_string(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) {
    throw ParseError("not a checkpoint file (bad magic)");
  }
  const auto version = r.get<std::uint32_t>();
  if (version != Checkpoint::kFormatVersion) {
    throw ParseError("unsupported checkpoint format version " +
                     std::to_string(version));
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(r.get_string(r.get<std::uint64_t>()));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("checkpoint header: ") + e.what());
  }
  Checkpoint ckpt;
  ModelConfig config;
  try {
    ckpt.vocab = corpus::Vocab(header.at("vocab").get<std::vector<std::string>>());
    if (ckpt.vocab.hash() != header.at("vocab_hash").get<std::uint64_t>()) {
      throw ParseError("checkpoint vocab hash mismatch");
    }
    ckpt.regime = header.at("regime").get<std::string>();
    ckpt.precision = header.at("precision").get<std::string>() == "f32"
                         ? Precision::kSingle
                         : Precision::kDouble;
    config = ModelConfig::from_json(header.at("config"));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint header: ") + e.what());
  }
  ModelParams params(config, 0);
  const auto count = r.get<std::uint64_t>();
  if (count != params.tensors().size()) {
    throw ParseError("checkpoint holds " + std::to_string(count) +
                     " tensors, config expects " +
                     std::to_string(params.tensors().size()));
  }
  for (NamedTensor& t : params.tensors()) {
    const std::string name = r.get_string(r.get<std::uint32_t>());
    if (name != t.name) {
      throw ParseError("checkpoint tensor " + name + " where " + t.name +
                       " was expected");
    }
    const auto rank = r.get<std::uint32_t>();
    numgrad::Shape shape;
    for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(r.get<std::uint64_t>());
    if (shape != t.tensor.shape()) {
      throw ParseError("checkpoint tensor " + name + " has shape " +
                       numgrad::shape_string(shape));
    }
    const auto width = r.get<std::uint8_t>();
    if (width != 4 && width != 8) {
      throw ParseError("checkpoint tensor " + name + " has value width " +
                       std::to_string(width));
    }
    for (double& v : t.tensor.mutable_data()) {
      v = width == 8 ? r.get<double>() : static_cast<double>(r.get<float>());
    }
  }
  if (!r.done()) throw ParseError("trailing bytes after checkpoint tensors");
  ckpt.params = std::move(params);
  return ckpt;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return checkpoint_from_bytes(bytes);
}

}  // namespace profchat::model
