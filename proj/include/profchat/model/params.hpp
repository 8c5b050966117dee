#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "profchat/corpus/vocab.hpp"
#include "profchat/model/config.hpp"
#include "profchat/numgrad/grad_check.hpp"
#include "profchat/numgrad/tensor.hpp"

namespace profchat::model {

using numgrad::NamedTensor;
using numgrad::Tensor;

// Named parameter registry. Registration order is the serialization order.
class ModelParams {
 public:
  ModelParams() = default;
  // Registers every tensor the config needs and draws them from
  // U(-sqrt(3/n), sqrt(3/n)) with n the fan-in (column count of a matrix,
  // length of a vector).
  ModelParams(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }

  const Tensor& get(const std::string& name) const;
  Tensor& get(const std::string& name);
  bool contains(const std::string& name) const { return index_.contains(name); }
  std::span<NamedTensor> tensors() { return tensors_; }
  std::span<const NamedTensor> tensors() const { return tensors_; }
  std::size_t parameter_count() const;

  void add(std::string name, Tensor tensor);
  void zero_grad();
  // Independent copy of every value.
  ModelParams clone() const;
  void copy_values_from(const ModelParams& other);
  bool all_finite() const;

  static double init_bound(const numgrad::Shape& shape);

 private:
  ModelConfig config_;
  std::vector<NamedTensor> tensors_;
  std::map<std::string, std::size_t> index_;
};

enum class Precision { kDouble, kSingle };

// Everything needed to serve a model without its corpus.
struct Checkpoint {
  static constexpr std::uint32_t kFormatVersion = 1;

  ModelParams params;
  corpus::Vocab vocab;
  // "iccm" (position-detector anchors) or "iccm-pos" (random anchors).
  std::string regime = "iccm";
  Precision precision = Precision::kDouble;
};

// Layout: magic "PCHKPT01", u32 format version, u64 header length, header
// JSON {format_version, config, vocab, vocab_hash, regime, precision,
// conventions}, u64 tensor count, then per tensor u32 name length, name,
// u32 rank, u64 dims, u8 bytes-per-value and the row-major values. All
// integers and floats little-endian.
void save_checkpoint(const Checkpoint& checkpoint,
                     const std::filesystem::path& path);
std::vector<std::uint8_t> checkpoint_bytes(const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);
Checkpoint checkpoint_from_bytes(std::span<const std::uint8_t> bytes);

}  // namespace profchat::model
