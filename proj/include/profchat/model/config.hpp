#pragma once

#include <cstddef>
#include <string>

#include <json.hpp>

namespace profchat::model {

struct ModelConfig {
  std::size_t emb_dim = 32;
  std::size_t hidden_dim = 64;
  std::size_t num_layers = 1;
  std::size_t vocab_size = 0;
  std::size_t num_keys = 6;
  std::size_t max_len = 16;
  double p_z_threshold = 0.5;
  // Use the word embedding table for profile values instead of a separate
  // value table.
  bool tie_value_embeddings = false;

  // Attention and key-selector hidden widths follow hidden_dim.
  std::size_t attention_dim() const { return hidden_dim; }
  std::size_t key_mlp_dim() const { return hidden_dim; }

  void validate() const;
  nlohmann::ordered_json to_json() const;
  static ModelConfig from_json(const nlohmann::json& doc);

  bool operator==(const ModelConfig&) const = default;
};

}  // namespace profchat::model
