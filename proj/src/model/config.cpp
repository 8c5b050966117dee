#include "profchat/model/config.hpp"

#include "profchat/errors.hpp"

namespace profchat::model {

void ModelConfig::validate() const {
  if (emb_dim < 1 || hidden_dim < 1 || num_layers < 1) {
    throw ConfigError("model dims must all be at least 1");
  }
  if (vocab_size < 5) {
    throw ConfigError("vocab_size must cover the reserved tokens plus one, got " +
                      std::to_string(vocab_size));
  }
  if (num_keys < 1) throw ConfigError("num_keys must be at least 1");
  if (max_len < 1) throw ConfigError("max_len must be at least 1");
  if (!(p_z_threshold > 0.0 && p_z_threshold < 1.0)) {
    throw ConfigError("p_z_threshold must lie in (0, 1)");
  }
}

nlohmann::ordered_json ModelConfig::to_json() const {
  nlohmann::ordered_json doc;
  doc["emb_dim"] = emb_dim;
  doc["hidden_dim"] = hidden_dim;
  doc["num_layers"] = num_layers;
  doc["vocab_size"] = vocab_size;
  doc["num_keys"] = num_keys;
  doc["max_len"] = max_len;
  doc["p_z_threshold"] = p_z_threshold;
  doc["tie_value_embeddings"] = tie_value_embeddings;
  return doc;
}

ModelConfig ModelConfig::from_json(const nlohmann::json& doc) {
  ModelConfig c;
  try {
    c.emb_dim = doc.value("emb_dim", c.emb_dim);
    c.hidden_dim = doc.value("hidden_dim", c.hidden_dim);
    c.num_layers = doc.value("num_layers", c.num_layers);
    c.vocab_size = doc.value("vocab_size", c.vocab_size);
    c.num_keys = doc.value("num_keys", c.num_keys);
    c.max_len = doc.value("max_len", c.max_len);
    c.p_z_threshold = doc.value("p_z_threshold", c.p_z_threshold);
    c.tie_value_embeddings =
        doc.value("tie_value_embeddings", c.tie_value_embeddings);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  return c;
}

}  // namespace profchat::model
