#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "profchat/model/params.hpp"
#include "profchat/numgrad/tensor.hpp"
#include "profchat/rng.hpp"

namespace testing {

inline std::filesystem::path data_dir() { return PROFCHAT_DATA_DIR; }

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("profchat-test-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline profchat::numgrad::Tensor random_tensor(profchat::Rng& rng,
                                               profchat::numgrad::Shape shape,
                                               double lo = -1.0, double hi = 1.0,
                                               bool requires_grad = true) {
  std::vector<double> v(profchat::numgrad::shape_size(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return profchat::numgrad::Tensor::from(std::move(shape), std::move(v), requires_grad);
}

inline bool all_finite(const profchat::numgrad::Tensor& t) {
  for (double x : t.data())
    if (!std::isfinite(x)) return false;
  return true;
}

// The encoder ignores its input: every state is tanh(c) on dimension 0, so
// h~ = n * tanh(c) and the gate logit is w * n * tanh(c). Solving for w puts
// z_prob wherever the test needs it for a post of n tokens.
inline profchat::model::Checkpoint fixed_gate_checkpoint(double z, std::size_t post_len,
                                        const std::string& regime = "iccm") {
  profchat::model::Checkpoint ck;
  ck.vocab = profchat::corpus::Vocab({"<pad>", "<bos>", "<eos>", "<unk>", "what", "is", "your", "name",
                            "age", "wangzai", "three", "i", "am", "?"});
  profchat::model::ModelConfig c;
  c.vocab_size = ck.vocab.size();
  c.emb_dim = 4;
  c.hidden_dim = 6;
  c.num_keys = 2;
  c.max_len = 8;
  ck.params = profchat::model::ModelParams(c, 17);
  for (const char* name : {"encoder.l0.w_x", "encoder.l0.u_rz", "encoder.l0.u_n", "encoder.l0.b",
                           "detector.gate.w"})
    for (double& v : ck.params.get(name).mutable_data()) v = 0.0;
  const double cval = 0.8;
  auto b = ck.params.get("encoder.l0.b").mutable_data();
  for (std::size_t i = 0; i < c.hidden_dim; ++i) b[c.hidden_dim + i] = 40.0;  // z gate -> 1
  b[2 * c.hidden_dim] = cval;
  const double logit = std::log(z / (1.0 - z));
  ck.params.get("detector.gate.w").mutable_data()[0] =
      logit / (static_cast<double>(post_len) * std::tanh(cval));
  ck.regime = regime;
  return ck;
}

}  // namespace testing
