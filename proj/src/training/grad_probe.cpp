#include "profchat/training/grad_probe.hpp"

#include "profchat/model/params.hpp"
#include "profchat/training/losses.hpp"

namespace profchat::training {

model::ModelConfig toy_model_config() {
  model::ModelConfig c;
  c.vocab_size = 20;
  c.emb_dim = 4;
  c.hidden_dim = 8;
  c.num_layers = 1;
  c.num_keys = 3;
  c.max_len = 8;
  return c;
}

numgrad::GradCheckResult full_loss_grad_check(std::uint64_t seed, double alpha,
                                              double eps) {
  model::ModelParams params(toy_model_config(), seed);
  // Keys are ids 4..6 and their values 7..9.
  const ProfileIds profile{{4, 5, 6}, {7, 8, 9}};
  const TrainingPair general{{10, 11, 12}, {13, 14}, 0, std::nullopt, std::nullopt};
  const TrainingPair related{{15, 5, 16}, {17, 8, 18}, 1, 1, 2};
  Batch batch;
  batch.general = {&general};
  batch.profile_related = {&related};
  batch.binary = {&general, &related};
  auto loss = [&](Tape& tape) { return total_loss(tape, batch, profile, params, alpha); };
  return numgrad::grad_check(loss, params.tensors(), eps);
}

}  // namespace profchat::training
