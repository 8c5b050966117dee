#pragma once

#include <cstdint>

#include "profchat/model/config.hpp"
#include "profchat/numgrad/grad_check.hpp"

namespace profchat::training {

// Toy dims: vocab 20, emb 4, hidden 8, 3 profile keys.
model::ModelConfig toy_model_config();

// Gradient check of L1 + alpha * L2 on two pairs at toy dims: one general
// pair (also a gate negative) and one profile-related pair (also a gate
// positive). Every parameter entry is checked.
numgrad::GradCheckResult full_loss_grad_check(std::uint64_t seed, double alpha = 1.0,
                                              double eps = numgrad::kDefaultGradCheckEps);

}  // namespace profchat::training
