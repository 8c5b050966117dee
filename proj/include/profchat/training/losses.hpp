#pragma once

#include <span>
#include <vector>

#include "profchat/corpus/corpus.hpp"
#include "profchat/model/model.hpp"

namespace profchat::training {

using corpus::TrainingPair;
using model::ModelParams;
using model::ProfileIds;
using numgrad::Tape;
using numgrad::Tensor;

// Pairs routed by membership. `general` pairs feed the P^fr term,
// `profile_related` pairs the P^bi term (anchored at position_label) and the
// key-selection term, `binary` pairs the gate term.
struct Batch {
  std::vector<const TrainingPair*> general;
  std::vector<const TrainingPair*> profile_related;
  std::vector<const TrainingPair*> binary;

  std::size_t size() const {
    return general.size() + profile_related.size() + binary.size();
  }
};

// -log P^fr(y | x) with EOS appended to y.
Tensor forward_sequence_loss(Tape& tape, const model::EncoderOutput& enc,
                             std::span<const corpus::TokenId> response,
                             const ModelParams& params);

// -log P^b(y^b | x, v) - log P^f(y^f | y^b, x, v) for the anchor at the
// 1-based `anchor` position: the backward chain predicts y_{t-1} .. y_1 then
// BOS, the forward chain consumes y_1 .. y_t and predicts y_{t+1} .. y_m
// then EOS.
Tensor bidirectional_sequence_loss(Tape& tape, const model::EncoderOutput& enc,
                                   std::span<const corpus::TokenId> response,
                                   std::size_t anchor, const ModelParams& params);

// Number of predicted tokens behind each term (EOS and BOS included).
std::size_t forward_target_count(const TrainingPair& pair);
std::size_t bidirectional_target_count(const TrainingPair& pair);

// L1: sum of the P^fr terms of `general` and the P^bi terms of
// `profile_related`. Teacher forcing throughout.
Tensor loss_generation(Tape& tape, const Batch& batch, const ModelParams& params);

// L2: -sum log P(z | x) over `binary` - sum log beta_k over
// `profile_related` with k the key label.
Tensor loss_detector(Tape& tape, const Batch& batch, const ProfileIds& profile,
                     const ModelParams& params);

// L1 + alpha * L2.
Tensor total_loss(Tape& tape, const Batch& batch, const ProfileIds& profile,
                  const ModelParams& params, double alpha);

}  // namespace profchat::training
