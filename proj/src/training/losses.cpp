#include "profchat/training/losses.hpp"

#include "profchat/errors.hpp"

namespace profchat::training {

namespace {

using corpus::Vocab;
using model::DecoderId;

// Sums `terms`; an empty list is a constant zero.
Tensor sum_terms(Tape& tape, const std::vector<Tensor>& terms) {
  if (terms.empty()) return Tensor::scalar(0.0);
  Tensor total = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) total = tape.add(total, terms[i]);
  return total;
}

// Runs `decoder` over forced `inputs`; inputs before `first_scored` only
// update the state, every later input predicts the matching target.
Tensor chain_loss(Tape& tape, const model::EncoderOutput& enc, DecoderId decoder,
                  std::span<const corpus::TokenId> inputs, std::size_t first_scored,
                  std::span<const corpus::TokenId> targets,
                  const ModelParams& params) {
  const model::AttentionMemory memory =
      model::prepare_attention(tape, enc, params, decoder);
  model::DecoderState state = model::initial_state(tape, enc, params, decoder);
  std::vector<Tensor> terms;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const bool scored = i >= first_scored;
    model::StepOutput step =
        model::decoder_step(tape, decoder, state, inputs[i], memory, params, scored);
    if (scored) terms.push_back(tape.cross_entropy(step.logits, targets[i - first_scored]));
    state = std::move(step.state);
  }
  return sum_terms(tape, terms);
}

}  // namespace

Tensor forward_sequence_loss(Tape& tape, const model::EncoderOutput& enc,
                             std::span<const corpus::TokenId> response,
                             const ModelParams& params) {
  corpus::IdSeq inputs{Vocab::kBos};
  inputs.insert(inputs.end(), response.begin(), response.end());
  corpus::IdSeq targets(response.begin(), response.end());
  targets.push_back(Vocab::kEos);
  return chain_loss(tape, enc, DecoderId::kGeneral, inputs, 0, targets, params);
}

Tensor bidirectional_sequence_loss(Tape& tape, const model::EncoderOutput& enc,
                                   std::span<const corpus::TokenId> response,
                                   std::size_t anchor, const ModelParams& params) {
  if (anchor < 1 || anchor > response.size()) {
    throw ContractError("anchor position " + std::to_string(anchor) +
                        " outside response of length " +
                        std::to_string(response.size()));
  }
  const std::size_t t = anchor - 1;

  // Backward: inputs y_t, y_{t-1}, ..., y_1; targets y_{t-1}, ..., y_1, BOS.
  corpus::IdSeq back_inputs, back_targets;
  for (std::size_t j = t + 1; j-- > 0;) back_inputs.push_back(response[j]);
  for (std::size_t j = t; j-- > 0;) back_targets.push_back(response[j]);
  back_targets.push_back(Vocab::kBos);

  // Forward: inputs y_1, ..., y_m; scoring starts at the anchor input, whose
  // target is y_{t+1} (or EOS).
  corpus::IdSeq fwd_inputs(response.begin(), response.end());
  corpus::IdSeq fwd_targets(response.begin() + t + 1, response.end());
  fwd_targets.push_back(Vocab::kEos);

  Tensor backward = chain_loss(tape, enc, DecoderId::kBackward, back_inputs, 0,
                               back_targets, params);
  Tensor forward =
      chain_loss(tape, enc, DecoderId::kForward, fwd_inputs, t, fwd_targets, params);
  return tape.add(backward, forward);
}

std::size_t forward_target_count(const TrainingPair& pair) {
  return pair.response.size() + 1;
}

std::size_t bidirectional_target_count(const TrainingPair& pair) {
  return pair.response.size() + 1;
}

Tensor loss_generation(Tape& tape, const Batch& batch, const ModelParams& params) {
  std::vector<Tensor> terms;
  for (const TrainingPair* pair : batch.general) {
    const model::EncoderOutput enc = model::encode(tape, pair->post, params);
    terms.push_back(forward_sequence_loss(tape, enc, pair->response, params));
  }
  for (const TrainingPair* pair : batch.profile_related) {
    if (!pair->position_label) {
      throw ContractError(
          "profile-related pair has no position label; run the position detector "
          "first");
    }
    const model::EncoderOutput enc = model::encode(tape, pair->post, params);
    terms.push_back(bidirectional_sequence_loss(tape, enc, pair->response,
                                                *pair->position_label, params));
  }
  return sum_terms(tape, terms);
}

Tensor loss_detector(Tape& tape, const Batch& batch, const ProfileIds& profile,
                     const ModelParams& params) {
  std::vector<Tensor> terms;
  for (const TrainingPair* pair : batch.binary) {
    if (!pair->z_label) throw ContractError("binary pair has no z label");
    const model::EncoderOutput enc = model::encode(tape, pair->post, params);
    terms.push_back(
        tape.sigmoid_cross_entropy(model::gate_logit(tape, enc, params), *pair->z_label));
  }
  for (const TrainingPair* pair : batch.profile_related) {
    if (!pair->key_label) throw ContractError("profile-related pair has no key label");
    if (*pair->key_label >= profile.size()) {
      throw ContractError("key label " + std::to_string(*pair->key_label) +
                          " outside profile of " + std::to_string(profile.size()) +
                          " keys");
    }
    const model::EncoderOutput enc = model::encode(tape, pair->post, params);
    const model::KeySelection sel = model::select_profile_key(tape, enc, profile, params);
    // With a one-hot target, -sum_j beta_hat_j log beta_j is the cross
    // entropy of the pre-softmax scores.
    terms.push_back(tape.cross_entropy(sel.scores, *pair->key_label));
  }
  return sum_terms(tape, terms);
}

Tensor total_loss(Tape& tape, const Batch& batch, const ProfileIds& profile,
                  const ModelParams& params, double alpha) {
  if (alpha < 0.0) throw ConfigError("alpha must be non-negative");
  Tensor l1 = loss_generation(tape, batch, params);
  Tensor l2 = loss_detector(tape, batch, profile, params);
  return tape.add(l1, tape.scale(l2, alpha));
}

}  // namespace profchat::training
