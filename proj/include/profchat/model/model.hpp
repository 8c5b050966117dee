#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "profchat/corpus/profile.hpp"
#include "profchat/corpus/vocab.hpp"
#include "profchat/model/params.hpp"
#include "profchat/numgrad/tape.hpp"

namespace profchat::model {

using corpus::IdSeq;
using corpus::TokenId;
using numgrad::Tape;

// fr: general forward decoder. b / f: backward and forward halves of the
// bidirectional decoder. The three share no parameters.
enum class DecoderId { kGeneral, kBackward, kForward };

std::string_view decoder_name(DecoderId id);
// Accepts "fr", "b", "f"; anything else is a ContractError.
DecoderId decoder_from_name(std::string_view name);

struct EncoderOutput {
  std::vector<Tensor> states;  // top-layer h_1..h_n
  Tensor matrix;               // [n x hidden]
  Tensor h_tilde;              // sum of states
};

EncoderOutput encode(Tape& tape, std::span<const TokenId> post,
                     const ModelParams& params);

// Profile keys and values as token ids.
struct ProfileIds {
  std::vector<TokenId> keys;
  std::vector<TokenId> values;
  std::size_t size() const { return keys.size(); }
};

// Values or keys missing from the vocab map to UNK.
ProfileIds profile_ids(const corpus::Profile& profile, const corpus::Vocab& vocab);

// W_p . h_tilde, before the sigmoid.
Tensor gate_logit(Tape& tape, const EncoderOutput& enc, const ModelParams& params);
// sigma(W_p . h_tilde) as a rank-0 tensor.
Tensor detect_profile_binary(Tape& tape, const EncoderOutput& enc,
                             const ModelParams& params);

struct KeySelection {
  Tensor scores;  // pre-softmax, one per key
  Tensor beta;    // softmax over keys
  std::size_t chosen = 0;
  TokenId value = corpus::Vocab::kUnk;
};

// score_i = u . tanh(W [h_tilde; k_i; v_i] + b), beta = softmax(scores),
// chosen = argmax with ties to the lowest index.
KeySelection select_profile_key(Tape& tape, const EncoderOutput& enc,
                                const ProfileIds& profile,
                                const ModelParams& params);

// Encoder states projected once per decoder, reused by every step.
struct AttentionMemory {
  DecoderId decoder = DecoderId::kGeneral;
  Tensor states_t;   // [hidden x n]
  Tensor projected;  // [n x attention_dim]
};

AttentionMemory prepare_attention(Tape& tape, const EncoderOutput& enc,
                                  const ModelParams& params, DecoderId decoder);

struct AttentionResult {
  Tensor context;  // sum_t alpha_t h_t
  Tensor weights;  // alpha, softmax over encoder positions
};

// alpha_t ∝ exp(v . tanh(W_s s + W_h h_t + b)).
AttentionResult attention(Tape& tape, const Tensor& state,
                          const AttentionMemory& memory, const ModelParams& params);

struct DecoderState {
  std::vector<Tensor> layers;
  const Tensor& top() const { return layers.back(); }
};

// Affine map of the final top-layer encoder state, one block per layer.
DecoderState initial_state(Tape& tape, const EncoderOutput& enc,
                           const ModelParams& params, DecoderId decoder);

struct StepOutput {
  Tensor logits;  // [vocab]; undefined when logits were not requested
  DecoderState state;
  Tensor alpha;
};

// c = attention(prev top state); s = GRU(prev, [E y_prev; c]);
// logits = W_o [s; E y_prev; c] + b_o.
StepOutput decoder_step(Tape& tape, DecoderId decoder, const DecoderState& prev,
                        TokenId prev_token, const AttentionMemory& memory,
                        const ModelParams& params, bool want_logits = true);

enum class DecodeMode { kGreedy, kSample };

struct DecodeOptions {
  DecodeMode mode = DecodeMode::kGreedy;
  std::uint64_t seed = 0;
  double temperature = 1.0;
  // Cap on the generated response length; 0 means the model's max_len.
  std::size_t max_len = 0;
};

struct GeneratedTokens {
  IdSeq tokens;
  std::vector<std::vector<double>> attention;  // one alpha per emitted token
};

// P^fr from BOS until EOS or the length cap. With `first_token`, that token
// is emitted first and decoding continues from it.
GeneratedTokens forward_decode(const EncoderOutput& enc, const ModelParams& params,
                               const DecodeOptions& options,
                               std::optional<TokenId> first_token = std::nullopt);

struct BidirectionalOutput {
  IdSeq backward;  // y^b in natural order
  IdSeq forward;   // y^f
  IdSeq response;  // y^b ++ [value] ++ y^f
  std::vector<std::vector<double>> attention;
};

// Backward decoder from the value until it emits BOS; then the forward
// decoder consumes y^b and the value as forced inputs and continues until EOS.
// PAD, BOS and EOS are rejected as values; UNK is accepted.
BidirectionalOutput bidirectional_decode(const EncoderOutput& enc, TokenId value,
                                         const ModelParams& params,
                                         const DecodeOptions& options);

struct PositionPrediction {
  std::size_t index = 0;  // 1-based
  double similarity = 0.0;
  bool value_is_unknown = false;
};

// argmax_j cos(E[y_j], E[value]) over non-reserved tokens, ties to the lowest
// j; a zero vector has cosine -1.
PositionPrediction predict_position(std::span<const TokenId> response,
                                    TokenId value, const ModelParams& params);

// Ties resolve to the lowest index.
std::size_t argmax(std::span<const double> values);

}  // namespace profchat::model
