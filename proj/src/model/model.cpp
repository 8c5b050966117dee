#include "profchat/model/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "profchat/errors.hpp"
#include "profchat/rng.hpp"

namespace profchat::model {

namespace {

using corpus::Vocab;

struct GruWeights {
  const Tensor& w_x;
  const Tensor& u_rz;
  const Tensor& u_n;
  const Tensor& b;
};

GruWeights gru_weights(const ModelParams& p, const std::string& prefix) {
  return {p.get(prefix + ".w_x"), p.get(prefix + ".u_rz"), p.get(prefix + ".u_n"),
          p.get(prefix + ".b")};
}

// r = sig(Wr x + Ur h + br); z = sig(Wz x + Uz h + bz);
// n = tanh(Wn x + Un (r*h) + bn); h' = (1 - z) h + z n
Tensor gru_cell(Tape& tape, const GruWeights& w, const Tensor& x, const Tensor& h) {
  const std::size_t H = h.size();
  Tensor gx = tape.add(tape.matvec(w.w_x, x), w.b);
  Tensor gh = tape.matvec(w.u_rz, h);
  Tensor r = tape.sigmoid(tape.add(tape.slice(gx, 0, H), tape.slice(gh, 0, H)));
  Tensor z = tape.sigmoid(tape.add(tape.slice(gx, H, H), tape.slice(gh, H, H)));
  Tensor n = tape.tanh(tape.add(tape.slice(gx, 2 * H, H),
                                tape.matvec(w.u_n, tape.mul(r, h))));
  return tape.add(h, tape.mul(z, tape.sub(n, h)));
}

std::string decoder_prefix(DecoderId id) {
  return "decoder." + std::string(decoder_name(id));
}

const Tensor& value_table(const ModelParams& params) {
  return params.config().tie_value_embeddings ? params.get("embed.word")
                                              : params.get("embed.value");
}

void check_token(TokenId token, const ModelParams& params, const char* what) {
  if (token >= params.config().vocab_size) {
    throw ContractError(std::string(what) + " token id " + std::to_string(token) +
                        " outside vocab of " +
                        std::to_string(params.config().vocab_size));
  }
}

TokenId choose_token(const Tensor& logits, DecoderId decoder,
                     const DecodeOptions& options, Rng& rng) {
  std::vector<double> scores(logits.data().begin(), logits.data().end());
  const double blocked = -std::numeric_limits<double>::infinity();
  scores[Vocab::kPad] = blocked;
  scores[decoder == DecoderId::kBackward ? Vocab::kEos : Vocab::kBos] = blocked;
  if (options.mode == DecodeMode::kGreedy) {
    return static_cast<TokenId>(argmax(scores));
  }
  if (!(options.temperature > 0.0)) {
    throw DomainError("sampling temperature must be positive");
  }
  const double top = *std::max_element(scores.begin(), scores.end());
  double total = 0.0;
  for (double& s : scores) {
    s = std::isinf(s) ? 0.0 : std::exp((s - top) / options.temperature);
    total += s;
  }
  double draw = rng.uniform() * total;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (scores[i] == 0.0) continue;
    draw -= scores[i];
    if (draw < 0.0) return static_cast<TokenId>(i);
  }
  return static_cast<TokenId>(argmax(scores));
}

std::vector<double> to_vector(const Tensor& t) {
  return {t.data().begin(), t.data().end()};
}

}  // namespace

std::size_t argmax(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = i;
  return best;
}

std::string_view decoder_name(DecoderId id) {
  switch (id) {
    case DecoderId::kGeneral:
      return "fr";
    case DecoderId::kBackward:
      return "b";
    case DecoderId::kForward:
      return "f";
  }
  throw ContractError("unknown decoder id");
}

DecoderId decoder_from_name(std::string_view name) {
  if (name == "fr") return DecoderId::kGeneral;
  if (name == "b") return DecoderId::kBackward;
  if (name == "f") return DecoderId::kForward;
  throw ContractError("unknown decoder id '" + std::string(name) + "'");
}

EncoderOutput encode(Tape& tape, std::span<const TokenId> post,
                     const ModelParams& params) {
  const ModelConfig& cfg = params.config();
  if (post.empty()) throw DomainError("encode: empty post");
  if (post.size() > cfg.max_len) {
    throw DomainError("encode: post of length " + std::to_string(post.size()) +
                      " exceeds max_len " + std::to_string(cfg.max_len));
  }
  const Tensor& embed = params.get("embed.word");
  std::vector<Tensor> inputs;
  for (TokenId t : post) {
    check_token(t, params, "post");
    inputs.push_back(tape.row(embed, t));
  }
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    const GruWeights w = gru_weights(params, "encoder.l" + std::to_string(l));
    Tensor h = Tensor::zeros({cfg.hidden_dim});
    std::vector<Tensor> outputs;
    for (const Tensor& x : inputs) {
      h = gru_cell(tape, w, x, h);
      outputs.push_back(h);
    }
    inputs = std::move(outputs);
  }
  EncoderOutput out;
  out.states = std::move(inputs);
  out.matrix = tape.stack(out.states);
  out.h_tilde = out.states.front();
  for (std::size_t i = 1; i < out.states.size(); ++i)
    out.h_tilde = tape.add(out.h_tilde, out.states[i]);
  return out;
}

ProfileIds profile_ids(const corpus::Profile& profile, const corpus::Vocab& vocab) {
  ProfileIds ids;
  for (const auto& [key, value] : profile.entries()) {
    ids.keys.push_back(vocab.id(key));
    ids.values.push_back(vocab.id(value));
  }
  return ids;
}

Tensor gate_logit(Tape& tape, const EncoderOutput& enc, const ModelParams& params) {
  return tape.matvec(params.get("detector.gate.w"), enc.h_tilde);
}

Tensor detect_profile_binary(Tape& tape, const EncoderOutput& enc,
                             const ModelParams& params) {
  return tape.sum(tape.sigmoid(gate_logit(tape, enc, params)));
}

KeySelection select_profile_key(Tape& tape, const EncoderOutput& enc,
                                const ProfileIds& profile,
                                const ModelParams& params) {
  if (profile.size() == 0) throw ConfigError("select_profile_key: empty profile");
  const Tensor& key_table = params.get("embed.key");
  const Tensor& values = value_table(params);
  const Tensor& w = params.get("detector.key.w");
  const Tensor& b = params.get("detector.key.b");
  const Tensor& u = params.get("detector.key.u");
  std::vector<Tensor> scores;
  for (std::size_t i = 0; i < profile.size(); ++i) {
    check_token(profile.keys[i], params, "profile key");
    check_token(profile.values[i], params, "profile value");
    Tensor features = tape.concat({enc.h_tilde, tape.row(key_table, profile.keys[i]),
                                   tape.row(values, profile.values[i])});
    scores.push_back(tape.dot(u, tape.tanh(tape.add(tape.matvec(w, features), b))));
  }
  KeySelection sel;
  sel.scores = tape.concat(scores);
  sel.beta = tape.softmax(sel.scores);
  sel.chosen = argmax(sel.beta.data());
  sel.value = profile.values[sel.chosen];
  return sel;
}

AttentionMemory prepare_attention(Tape& tape, const EncoderOutput& enc,
                                  const ModelParams& params, DecoderId decoder) {
  const std::string prefix = decoder_prefix(decoder);
  AttentionMemory mem;
  mem.decoder = decoder;
  mem.states_t = tape.transpose(enc.matrix);
  mem.projected =
      tape.matmul(enc.matrix, tape.transpose(params.get(prefix + ".attn.w_h")));
  return mem;
}

AttentionResult attention(Tape& tape, const Tensor& state,
                          const AttentionMemory& memory, const ModelParams& params) {
  const std::string prefix = decoder_prefix(memory.decoder);
  Tensor query = tape.add(tape.matvec(params.get(prefix + ".attn.w_s"), state),
                          params.get(prefix + ".attn.b"));
  Tensor hidden = tape.tanh(tape.add_rows(memory.projected, query));
  Tensor scores = tape.matvec(hidden, params.get(prefix + ".attn.v"));
  AttentionResult out;
  out.weights = tape.softmax(scores);
  out.context = tape.matvec(memory.states_t, out.weights);
  return out;
}

DecoderState initial_state(Tape& tape, const EncoderOutput& enc,
                           const ModelParams& params, DecoderId decoder) {
  const std::string prefix = decoder_prefix(decoder);
  const std::size_t H = params.config().hidden_dim;
  Tensor all = tape.add(tape.matvec(params.get(prefix + ".init.w"), enc.states.back()),
                        params.get(prefix + ".init.b"));
  DecoderState state;
  for (std::size_t l = 0; l < params.config().num_layers; ++l)
    state.layers.push_back(tape.slice(all, l * H, H));
  return state;
}

StepOutput decoder_step(Tape& tape, DecoderId decoder, const DecoderState& prev,
                        TokenId prev_token, const AttentionMemory& memory,
                        const ModelParams& params, bool want_logits) {
  if (memory.decoder != decoder) {
    throw ContractError("decoder_step: attention memory prepared for decoder " +
                        std::string(decoder_name(memory.decoder)));
  }
  check_token(prev_token, params, "previous");
  const std::string prefix = decoder_prefix(decoder);
  Tensor embedded = tape.row(params.get("embed.word"), prev_token);
  AttentionResult attn = attention(tape, prev.top(), memory, params);

  StepOutput out;
  Tensor input = tape.concat({embedded, attn.context});
  for (std::size_t l = 0; l < prev.layers.size(); ++l) {
    const GruWeights w = gru_weights(params, prefix + ".l" + std::to_string(l));
    Tensor h = gru_cell(tape, w, input, prev.layers[l]);
    out.state.layers.push_back(h);
    input = h;
  }
  if (want_logits) {
    Tensor features = tape.concat({out.state.top(), embedded, attn.context});
    out.logits = tape.add(tape.matvec(params.get(prefix + ".out.w"), features),
                          params.get(prefix + ".out.b"));
  }
  out.alpha = attn.weights;
  return out;
}

GeneratedTokens forward_decode(const EncoderOutput& enc, const ModelParams& params,
                               const DecodeOptions& options,
                               std::optional<TokenId> first_token) {
  Tape tape(Tape::Mode::kNoGrad);
  Rng rng(options.seed);
  const std::size_t cap = options.max_len ? options.max_len : params.config().max_len;
  const AttentionMemory memory =
      prepare_attention(tape, enc, params, DecoderId::kGeneral);
  DecoderState state = initial_state(tape, enc, params, DecoderId::kGeneral);
  GeneratedTokens out;
  TokenId prev = Vocab::kBos;
  if (first_token && cap > 0) {
    check_token(*first_token, params, "first");
    StepOutput step = decoder_step(tape, DecoderId::kGeneral, state, prev, memory,
                                   params, false);
    state = std::move(step.state);
    out.tokens.push_back(*first_token);
    out.attention.push_back(to_vector(step.alpha));
    prev = *first_token;
  }
  while (out.tokens.size() < cap) {
    StepOutput step =
        decoder_step(tape, DecoderId::kGeneral, state, prev, memory, params);
    const TokenId next = choose_token(step.logits, DecoderId::kGeneral, options, rng);
    if (next == Vocab::kEos) break;
    out.tokens.push_back(next);
    out.attention.push_back(to_vector(step.alpha));
    state = std::move(step.state);
    prev = next;
  }
  return out;
}

BidirectionalOutput bidirectional_decode(const EncoderOutput& enc, TokenId value,
                                         const ModelParams& params,
                                         const DecodeOptions& options) {
  // UNK is a legal anchor: it stands for a profile value outside the vocab.
  if (value == Vocab::kPad || value == Vocab::kBos || value == Vocab::kEos) {
    throw ContractError("bidirectional_decode: value must not be PAD, BOS or EOS");
  }
  check_token(value, params, "value");
  Tape tape(Tape::Mode::kNoGrad);
  Rng rng(options.seed);
  const std::size_t cap = options.max_len ? options.max_len : params.config().max_len;
  BidirectionalOutput out;

  {
    const AttentionMemory memory =
        prepare_attention(tape, enc, params, DecoderId::kBackward);
    DecoderState state = initial_state(tape, enc, params, DecoderId::kBackward);
    TokenId prev = value;
    while (out.backward.size() + 1 < cap) {
      StepOutput step =
          decoder_step(tape, DecoderId::kBackward, state, prev, memory, params);
      const TokenId next = choose_token(step.logits, DecoderId::kBackward, options, rng);
      if (next == Vocab::kBos) break;
      out.backward.push_back(next);
      out.attention.push_back(to_vector(step.alpha));
      state = std::move(step.state);
      prev = next;
    }
    std::reverse(out.backward.begin(), out.backward.end());
    std::reverse(out.attention.begin(), out.attention.end());
  }

  {
    const AttentionMemory memory =
        prepare_attention(tape, enc, params, DecoderId::kForward);
    DecoderState state = initial_state(tape, enc, params, DecoderId::kForward);
    for (TokenId forced : out.backward) {
      state = decoder_step(tape, DecoderId::kForward, state, forced, memory, params,
                           false)
                  .state;
    }
    TokenId prev = value;
    while (out.backward.size() + 1 + out.forward.size() < cap) {
      StepOutput step =
          decoder_step(tape, DecoderId::kForward, state, prev, memory, params);
      const TokenId next = choose_token(step.logits, DecoderId::kForward, options, rng);
      if (next == Vocab::kEos) break;
      out.forward.push_back(next);
      out.attention.push_back(to_vector(step.alpha));
      state = std::move(step.state);
      prev = next;
    }
  }

  out.response = out.backward;
  out.response.push_back(value);
  out.response.insert(out.response.end(), out.forward.begin(), out.forward.end());
  return out;
}

PositionPrediction predict_position(std::span<const TokenId> response, TokenId value,
                                    const ModelParams& params) {
  check_token(value, params, "value");
  const Tensor& embed = params.get("embed.word");
  const std::size_t E = params.config().emb_dim;
  auto row = [&](TokenId t) { return embed.data().subspan(t * E, E); };
  auto norm = [](std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
  };
  const auto target = row(value);
  const double target_norm = norm(target);

  PositionPrediction best;
  best.value_is_unknown = value == Vocab::kUnk;
  bool found = false;
  for (std::size_t j = 0; j < response.size(); ++j) {
    const TokenId t = response[j];
    check_token(t, params, "response");
    if (Vocab::is_reserved(t)) continue;
    const auto candidate = row(t);
    const double cn = norm(candidate);
    double cosine = -1.0;
    if (cn > 0.0 && target_norm > 0.0) {
      double dot = 0.0;
      for (std::size_t k = 0; k < E; ++k) dot += candidate[k] * target[k];
      cosine = dot / (cn * target_norm);
    }
    if (!found || cosine > best.similarity) {
      found = true;
      best.index = j + 1;
      best.similarity = cosine;
    }
  }
  if (!found) {
    throw NoCandidateError("predict_position: response holds only reserved tokens");
  }
  return best;
}

}  // namespace profchat::model
