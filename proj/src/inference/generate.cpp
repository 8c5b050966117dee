#include "profchat/inference/generate.hpp"

#include <cstdio>

#include "profchat/errors.hpp"

namespace profchat::inference {

using corpus::Vocab;

std::string variant_name(SystemVariant variant) {
  switch (variant) {
    case SystemVariant::kSeq2Seq: return "seq2seq";
    case SystemVariant::kSeq2SeqPV: return "seq2seq-pv";
    case SystemVariant::kSeq2SeqPVD: return "seq2seq-pvd";
    case SystemVariant::kICCMPos: return "iccm-pos";
    case SystemVariant::kICCM: return "iccm";
  }
  return "?";
}

std::optional<SystemVariant> variant_from_name(const std::string& name) {
  for (SystemVariant v : kAllVariants)
    if (variant_name(v) == name) return v;
  return std::nullopt;
}

std::string required_regime(SystemVariant variant) {
  return variant == SystemVariant::kICCMPos ? "iccm-pos" : "iccm";
}

std::string DecodeTrace::response_text() const { return corpus::join_tokens(response); }

nlohmann::ordered_json DecodeTrace::to_json() const {
  nlohmann::ordered_json j;
  j["variant"] = variant_name(variant);
  j["post"] = post;
  j["response"] = response_text();
  j["used_profile"] = used_profile;
  j["z_prob"] = z_prob;
  auto& dist = j["key_dist"] = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < beta.size(); ++i)
    dist.push_back({{"key", keys[i]}, {"prob", beta[i]}});
  j["key"] = chosen_key ? nlohmann::ordered_json(*chosen_key) : nullptr;
  j["value"] = value ? nlohmann::ordered_json(*value) : nullptr;
  j["y_b"] = y_b;
  j["y_f"] = y_f;
  return j;
}

std::string DecodeTrace::summary() const {
  char z[32];
  std::snprintf(z, sizeof(z), "%.4f", z_prob);
  std::string s = "[" + variant_name(variant) + " z=" + z +
                  (used_profile ? " profile" : " forward");
  if (chosen_key) s += " key=" + *chosen_key;
  if (value) s += " value=" + *value;
  return s + "]";
}

DecodeTrace generate(std::span<const std::string> post, const corpus::Profile& profile,
                     const model::Checkpoint& checkpoint, SystemVariant variant,
                     const model::DecodeOptions& options) {
  if (checkpoint.regime != required_regime(variant)) {
    throw ContractError("variant " + variant_name(variant) + " needs a checkpoint trained as '" +
                        required_regime(variant) + "', got '" + checkpoint.regime + "'");
  }
  if (post.empty()) throw ContractError("empty post");
  const model::ModelParams& params = checkpoint.params;
  const Vocab& vocab = checkpoint.vocab;

  DecodeTrace trace;
  trace.variant = variant;
  const std::size_t keep = std::min(post.size(), params.config().max_len);
  trace.post.assign(post.begin(), post.begin() + static_cast<std::ptrdiff_t>(keep));
  const corpus::IdSeq ids = vocab.encode(trace.post);

  numgrad::Tape tape(numgrad::Tape::Mode::kNoGrad);
  const model::EncoderOutput enc = model::encode(tape, ids, params);
  trace.z_prob = model::detect_profile_binary(tape, enc, params).item();

  auto forward_only = [&] {
    const model::GeneratedTokens out = model::forward_decode(enc, params, options);
    trace.y_f = vocab.decode(out.tokens);
    trace.response = trace.y_f;
    trace.attention = out.attention;
  };

  if (profile.empty()) throw ConfigError("empty profile");
  const model::ProfileIds pids = model::profile_ids(profile, vocab);
  const model::KeySelection sel = model::select_profile_key(tape, enc, pids, params);
  trace.keys = profile.keys();
  trace.beta.assign(sel.beta.data().begin(), sel.beta.data().end());
  // Seq2Seq records the detector but never routes through it.
  trace.used_profile = variant != SystemVariant::kSeq2Seq &&
                       trace.z_prob > params.config().p_z_threshold;
  if (!trace.used_profile) {
    forward_only();
    return trace;
  }
  trace.chosen_key = profile.key(sel.chosen);
  trace.value = profile.value(sel.chosen);

  switch (variant) {
    case SystemVariant::kSeq2SeqPV:
      trace.response = {*trace.value};
      break;
    case SystemVariant::kSeq2SeqPVD: {
      const model::GeneratedTokens out =
          model::forward_decode(enc, params, options, sel.value);
      trace.y_f = vocab.decode(std::span(out.tokens).subspan(1));
      trace.response = {*trace.value};
      trace.response.insert(trace.response.end(), trace.y_f.begin(), trace.y_f.end());
      trace.attention = out.attention;
      break;
    }
    default: {
      const model::BidirectionalOutput out =
          model::bidirectional_decode(enc, sel.value, params, options);
      trace.y_b = vocab.decode(out.backward);
      trace.y_f = vocab.decode(out.forward);
      trace.response = trace.y_b;
      trace.response.push_back(*trace.value);
      trace.response.insert(trace.response.end(), trace.y_f.begin(), trace.y_f.end());
      trace.attention = out.attention;
      break;
    }
  }
  return trace;
}

std::vector<DecodeTrace> run_session(std::span<const TokenSeq> posts,
                                     const corpus::Profile& profile,
                                     const model::Checkpoint& checkpoint,
                                     SystemVariant variant,
                                     const model::DecodeOptions& options) {
  std::vector<DecodeTrace> traces;
  traces.reserve(posts.size());
  for (const TokenSeq& post : posts)
    traces.push_back(generate(post, profile, checkpoint, variant, options));
  return traces;
}

}  // namespace profchat::inference
