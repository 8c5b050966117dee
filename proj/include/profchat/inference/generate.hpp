#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "profchat/corpus/corpus.hpp"
#include "profchat/corpus/profile.hpp"
#include "profchat/model/model.hpp"
#include "profchat/model/params.hpp"

namespace profchat::inference {

using corpus::TokenSeq;

enum class SystemVariant { kSeq2Seq, kSeq2SeqPV, kSeq2SeqPVD, kICCMPos, kICCM };

inline constexpr SystemVariant kAllVariants[] = {
    SystemVariant::kSeq2Seq, SystemVariant::kSeq2SeqPV, SystemVariant::kSeq2SeqPVD,
    SystemVariant::kICCMPos, SystemVariant::kICCM};

// "seq2seq", "seq2seq-pv", "seq2seq-pvd", "iccm-pos", "iccm".
std::string variant_name(SystemVariant variant);
std::optional<SystemVariant> variant_from_name(const std::string& name);
// Training regime the variant's checkpoint must carry.
std::string required_regime(SystemVariant variant);

struct DecodeTrace {
  SystemVariant variant = SystemVariant::kICCM;
  TokenSeq post;         // after tokenization and truncation
  double z_prob = 0.0;
  bool used_profile = false;  // z_prob > threshold; exactly 0.5 stays forward
  std::vector<std::string> keys;
  std::vector<double> beta;   // over keys; empty for Seq2Seq
  std::optional<std::string> chosen_key;
  std::optional<std::string> value;
  TokenSeq y_b;
  TokenSeq y_f;
  TokenSeq response;
  std::vector<std::vector<double>> attention;

  std::string response_text() const;
  nlohmann::ordered_json to_json() const;
  // Single line: variant, z_prob, routing, key and value.
  std::string summary() const;
};

// Runs the gated pipeline. Posts longer than the model's max_len keep their
// first max_len tokens; unknown words map to UNK. The anchor in the response
// is the profile value as written, even when it is outside the vocab.
DecodeTrace generate(std::span<const std::string> post, const corpus::Profile& profile,
                     const model::Checkpoint& checkpoint, SystemVariant variant,
                     const model::DecodeOptions& options = {});

std::vector<DecodeTrace> run_session(std::span<const TokenSeq> posts,
                                     const corpus::Profile& profile,
                                     const model::Checkpoint& checkpoint,
                                     SystemVariant variant,
                                     const model::DecodeOptions& options = {});

}  // namespace profchat::inference
