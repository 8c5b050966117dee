#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "profchat/corpus/corpus.hpp"
#include "profchat/inference/generate.hpp"
#include "profchat/model/model.hpp"

namespace profchat::eval {

using corpus::TrainingPair;

struct DetectorDecision {
  double z_prob = 0.0;
  std::size_t key = 0;
};

struct DetectorAccuracy {
  double binary_acc = 0.0;
  // Hits need the gate to fire and the key to match, over all z=1 examples.
  double key_acc_cascaded = 0.0;
  // Gate recall on z=1 examples; key_acc_cascaded never exceeds it.
  double positive_gate_acc = 0.0;
  std::size_t examples = 0;
  std::size_t positives = 0;
};

using DetectorFn = std::function<DetectorDecision(const TrainingPair&)>;

// Every pair needs z_label and every positive a key_label. Gate fires on
// z_prob > threshold.
DetectorAccuracy detector_accuracy(std::span<const TrainingPair> data,
                                   const DetectorFn& detector, double threshold = 0.5);
DetectorAccuracy detector_accuracy(std::span<const TrainingPair> data,
                                   const model::ProfileIds& profile,
                                   const model::ModelParams& params);

struct PositionExample {
  std::string key;
  corpus::IdSeq response;
  corpus::TokenId value = corpus::Vocab::kUnk;
  std::size_t gold = 0;  // 1-based
};

struct KeyAccuracy {
  std::string key;
  std::size_t correct = 0;
  std::size_t total = 0;
  double accuracy = 0.0;
};

struct PositionReport {
  std::vector<KeyAccuracy> per_key;  // in `keys` order, empty keys omitted
  std::vector<std::string> warnings;
  double overall = 0.0;

  std::optional<double> accuracy(const std::string& key) const;
};

PositionReport position_accuracy(std::span<const PositionExample> examples,
                                 std::span<const std::string> keys,
                                 const model::ModelParams& params);

// Examples whose anchor is the profile value of each pair's key and whose
// gold is its position label.
std::vector<PositionExample> profile_position_examples(
    std::span<const TrainingPair> pairs, const model::ProfileIds& profile,
    std::span<const std::string> keys);

struct Session {
  std::string key;
  std::vector<inference::DecodeTrace> traces;
};

struct SessionProxies {
  double consistency_rate = 0.0;
  double variety_rate = 0.0;
  std::size_t sessions = 0;
};

enum class ConsistencyScope {
  kAllResponses,  // every response in the session is judged
  kGateFired,     // only responses routed through the profile
};

// Consistency: judged responses contain the profile's value for the session
// key and no other token of that key's lexicon. Variety: all responses are
// pairwise distinct.
SessionProxies session_proxies(std::span<const Session> sessions,
                               const corpus::Profile& profile,
                               std::span<const corpus::KeySpec> keys,
                               ConsistencyScope scope = ConsistencyScope::kAllResponses);

struct SessionSpec {
  std::string key;
  std::vector<corpus::TokenSeq> posts;
};

// `per_key` sessions for each key, each holding `size` positive posts of that
// key drawn from `pool` that ask different questions: their cores after
// strip_fillers are pairwise distinct. Keys with fewer distinct cores than
// `size` are skipped.
std::vector<SessionSpec> build_sessions(std::span<const corpus::TextPair> pool,
                                        std::span<const corpus::KeySpec> keys,
                                        std::span<const corpus::TokenSeq> fillers,
                                        std::size_t per_key, std::size_t size,
                                        std::uint64_t seed);

std::vector<Session> run_sessions(std::span<const SessionSpec> specs,
                                  const corpus::Profile& profile,
                                  const model::Checkpoint& checkpoint,
                                  inference::SystemVariant variant);

// Fixed preamble and reference footer shared by every report.
nlohmann::ordered_json report_header();
nlohmann::ordered_json report_footer();

}  // namespace profchat::eval
