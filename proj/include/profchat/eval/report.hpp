#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "profchat/eval/metrics.hpp"

namespace profchat::eval {

struct EvalOptions {
  std::size_t sessions_per_key = 40;
  std::size_t session_size = 3;
  std::uint64_t session_seed = 11;
  ConsistencyScope scope = ConsistencyScope::kAllResponses;
};

// One detector decision, for the optional CSV.
struct DecisionRow {
  std::string split;
  std::string post;
  int z_label = 0;
  double z_prob = 0.0;
  bool fired = false;
  std::string gold_key;       // empty for negatives
  std::string predicted_key;  // argmax of beta, recorded even when the gate is off
};

struct VariantProxies {
  inference::SystemVariant variant;
  SessionProxies proxies;
};

struct EvalReport {
  DetectorAccuracy binary_test;  // held-out D_pb-style split
  DetectorAccuracy manual;       // MD
  PositionReport position;       // D_pr against the agent profile
  std::string session_pool = "manual";
  std::vector<VariantProxies> sessions;
  std::vector<std::string> skipped_variants;  // checkpoint regime mismatch
  std::vector<DecisionRow> decisions;

  nlohmann::ordered_json to_json() const;
};

// Runs every metric on one checkpoint. Variants that need a checkpoint of
// another training regime are listed in skipped_variants.
EvalReport evaluate(const corpus::CorpusBundle& bundle, const corpus::Profile& profile,
                    const model::Checkpoint& checkpoint,
                    std::span<const inference::SystemVariant> variants,
                    const EvalOptions& options = {});

// Header row then one line per decision; text fields are quoted.
std::string decisions_csv(std::span<const DecisionRow> rows);

}  // namespace profchat::eval
