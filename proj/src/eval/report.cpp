#include "profchat/eval/report.hpp"

#include <cstdio>

namespace profchat::eval {

namespace {

nlohmann::ordered_json detector_json(const DetectorAccuracy& a) {
  return {{"binary_acc", a.binary_acc},
          {"key_acc_cascaded", a.key_acc_cascaded},
          {"positive_gate_acc", a.positive_gate_acc},
          {"examples", a.examples},
          {"positives", a.positives}};
}

DetectorAccuracy run_detector(const std::string& split,
                              std::span<const corpus::TextPair> texts,
                              const corpus::Profile& profile,
                              const model::Checkpoint& ck,
                              std::vector<DecisionRow>& rows) {
  const std::vector<std::string> keys = profile.keys();
  const std::vector<TrainingPair> pairs = corpus::encode_pairs(texts, ck.vocab, keys);
  const model::ProfileIds pids = model::profile_ids(profile, ck.vocab);
  const double threshold = ck.params.config().p_z_threshold;
  std::size_t i = 0;
  auto detector = [&](const TrainingPair& pair) {
    numgrad::Tape tape(numgrad::Tape::Mode::kNoGrad);
    const model::EncoderOutput enc = model::encode(tape, pair.post, ck.params);
    DetectorDecision d;
    d.z_prob = model::detect_profile_binary(tape, enc, ck.params).item();
    d.key = model::select_profile_key(tape, enc, pids, ck.params).chosen;
    const corpus::TextPair& text = texts[i++];
    rows.push_back({split, corpus::join_tokens(text.post), pair.z_label.value_or(0), d.z_prob,
                    d.z_prob > threshold, text.key.value_or(""), keys[d.key]});
    return d;
  };
  return detector_accuracy(pairs, detector, threshold);
}

std::string quoted(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

nlohmann::ordered_json EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["header"] = report_header();
  j["detector"] = {{"binary_test", detector_json(binary_test)},
                   {"manual", detector_json(manual)}};
  auto& pos = j["position"];
  pos["overall"] = position.overall;
  pos["per_key"] = nlohmann::ordered_json::array();
  for (const KeyAccuracy& k : position.per_key)
    pos["per_key"].push_back({{"key", k.key}, {"accuracy", k.accuracy},
                              {"correct", k.correct}, {"total", k.total}});
  pos["warnings"] = position.warnings;
  auto& s = j["sessions"];
  s["pool"] = session_pool;
  s["variants"] = nlohmann::ordered_json::array();
  for (const VariantProxies& v : sessions)
    s["variants"].push_back({{"variant", inference::variant_name(v.variant)},
                             {"consistency_rate", v.proxies.consistency_rate},
                             {"variety_rate", v.proxies.variety_rate},
                             {"sessions", v.proxies.sessions}});
  s["skipped"] = skipped_variants;
  j["footer"] = report_footer();
  return j;
}

EvalReport evaluate(const corpus::CorpusBundle& bundle, const corpus::Profile& profile,
                    const model::Checkpoint& checkpoint,
                    std::span<const inference::SystemVariant> variants,
                    const EvalOptions& options) {
  EvalReport report;
  report.binary_test =
      run_detector("binary_test", bundle.binary_test, profile, checkpoint, report.decisions);
  report.manual = run_detector("manual", bundle.manual, profile, checkpoint, report.decisions);

  const std::vector<std::string> keys = profile.keys();
  const model::ProfileIds pids = model::profile_ids(profile, checkpoint.vocab);
  const std::vector<TrainingPair> related =
      corpus::encode_pairs(bundle.profile_related, checkpoint.vocab, keys);
  const std::vector<PositionExample> examples = profile_position_examples(related, pids, keys);
  report.position = position_accuracy(examples, keys, checkpoint.params);

  const std::vector<SessionSpec> specs =
      build_sessions(bundle.manual, bundle.keys, bundle.fillers, options.sessions_per_key,
                     options.session_size, options.session_seed);
  for (inference::SystemVariant v : variants) {
    if (inference::required_regime(v) != checkpoint.regime) {
      report.skipped_variants.push_back(inference::variant_name(v));
      continue;
    }
    const std::vector<Session> sessions = run_sessions(specs, profile, checkpoint, v);
    report.sessions.push_back({v, session_proxies(sessions, profile, bundle.keys, options.scope)});
  }
  return report;
}

std::string decisions_csv(std::span<const DecisionRow> rows) {
  std::string out = "split,post,z_label,z_prob,fired,gold_key,predicted_key\n";
  char prob[32];
  for (const DecisionRow& r : rows) {
    std::snprintf(prob, sizeof(prob), "%.6f", r.z_prob);
    out += r.split + "," + quoted(r.post) + "," + std::to_string(r.z_label) + "," + prob + "," +
           (r.fired ? "1" : "0") + "," + r.gold_key + "," + r.predicted_key + "\n";
  }
  return out;
}

}  // namespace profchat::eval
