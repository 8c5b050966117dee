#include "profchat/training/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "profchat/errors.hpp"
#include "profchat/rng.hpp"

namespace profchat::training {

namespace {

using corpus::TrainingPair;
using model::ModelParams;
using numgrad::NamedTensor;

enum class Role { kGeneral, kProfileRelated, kBinary };

struct Item {
  const TrainingPair* pair;
  Role role;
};

struct Losses {
  double l1 = 0.0;
  double l2 = 0.0;
};

// One forward/backward pass over `items`; gradients accumulate into params.
// `detector` adds L2, which needs key labels on the profile-related items.
Losses accumulate(std::span<const Item> items, const model::ProfileIds& profile,
                  ModelParams& params, double alpha, bool detector, bool record) {
  Batch batch;
  for (const Item& item : items) {
    switch (item.role) {
      case Role::kGeneral: batch.general.push_back(item.pair); break;
      case Role::kProfileRelated: batch.profile_related.push_back(item.pair); break;
      case Role::kBinary: batch.binary.push_back(item.pair); break;
    }
  }
  Tape tape(record ? Tape::Mode::kRecord : Tape::Mode::kNoGrad);
  Tensor loss = loss_generation(tape, batch, params);
  Losses out{loss.item(), 0.0};
  if (detector) {
    Tensor l2 = loss_detector(tape, batch, profile, params);
    out.l2 = l2.item();
    loss = tape.add(loss, tape.scale(l2, alpha));
  }
  if (record) tape.backward(loss);
  return out;
}

void mean_gradients(ModelParams& params, std::size_t n) {
  for (NamedTensor& t : params.tensors()) {
    if (!t.tensor.has_grad()) continue;
    for (double& g : t.tensor.mutable_grad()) g /= static_cast<double>(n);
  }
}

std::size_t target_tokens(std::span<const Item> items) {
  std::size_t n = 0;
  for (const Item& item : items) {
    if (item.role == Role::kGeneral) n += forward_target_count(*item.pair);
    if (item.role == Role::kProfileRelated) n += bidirectional_target_count(*item.pair);
  }
  return n;
}

// Copies of `pairs` with a uniformly random anchor position.
std::vector<TrainingPair> with_random_anchors(std::span<const TrainingPair> pairs,
                                              Rng& rng) {
  std::vector<TrainingPair> out(pairs.begin(), pairs.end());
  for (TrainingPair& p : out) p.position_label = 1 + rng.index(p.response.size());
  return out;
}

double evaluate_l1(std::span<const Item> items, const model::ProfileIds& profile,
                   ModelParams& params) {
  double sum = 0.0;
  for (const Item& item : items) {
    sum += accumulate(std::span(&item, 1), profile, params, 0.0, false, false).l1;
  }
  return items.empty() ? 0.0 : sum / static_cast<double>(items.size());
}

void require_nonempty(std::span<const TrainingPair> split, const char* name) {
  if (split.empty()) throw ConfigError(std::string("empty split: ") + name);
}

std::string checkpoint_name(std::size_t epoch) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "ckpt-%06zu.bin", epoch);
  return buf;
}

}  // namespace

std::string regime_name(AnchorRegime regime) {
  return regime == AnchorRegime::kRandom ? "iccm-pos" : "iccm";
}

AnchorRegime regime_from_name(const std::string& name) {
  if (name == "iccm") return AnchorRegime::kPositionDetector;
  if (name == "iccm-pos") return AnchorRegime::kRandom;
  throw ConfigError("unknown training regime '" + name + "' (expected iccm or iccm-pos)");
}

void TrainConfig::validate() const {
  if (!(lr_init > 0.0)) throw ConfigError("lr_init must be positive");
  if (!(decay > 0.0 && decay <= 1.0)) throw ConfigError("decay must be in (0, 1]");
  if (!(alpha >= 0.0)) throw ConfigError("alpha must be non-negative");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (grad_clip < 0.0) throw ConfigError("grad_clip must be non-negative");
  if (vocab_cap < corpus::Vocab::kReserved + 1) throw ConfigError("vocab_cap too small");
}

nlohmann::ordered_json TrainConfig::to_json() const {
  nlohmann::ordered_json j;
  j["lr_init"] = lr_init;
  j["decay"] = decay;
  j["batch_size"] = batch_size;
  j["alpha"] = alpha;
  j["stage1_epochs"] = stage1_epochs;
  j["stage2_epochs"] = stage2_epochs;
  j["seed"] = seed;
  j["grad_clip"] = grad_clip;
  j["patience"] = patience;
  j["regime"] = regime_name(regime);
  j["checkpoint_every"] = checkpoint_every;
  j["checkpoint_dir"] = checkpoint_dir.string();
  j["vocab_cap"] = vocab_cap;
  j["model"] = model.to_json();
  return j;
}

TrainConfig TrainConfig::from_json(const nlohmann::json& doc) {
  TrainConfig c;
  try {
    c.lr_init = doc.value("lr_init", c.lr_init);
    c.decay = doc.value("decay", c.decay);
    c.batch_size = doc.value("batch_size", c.batch_size);
    c.alpha = doc.value("alpha", c.alpha);
    c.stage1_epochs = doc.value("stage1_epochs", c.stage1_epochs);
    c.stage2_epochs = doc.value("stage2_epochs", c.stage2_epochs);
    c.seed = doc.value("seed", c.seed);
    c.grad_clip = doc.value("grad_clip", c.grad_clip);
    c.patience = doc.value("patience", c.patience);
    c.regime = regime_from_name(doc.value("regime", regime_name(c.regime)));
    c.checkpoint_every = doc.value("checkpoint_every", c.checkpoint_every);
    c.checkpoint_dir = doc.value("checkpoint_dir", std::string());
    c.vocab_cap = doc.value("vocab_cap", c.vocab_cap);
    if (doc.contains("model")) c.model = model::ModelConfig::from_json(doc.at("model"));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

TrainConfig TrainConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open train config " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return from_json(doc);
}

nlohmann::ordered_json TrainReport::to_json() const {
  nlohmann::ordered_json j;
  j["wall_seconds"] = wall_seconds;
  j["steps"] = steps;
  j["stage1_best_epoch"] = stage1_best_epoch;
  j["stage2_best_epoch"] = stage2_best_epoch;
  auto& rows = j["epochs"] = nlohmann::ordered_json::array();
  for (const EpochStats& e : epochs) {
    rows.push_back({{"stage", e.stage},
                    {"epoch", e.epoch},
                    {"lr", e.lr},
                    {"l1", e.l1},
                    {"l2", e.l2},
                    {"total", e.total},
                    {"l1_per_token", e.l1_per_token},
                    {"validation_l1", e.validation_l1},
                    {"grad_norm_max", e.grad_norm_max}});
  }
  return j;
}

double learning_rate(const TrainConfig& config, std::size_t epoch) {
  return config.lr_init * std::pow(config.decay, static_cast<double>(epoch));
}

double clip_gradients(ModelParams& params, double max_norm) {
  double sq = 0.0;
  for (const NamedTensor& t : params.tensors()) {
    if (!t.tensor.has_grad()) continue;
    for (double g : t.tensor.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (NamedTensor& t : params.tensors()) {
      if (!t.tensor.has_grad()) continue;
      for (double& g : t.tensor.mutable_grad()) g *= s;
    }
  }
  return norm;
}

void sgd_step(ModelParams& params, double lr) {
  for (NamedTensor& t : params.tensors()) {
    if (!t.tensor.has_grad()) continue;
    auto values = t.tensor.mutable_data();
    auto grad = t.tensor.grad();
    for (std::size_t i = 0; i < values.size(); ++i) values[i] -= lr * grad[i];
  }
}

void assign_positions(std::span<TrainingPair> pairs, const model::ProfileIds& profile,
                      const ModelParams& params) {
  for (TrainingPair& p : pairs) {
    if (!p.key_label) continue;
    if (*p.key_label >= profile.size()) {
      throw ContractError("key label outside profile");
    }
    p.position_label =
        model::predict_position(p.response, profile.values[*p.key_label], params).index;
  }
}

namespace {

// Shared epoch loop. `make_items` builds this epoch's training items and
// `make_validation` the validation items; stops early on validation L1.
struct StageRunner {
  const TrainConfig& config;
  const model::ProfileIds& profile;
  ModelParams& params;
  TrainReport& report;
  const corpus::Vocab& vocab;
  const EpochCallback& on_epoch;
  std::size_t& global_epoch;
  Rng& order_rng;

  std::size_t run(int stage, std::size_t epochs, bool detector, double alpha,
                  const std::function<std::vector<Item>()>& make_items,
                  const std::vector<Item>& validation) {
    ModelParams best = params.clone();
    double best_val = std::numeric_limits<double>::infinity();
    std::size_t best_epoch = global_epoch, since_best = 0;
    for (std::size_t e = 0; e < epochs; ++e, ++global_epoch) {
      std::vector<Item> items = make_items();
      order_rng.shuffle(items);
      const double lr = learning_rate(config, global_epoch);
      EpochStats stats;
      stats.stage = stage;
      stats.epoch = global_epoch;
      stats.lr = lr;
      for (std::size_t start = 0; start < items.size(); start += config.batch_size) {
        const std::size_t n = std::min(config.batch_size, items.size() - start);
        std::span<const Item> batch(items.data() + start, n);
        params.zero_grad();
        const Losses l = accumulate(batch, profile, params, alpha, detector, true);
        stats.l1 += l.l1;
        stats.l2 += l.l2;
        // Mean over the batch, then clip the mean gradient.
        mean_gradients(params, n);
        stats.grad_norm_max =
            std::max(stats.grad_norm_max, clip_gradients(params, config.grad_clip));
        sgd_step(params, lr);
        ++report.steps;
      }
      if (!params.all_finite()) {
        throw DomainError("non-finite parameters after epoch " +
                          std::to_string(global_epoch));
      }
      const double count = static_cast<double>(std::max<std::size_t>(items.size(), 1));
      stats.l1_per_token = stats.l1 / static_cast<double>(
                                          std::max<std::size_t>(target_tokens(items), 1));
      stats.l1 /= count;
      stats.l2 /= count;
      stats.total = stats.l1 + (detector ? alpha * stats.l2 : 0.0);
      stats.validation_l1 = evaluate_l1(validation, profile, params);
      report.epochs.push_back(stats);
      if (on_epoch) on_epoch(stats);

      if (config.checkpoint_every > 0 && !config.checkpoint_dir.empty() &&
          (global_epoch + 1) % config.checkpoint_every == 0) {
        model::Checkpoint ckpt{params.clone(), vocab, regime_name(config.regime),
                               model::Precision::kDouble};
        model::save_checkpoint(ckpt, config.checkpoint_dir / checkpoint_name(global_epoch + 1));
      }

      if (stats.validation_l1 < best_val) {
        best_val = stats.validation_l1;
        best.copy_values_from(params);
        best_epoch = global_epoch;
        since_best = 0;
      } else if (++since_best >= config.patience && config.patience > 0) {
        ++global_epoch;
        break;
      }
    }
    params.copy_values_from(best);
    return best_epoch;
  }
};

}  // namespace

TrainResult train_two_stage(const corpus::CorpusBundle& bundle,
                            const corpus::Profile& profile, const TrainConfig& config,
                            const EpochCallback& on_epoch) {
  config.validate();
  const auto started = std::chrono::steady_clock::now();
  if (profile.empty()) throw ConfigError("empty profile");

  std::vector<corpus::TextPair> vocab_source;
  for (const auto* split : {&bundle.general, &bundle.binary, &bundle.validation})
    vocab_source.insert(vocab_source.end(), split->begin(), split->end());
  const corpus::Vocab vocab = corpus::build_vocab(vocab_source, config.vocab_cap);

  const std::vector<std::string> keys = profile.keys();
  const corpus::SynonymTable synonyms = bundle.synonyms();
  // Key labels come from the noisy trigger labelling against the agent
  // profile; the stored label is the fallback.
  auto relabel = [&](std::vector<corpus::TextPair> pairs) {
    for (corpus::TextPair& p : pairs) {
      if (!p.key) continue;
      if (auto k = corpus::noisy_key_label(p.post, profile, synonyms)) p.key = keys[*k];
    }
    return pairs;
  };
  const auto general = corpus::encode_pairs(bundle.general, vocab, keys);
  const auto binary = corpus::encode_pairs(bundle.binary, vocab, keys);
  auto related = corpus::encode_pairs(relabel(bundle.profile_related), vocab, keys);
  const auto validation = corpus::encode_pairs(relabel(bundle.validation), vocab, keys);
  require_nonempty(general, "general");
  require_nonempty(binary, "binary");
  require_nonempty(related, "profile_related");
  require_nonempty(validation, "validation");
  using Split = const std::vector<TrainingPair>*;
  for (Split split : {Split{&general}, Split{&binary}, Split{&related}, Split{&validation}})
    for (const TrainingPair& p : *split) corpus::validate_pair(p, config.model.max_len);

  model::ModelConfig mc = config.model;
  mc.vocab_size = vocab.size();
  mc.num_keys = profile.size();
  ModelParams params(mc, config.seed);
  const model::ProfileIds pids = model::profile_ids(profile, vocab);

  TrainResult result;
  TrainReport& report = result.report;
  std::size_t global_epoch = 0;
  Rng order_rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  Rng anchor_rng(config.seed ^ 0xc2b2ae3d27d4eb4fULL);
  StageRunner runner{config, pids,      params,       report,
                     vocab,  on_epoch, global_epoch, order_rng};

  // Stage 1: fr and random-anchor bi over the general split.
  {
    Rng val_rng(config.seed ^ 0x165667b19e3779f9ULL);
    const auto val_anchored = with_random_anchors(validation, val_rng);
    std::vector<Item> val_items;
    for (std::size_t i = 0; i < validation.size(); ++i) {
      val_items.push_back({&validation[i], Role::kGeneral});
      val_items.push_back({&val_anchored[i], Role::kProfileRelated});
    }
    std::vector<TrainingPair> anchored;
    auto make_items = [&] {
      anchored = with_random_anchors(general, anchor_rng);
      std::vector<Item> items;
      for (std::size_t i = 0; i < general.size(); ++i) {
        items.push_back({&general[i], Role::kGeneral});
        items.push_back({&anchored[i], Role::kProfileRelated});
      }
      return items;
    };
    report.stage1_best_epoch = runner.run(1, config.stage1_epochs, false, 0.0, make_items, val_items);
  }

  // Stage 2: bi over the profile-related split plus the detector loss.
  {
    const bool random = config.regime == AnchorRegime::kRandom;
    std::vector<TrainingPair> val_related;
    for (const TrainingPair& p : validation)
      if (p.z_label == 1 && p.key_label) val_related.push_back(p);
    if (random) {
      Rng val_rng(config.seed ^ 0x27d4eb2f165667c5ULL);
      val_related = with_random_anchors(val_related, val_rng);
    } else {
      assign_positions(val_related, pids, params);
    }
    std::vector<Item> val_items;
    for (const TrainingPair& p : val_related) val_items.push_back({&p, Role::kProfileRelated});

    auto make_items = [&] {
      if (random) {
        related = with_random_anchors(related, anchor_rng);
      } else {
        assign_positions(related, pids, params);
      }
      std::vector<Item> items;
      for (const TrainingPair& p : related) items.push_back({&p, Role::kProfileRelated});
      for (const TrainingPair& p : binary) items.push_back({&p, Role::kBinary});
      return items;
    };
    report.stage2_best_epoch =
        runner.run(2, config.stage2_epochs, true, config.alpha, make_items, val_items);
  }

  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  result.checkpoint = model::Checkpoint{std::move(params), vocab, regime_name(config.regime),
                                        model::Precision::kDouble};
  return result;
}

double train_forward_only(ModelParams& params, std::span<const TrainingPair> pairs,
                          const TrainConfig& config, std::size_t epochs,
                          double stop_below, std::size_t* epochs_run) {
  config.validate();
  if (pairs.empty()) throw ConfigError("empty split: pairs");
  Rng order_rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<Item> items;
  for (const TrainingPair& p : pairs) items.push_back({&p, Role::kGeneral});
  const model::ProfileIds none;
  const double tokens = static_cast<double>(target_tokens(items));
  double per_token = std::numeric_limits<double>::infinity();
  std::size_t e = 0;
  for (; e < epochs; ++e) {
    order_rng.shuffle(items);
    const double lr = learning_rate(config, e);
    double l1 = 0.0;
    for (std::size_t start = 0; start < items.size(); start += config.batch_size) {
      const std::size_t n = std::min(config.batch_size, items.size() - start);
      params.zero_grad();
      l1 += accumulate(std::span(items.data() + start, n), none, params, 0.0, false, true)
                .l1;
      mean_gradients(params, n);
      clip_gradients(params, config.grad_clip);
      sgd_step(params, lr);
    }
    per_token = l1 / tokens;
    if (per_token < stop_below) {
      ++e;
      break;
    }
  }
  if (epochs_run) *epochs_run = e;
  return per_token;
}

}  // namespace profchat::training
