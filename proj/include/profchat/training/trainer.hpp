#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "profchat/corpus/corpus.hpp"
#include "profchat/model/params.hpp"
#include "profchat/training/losses.hpp"

namespace profchat::training {

enum class AnchorRegime {
  kPositionDetector,  // "iccm": stage-2 anchors from predict_position
  kRandom,            // "iccm-pos": random anchors in both stages
};

std::string regime_name(AnchorRegime regime);
AnchorRegime regime_from_name(const std::string& name);

struct TrainConfig {
  double lr_init = 0.5;
  double decay = 0.99;  // per epoch
  std::size_t batch_size = 16;
  double alpha = 1.0;
  std::size_t stage1_epochs = 5;
  std::size_t stage2_epochs = 10;
  std::uint64_t seed = 1;
  double grad_clip = 5.0;  // global norm; 0 disables
  std::size_t patience = 5;
  AnchorRegime regime = AnchorRegime::kPositionDetector;
  // Write ckpt-NNNNNN.bin every N epochs into checkpoint_dir; 0 disables.
  std::size_t checkpoint_every = 0;
  std::filesystem::path checkpoint_dir;
  std::size_t vocab_cap = 2000;
  model::ModelConfig model;

  void validate() const;
  nlohmann::ordered_json to_json() const;
  // Missing fields keep their defaults.
  static TrainConfig from_json(const nlohmann::json& doc);
  static TrainConfig load(const std::filesystem::path& path);
};

struct EpochStats {
  int stage = 1;
  std::size_t epoch = 0;  // global, 0-based; lr = lr_init * decay^epoch
  double lr = 0.0;
  double l1 = 0.0;  // mean per pair
  double l2 = 0.0;
  double total = 0.0;
  double l1_per_token = 0.0;
  double validation_l1 = 0.0;
  double grad_norm_max = 0.0;  // before clipping
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  double wall_seconds = 0.0;
  std::size_t steps = 0;
  std::size_t stage1_best_epoch = 0;
  std::size_t stage2_best_epoch = 0;

  nlohmann::ordered_json to_json() const;
};

struct TrainResult {
  model::Checkpoint checkpoint;
  TrainReport report;
};

double learning_rate(const TrainConfig& config, std::size_t epoch);

// Scales every gradient so the global L2 norm is at most max_norm and
// returns the norm before scaling.
double clip_gradients(model::ModelParams& params, double max_norm);

// theta <- theta - lr * grad for every parameter holding a gradient.
void sgd_step(model::ModelParams& params, double lr);

// Fills position_label of every pair from predict_position against the
// profile value of its key_label. Pairs without key_label are left alone.
void assign_positions(std::span<corpus::TrainingPair> pairs,
                      const model::ProfileIds& profile,
                      const model::ModelParams& params);

using EpochCallback = std::function<void(const EpochStats&)>;

// Stage 1 trains P^fr and P^bi (random anchors) on the general split; stage 2
// trains P^bi on the profile-related split with detected anchors plus the
// detector loss over the binary and profile-related splits. Each stage stops
// early when validation L1 fails to improve for `patience` epochs and keeps
// its best snapshot.
TrainResult train_two_stage(const corpus::CorpusBundle& bundle,
                            const corpus::Profile& profile,
                            const TrainConfig& config,
                            const EpochCallback& on_epoch = {});

// Plain fr training on `pairs` with a fixed vocab; used by the overfit probe.
// Returns per-token L1 of the final epoch.
double train_forward_only(model::ModelParams& params,
                          std::span<const corpus::TrainingPair> pairs,
                          const TrainConfig& config, std::size_t epochs,
                          double stop_below = 0.0, std::size_t* epochs_run = nullptr);

}  // namespace profchat::training
