#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "emotask/data.hpp"
#include "emotask/losses.hpp"
#include "emotask/metrics.hpp"
#include "emotask/netcore.hpp"
#include "emotask/optim.hpp"

namespace emotask {

enum class TrainMode { ExprOnly, AuOnly, SharedBackbone, Multitask };

TrainMode parse_train_mode(const std::string& name);
std::string train_mode_name(TrainMode mode);

struct TrainConfig {
  TrainMode mode = TrainMode::Multitask;
  int epochs = 10;
  std::size_t batch_size = 64;
  ScheduleConfig schedule;
  FocalConfig focal;
  std::uint64_t seed = 0;
  double au_threshold = 0.5;
  double validation_fraction = 0.2;  // used when no explicit split is given
  PreprocessConfig preprocess;
  ModelConfig model;
  double init_scale = 1.7320508075688772;  // sqrt(3), variance-preserving

  // called after every optimizer step; not part of the config hash
  std::function<void(char phase, const ModelParams&, const AdamState&)> step_observer;
};

// One per (epoch, phase, batch) optimizer step; used to assert the E->A->B
// phase ordering of the epoch scheme.
struct StepEvent {
  char phase;  // 'E', 'A' or 'B'
  double loss;
};

struct EpochStats {
  int epoch = 0;
  double lr = 0.0;
  std::size_t steps_e = 0, steps_a = 0, steps_b = 0;
  double mean_loss_e = 0.0, mean_loss_a = 0.0, mean_loss_b = 0.0;
  std::vector<StepEvent> events;
  double val_expr_score = 0.0;
  double val_au_score = 0.0;
};

struct Checkpoint {
  ModelParams model;
  AdamState opt;
  int epoch = 0;
  std::uint64_t config_hash = 0;
};

struct FitResult {
  ModelParams model;  // final weights
  std::vector<EpochStats> stats;
  Checkpoint best;    // highest mode-relevant blended score on validation
  double best_score = 0.0;
  int best_epoch = 0;
  MetricsReport best_val_report;
};

std::uint64_t config_hash(const TrainConfig& cfg);

// Preprocessed inputs cached as one [n, ...] tensor so every epoch reuses
// them; carved train/validation index lists.
struct TrainingData {
  const Dataset* dataset = nullptr;
  std::vector<Tensor> inputs;  // per sample, channel-first
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> val_indices;
};

TrainingData prepare_training_data(const Dataset& dataset, const TrainConfig& cfg);

// One pass of the three-partition epoch scheme (phases gated by mode).
EpochStats train_epoch(ModelParams& model, AdamState& opt, const DatasetPartition& part,
                       const TrainingData& data, const TrainConfig& cfg, int epoch);

MetricsReport evaluate(const ModelParams& model, const TrainingData& data,
                       const std::vector<std::size_t>& indices, double au_threshold);

FitResult fit(const Dataset& dataset, const TrainConfig& cfg);

// Versioned binary checkpoint; config hash validated on load.
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path,
                           std::optional<std::uint64_t> expected_config_hash = std::nullopt);

std::string epoch_stats_to_jsonl(const EpochStats& s);

}  // namespace emotask
