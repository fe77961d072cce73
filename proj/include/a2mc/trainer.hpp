#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "a2mc/checkpoint.hpp"
#include "a2mc/config.hpp"

namespace a2mc {

struct EncoderState {
  EncoderParams<float> query;
  EncoderParams<float> key;
  AttackHead<float> head;
};

struct StepStats {
  std::size_t step = 0;
  std::size_t epoch = 0;
  std::size_t batch = 0;
  double lr = 0.0;
  double loss = 0.0;
  double l1 = 0.0;
  double l2 = 0.0;
  double l3 = 0.0;
  double grad_norm = 0.0;  // before clipping
  double bank_update_norm = 0.0;
  std::size_t attacks_aborted = 0;
};

struct EpochStats {
  std::size_t epoch = 0;
  std::size_t steps = 0;
  double lr = 0.0;
  double loss = 0.0;
  double l1 = 0.0;
  double l2 = 0.0;
  double l3 = 0.0;
  double bank_update_norm = 0.0;
  double wall_seconds = 0.0;
};

// Append-only training history.
struct MetricsRecord {
  std::vector<StepStats> steps;
  std::vector<EpochStats> epochs;

  void add_step(const StepStats& s);
  void add_epoch(const EpochStats& e);

  static const char* step_header();
  static const char* epoch_header();
  static std::string step_row(const StepStats& s);
  static std::string epoch_row(const EpochStats& e);
};

// Per-sample outputs of one training step, kept separate so the batch
// reduction runs in a fixed order.
struct SampleResult {
  double loss = 0.0, l1 = 0.0, l2 = 0.0, l3 = 0.0;
  std::vector<Tensor<float>> param_grads;
  Tensor<float> bank_grad;
  Tensor<float> f0;
  bool attack_aborted = false;
};

// Momentum-contrast pretraining with the attack, mixer and mixing-contrast
// components switched by TrainConfig::flags.
class Trainer {
 public:
  Trainer(RunConfig cfg, const LabeledDataset& train);

  // Restores parameters, optimizer state, bank and loop position.
  static Trainer resume(RunConfig cfg, const LabeledDataset& train, const Checkpoint& ckpt);

  StepStats step();
  EpochStats run_epoch();
  bool finished() const { return epoch_ >= cfg_.train.epochs; }

  Checkpoint checkpoint() const;

  const RunConfig& config() const { return cfg_; }
  const EncoderState& state() const { return state_; }
  const MemoryBank<float>& bank() const { return bank_; }
  const MetricsRecord& metrics() const { return metrics_; }
  std::size_t epoch() const { return epoch_; }
  std::size_t global_step() const { return global_step_; }
  std::size_t steps_per_epoch() const;
  double current_lr() const { return cfg_.train.lr_at_epoch(epoch_); }

  // Description of how f1 / f2 are produced, for ablation bookkeeping.
  std::string hard_positive_pipeline() const;

  // Computes one sample's loss and gradients for the current step without
  // touching trainer state.
  SampleResult process_sample(std::size_t dataset_index) const;

 private:
  Trainer(RunConfig cfg, const LabeledDataset& train, bool init_bank);
  std::vector<std::size_t> epoch_order(std::size_t epoch) const;
  void init_memory_bank();

  RunConfig cfg_;
  const LabeledDataset* train_;
  std::vector<SkeletonSequence> inputs_;  // resampled to the model length
  EncoderState state_;
  std::vector<Tensor<float>> velocity_;
  MemoryBank<float> bank_;
  MetricsRecord metrics_;
  std::size_t epoch_ = 0;
  std::size_t batch_in_epoch_ = 0;
  std::size_t global_step_ = 0;
  std::vector<std::size_t> order_;
  EpochStats running_;
};

// Description of how f1 / f2 are produced under `cfg`, for ablation
// bookkeeping. "none" when the hard positive branches are off.
std::string hard_positive_pipeline(const RunConfig& cfg);

// Full run driver used by the CLI: trains to completion, writing metrics CSVs
// and a checkpoint after every epoch into `out_dir`. `on_epoch` may be empty.
struct PretrainResult {
  EncoderState state;
  MemoryBank<float> bank;
  MetricsRecord metrics;
};

PretrainResult pretrain(const RunConfig& cfg, const LabeledDataset& train, const std::string& out_dir,
                        const std::function<void(const EpochStats&)>& on_epoch = {},
                        const Checkpoint* resume_from = nullptr);

}  // namespace a2mc
