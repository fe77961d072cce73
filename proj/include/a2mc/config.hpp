#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "a2mc/attack.hpp"
#include "a2mc/augment.hpp"
#include "a2mc/encoder.hpp"
#include "a2mc/mc_loss.hpp"
#include "a2mc/pnm.hpp"
#include "a2mc/skeleton.hpp"

namespace a2mc {

inline constexpr const char* kToolVersion = "a2mc 1.0.0";

struct AblationFlags {
  bool attack = true;
  bool pnm = true;
  bool mc = true;

  // f1 / f2 branches are needed by the attack and by the mixing-contrast term.
  bool hard_positives() const { return attack || mc; }
  ObjectiveFlags objective() const { return {hard_positives(), pnm, mc}; }
  friend bool operator==(const AblationFlags&, const AblationFlags&) = default;
};

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double lr = 0.01;
  std::vector<std::size_t> lr_drop_epochs{20};
  double lr_drop_factor = 0.1;
  double sgd_momentum = 0.9;
  double weight_decay = 1e-4;
  // Global l2 clip on the batch gradient before weight decay; 0 disables.
  double grad_clip = 5.0;
  double alpha = 0.999;
  std::size_t bank_size = 256;
  // 0 means one class per dataset class.
  std::size_t attack_classes = 0;
  // Worker threads for per-sample work; 0 = hardware concurrency. Results do
  // not depend on this value.
  std::size_t threads = 0;
  AblationFlags flags;

  void validate() const;
  double lr_at_epoch(std::size_t epoch) const;
};

struct EvalConfig {
  std::size_t knn_k = 1;
  std::size_t probe_epochs = 80;
  double probe_lr = 0.1;
  std::size_t probe_batch = 32;
  double probe_momentum = 0.9;

  void validate() const;
};

struct PathsConfig {
  std::string data;
  std::string out;
};

// Everything a run needs; serialized as the JSON config document.
struct RunConfig {
  std::uint64_t seed = 1;
  SynthConfig data;
  EncoderDims model;
  TrainConfig train;
  LossConfig loss;
  AttackConfig attack;
  MixConfig pnm;
  AugmentParams weak;
  AugmentParams strong;
  EvalConfig eval;
  PathsConfig paths;

  // Propagates shared values (seed, sequence length, joint count) and checks
  // every section.
  void resolve();

  AugmentationSpec basic_spec() const { return AugmentationSpec::basic(weak); }
  AugmentationSpec weak_spec() const { return AugmentationSpec::weak(weak); }
  AugmentationSpec strong_spec() const { return AugmentationSpec::strong(strong); }
};

// Missing keys keep their defaults; unknown keys raise ConfigError.
RunConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const RunConfig& cfg);
RunConfig load_config(const std::string& path);
void save_config(const std::string& path, const RunConfig& cfg);

}  // namespace a2mc
