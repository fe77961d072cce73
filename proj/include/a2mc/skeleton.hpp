#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "a2mc/error.hpp"
#include "a2mc/tensor.hpp"

namespace a2mc {

// Joint tree rooted at joint 0, stored as (child, parent) edges.
class Topology {
 public:
  Topology() = default;
  Topology(std::size_t joints, std::vector<std::pair<std::uint32_t, std::uint32_t>> edges);

  // parent(j) = j - 1.
  static Topology chain(std::size_t joints);

  std::size_t joints() const { return parent_.size(); }
  const std::vector<std::pair<std::uint32_t, std::uint32_t>>& edges() const { return edges_; }
  // -1 for the root.
  int parent(std::size_t joint) const { return parent_[joint]; }
  // Joints ordered so that every parent precedes its children.
  const std::vector<std::uint32_t>& order() const { return order_; }

  friend bool operator==(const Topology& a, const Topology& b) { return a.edges_ == b.edges_ && a.parent_ == b.parent_; }

 private:
  std::vector<std::pair<std::uint32_t, std::uint32_t>> edges_;
  std::vector<int> parent_;
  std::vector<std::uint32_t> order_;
};

// T frames x J joints x 3 coordinates, row-major (frame, joint, axis).
class SkeletonSequence {
 public:
  SkeletonSequence() = default;
  SkeletonSequence(std::size_t frames, Topology topology, std::vector<float> coords);
  SkeletonSequence(std::size_t frames, Topology topology);

  std::size_t frames() const { return frames_; }
  std::size_t joints() const { return topology_.joints(); }
  const Topology& topology() const { return topology_; }

  float& at(std::size_t t, std::size_t j, std::size_t axis) { return coords_[(t * joints() + j) * 3 + axis]; }
  float at(std::size_t t, std::size_t j, std::size_t axis) const { return coords_[(t * joints() + j) * 3 + axis]; }

  std::span<float> coords() { return coords_; }
  std::span<const float> coords() const { return coords_; }
  std::size_t size() const { return coords_.size(); }

  // frames x (3 * joints) matrix, the encoder input layout.
  template <typename T>
  Tensor<T> to_matrix() const {
    std::vector<T> data(coords_.begin(), coords_.end());
    return Tensor<T>({frames_, 3 * joints()}, std::move(data));
  }

  template <typename T>
  static SkeletonSequence from_matrix(const Tensor<T>& m, const Topology& topology) {
    if (m.rank() != 2 || m.dim(1) != 3 * topology.joints()) {
      throw DimensionError("from_matrix: shape " + shape_string(m.shape()) + " does not match " +
                           std::to_string(topology.joints()) + " joints");
    }
    std::vector<float> coords(m.numel());
    for (std::size_t i = 0; i < m.numel(); ++i) coords[i] = static_cast<float>(m[i]);
    return SkeletonSequence(m.dim(0), topology, std::move(coords));
  }

  bool all_finite() const;

  friend bool operator==(const SkeletonSequence& a, const SkeletonSequence& b) {
    return a.frames_ == b.frames_ && a.topology_ == b.topology_ && a.coords_ == b.coords_;
  }

 private:
  std::size_t frames_ = 0;
  Topology topology_;
  std::vector<float> coords_;
};

enum class Split : std::uint8_t { kTrain = 0, kTest = 1 };

const char* split_name(Split s);

struct LabeledDataset {
  std::vector<SkeletonSequence> sequences;
  std::vector<std::uint16_t> labels;
  std::size_t num_classes = 0;
  Split split = Split::kTrain;

  std::size_t size() const { return sequences.size(); }
  // Throws ConfigError when a dataset invariant is violated.
  void validate() const;
};

struct SynthConfig {
  std::size_t num_classes = 5;
  std::size_t per_class_train = 80;
  std::size_t per_class_test = 20;
  std::size_t frames = 32;
  std::size_t joints = 10;
  double noise_sigma = 0.15;
  // Per-sample nuisance: view rotation about the vertical axis (rad), body
  // scale spread and time-phase jitter (rad).
  double view_range = 0.6;
  double scale_range = 0.15;
  double phase_jitter = 0.3;
  // Each sample shows a random window of at least this fraction of the motion.
  double time_window_min = 0.5;
  // Weight of the class-specific motion relative to the shared base motion.
  double class_separation = 0.15;
  std::uint64_t seed = 1;
};

struct DatasetPair {
  LabeledDataset train;
  LabeledDataset test;
};

DatasetPair generate_dataset(const SynthConfig& cfg);

// Generates one sample of class `label`; `sample_key` selects the nuisance
// and noise draws.
SkeletonSequence synthesize_sequence(const SynthConfig& cfg, std::size_t label, std::uint64_t sample_key,
                                     bool with_noise = true);

// Linear interpolation along time; endpoints preserved.
SkeletonSequence resample_time(const SkeletonSequence& s, std::size_t target_frames);

// Frame t holds frame[t + 1] - frame[t]; the last frame is zero.
SkeletonSequence to_motion(const SkeletonSequence& s);

// Joint j holds coords[j] - coords[parent(j)]; the root keeps its coordinates.
SkeletonSequence to_bone(const SkeletonSequence& s);

// Inverse of to_bone: prefix sums along the tree.
SkeletonSequence from_bone(const SkeletonSequence& bones);

// Dataset file: a sequence of records, each "A2MCDATA", u32 version,
// u8 split, u32 C, u32 N, u32 T, u32 J, (J-1) x (u32 child, u32 parent),
// f32 coords N*T*J*3, u16 labels N; little-endian.
inline constexpr std::uint32_t kDatasetFormatVersion = 1;

void save_datasets(const std::string& path, std::span<const LabeledDataset> datasets);
void save_dataset(const std::string& path, const LabeledDataset& dataset);
std::vector<LabeledDataset> load_datasets(const std::string& path);
// First record with the requested split.
LabeledDataset load_dataset(const std::string& path, Split split);

}  // namespace a2mc
