#pragma once

#include <cstdint>
#include <string>

#include "a2mc/rng.hpp"
#include "a2mc/skeleton.hpp"

namespace a2mc {

enum class AugmentKind { kBasic, kWeak, kStrong };

const char* augment_kind_name(AugmentKind kind);

// Primitive membership bits of a pipeline.
enum Primitive : unsigned {
  kPoseOrJitter = 1u << 0,
  kTemporalCropResize = 1u << 1,
  kSpatialFlip = 1u << 2,
  kRotate = 1u << 3,
  kGaussianNoise = 1u << 4,
  kGaussianFilter = 1u << 5,
  kAxisMask = 1u << 6,
};

unsigned primitive_set(AugmentKind kind);

struct AugmentParams {
  double shear_range = 0.3;
  double pose_angle_range = 0.3;
  double jitter_sigma = 0.05;
  // Probability of choosing pose augmentation over joint jittering.
  double pose_prob = 0.5;
  double crop_min_ratio = 0.5;
  std::size_t target_frames = 32;
  std::size_t flip_axis = 0;
  double flip_prob = 0.5;
  double rotate_range = 0.3;
  double noise_sigma = 0.05;
  // Frames; 0 disables the filter inside a pipeline.
  double filter_sigma = 2.0;
  double mask_prob = 0.5;

  void validate() const;
};

struct AugmentationSpec {
  AugmentKind kind = AugmentKind::kBasic;
  AugmentParams params;
  // Tag mixed into per-sample rng streams so each pipeline draws independently.
  std::uint64_t stream_id = 0;

  static AugmentationSpec basic(AugmentParams p = {}) { return {AugmentKind::kBasic, p, 11}; }
  static AugmentationSpec weak(AugmentParams p = {}) { return {AugmentKind::kWeak, p, 12}; }
  static AugmentationSpec strong(AugmentParams p = {}) { return {AugmentKind::kStrong, p, 13}; }

  unsigned primitives() const { return primitive_set(kind); }
  // Stable textual description of the pipeline and its parameters.
  std::string descriptor() const;
};

SkeletonSequence pose_augment(const SkeletonSequence& s, double shear_range, double angle_range, Rng& rng);
SkeletonSequence joint_jitter(const SkeletonSequence& s, double sigma, Rng& rng);
SkeletonSequence temporal_crop_resize(const SkeletonSequence& s, double min_ratio, std::size_t target_frames,
                                      Rng& rng);
SkeletonSequence spatial_flip(const SkeletonSequence& s, std::size_t axis, double prob, Rng& rng);
SkeletonSequence rotate(const SkeletonSequence& s, double angle_range, Rng& rng);
SkeletonSequence gaussian_noise(const SkeletonSequence& s, double sigma, Rng& rng);
SkeletonSequence gaussian_filter(const SkeletonSequence& s, double kernel_sigma);
SkeletonSequence axis_mask(const SkeletonSequence& s, double prob, Rng& rng);

// Runs the pipeline of `spec` in its fixed order.
SkeletonSequence apply(const AugmentationSpec& spec, const SkeletonSequence& s, Rng& rng);

}  // namespace a2mc
