#include "a2mc/augment.hpp"

#include <array>
#include <cmath>
#include <sstream>

namespace a2mc {

namespace {

using Mat3 = std::array<std::array<double, 3>, 3>;

Mat3 matmul3(const Mat3& a, const Mat3& b) {
  Mat3 c{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) c[i][j] += a[i][k] * b[k][j];
  return c;
}

Mat3 rotation_xyz(double ax, double ay, double az) {
  const Mat3 rx{{{1, 0, 0}, {0, std::cos(ax), -std::sin(ax)}, {0, std::sin(ax), std::cos(ax)}}};
  const Mat3 ry{{{std::cos(ay), 0, std::sin(ay)}, {0, 1, 0}, {-std::sin(ay), 0, std::cos(ay)}}};
  const Mat3 rz{{{std::cos(az), -std::sin(az), 0}, {std::sin(az), std::cos(az), 0}, {0, 0, 1}}};
  return matmul3(rz, matmul3(ry, rx));
}

SkeletonSequence transform(const SkeletonSequence& s, const Mat3& m) {
  SkeletonSequence out = s;
  for (std::size_t t = 0; t < s.frames(); ++t)
    for (std::size_t j = 0; j < s.joints(); ++j) {
      const double p[3] = {s.at(t, j, 0), s.at(t, j, 1), s.at(t, j, 2)};
      for (std::size_t a = 0; a < 3; ++a)
        out.at(t, j, a) = static_cast<float>(m[a][0] * p[0] + m[a][1] * p[1] + m[a][2] * p[2]);
    }
  return out;
}

void require_prob(double p, const char* what) {
  if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(std::string(what) + " must lie in [0, 1]");
}

// Folds an out-of-range index back into [0, n) by mirror reflection with the
// edge sample repeated.
std::size_t reflect_index(long i, long n) {
  const long period = 2 * n;
  long k = i % period;
  if (k < 0) k += period;
  return static_cast<std::size_t>(k < n ? k : period - 1 - k);
}

}  // namespace

const char* augment_kind_name(AugmentKind kind) {
  switch (kind) {
    case AugmentKind::kBasic: return "basic";
    case AugmentKind::kWeak: return "weak";
    case AugmentKind::kStrong: return "strong";
  }
  return "?";
}

unsigned primitive_set(AugmentKind kind) {
  const unsigned basic = kPoseOrJitter | kTemporalCropResize;
  if (kind == AugmentKind::kStrong) return basic | kSpatialFlip | kRotate | kGaussianNoise | kGaussianFilter | kAxisMask;
  return basic;
}

void AugmentParams::validate() const {
  for (double v : {shear_range, pose_angle_range, rotate_range})
    if (!std::isfinite(v) || v < 0.0) throw ConfigError("augment ranges must be finite and non-negative");
  if (!(jitter_sigma >= 0.0) || !(noise_sigma >= 0.0)) throw ConfigError("augment sigmas must be non-negative");
  if (!(crop_min_ratio > 0.0 && crop_min_ratio <= 1.0)) throw ConfigError("crop_min_ratio must lie in (0, 1]");
  if (target_frames < 2) throw ConfigError("target_frames must be at least 2");
  if (flip_axis > 2) throw ConfigError("flip_axis must be 0, 1 or 2");
  if (!(filter_sigma >= 0.0)) throw ConfigError("filter_sigma must be non-negative");
  require_prob(pose_prob, "pose_prob");
  require_prob(flip_prob, "flip_prob");
  require_prob(mask_prob, "mask_prob");
}

std::string AugmentationSpec::descriptor() const {
  std::ostringstream os;
  os.precision(17);
  os << augment_kind_name(kind) << "{prims=" << primitives() << ",shear=" << params.shear_range
     << ",pose_angle=" << params.pose_angle_range << ",jitter=" << params.jitter_sigma
     << ",pose_prob=" << params.pose_prob << ",crop=" << params.crop_min_ratio << ",T=" << params.target_frames;
  if (kind == AugmentKind::kStrong) {
    os << ",flip_axis=" << params.flip_axis << ",flip_prob=" << params.flip_prob << ",rotate=" << params.rotate_range
       << ",noise=" << params.noise_sigma << ",filter=" << params.filter_sigma << ",mask=" << params.mask_prob;
  }
  os << ",stream=" << stream_id << "}";
  return os.str();
}

SkeletonSequence pose_augment(const SkeletonSequence& s, double shear_range, double angle_range, Rng& rng) {
  Mat3 shear{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      if (i != j) shear[i][j] = rng.uniform(-shear_range, shear_range);
  const double ax = rng.uniform(-angle_range, angle_range);
  const double ay = rng.uniform(-angle_range, angle_range);
  const double az = rng.uniform(-angle_range, angle_range);
  return transform(s, matmul3(rotation_xyz(ax, ay, az), shear));
}

SkeletonSequence joint_jitter(const SkeletonSequence& s, double sigma, Rng& rng) {
  if (!(sigma >= 0.0)) throw ConfigError("joint_jitter: sigma must be non-negative");
  SkeletonSequence out = s;
  if (sigma == 0.0) return out;
  for (auto& v : out.coords()) v = static_cast<float>(v + rng.normal(0.0, sigma));
  return out;
}

SkeletonSequence temporal_crop_resize(const SkeletonSequence& s, double min_ratio, std::size_t target_frames,
                                      Rng& rng) {
  if (!(min_ratio > 0.0 && min_ratio <= 1.0)) throw ConfigError("temporal_crop_resize: min_ratio must lie in (0, 1]");
  const std::size_t T = s.frames();
  const double r = rng.uniform(min_ratio, 1.0);
  std::size_t len = static_cast<std::size_t>(std::ceil(r * static_cast<double>(T)));
  len = std::clamp<std::size_t>(len, 2, T);
  const std::size_t start = static_cast<std::size_t>(rng.below(T - len + 1));
  if (len == T) return resample_time(s, target_frames);
  const std::size_t per = s.joints() * 3;
  std::vector<float> coords(s.coords().begin() + static_cast<long>(start * per),
                            s.coords().begin() + static_cast<long>((start + len) * per));
  return resample_time(SkeletonSequence(len, s.topology(), std::move(coords)), target_frames);
}

SkeletonSequence spatial_flip(const SkeletonSequence& s, std::size_t axis, double prob, Rng& rng) {
  require_prob(prob, "flip prob");
  if (axis > 2) throw ConfigError("spatial_flip: axis must be 0, 1 or 2");
  SkeletonSequence out = s;
  if (!rng.bernoulli(prob)) return out;
  for (std::size_t t = 0; t < s.frames(); ++t)
    for (std::size_t j = 0; j < s.joints(); ++j) out.at(t, j, axis) = -s.at(t, j, axis);
  return out;
}

SkeletonSequence rotate(const SkeletonSequence& s, double angle_range, Rng& rng) {
  const double ax = rng.uniform(-angle_range, angle_range);
  const double ay = rng.uniform(-angle_range, angle_range);
  const double az = rng.uniform(-angle_range, angle_range);
  return transform(s, rotation_xyz(ax, ay, az));
}

SkeletonSequence gaussian_noise(const SkeletonSequence& s, double sigma, Rng& rng) {
  return joint_jitter(s, sigma, rng);
}

SkeletonSequence gaussian_filter(const SkeletonSequence& s, double kernel_sigma) {
  if (!(kernel_sigma > 0.0)) throw ConfigError("gaussian_filter: kernel_sigma must be positive");
  const long radius = static_cast<long>(std::ceil(4.0 * kernel_sigma));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double z = 0.0;
  for (long k = -radius; k <= radius; ++k) {
    const double w = std::exp(-0.5 * static_cast<double>(k * k) / (kernel_sigma * kernel_sigma));
    kernel[static_cast<std::size_t>(k + radius)] = w;
    z += w;
  }
  for (auto& w : kernel) w /= z;
  SkeletonSequence out = s;
  const long T = static_cast<long>(s.frames());
  for (std::size_t j = 0; j < s.joints(); ++j)
    for (std::size_t a = 0; a < 3; ++a)
      for (long t = 0; t < T; ++t) {
        double acc = 0.0;
        for (long k = -radius; k <= radius; ++k)
          acc += kernel[static_cast<std::size_t>(k + radius)] * s.at(reflect_index(t + k, T), j, a);
        out.at(static_cast<std::size_t>(t), j, a) = static_cast<float>(acc);
      }
  return out;
}

SkeletonSequence axis_mask(const SkeletonSequence& s, double prob, Rng& rng) {
  require_prob(prob, "mask prob");
  SkeletonSequence out = s;
  if (!rng.bernoulli(prob)) return out;
  const std::size_t axis = static_cast<std::size_t>(rng.below(3));
  for (std::size_t t = 0; t < s.frames(); ++t)
    for (std::size_t j = 0; j < s.joints(); ++j) out.at(t, j, axis) = 0.0f;
  return out;
}

SkeletonSequence apply(const AugmentationSpec& spec, const SkeletonSequence& s, Rng& rng) {
  const AugmentParams& p = spec.params;
  p.validate();
  SkeletonSequence x = rng.bernoulli(p.pose_prob) ? pose_augment(s, p.shear_range, p.pose_angle_range, rng)
                                                  : joint_jitter(s, p.jitter_sigma, rng);
  x = temporal_crop_resize(x, p.crop_min_ratio, p.target_frames, rng);
  if (spec.kind != AugmentKind::kStrong) return x;
  x = spatial_flip(x, p.flip_axis, p.flip_prob, rng);
  x = rotate(x, p.rotate_range, rng);
  x = gaussian_noise(x, p.noise_sigma, rng);
  if (p.filter_sigma > 0.0) x = gaussian_filter(x, p.filter_sigma);
  x = axis_mask(x, p.mask_prob, rng);
  return x;
}

}  // namespace a2mc
