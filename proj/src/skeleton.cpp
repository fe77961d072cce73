#include "a2mc/skeleton.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

#include "a2mc/binary_io.hpp"
#include "a2mc/rng.hpp"

namespace a2mc {

Topology::Topology(std::size_t joints, std::vector<std::pair<std::uint32_t, std::uint32_t>> edges)
    : edges_(std::move(edges)), parent_(joints, -2) {
  if (joints < 2) throw ConfigError("topology needs at least 2 joints");
  if (edges_.size() != joints - 1) {
    throw ConfigError("topology with " + std::to_string(joints) + " joints needs " +
                      std::to_string(joints - 1) + " edges, got " + std::to_string(edges_.size()));
  }
  parent_[0] = -1;
  for (const auto& [child, parent] : edges_) {
    if (child >= joints || parent >= joints || child == 0 || child == parent) {
      throw ConfigError("invalid topology edge (" + std::to_string(child) + ", " + std::to_string(parent) + ")");
    }
    if (parent_[child] != -2) throw ConfigError("joint " + std::to_string(child) + " has two parents");
    parent_[child] = static_cast<int>(parent);
  }
  // Breadth-first from the root; a joint never reached means a cycle or a
  // disconnected component.
  std::vector<std::vector<std::uint32_t>> children(joints);
  for (const auto& [child, parent] : edges_) children[parent].push_back(child);
  order_.push_back(0);
  for (std::size_t i = 0; i < order_.size(); ++i)
    for (auto c : children[order_[i]]) order_.push_back(c);
  if (order_.size() != joints) throw ConfigError("topology is not a tree rooted at joint 0");
}

Topology Topology::chain(std::size_t joints) {
  std::vector<std::pair<std::uint32_t, std::uint32_t>> edges;
  for (std::uint32_t j = 1; j < joints; ++j) edges.emplace_back(j, j - 1);
  return Topology(joints, std::move(edges));
}

SkeletonSequence::SkeletonSequence(std::size_t frames, Topology topology, std::vector<float> coords)
    : frames_(frames), topology_(std::move(topology)), coords_(std::move(coords)) {
  if (frames_ < 2) throw ConfigError("skeleton sequence needs at least 2 frames");
  if (coords_.size() != frames_ * joints() * 3) {
    throw DimensionError("skeleton coords length " + std::to_string(coords_.size()) + " != " +
                         std::to_string(frames_) + " x " + std::to_string(joints()) + " x 3");
  }
  if (!all_finite()) throw NumericDomainError("skeleton sequence has non-finite coordinates");
}

SkeletonSequence::SkeletonSequence(std::size_t frames, Topology topology)
    : SkeletonSequence(frames, topology, std::vector<float>(frames * topology.joints() * 3, 0.0f)) {}

bool SkeletonSequence::all_finite() const {
  for (float v : coords_)
    if (!std::isfinite(v)) return false;
  return true;
}

const char* split_name(Split s) { return s == Split::kTrain ? "train" : "test"; }

void LabeledDataset::validate() const {
  if (sequences.size() != labels.size()) {
    throw ConfigError("dataset has " + std::to_string(sequences.size()) + " sequences but " +
                      std::to_string(labels.size()) + " labels");
  }
  if (num_classes < 1) throw ConfigError("dataset class count must be positive");
  std::vector<std::size_t> counts(num_classes, 0);
  for (auto l : labels) {
    if (l >= num_classes) throw ConfigError("label " + std::to_string(l) + " out of range");
    ++counts[l];
  }
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (counts[c] == 0) throw ConfigError("class " + std::to_string(c) + " has no samples");
  }
  for (std::size_t i = 1; i < sequences.size(); ++i) {
    if (sequences[i].frames() != sequences[0].frames() || !(sequences[i].topology() == sequences[0].topology())) {
      throw ConfigError("dataset sequences disagree on shape or topology");
    }
  }
}

namespace {

enum : std::uint64_t { kTagClass = 1, kTagRest = 2, kTagSample = 3, kTagBase = 4 };

struct BoneMotion {
  double yaw_amp, yaw_freq, yaw_phase;
  double pitch_amp, pitch_freq, pitch_phase;
};

struct ClassMotion {
  // Shared base motion plus the class-specific component.
  std::vector<BoneMotion> base, own;
  double root_amp_x, root_amp_z, root_freq, root_phase;
};

BoneMotion draw_bone(Rng& rng) {
  BoneMotion b{};
  b.yaw_amp = rng.uniform(0.2, 0.9);
  b.yaw_freq = rng.uniform(0.5, 2.5);
  b.yaw_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  b.pitch_amp = rng.uniform(0.1, 0.6);
  b.pitch_freq = rng.uniform(0.5, 2.5);
  b.pitch_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  return b;
}

ClassMotion class_motion(const SynthConfig& cfg, std::size_t label) {
  Rng base = Rng::stream(cfg.seed, {kTagBase});
  Rng rng = Rng::stream(cfg.seed, {kTagClass, label});
  ClassMotion m;
  for (std::size_t j = 1; j < cfg.joints; ++j) {
    m.base.push_back(draw_bone(base));
    m.own.push_back(draw_bone(rng));
  }
  m.root_amp_x = rng.uniform(0.0, 0.15);
  m.root_amp_z = rng.uniform(0.0, 0.15);
  m.root_freq = rng.uniform(0.5, 1.5);
  m.root_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  return m;
}

double wave(double amp, double freq, double phase, double u) {
  return amp * std::sin(2.0 * std::numbers::pi * freq * u + phase);
}

}  // namespace

SkeletonSequence synthesize_sequence(const SynthConfig& cfg, std::size_t label, std::uint64_t sample_key,
                                     bool with_noise) {
  const std::size_t T = cfg.frames, J = cfg.joints;
  const ClassMotion motion = class_motion(cfg, label);
  Rng rest = Rng::stream(cfg.seed, {kTagRest});
  std::vector<double> rest_yaw(J), rest_pitch(J), length(J);
  for (std::size_t j = 1; j < J; ++j) {
    rest_yaw[j] = rest.uniform(-std::numbers::pi, std::numbers::pi);
    rest_pitch[j] = rest.uniform(0.3, 1.2);
    length[j] = rest.uniform(0.15, 0.3);
  }

  Rng rng = Rng::stream(cfg.seed, {kTagSample, label, sample_key});
  const double phase = rng.uniform(-cfg.phase_jitter, cfg.phase_jitter);
  const double amp_scale = rng.uniform(0.85, 1.15);
  const double view = rng.uniform(-cfg.view_range, cfg.view_range);
  const double body = 1.0 + rng.uniform(-cfg.scale_range, cfg.scale_range);
  const double cv = std::cos(view), sv = std::sin(view);
  const double window = rng.uniform(cfg.time_window_min, 1.0);
  const double start = rng.uniform(0.0, 1.0 - window);
  const double sep = cfg.class_separation;

  Topology topo = Topology::chain(J);
  SkeletonSequence s(T, topo);
  const double two_pi = 2.0 * std::numbers::pi;
  for (std::size_t t = 0; t < T; ++t) {
    const double u = start + window * static_cast<double>(t) / static_cast<double>(T - 1);
    double px = motion.root_amp_x * std::sin(two_pi * motion.root_freq * u + motion.root_phase + phase);
    double py = 0.0;
    double pz = motion.root_amp_z * std::cos(two_pi * motion.root_freq * u + motion.root_phase + phase);
    auto emit = [&](std::size_t j, double x, double y, double z) {
      const double rx = cv * x + sv * z;
      const double rz = -sv * x + cv * z;
      s.at(t, j, 0) = static_cast<float>(body * rx);
      s.at(t, j, 1) = static_cast<float>(body * y);
      s.at(t, j, 2) = static_cast<float>(body * rz);
    };
    emit(0, px, py, pz);
    for (std::size_t j = 1; j < J; ++j) {
      const BoneMotion& b = motion.base[j - 1];
      const BoneMotion& c = motion.own[j - 1];
      const double yaw = rest_yaw[j] + amp_scale * (wave(b.yaw_amp, b.yaw_freq, b.yaw_phase + phase, u) +
                                                    sep * wave(c.yaw_amp, c.yaw_freq, c.yaw_phase + phase, u));
      const double pitch = rest_pitch[j] + amp_scale * (wave(b.pitch_amp, b.pitch_freq, b.pitch_phase + phase, u) +
                                                        sep * wave(c.pitch_amp, c.pitch_freq, c.pitch_phase + phase, u));
      px += length[j] * std::cos(pitch) * std::cos(yaw);
      py += length[j] * std::sin(pitch);
      pz += length[j] * std::cos(pitch) * std::sin(yaw);
      emit(j, px, py, pz);
    }
  }
  if (with_noise && cfg.noise_sigma > 0.0) {
    for (auto& v : s.coords()) v = static_cast<float>(v + rng.normal(0.0, cfg.noise_sigma));
  }
  return s;
}

DatasetPair generate_dataset(const SynthConfig& cfg) {
  if (cfg.num_classes < 2) throw ConfigError("generate_dataset: need at least 2 classes");
  if (cfg.frames < 8) throw ConfigError("generate_dataset: need at least 8 frames");
  if (cfg.joints < 4) throw ConfigError("generate_dataset: need at least 4 joints");
  if (!(cfg.noise_sigma >= 0.0)) throw ConfigError("generate_dataset: noise_sigma must be non-negative");
  if (!(cfg.time_window_min > 0.0 && cfg.time_window_min <= 1.0)) {
    throw ConfigError("generate_dataset: time_window_min must lie in (0, 1]");
  }
  if (!(cfg.class_separation >= 0.0)) throw ConfigError("generate_dataset: class_separation must be non-negative");
  if (cfg.per_class_train < 1 || cfg.per_class_test < 1) {
    throw ConfigError("generate_dataset: each split needs at least one sample per class");
  }
  if (cfg.num_classes > 65535) throw ConfigError("generate_dataset: too many classes");
  DatasetPair out;
  auto fill = [&](LabeledDataset& ds, Split split, std::size_t per_class) {
    ds.num_classes = cfg.num_classes;
    ds.split = split;
    for (std::size_t i = 0; i < per_class; ++i) {
      for (std::size_t c = 0; c < cfg.num_classes; ++c) {
        const std::uint64_t key = (static_cast<std::uint64_t>(split) << 40) ^ (i + 1);
        ds.sequences.push_back(synthesize_sequence(cfg, c, key));
        ds.labels.push_back(static_cast<std::uint16_t>(c));
      }
    }
  };
  fill(out.train, Split::kTrain, cfg.per_class_train);
  fill(out.test, Split::kTest, cfg.per_class_test);
  return out;
}

SkeletonSequence resample_time(const SkeletonSequence& s, std::size_t target_frames) {
  if (target_frames < 2) throw ConfigError("resample_time: target must be at least 2 frames");
  const std::size_t T = s.frames(), J = s.joints();
  if (target_frames == T) return s;
  SkeletonSequence out(target_frames, s.topology());
  const double step = static_cast<double>(T - 1) / static_cast<double>(target_frames - 1);
  for (std::size_t t = 0; t < target_frames; ++t) {
    std::size_t lo;
    double w;
    if (t == target_frames - 1) {
      lo = T - 2;
      w = 1.0;
    } else {
      const double pos = static_cast<double>(t) * step;
      lo = std::min(static_cast<std::size_t>(pos), T - 2);
      w = pos - static_cast<double>(lo);
    }
    for (std::size_t j = 0; j < J; ++j)
      for (std::size_t a = 0; a < 3; ++a) {
        const double v0 = s.at(lo, j, a), v1 = s.at(lo + 1, j, a);
        out.at(t, j, a) = w == 0.0 ? static_cast<float>(v0) : w == 1.0 ? static_cast<float>(v1)
                                                                       : static_cast<float>(v0 + w * (v1 - v0));
      }
  }
  return out;
}

SkeletonSequence to_motion(const SkeletonSequence& s) {
  SkeletonSequence out(s.frames(), s.topology());
  for (std::size_t t = 0; t + 1 < s.frames(); ++t)
    for (std::size_t j = 0; j < s.joints(); ++j)
      for (std::size_t a = 0; a < 3; ++a) out.at(t, j, a) = s.at(t + 1, j, a) - s.at(t, j, a);
  return out;
}

SkeletonSequence to_bone(const SkeletonSequence& s) {
  SkeletonSequence out = s;
  const Topology& topo = s.topology();
  for (std::size_t t = 0; t < s.frames(); ++t)
    for (std::size_t j = 1; j < s.joints(); ++j) {
      const int p = topo.parent(j);
      for (std::size_t a = 0; a < 3; ++a) out.at(t, j, a) = s.at(t, j, a) - s.at(t, static_cast<std::size_t>(p), a);
    }
  return out;
}

SkeletonSequence from_bone(const SkeletonSequence& bones) {
  SkeletonSequence out = bones;
  const Topology& topo = bones.topology();
  for (std::size_t t = 0; t < bones.frames(); ++t)
    for (auto j : topo.order()) {
      if (j == 0) continue;
      const auto p = static_cast<std::size_t>(topo.parent(j));
      for (std::size_t a = 0; a < 3; ++a) out.at(t, j, a) = bones.at(t, j, a) + out.at(t, p, a);
    }
  return out;
}

namespace {

constexpr std::string_view kDatasetMagic = "A2MCDATA";

void write_record(BinaryWriter& w, const LabeledDataset& ds) {
  ds.validate();
  if (ds.sequences.empty()) throw ConfigError("cannot save an empty dataset");
  const SkeletonSequence& first = ds.sequences.front();
  w.put_bytes(kDatasetMagic);
  w.put<std::uint32_t>(kDatasetFormatVersion);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(ds.split));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ds.num_classes));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ds.size()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(first.frames()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(first.joints()));
  for (const auto& [child, parent] : first.topology().edges()) {
    w.put<std::uint32_t>(child);
    w.put<std::uint32_t>(parent);
  }
  for (const auto& s : ds.sequences)
    for (float v : s.coords()) w.put<float>(v);
  for (auto l : ds.labels) w.put<std::uint16_t>(l);
}

LabeledDataset read_record(BinaryReader& r) {
  r.expect_magic(kDatasetMagic);
  const auto version = r.get<std::uint32_t>("dataset version");
  if (version != kDatasetFormatVersion) {
    throw UnsupportedVersionError("unsupported dataset format version " + std::to_string(version) +
                                  " (supported: " + std::to_string(kDatasetFormatVersion) + ")");
  }
  const auto split = r.get<std::uint8_t>("split tag");
  if (split > 1) r.fail("unknown split tag " + std::to_string(split));
  const auto C = r.get<std::uint32_t>("class count");
  const auto N = r.get<std::uint32_t>("sample count");
  const auto T = r.get<std::uint32_t>("frame count");
  const auto J = r.get<std::uint32_t>("joint count");
  if (J < 2 || J > 4096 || T < 2 || T > (1u << 20)) r.fail("implausible sequence shape");
  std::vector<std::pair<std::uint32_t, std::uint32_t>> edges;
  for (std::uint32_t e = 0; e + 1 < J; ++e) {
    const auto child = r.get<std::uint32_t>("topology child");
    const auto parent = r.get<std::uint32_t>("topology parent");
    edges.emplace_back(child, parent);
  }
  Topology topo(J, std::move(edges));
  LabeledDataset ds;
  ds.num_classes = C;
  ds.split = static_cast<Split>(split);
  ds.sequences.reserve(N);
  const std::size_t per = static_cast<std::size_t>(T) * J * 3;
  for (std::uint32_t i = 0; i < N; ++i) {
    std::vector<float> coords(per);
    for (auto& v : coords) v = r.get<float>("coordinates");
    ds.sequences.emplace_back(T, topo, std::move(coords));
  }
  ds.labels.resize(N);
  for (auto& l : ds.labels) l = r.get<std::uint16_t>("labels");
  ds.validate();
  return ds;
}

}  // namespace

void save_datasets(const std::string& path, std::span<const LabeledDataset> datasets) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path + " for writing");
  BinaryWriter w(f);
  for (const auto& ds : datasets) write_record(w, ds);
  f.flush();
  if (!f) throw Error("write failed: " + path);
}

void save_dataset(const std::string& path, const LabeledDataset& dataset) {
  save_datasets(path, std::span<const LabeledDataset>(&dataset, 1));
}

std::vector<LabeledDataset> load_datasets(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path);
  BinaryReader r(f);
  std::vector<LabeledDataset> out;
  do {
    out.push_back(read_record(r));
  } while (!r.at_end());
  return out;
}

LabeledDataset load_dataset(const std::string& path, Split split) {
  for (auto& ds : load_datasets(path))
    if (ds.split == split) return std::move(ds);
  throw FormatError(path + " has no " + split_name(split) + " split");
}

}  // namespace a2mc
