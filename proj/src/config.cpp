#include "a2mc/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>

namespace a2mc {

using nlohmann::json;

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train.epochs must be at least 1");
  if (batch_size < 1) throw ConfigError("train.batch_size must be at least 1");
  if (!(lr >= 0.0)) throw ConfigError("train.lr must be non-negative");
  if (!std::is_sorted(lr_drop_epochs.begin(), lr_drop_epochs.end())) {
    throw ConfigError("train.lr_drop_epochs must be sorted ascending");
  }
  if (!(lr_drop_factor > 0.0)) throw ConfigError("train.lr_drop_factor must be positive");
  if (!(sgd_momentum >= 0.0 && sgd_momentum < 1.0)) throw ConfigError("train.sgd_momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("train.weight_decay must be non-negative");
  if (!(grad_clip >= 0.0)) throw ConfigError("train.grad_clip must be non-negative");
  if (!(alpha >= 0.0 && alpha < 1.0)) throw ConfigError("train.alpha must lie in [0, 1)");
  if (bank_size < 1) throw ConfigError("train.bank_size must be at least 1");
  if (attack_classes == 1) throw ConfigError("train.attack_classes must be 0 or at least 2");
}

double TrainConfig::lr_at_epoch(std::size_t epoch) const {
  double v = lr;
  for (auto e : lr_drop_epochs)
    if (epoch >= e) v *= lr_drop_factor;
  return v;
}

void EvalConfig::validate() const {
  if (knn_k < 1) throw ConfigError("eval.knn_k must be at least 1");
  if (probe_epochs < 1) throw ConfigError("eval.probe_epochs must be at least 1");
  if (!(probe_lr > 0.0)) throw ConfigError("eval.probe_lr must be positive");
  if (probe_batch < 1) throw ConfigError("eval.probe_batch must be at least 1");
  if (!(probe_momentum >= 0.0 && probe_momentum < 1.0)) throw ConfigError("eval.probe_momentum must lie in [0, 1)");
}

void RunConfig::resolve() {
  data.seed = seed;
  model.joints = data.joints;
  weak.target_frames = model.frames;
  strong.target_frames = model.frames;
  if (data.num_classes < 2) throw ConfigError("data.num_classes must be at least 2");
  model.validate();
  train.validate();
  loss.validate();
  attack.validate();
  pnm.validate();
  weak.validate();
  strong.validate();
  eval.validate();
}

namespace {

// Reads known keys out of one JSON object and rejects the rest.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("config: " + where() + " must be an object");
  }

  template <typename U>
  void get(const char* key, U& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<U>();
    } catch (const json::exception& e) {
      throw ConfigError("config: bad value for " + where() + key + ": " + e.what());
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError("config: unknown key " + where() + k);
    }
  }

  std::string where() const { return path_.empty() ? std::string() : path_ + "."; }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_augment(const json& j, const std::string& path, AugmentParams& a) {
  Section s(j, path);
  s.get("shear_range", a.shear_range);
  s.get("pose_angle_range", a.pose_angle_range);
  s.get("jitter_sigma", a.jitter_sigma);
  s.get("pose_prob", a.pose_prob);
  s.get("crop_min_ratio", a.crop_min_ratio);
  s.get("flip_axis", a.flip_axis);
  s.get("flip_prob", a.flip_prob);
  s.get("rotate_range", a.rotate_range);
  s.get("noise_sigma", a.noise_sigma);
  s.get("filter_sigma", a.filter_sigma);
  s.get("mask_prob", a.mask_prob);
  s.finish();
}

json augment_json(const AugmentParams& a) {
  return {{"shear_range", a.shear_range},   {"pose_angle_range", a.pose_angle_range},
          {"jitter_sigma", a.jitter_sigma}, {"pose_prob", a.pose_prob},
          {"crop_min_ratio", a.crop_min_ratio}, {"flip_axis", a.flip_axis},
          {"flip_prob", a.flip_prob},       {"rotate_range", a.rotate_range},
          {"noise_sigma", a.noise_sigma},   {"filter_sigma", a.filter_sigma},
          {"mask_prob", a.mask_prob}};
}

}  // namespace

RunConfig config_from_json(const json& j) {
  RunConfig c;
  Section root(j, "");
  root.get("seed", c.seed);
  if (const json* d = root.child("data")) {
    Section s(*d, "data");
    s.get("num_classes", c.data.num_classes);
    s.get("per_class_train", c.data.per_class_train);
    s.get("per_class_test", c.data.per_class_test);
    s.get("frames", c.data.frames);
    s.get("joints", c.data.joints);
    s.get("noise_sigma", c.data.noise_sigma);
    s.get("view_range", c.data.view_range);
    s.get("scale_range", c.data.scale_range);
    s.get("phase_jitter", c.data.phase_jitter);
    s.get("time_window_min", c.data.time_window_min);
    s.get("class_separation", c.data.class_separation);
    s.finish();
  }
  if (const json* m = root.child("model")) {
    Section s(*m, "model");
    s.get("frames", c.model.frames);
    s.get("embed", c.model.embed);
    s.get("hidden", c.model.hidden);
    s.get("proj_hidden", c.model.proj_hidden);
    s.get("feature", c.model.feature);
    s.finish();
  }
  if (const json* t = root.child("train")) {
    Section s(*t, "train");
    s.get("epochs", c.train.epochs);
    s.get("batch_size", c.train.batch_size);
    s.get("lr", c.train.lr);
    s.get("lr_drop_epochs", c.train.lr_drop_epochs);
    s.get("lr_drop_factor", c.train.lr_drop_factor);
    s.get("sgd_momentum", c.train.sgd_momentum);
    s.get("weight_decay", c.train.weight_decay);
    s.get("grad_clip", c.train.grad_clip);
    s.get("alpha", c.train.alpha);
    s.get("bank_size", c.train.bank_size);
    s.get("attack_classes", c.train.attack_classes);
    s.get("threads", c.train.threads);
    if (const json* f = s.child("ablation")) {
      Section fs(*f, "train.ablation");
      fs.get("attack", c.train.flags.attack);
      fs.get("pnm", c.train.flags.pnm);
      fs.get("mc", c.train.flags.mc);
      fs.finish();
    }
    s.finish();
  }
  if (const json* l = root.child("loss")) {
    Section s(*l, "loss");
    s.get("tau", c.loss.tau);
    s.get("tau_bank", c.loss.tau_bank);
    s.finish();
  }
  if (const json* a = root.child("attack")) {
    Section s(*a, "attack");
    s.get("epsilon", c.attack.epsilon);
    s.get("eta", c.attack.eta);
    s.get("steps", c.attack.steps);
    s.get("beta1", c.attack.beta1);
    s.get("beta2", c.attack.beta2);
    s.get("adam_eps", c.attack.adam_eps);
    s.finish();
  }
  if (const json* p = root.child("pnm")) {
    Section s(*p, "pnm");
    s.get("lambdas", c.pnm.lambdas);
    s.get("renormalize", c.pnm.renormalize);
    s.get("beta", c.pnm.beta);
    s.finish();
  }
  if (const json* a = root.child("augment")) {
    Section s(*a, "augment");
    if (const json* w = s.child("weak")) read_augment(*w, "augment.weak", c.weak);
    if (const json* st = s.child("strong")) read_augment(*st, "augment.strong", c.strong);
    s.finish();
  }
  if (const json* e = root.child("eval")) {
    Section s(*e, "eval");
    s.get("knn_k", c.eval.knn_k);
    s.get("probe_epochs", c.eval.probe_epochs);
    s.get("probe_lr", c.eval.probe_lr);
    s.get("probe_batch", c.eval.probe_batch);
    s.get("probe_momentum", c.eval.probe_momentum);
    s.finish();
  }
  if (const json* p = root.child("paths")) {
    Section s(*p, "paths");
    s.get("data", c.paths.data);
    s.get("out", c.paths.out);
    s.finish();
  }
  root.finish();
  c.resolve();
  return c;
}

json config_to_json(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["data"] = {{"num_classes", c.data.num_classes}, {"per_class_train", c.data.per_class_train},
               {"per_class_test", c.data.per_class_test}, {"frames", c.data.frames},
               {"joints", c.data.joints}, {"noise_sigma", c.data.noise_sigma},
               {"view_range", c.data.view_range}, {"scale_range", c.data.scale_range},
               {"phase_jitter", c.data.phase_jitter}, {"time_window_min", c.data.time_window_min},
               {"class_separation", c.data.class_separation}};
  j["model"] = {{"frames", c.model.frames}, {"embed", c.model.embed}, {"hidden", c.model.hidden},
                {"proj_hidden", c.model.proj_hidden}, {"feature", c.model.feature}};
  j["train"] = {{"epochs", c.train.epochs},
                {"batch_size", c.train.batch_size},
                {"lr", c.train.lr},
                {"lr_drop_epochs", c.train.lr_drop_epochs},
                {"lr_drop_factor", c.train.lr_drop_factor},
                {"sgd_momentum", c.train.sgd_momentum},
                {"weight_decay", c.train.weight_decay},
                {"grad_clip", c.train.grad_clip},
                {"alpha", c.train.alpha},
                {"bank_size", c.train.bank_size},
                {"attack_classes", c.train.attack_classes},
                {"threads", c.train.threads},
                {"ablation", {{"attack", c.train.flags.attack}, {"pnm", c.train.flags.pnm}, {"mc", c.train.flags.mc}}}};
  j["loss"] = {{"tau", c.loss.tau}, {"tau_bank", c.loss.tau_bank}};
  j["attack"] = {{"epsilon", c.attack.epsilon}, {"eta", c.attack.eta},   {"steps", c.attack.steps},
                 {"beta1", c.attack.beta1},     {"beta2", c.attack.beta2}, {"adam_eps", c.attack.adam_eps}};
  j["pnm"] = {{"lambdas", c.pnm.lambdas}, {"renormalize", c.pnm.renormalize}, {"beta", c.pnm.beta}};
  j["augment"] = {{"weak", augment_json(c.weak)}, {"strong", augment_json(c.strong)}};
  j["eval"] = {{"knn_k", c.eval.knn_k},         {"probe_epochs", c.eval.probe_epochs},
               {"probe_lr", c.eval.probe_lr},   {"probe_batch", c.eval.probe_batch},
               {"probe_momentum", c.eval.probe_momentum}};
  j["paths"] = {{"data", c.paths.data}, {"out", c.paths.out}};
  return j;
}

RunConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config " + path);
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config " + path + " is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

void save_config(const std::string& path, const RunConfig& cfg) {
  std::ofstream f(path);
  if (!f) throw Error("cannot open " + path + " for writing");
  f << config_to_json(cfg).dump(2) << "\n";
}

}  // namespace a2mc
