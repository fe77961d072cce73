#include "a2mc/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "a2mc/attack.hpp"
#include "a2mc/mc_loss.hpp"
#include "a2mc/parallel.hpp"

namespace a2mc {

namespace {

enum : std::uint64_t { kTagStep = 101, kTagShuffle = 102, kTagWarmup = 103, kTagHead = 104 };
enum : std::uint64_t { kViewKey = 0, kViewWeak = 1, kViewStrong = 2, kViewQuery = 3 };

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::vector<Tensor<float>*> param_list(EncoderParams<float>& p) {
  std::vector<Tensor<float>*> v;
  p.for_each([&](std::string_view, Tensor<float>& t) { v.push_back(&t); });
  return v;
}

std::vector<std::string> param_names(const EncoderParams<float>& p) {
  std::vector<std::string> v;
  p.for_each([&](std::string_view n, const Tensor<float>&) { v.emplace_back(n); });
  return v;
}

}  // namespace

// ---------------------------------------------------------------------------
// MetricsRecord

void MetricsRecord::add_step(const StepStats& s) {
  if (!steps.empty() && s.step <= steps.back().step) throw ContractError("metrics: step index must increase");
  steps.push_back(s);
}

void MetricsRecord::add_epoch(const EpochStats& e) {
  if (!epochs.empty() && e.epoch <= epochs.back().epoch) throw ContractError("metrics: epoch index must increase");
  epochs.push_back(e);
}

const char* MetricsRecord::step_header() { return "step,epoch,batch,lr,loss,l1,l2,l3,grad_norm,bank_update_norm,attacks_aborted"; }

const char* MetricsRecord::epoch_header() { return "epoch,steps,lr,loss,l1,l2,l3,bank_update_norm"; }

std::string MetricsRecord::step_row(const StepStats& s) {
  return std::to_string(s.step) + "," + std::to_string(s.epoch) + "," + std::to_string(s.batch) + "," + fmt(s.lr) +
         "," + fmt(s.loss) + "," + fmt(s.l1) + "," + fmt(s.l2) + "," + fmt(s.l3) + "," + fmt(s.grad_norm) + "," + fmt(s.bank_update_norm) + "," +
         std::to_string(s.attacks_aborted);
}

std::string MetricsRecord::epoch_row(const EpochStats& e) {
  return std::to_string(e.epoch) + "," + std::to_string(e.steps) + "," + fmt(e.lr) + "," + fmt(e.loss) + "," +
         fmt(e.l1) + "," + fmt(e.l2) + "," + fmt(e.l3) + "," + fmt(e.bank_update_norm);
}

// ---------------------------------------------------------------------------
// Trainer

Trainer::Trainer(RunConfig cfg, const LabeledDataset& train) : Trainer(std::move(cfg), train, true) {}

Trainer::Trainer(RunConfig cfg, const LabeledDataset& train, bool init_bank) : cfg_(std::move(cfg)), train_(&train) {
  cfg_.resolve();
  if (train.size() == 0) throw ConfigError("pretrain: training set is empty");
  train.validate();
  if (train.sequences[0].joints() != cfg_.model.joints) {
    throw ConfigError("pretrain: dataset has " + std::to_string(train.sequences[0].joints()) +
                      " joints, model expects " + std::to_string(cfg_.model.joints));
  }
  inputs_.reserve(train.size());
  for (const auto& s : train.sequences) inputs_.push_back(resample_time(s, cfg_.model.frames));
  state_.query = init_encoder<float>(cfg_.model, cfg_.seed);
  state_.key = state_.query;
  const std::size_t classes = cfg_.train.attack_classes ? cfg_.train.attack_classes : train.num_classes;
  state_.head = init_attack_head<float>(cfg_.model.feature, classes, splitmix64(cfg_.seed ^ kTagHead));
  for (auto* p : param_list(state_.query)) velocity_.push_back(Tensor<float>::zeros(p->shape()));
  if (init_bank) init_memory_bank();
}

void Trainer::init_memory_bank() {
  const std::size_t n = std::min(cfg_.train.bank_size, inputs_.size());
  std::vector<std::size_t> order(inputs_.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng = Rng::stream(cfg_.seed, {kTagWarmup});
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  Tensor<float> feats({n, cfg_.model.feature});
  std::vector<Tensor<float>> rows(n);
  parallel_for(n, cfg_.train.threads, [&](std::size_t i) { rows[i] = encode(state_.key, inputs_[order[i]]); });
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < cfg_.model.feature; ++j) feats.at(i, j) = rows[i][j];
  bank_ = MemoryBank<float>::init(feats, cfg_.train.bank_size,
                                  cfg_.train.flags.pnm ? BankMode::kAdversarial : BankMode::kFifo);
}

std::size_t Trainer::steps_per_epoch() const {
  return (inputs_.size() + cfg_.train.batch_size - 1) / cfg_.train.batch_size;
}

std::vector<std::size_t> Trainer::epoch_order(std::size_t epoch) const {
  std::vector<std::size_t> order(inputs_.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng = Rng::stream(cfg_.seed, {kTagShuffle, epoch});
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

std::string hard_positive_pipeline(const RunConfig& cfg) {
  const auto& f = cfg.train.flags;
  if (!f.hard_positives()) return "none";
  return (f.attack ? cfg.attack.descriptor() : std::string("no-attack")) + "|" + cfg.weak_spec().descriptor() + "|" +
         cfg.strong_spec().descriptor();
}

std::string Trainer::hard_positive_pipeline() const { return a2mc::hard_positive_pipeline(cfg_); }

SampleResult Trainer::process_sample(std::size_t idx) const {
  const SkeletonSequence& x = inputs_.at(idx);
  auto stream = [&](std::uint64_t view) { return Rng::stream(cfg_.seed, {kTagStep, global_step_, idx, view}); };
  const AblationFlags& flags = cfg_.train.flags;
  SampleResult res;

  Rng r0 = stream(kViewKey), r3 = stream(kViewQuery);
  const AugmentationSpec basic = cfg_.basic_spec();
  const SkeletonSequence x0 = apply(basic, x, r0);
  const SkeletonSequence x3 = apply(basic, x, r3);
  res.f0 = encode(state_.key, x0);

  SkeletonSequence x1, x2;
  if (flags.hard_positives()) {
    Rng r1 = stream(kViewWeak), r2 = stream(kViewStrong);
    if (flags.attack) {
      auto views = att_aug_views(x, state_.query, state_.head, cfg_.attack, cfg_.weak_spec(), cfg_.strong_spec(), r1, r2);
      res.attack_aborted = views.attack.aborted;
      x1 = std::move(views.weak_view);
      x2 = std::move(views.strong_view);
    } else {
      x1 = apply(cfg_.weak_spec(), x, r1);
      x2 = apply(cfg_.strong_spec(), x, r2);
    }
  }

  const float tau = static_cast<float>(cfg_.loss.tau);
  Tape<float> tape;
  const auto w = bind(tape, state_.query, true);
  FeatureSet<float> f;
  f.f0 = tape.constant(res.f0);
  f.f3 = encode_graph(w, tape.constant(x3.to_matrix<float>()));
  if (flags.hard_positives()) {
    f.f1 = encode_graph(w, tape.constant(x1.to_matrix<float>()));
    f.f2 = encode_graph(w, tape.constant(x2.to_matrix<float>()));
  }
  const auto terms = contrastive_objective(f, tape.constant(bank_.rows()), flags.objective(), cfg_.pnm, tau);
  tape.backward(terms.total);
  res.loss = terms.total.item();
  res.l1 = terms.value(terms.l1);
  res.l2 = terms.value(terms.l2);
  res.l3 = terms.value(terms.l3);
  w.for_each([&](std::string_view, const Var<float>& v) { res.param_grads.push_back(tape.grad(v)); });

  if (flags.pnm) {
    // Bank ascent gradient: same objective at the bank temperature, encoder
    // outputs held constant.
    Tape<float> bt;
    FeatureSet<float> c;
    c.f0 = bt.constant(res.f0);
    c.f3 = bt.constant(f.f3.value());
    if (flags.hard_positives()) {
      c.f1 = bt.constant(f.f1.value());
      c.f2 = bt.constant(f.f2.value());
    }
    const Var<float> m0 = bt.leaf(bank_.rows());
    const auto bterms =
        contrastive_objective(c, m0, flags.objective(), cfg_.pnm, static_cast<float>(cfg_.loss.tau_bank));
    bt.backward(bterms.total);
    res.bank_grad = bt.grad(m0);
  }
  return res;
}

StepStats Trainer::step() {
  if (finished()) throw ContractError("step: training already finished");
  if (batch_in_epoch_ == 0 || order_.empty()) {
    order_ = epoch_order(epoch_);
    running_ = EpochStats{};
    running_.epoch = epoch_;
  }
  const std::size_t B = cfg_.train.batch_size;
  const std::size_t begin = batch_in_epoch_ * B;
  const std::size_t end = std::min(order_.size(), begin + B);
  const std::size_t n = end - begin;
  std::vector<SampleResult> results(n);
  parallel_for(n, cfg_.train.threads, [&](std::size_t i) { results[i] = process_sample(order_[begin + i]); });

  StepStats st;
  st.step = global_step_;
  st.epoch = epoch_;
  st.batch = batch_in_epoch_;
  st.lr = current_lr();
  const double inv = 1.0 / static_cast<double>(n);
  for (const auto& r : results) {
    st.loss += r.loss * inv;
    st.l1 += r.l1 * inv;
    st.l2 += r.l2 * inv;
    st.l3 += r.l3 * inv;
    st.attacks_aborted += r.attack_aborted ? 1 : 0;
  }
  if (!std::isfinite(st.loss)) {
    throw NumericDomainError("non-finite loss at step " + std::to_string(global_step_));
  }

  // Encoder descent: SGD with momentum and weight decay.
  const float finv = static_cast<float>(inv);
  auto params = param_list(state_.query);
  const float lr = static_cast<float>(st.lr);
  const float mu = static_cast<float>(cfg_.train.sgd_momentum);
  const float wd = static_cast<float>(cfg_.train.weight_decay);
  std::vector<Tensor<float>> grads;
  double sq = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor<float> g = Tensor<float>::zeros(params[k]->shape());
    for (const auto& r : results) axpy(finv, r.param_grads[k], g);
    for (float v : g.data()) sq += double(v) * v;
    grads.push_back(std::move(g));
  }
  st.grad_norm = std::sqrt(sq);
  const float clip = cfg_.train.grad_clip > 0.0 && st.grad_norm > cfg_.train.grad_clip
                         ? static_cast<float>(cfg_.train.grad_clip / st.grad_norm)
                         : 1.0f;
  for (std::size_t k = 0; k < params.size(); ++k) {
    const Tensor<float>& g = grads[k];
    Tensor<float>& theta = *params[k];
    Tensor<float>& v = velocity_[k];
    for (std::size_t i = 0; i < g.numel(); ++i) {
      const float gi = clip * g[i] + wd * theta[i];
      v[i] = mu * v[i] + gi;
      theta[i] -= lr * v[i];
    }
  }

  // Bank: gradient ascent in adversarial mode, queue otherwise.
  if (cfg_.train.flags.pnm) {
    Tensor<float> g = Tensor<float>::zeros(bank_.rows().shape());
    for (const auto& r : results) axpy(finv, r.bank_grad, g);
    st.bank_update_norm = cfg_.pnm.beta * static_cast<double>(frobenius_norm(g));
    if (!bank_.adversarial_update(g, cfg_.pnm.beta, cfg_.pnm.renormalize)) {
      std::fprintf(stderr, "warning: non-finite bank gradient at step %zu, update skipped\n", global_step_);
      st.bank_update_norm = 0.0;
    }
  } else {
    Tensor<float> keys({n, cfg_.model.feature});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < cfg_.model.feature; ++j) keys.at(i, j) = results[i].f0[j];
    bank_.fifo_enqueue(keys);
  }

  momentum_update(state_.key, state_.query, cfg_.train.alpha);

  metrics_.add_step(st);
  running_.steps += 1;
  running_.lr = st.lr;
  running_.loss += st.loss;
  running_.l1 += st.l1;
  running_.l2 += st.l2;
  running_.l3 += st.l3;
  running_.bank_update_norm += st.bank_update_norm;
  ++global_step_;
  ++batch_in_epoch_;
  if (batch_in_epoch_ == steps_per_epoch()) {
    const double k = static_cast<double>(running_.steps);
    running_.loss /= k;
    running_.l1 /= k;
    running_.l2 /= k;
    running_.l3 /= k;
    running_.bank_update_norm /= k;
    metrics_.add_epoch(running_);
    ++epoch_;
    batch_in_epoch_ = 0;
    order_.clear();
  }
  return st;
}

EpochStats Trainer::run_epoch() {
  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t target = epoch_;
  while (!finished() && epoch_ == target) step();
  EpochStats e = metrics_.epochs.back();
  e.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  metrics_.epochs.back().wall_seconds = e.wall_seconds;
  return e;
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint c;
  c.put_encoder("query.", state_.query);
  c.put_encoder("key.", state_.key);
  const auto names = param_names(state_.query);
  for (std::size_t k = 0; k < names.size(); ++k) c.put("opt.velocity." + names[k], velocity_[k]);
  c.put("head.w", state_.head.w);
  c.put("head.b", state_.head.b);
  c.put("pnm.M0", bank_.rows());
  c.meta["version"] = kToolVersion;
  c.meta["config"] = config_to_json(cfg_);
  c.meta["state"] = {{"epoch", epoch_},
                     {"batch_in_epoch", batch_in_epoch_},
                     {"global_step", global_step_},
                     {"bank_mode", bank_mode_name(bank_.mode())},
                     {"bank_cursor", bank_.cursor()}};
  return c;
}

Trainer Trainer::resume(RunConfig cfg, const LabeledDataset& train, const Checkpoint& ckpt) {
  Trainer t(std::move(cfg), train, false);
  t.state_.query = ckpt.get_encoder("query.", t.cfg_.model);
  t.state_.key = ckpt.get_encoder("key.", t.cfg_.model);
  const auto names = param_names(t.state_.query);
  for (std::size_t k = 0; k < names.size(); ++k) {
    const auto& v = ckpt.get("opt.velocity." + names[k]);
    if (v.shape() != t.velocity_[k].shape()) throw FormatError("checkpoint velocity shape mismatch for " + names[k]);
    t.velocity_[k] = v;
  }
  t.state_.head = {ckpt.get("head.w"), ckpt.get("head.b")};
  if (t.state_.head.w.dim(0) != t.cfg_.model.feature) throw FormatError("checkpoint attack head shape mismatch");
  try {
    const auto& st = ckpt.meta.at("state");
    t.epoch_ = st.at("epoch").get<std::size_t>();
    t.batch_in_epoch_ = st.at("batch_in_epoch").get<std::size_t>();
    t.global_step_ = st.at("global_step").get<std::size_t>();
    const std::string mode = st.at("bank_mode").get<std::string>();
    const BankMode bm = mode == "fifo" ? BankMode::kFifo : BankMode::kAdversarial;
    if ((bm == BankMode::kAdversarial) != t.cfg_.train.flags.pnm) {
      throw ConfigError("checkpoint bank mode does not match the pnm flag");
    }
    t.bank_ = MemoryBank<float>::restore(ckpt.get("pnm.M0"), bm, st.at("bank_cursor").get<std::size_t>());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint state is incomplete: ") + e.what());
  }
  if (t.bank_.dim() != t.cfg_.model.feature) throw FormatError("checkpoint bank width mismatch");
  if (t.batch_in_epoch_ > 0) {
    t.order_ = t.epoch_order(t.epoch_);
    t.running_ = EpochStats{};
    t.running_.epoch = t.epoch_;
  }
  return t;
}

// ---------------------------------------------------------------------------

PretrainResult pretrain(const RunConfig& cfg, const LabeledDataset& train, const std::string& out_dir,
                        const std::function<void(const EpochStats&)>& on_epoch, const Checkpoint* resume_from) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  const fs::path dir(out_dir);
  save_config((dir / "config.json").string(), cfg);
  {
    std::ofstream v(dir / "VERSION");
    v << kToolVersion << "\n";
  }
  Trainer trainer = resume_from ? Trainer::resume(cfg, train, *resume_from) : Trainer(cfg, train);
  const bool append = resume_from != nullptr;
  const auto mode = append ? std::ios::app : std::ios::trunc;
  std::ofstream steps_csv(dir / "metrics_steps.csv", mode);
  std::ofstream epochs_csv(dir / "metrics_epochs.csv", mode);
  std::ofstream timing_csv(dir / "timing.csv", mode);
  if (!steps_csv || !epochs_csv || !timing_csv) throw Error("cannot write metrics into " + out_dir);
  if (!append) {
    steps_csv << "# a2mc step metrics v1\n" << MetricsRecord::step_header() << "\n";
    epochs_csv << "# a2mc epoch metrics v1\n" << MetricsRecord::epoch_header() << "\n";
    timing_csv << "epoch,wall_seconds\n";
  }
  const std::string ckpt_path = (dir / "checkpoint.bin").string();
  std::size_t written_steps = 0;
  while (!trainer.finished()) {
    EpochStats e;
    try {
      e = trainer.run_epoch();
    } catch (const NumericDomainError& err) {
      nlohmann::json diag = {{"error", err.what()},
                             {"epoch", trainer.epoch()},
                             {"global_step", trainer.global_step()},
                             {"last_good_checkpoint", ckpt_path}};
      std::ofstream(dir / "diagnostic.json") << diag.dump(2) << "\n";
      throw;
    }
    const auto& m = trainer.metrics();
    for (; written_steps < m.steps.size(); ++written_steps)
      steps_csv << MetricsRecord::step_row(m.steps[written_steps]) << "\n";
    epochs_csv << MetricsRecord::epoch_row(e) << "\n";
    timing_csv << e.epoch << "," << fmt(e.wall_seconds) << "\n";
    steps_csv.flush();
    epochs_csv.flush();
    timing_csv.flush();
    save_checkpoint(ckpt_path, trainer.checkpoint());
    if (on_epoch) on_epoch(e);
  }
  return {trainer.state(), trainer.bank(), trainer.metrics()};
}

}  // namespace a2mc
