#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "a2mc/ablation.hpp"
#include "a2mc/attack.hpp"
#include "a2mc/checkpoint.hpp"
#include "a2mc/eval.hpp"
#include "a2mc/grad_suite.hpp"
#include "a2mc/mc_loss.hpp"
#include "a2mc/pnm.hpp"
#include "a2mc/trainer.hpp"
#include "json.hpp"
#include "test_util.hpp"

using namespace a2mc;
using a2mc::testing::random_unit_rows;
using a2mc::testing::TempDir;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + std::string("failed: ") + what;
    }
  }
  void note(const std::string& s) { detail += (detail.empty() ? "" : "; ") + s; }
};

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

// 1: finite-difference gradient suite.
Outcome gradient_suite() {
  Outcome o;
  Stopwatch sw;
  const auto entries = run_grad_suite(2024, 20, 1e-5);
  double worst = 0.0;
  std::size_t failed = 0;
  for (const auto& e : entries) {
    worst = std::max(worst, e.max_rel_error);
    if (!e.passed() || e.instances < 20) {
      ++failed;
      o.require(false, e.name + " rel err " + fmt("%.3g", e.max_rel_error));
    }
  }
  for (const char* name : {"loss.attack", "loss.l1", "loss.l2", "loss.l3", "loss.mc_total"}) {
    const bool present =
        std::any_of(entries.begin(), entries.end(), [&](const GradSuiteEntry& e) { return e.name == name; });
    o.require(present, std::string("case ") + name + " present");
  }
  const double t = sw.seconds();
  o.require(t < 60.0, "runtime < 60 s");
  o.note(std::to_string(entries.size()) + " cases, max rel err " + fmt("%.2e", worst) + ", " + fmt("%.1f", t) + " s");
  return o;
}

// 2: log-softmax form against the one-hot cross-entropy form.
Outcome dual_form() {
  Outcome o;
  Stopwatch sw;
  Rng rng = Rng::stream(2, {1});
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t d = 2 + rng.below(7), k = 1 + rng.below(4);
    Tape<double> tape;
    auto f = tape.constant(random_unit_rows<double>(rng, 1, d));
    auto f0 = tape.constant(random_unit_rows<double>(rng, 1, d));
    auto m = tape.constant(random_unit_rows<double>(rng, k, d));
    const double tau = rng.uniform(0.03, 1.0);
    worst = std::max(worst, std::abs(infonce_graph(f, f0, m, tau).item() - infonce_onehot_graph(f, f0, m, tau).item()));
  }
  const double t = sw.seconds();
  o.require(worst <= 1e-10, "max |diff| <= 1e-10");
  o.require(t < 5.0, "runtime < 5 s");
  o.note("1000 instances, max |diff| " + fmt("%.2e", worst) + ", " + fmt("%.2f", t) + " s");
  return o;
}

// 3: attack bound, descent and smoothing on desk-scale sequences.
Outcome attack_invariants() {
  Outcome o;
  Stopwatch sw;
  RunConfig cfg;
  cfg.resolve();
  const auto data = generate_dataset(cfg.data);
  const auto params = init_encoder<float>(cfg.model, cfg.seed);
  const auto head = init_attack_head<float>(cfg.model.feature, cfg.data.num_classes, cfg.seed);
  const std::size_t n = 200;
  AttackConfig big = cfg.attack;
  AttackConfig small = cfg.attack;
  small.epsilon = 1e-3;
  std::size_t inside = 0, lower = 0, smoother = 0;
  double max_rho = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& x = data.train.sequences[i];
    const auto r = attack_step(x, params, head, big);
    max_rho = std::max(max_rho, static_cast<double>(r.rho_norm()));
    inside += !r.aborted && r.rho_norm() < big.eta;
    const auto s = attack_step(x, params, head, small);
    const auto before = class_feature(params, head, x);
    const auto after = class_feature(params, head, s.attacked);
    lower += attack_loss_value(after) <= attack_loss_value(before);
    smoother += entropy(after) >= entropy(before);
  }
  const double t = sw.seconds();
  o.require(inside == n, "rho inside eta ball on all samples");
  o.require(lower * 100 >= 95 * n, "attack loss lowered on >= 95%");
  o.require(smoother * 100 >= 90 * n, "entropy raised on >= 90%");
  o.require(t < 60.0, "runtime < 60 s");
  o.note("|rho| < eta " + std::to_string(inside) + "/200 (max " + fmt("%.4f", max_rho) + "), loss lowered " +
         std::to_string(lower) + "/200, entropy raised " + std::to_string(smoother) + "/200, " + fmt("%.1f", t) + " s");
  return o;
}

// 4: one adversarial bank step does not lower the objective; zero gradient is a no-op.
Outcome bank_ascent() {
  Outcome o;
  Stopwatch sw;
  Rng rng = Rng::stream(4, {1});
  const MixConfig mix;
  const LossConfig loss;
  std::size_t ascended = 0, unchanged = 0;
  const std::size_t trials = 100;
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t d = 2 + rng.below(7), k = 1 + rng.below(4);
    const auto f0 = random_unit_rows<double>(rng, 1, d), f1 = random_unit_rows<double>(rng, 1, d);
    const auto f2 = random_unit_rows<double>(rng, 1, d), f3 = random_unit_rows<double>(rng, 1, d);
    auto bank = MemoryBank<double>::init(random_unit_rows<double>(rng, k, d), k, BankMode::kAdversarial);
    auto evaluate = [&](const Tensor<double>& m0, Tensor<double>* grad) {
      Tape<double> tape;
      FeatureSet<double> fs{tape.constant(f0), tape.constant(f1), tape.constant(f2), tape.constant(f3)};
      Var<double> m = tape.leaf(m0);
      auto terms = mc_total_graph(fs, m, mix, loss.tau_bank);
      tape.backward(terms.total);
      if (grad) *grad = tape.grad(m);
      return terms.total.item();
    };
    Tensor<double> g;
    const double before = evaluate(bank.rows(), &g);
    bank.adversarial_update(g, 1e-3, mix.renormalize);
    ascended += evaluate(bank.rows(), nullptr) >= before;

    const auto rows = bank.rows();
    bank.adversarial_update(Tensor<double>::zeros(rows.shape()), 1e-3, mix.renormalize);
    unchanged += bank.rows() == rows;
  }
  const double t = sw.seconds();
  o.require(ascended * 100 >= 95 * trials, "loss not lowered on >= 95%");
  o.require(unchanged == trials, "zero gradient leaves bank bit-identical");
  o.require(t < 30.0, "runtime < 30 s");
  o.note("ascent " + std::to_string(ascended) + "/100, zero-gradient unchanged " + std::to_string(unchanged) +
         "/100, " + fmt("%.2f", t) + " s");
  return o;
}

// 5: mixed negative counts and the fixed point.
Outcome mixing_contract() {
  Outcome o;
  Rng rng = Rng::stream(5, {1});
  const MixConfig cfg;
  o.require(cfg.lambdas == std::vector<double>({0.4, 0.3, 0.2, 0.1}), "default lambdas");
  double worst_fixed = 0.0;
  for (std::size_t k : {1u, 3u, 4u, 256u}) {
    const std::size_t d = 8;
    const auto bank = MemoryBank<double>::init(random_unit_rows<double>(rng, k, d), k, BankMode::kAdversarial);
    const auto f = random_unit_rows<double>(rng, 1, d);
    const auto mixed = mix(f, bank, cfg);
    o.require(mixed.dim(0) == cfg.lambdas.size() * k, "|M*| = |Lambda| K for K=" + std::to_string(k));
    Tape<double> tape;
    auto lb = loss_bank(tape.constant(f), tape.constant(bank.rows()), cfg.lambdas, cfg.renormalize);
    o.require(lb.shape()[0] == k + 4 * k, "loss bank K + 4K rows for K=" + std::to_string(k));
    const std::size_t i = rng.below(k);
    Tensor<double> fi({1, d});
    for (std::size_t j = 0; j < d; ++j) fi.at(0, j) = bank.rows().at(i, j);
    const auto fixed = mix(fi, bank, cfg);
    for (std::size_t l = 0; l < cfg.lambdas.size(); ++l)
      for (std::size_t j = 0; j < d; ++j) worst_fixed = std::max(worst_fixed, std::abs(fixed.at(l * k + i, j) - fi.at(0, j)));
  }
  o.require(worst_fixed <= 1e-6, "fixed point within 1e-6");
  o.note("K in {1,3,4,256}, fixed-point max err " + fmt("%.2e", worst_fixed));
  return o;
}

// 6: momentum update and the key-encoder leaf check.
Outcome momentum_update_check() {
  Outcome o;
  RunConfig cfg;
  cfg.resolve();
  auto key = init_encoder<double>(cfg.model, 1);
  const auto query = init_encoder<double>(cfg.model, 2);
  const auto before = key;
  momentum_update(key, query, cfg.train.alpha);
  auto kt = key.names_and_tensors(), bt = before.names_and_tensors(), qt = query.names_and_tensors();
  double worst = 0.0;
  for (std::size_t i = 0; i < kt.size(); ++i)
    for (std::size_t j = 0; j < kt[i]->numel(); ++j)
      worst = std::max(worst, std::abs((*kt[i])[j] - (cfg.train.alpha * (*bt[i])[j] +
                                                      (1.0 - cfg.train.alpha) * (*qt[i])[j])));
  o.require(worst <= 1e-12, "update exact to 1e-12");

  EncoderDims tiny;
  tiny.joints = 3;
  tiny.frames = 5;
  tiny.embed = 4;
  tiny.hidden = 4;
  tiny.proj_hidden = 5;
  tiny.feature = 6;
  const auto q = init_encoder<double>(tiny, 3), k = init_encoder<double>(tiny, 4);
  Rng rng = Rng::stream(6, {1});
  Tape<double> tape;
  auto wq = bind(tape, q, true);
  auto wk = bind(tape, k, true);
  auto x = [&] { return tape.constant(a2mc::testing::random_tensor(rng, {tiny.frames, tiny.input()})); };
  FeatureSet<double> fs{encode_graph(wk, x()), encode_graph(wq, x()), encode_graph(wq, x()), encode_graph(wq, x())};
  auto terms = mc_total_graph(fs, tape.constant(random_unit_rows<double>(rng, 4, tiny.feature)), MixConfig{}, 0.07);
  tape.backward(terms.total);
  double key_grad = 0.0, query_grad = 0.0;
  wk.for_each([&](std::string_view, Var<double>& v) { key_grad += frobenius_norm(tape.grad(v)); });
  wq.for_each([&](std::string_view, Var<double>& v) { query_grad += frobenius_norm(tape.grad(v)); });
  o.require(key_grad == 0.0, "key leaves receive zero gradient");
  o.require(query_grad > 0.0, "query leaves receive gradient");
  o.note("max update err " + fmt("%.2e", worst) + ", key grad norm " + fmt("%.1f", key_grad) + ", query grad norm " +
         fmt("%.3g", query_grad));
  return o;
}

// 7: L2 against the entropy of its target.
Outcome gibbs_property() {
  Outcome o;
  Rng rng = Rng::stream(7, {1});
  std::size_t below = 0;
  double worst_eq = 0.0;
  const std::size_t n = 1000;
  for (std::size_t t = 0; t < n; ++t) {
    const std::size_t d = 2 + rng.below(7), k = 1 + rng.below(4);
    const auto f0 = random_unit_rows<double>(rng, 1, d), f2 = random_unit_rows<double>(rng, 1, d);
    const auto f3 = random_unit_rows<double>(rng, 1, d), m = random_unit_rows<double>(rng, k, d);
    const auto p = psi(f3, f0, m, 0.07);
    double h = p.p_pos > 0.0 ? -p.p_pos * std::log(p.p_pos) : 0.0;
    for (double q : p.p_neg)
      if (q > 0.0) h -= q * std::log(q);
    Tape<double> tape;
    const double l2 = loss_l2_graph(tape.constant(f2), tape.constant(f3), tape.constant(f0), tape.constant(m), 0.07).item();
    below += l2 < h - 1e-12;
    const double eq = loss_l2_graph(tape.constant(f3), tape.constant(f3), tape.constant(f0), tape.constant(m), 0.07).item();
    worst_eq = std::max(worst_eq, std::abs(eq - h));
  }
  o.require(below == 0, "L2 >= H(target) on all instances");
  o.require(worst_eq <= 1e-10, "equality at f2 == f3 within 1e-10");
  o.note(std::to_string(n) + " instances, violations " + std::to_string(below) + ", equality max err " +
         fmt("%.2e", worst_eq));
  return o;
}

struct DeskRun {
  double random_knn = 0.0;
  double b1 = 0.0;
  double full = 0.0;
  double full_seconds = 0.0;
  double b1_seconds = 0.0;
};

DeskRun desk_run() {
  RunConfig cfg;
  cfg.resolve();
  const auto data = generate_dataset(cfg.data);
  DeskRun r;
  r.random_knn = knn_accuracy(init_encoder<float>(cfg.model, cfg.seed), data.train, data.test, cfg.eval);
  AblationOptions opts;
  opts.only = {"B1", "full"};
  opts.linear = false;
  Stopwatch sw;
  double last = 0.0;
  run_ablation(cfg, data, opts, [&](const AblationRow& row) {
    const double now = sw.seconds();
    if (row.name == "B1") {
      r.b1 = row.knn;
      r.b1_seconds = now - last;
    } else {
      r.full = row.knn;
      r.full_seconds = now - last;
    }
    last = now;
  });
  return r;
}

nlohmann::json load_fixture() {
  std::ifstream f(std::string(A2MC_FIXTURE_DIR) + "/desk_regression.json");
  return nlohmann::json::parse(f);
}

// 8: desk-scale regression against the committed fixture.
Outcome desk_regression(const DeskRun& r, const nlohmann::json& fx) {
  Outcome o;
  const auto& th = fx.at("thresholds");
  const double chance = th.at("chance").get<double>();
  const double tol = th.at("reproduction_tolerance").get<double>();
  o.require(r.full_seconds < th.at("max_full_seconds").get<double>(), "full run < 600 s");
  o.require(r.full - r.random_knn >= th.at("min_gain_over_random").get<double>() - 1e-9, "full >= random + 15 pp");
  o.require(r.full - chance >= th.at("min_gain_over_chance").get<double>() - 1e-9, "full >= chance + 30 pp");
  o.require(std::abs(r.full - fx.at("knn").at("full").get<double>()) <= tol, "full matches fixture");
  o.require(std::abs(r.random_knn - fx.at("knn").at("random_init").get<double>()) <= tol, "random matches fixture");
  o.note("knn full " + fmt("%.2f", r.full) + " vs random " + fmt("%.2f", r.random_knn) + " (fixture " +
         fmt("%.2f", fx.at("knn").at("full").get<double>()) + " / " +
         fmt("%.2f", fx.at("knn").at("random_init").get<double>()) + "), full run " + fmt("%.0f", r.full_seconds) + " s");
  return o;
}

// 9: ablation table structure and the fixture ordering.
Outcome ablation_harness(const DeskRun& r, const nlohmann::json& fx) {
  Outcome o;
  const auto& t = ablation_table();
  const std::vector<std::pair<std::string, AblationFlags>> expected = {
      {"B1", {false, false, false}}, {"B2", {false, true, false}}, {"B3", {true, false, false}},
      {"B4", {true, false, true}},   {"full", {true, true, true}}};
  o.require(t.size() == expected.size(), "five configurations");
  for (std::size_t i = 0; i < std::min(t.size(), expected.size()); ++i) {
    o.require(t[i].name == expected[i].first && t[i].flags == expected[i].second, "flags of " + expected[i].first);
  }
  const double fb1 = fx.at("knn").at("B1").get<double>(), ffull = fx.at("knn").at("full").get<double>();
  o.require(ffull >= fb1, "fixture full >= B1");
  o.require(r.full >= r.b1, "measured full >= B1");
  o.require(std::abs(r.b1 - fb1) <= fx.at("thresholds").at("reproduction_tolerance").get<double>(),
            "B1 matches fixture");
  o.note("fixture full " + fmt("%.2f", ffull) + " >= B1 " + fmt("%.2f", fb1) + "; measured full " + fmt("%.2f", r.full) +
         " vs B1 " + fmt("%.2f", r.b1));
  return o;
}

RunConfig small_run_config() {
  RunConfig c;
  c.seed = 3;
  c.data.num_classes = 3;
  c.data.per_class_train = 12;
  c.data.per_class_test = 4;
  c.data.frames = 16;
  c.model.frames = 16;
  c.model.hidden = 16;
  c.model.feature = 32;
  c.train.epochs = 2;
  c.train.batch_size = 8;
  c.train.bank_size = 32;
  c.train.lr_drop_epochs = {1};
  c.resolve();
  return c;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(A2MC_CLI) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// 10: two identical CLI runs give byte-identical metrics.
Outcome determinism() {
  Outcome o;
  TempDir dir("accept_det");
  save_config(dir.file("c.json"), small_run_config());
  const std::string cfg = "--config " + dir.file("c.json") + " ";
  o.require(run_cli(cfg + "generate --out " + dir.file("d.bin")) == 0, "generate");
  for (const char* run : {"r1", "r2"})
    o.require(run_cli(cfg + "pretrain --data " + dir.file("d.bin") + " --out " + dir.file(run)) == 0, "pretrain");
  std::size_t bytes = 0;
  for (const char* f : {"metrics_steps.csv", "metrics_epochs.csv"}) {
    const std::string a = slurp(dir.file(std::string("r1/") + f)), b = slurp(dir.file(std::string("r2/") + f));
    o.require(!a.empty() && a == b, std::string(f) + " identical");
    bytes += a.size();
  }
  o.note("two pretrain runs, " + std::to_string(bytes) + " metric bytes identical");
  return o;
}

// 11: dataset and checkpoint round trips; resume reproduces the next step.
Outcome persistence() {
  Outcome o;
  TempDir dir("accept_persist");
  const RunConfig cfg = small_run_config();
  const auto data = generate_dataset(cfg.data);
  const std::vector<LabeledDataset> both{data.train, data.test};
  save_datasets(dir.file("d.bin"), both);
  const auto loaded = load_datasets(dir.file("d.bin"));
  o.require(loaded.size() == 2 && loaded[0].sequences == data.train.sequences && loaded[0].labels == data.train.labels &&
                loaded[1].sequences == data.test.sequences && loaded[1].labels == data.test.labels,
            "dataset values");
  save_datasets(dir.file("d2.bin"), loaded);
  o.require(slurp(dir.file("d.bin")) == slurp(dir.file("d2.bin")), "dataset bytes");

  Trainer ref(cfg, data.train);
  for (int i = 0; i < 3; ++i) ref.step();
  save_checkpoint(dir.file("c.bin"), ref.checkpoint());
  const auto ckpt = load_checkpoint(dir.file("c.bin"));
  save_checkpoint(dir.file("c2.bin"), ckpt);
  o.require(slurp(dir.file("c.bin")) == slurp(dir.file("c2.bin")), "checkpoint bytes");
  Trainer resumed = Trainer::resume(cfg, data.train, ckpt);
  o.require(resumed.state().query == ref.state().query && resumed.state().key == ref.state().key &&
                resumed.bank().rows() == ref.bank().rows(),
            "checkpoint tensors");
  double worst = 0.0;
  for (int i = 0; i < 3; ++i) worst = std::max(worst, std::abs(ref.step().loss - resumed.step().loss));
  o.require(worst <= 1e-6, "resumed loss within 1e-6");
  o.note("resumed next-step loss max |diff| " + fmt("%.2e", worst));
  return o;
}

}  // namespace

int main() {
  int failures = 0;
  auto report = [&](int id, const char* title, const std::function<Outcome()>& fn) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    failures += !o.pass;
    std::printf("%s criterion %d %s: %s\n", o.pass ? "PASS" : "FAIL", id, title, o.detail.c_str());
    std::fflush(stdout);
  };
  report(1, "gradient suite", gradient_suite);
  report(2, "dual-form InfoNCE", dual_form);
  report(3, "attack invariants", attack_invariants);
  report(4, "adversarial bank ascent", bank_ascent);
  report(5, "mixing contract", mixing_contract);
  report(6, "momentum update", momentum_update_check);
  report(7, "Gibbs property", gibbs_property);

  DeskRun desk;
  nlohmann::json fixture;
  std::string desk_error;
  try {
    fixture = load_fixture();
    desk = desk_run();
  } catch (const std::exception& e) {
    desk_error = e.what();
  }
  auto with_desk = [&](const std::function<Outcome()>& fn) {
    return [&, fn] {
      if (!desk_error.empty()) throw std::runtime_error(desk_error);
      return fn();
    };
  };
  report(8, "desk-scale regression", with_desk([&] { return desk_regression(desk, fixture); }));
  report(9, "ablation harness", with_desk([&] { return ablation_harness(desk, fixture); }));
  report(10, "determinism", determinism);
  report(11, "persistence", persistence);
  std::printf("%d of 11 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
