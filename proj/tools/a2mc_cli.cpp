#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "a2mc/ablation.hpp"
#include "a2mc/attack.hpp"
#include "a2mc/checkpoint.hpp"
#include "a2mc/eval.hpp"
#include "a2mc/grad_suite.hpp"
#include "a2mc/trainer.hpp"

using namespace a2mc;
namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
};

RunConfig resolve_config(const Common& c) {
  RunConfig cfg = c.config_path.empty() ? RunConfig{} : load_config(c.config_path);
  if (c.seed) cfg.seed = *c.seed;
  cfg.resolve();
  return cfg;
}

DatasetPair load_pair(const std::string& path, const RunConfig& cfg) {
  if (path.empty()) return generate_dataset(cfg.data);
  DatasetPair pair;
  bool have_train = false, have_test = false;
  for (auto& d : load_datasets(path)) {
    if (d.split == Split::kTrain && !have_train) {
      pair.train = std::move(d);
      have_train = true;
    } else if (d.split == Split::kTest && !have_test) {
      pair.test = std::move(d);
      have_test = true;
    }
  }
  if (!have_train || !have_test) throw ConfigError(path + " must hold both a train and a test split");
  return pair;
}

// Encoder (and attack head) either from a checkpoint or freshly initialized.
struct LoadedModel {
  RunConfig cfg;
  EncoderParams<float> query;
  AttackHead<float> head;
};

LoadedModel load_model(const std::string& ckpt_path, bool random_init, const RunConfig& cli_cfg,
                       std::size_t num_classes) {
  if (ckpt_path.empty() == !random_init) throw ConfigError("pass exactly one of --checkpoint or --random-init");
  LoadedModel m{cli_cfg, {}, {}};
  if (random_init) {
    m.query = init_encoder<float>(cli_cfg.model, cli_cfg.seed);
    const std::size_t classes = cli_cfg.train.attack_classes ? cli_cfg.train.attack_classes : num_classes;
    m.head = init_attack_head<float>(cli_cfg.model.feature, classes, cli_cfg.seed);
    return m;
  }
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  if (ckpt.meta.contains("config")) {
    m.cfg = config_from_json(ckpt.meta.at("config"));
    m.cfg.eval = cli_cfg.eval;
    m.cfg.train.threads = cli_cfg.train.threads;
    m.cfg.resolve();
  }
  m.query = ckpt.get_encoder("query.", m.cfg.model);
  m.head = {ckpt.get("head.w"), ckpt.get("head.b")};
  return m;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

int cmd_generate(const Common& c, const std::string& out) {
  const RunConfig cfg = resolve_config(c);
  const DatasetPair pair = generate_dataset(cfg.data);
  const std::vector<LabeledDataset> both{pair.train, pair.test};
  save_datasets(out, both);
  save_config(out + ".config.json", cfg);
  std::printf("wrote %s (%zu train, %zu test, C=%zu, T=%zu, J=%zu)\n", out.c_str(), pair.train.size(), pair.test.size(),
              cfg.data.num_classes, cfg.data.frames, cfg.data.joints);
  return 0;
}

int cmd_pretrain(const Common& c, const std::string& data, std::string out, const std::string& resume) {
  const RunConfig cfg = resolve_config(c);
  if (out.empty()) out = cfg.paths.out;
  if (out.empty()) throw ConfigError("pretrain needs --out (or paths.out in the config)");
  const DatasetPair pair = load_pair(data.empty() ? cfg.paths.data : data, cfg);
  std::optional<Checkpoint> ckpt;
  if (!resume.empty()) ckpt = load_checkpoint(resume);
  auto result = pretrain(
      cfg, pair.train, out,
      [&](const EpochStats& e) {
        std::printf("epoch %zu  loss %.4f  l1 %.4f  l2 %.4f  l3 %.4f  lr %g  (%.1fs)\n", e.epoch, e.loss, e.l1, e.l2, e.l3,
                    e.lr, e.wall_seconds);
        std::fflush(stdout);
      },
      ckpt ? &*ckpt : nullptr);
  const double knn = knn_accuracy(result.state.query, pair.train, pair.test, cfg.eval, cfg.train.threads);
  std::printf("knn_acc %.4f\n", knn);
  std::printf("run directory %s\n", out.c_str());
  return 0;
}

int cmd_eval_knn(const Common& c, const std::string& data, const std::string& ckpt, bool random_init,
                 std::optional<std::size_t> k) {
  RunConfig cli = resolve_config(c);
  if (k) cli.eval.knn_k = *k;
  const DatasetPair pair = load_pair(data, cli);
  const LoadedModel m = load_model(ckpt, random_init, cli, pair.train.num_classes);
  const double acc = knn_accuracy(m.query, pair.train, pair.test, m.cfg.eval, m.cfg.train.threads);
  std::printf("knn_acc %.4f (k=%zu, %zu test samples)\n", acc, m.cfg.eval.knn_k, pair.test.size());
  return 0;
}

int cmd_eval_linear(const Common& c, const std::string& data, const std::string& ckpt, bool random_init) {
  const RunConfig cli = resolve_config(c);
  const DatasetPair pair = load_pair(data, cli);
  const LoadedModel m = load_model(ckpt, random_init, cli, pair.train.num_classes);
  const auto r = linear_eval(m.query, pair.train, pair.test, m.cfg.eval, m.cfg.seed, m.cfg.train.threads);
  std::printf("linear_acc %.4f (train %.4f, final loss %.4f, %zu epochs)\n", r.test_accuracy, r.train_accuracy,
              r.final_loss, m.cfg.eval.probe_epochs);
  return 0;
}

int cmd_ablate(const Common& c, const std::string& data, const std::string& out, const std::vector<std::string>& only,
               bool no_linear) {
  const RunConfig cfg = resolve_config(c);
  const DatasetPair pair = load_pair(data.empty() ? cfg.paths.data : data, cfg);
  AblationOptions opts;
  opts.only = only;
  opts.linear = !no_linear;
  opts.out_dir = out;
  fs::create_directories(out);
  save_config((fs::path(out) / "config.json").string(), cfg);
  std::printf("%s\n", ablation_csv_header());
  const auto rows = run_ablation(cfg, pair, opts, [](const AblationRow& r) {
    std::printf("%s\n", ablation_csv_row(r).c_str());
    std::fflush(stdout);
  });
  write_ablation_csv((fs::path(out) / "ablation.csv").string(), rows);
  return 0;
}

std::vector<float> top_k(const Tensor<float>& p, std::size_t k) {
  std::vector<float> v(p.data().begin(), p.data().end());
  std::sort(v.begin(), v.end(), std::greater<>());
  v.resize(std::min(k, v.size()));
  return v;
}

int cmd_attack_dump(const Common& c, const std::string& data, const std::string& ckpt, bool random_init,
                    const std::string& out, std::size_t count) {
  const RunConfig cli = resolve_config(c);
  const DatasetPair pair = load_pair(data, cli);
  const LoadedModel m = load_model(ckpt, random_init, cli, pair.train.num_classes);
  std::ofstream csv(out);
  if (!csv) throw Error("cannot write " + out);
  csv << "# a2mc attack dump v1\n";
  csv << "index,label,pre_loss,post_loss,pre_entropy,post_entropy,rho_norm,aborted";
  for (int i = 1; i <= 5; ++i) csv << ",pre_top" << i;
  for (int i = 1; i <= 5; ++i) csv << ",post_top" << i;
  csv << "\n";
  const std::size_t n = std::min(count, pair.train.size());
  for (std::size_t i = 0; i < n; ++i) {
    const SkeletonSequence x = resample_time(pair.train.sequences[i], m.cfg.model.frames);
    const auto res = attack_step(x, m.query, m.head, m.cfg.attack);
    const auto pre = class_feature(m.query, m.head, x);
    const auto post = class_feature(m.query, m.head, res.attacked);
    csv << i << "," << pair.train.labels[i] << "," << fmt(attack_loss_value(pre)) << "," << fmt(attack_loss_value(post))
        << "," << fmt(entropy(pre)) << "," << fmt(entropy(post)) << "," << fmt(res.rho_norm()) << ","
        << (res.aborted ? 1 : 0);
    for (const auto& p : {pre, post}) {
      const auto t = top_k(p, 5);
      for (std::size_t j = 0; j < 5; ++j) csv << "," << (j < t.size() ? fmt(t[j]) : std::string());
    }
    csv << "\n";
    if (res.aborted) std::fprintf(stderr, "sample %zu: %s\n", i, res.warning.c_str());
  }
  std::printf("wrote %zu rows to %s\n", n, out.c_str());
  return 0;
}

int cmd_grad_check(const Common& c, const std::string& dtype, std::size_t instances) {
  if (dtype != "f64") throw ConfigError("grad-check runs in 64-bit only (--dtype f64)");
  const std::uint64_t seed = c.seed.value_or(2024);
  bool ok = true;
  for (const auto& e : run_grad_suite(seed, instances)) {
    std::printf("%-30s instances %-3zu max_rel_err %.3e  %s\n", e.name.c_str(), e.instances, e.max_rel_error,
                e.passed() ? "ok" : "FAIL");
    ok = ok && e.passed();
  }
  std::printf(ok ? "all gradients match\n" : "gradient mismatch\n");
  return ok ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"a2mc: attack-augmentation mixing-contrastive skeleton pretraining"};
  app.set_version_flag("--version", std::string(kToolVersion));
  app.require_subcommand(1);
  Common common;
  std::uint64_t seed_value = 0;
  app.add_option("--config", common.config_path, "JSON run configuration (missing keys keep defaults)")
      ->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", seed_value, "Override the config seed");

  std::string out, data, ckpt, resume, dtype = "f64";
  bool random_init = false, no_linear = false;
  std::optional<std::size_t> k;
  std::size_t count = 200, instances = 20;
  std::vector<std::string> only;

  auto* gen = app.add_subcommand("generate", "Write a synthetic train/test dataset file");
  gen->add_option("--out", out, "Output dataset path")->required();

  auto* pre = app.add_subcommand("pretrain", "Pretrain the query encoder");
  pre->add_option("--data", data, "Dataset file (default: generate from config)");
  pre->add_option("--out", out, "Run directory");
  pre->add_option("--resume", resume, "Checkpoint to resume from")->check(CLI::ExistingFile);

  auto* knn = app.add_subcommand("eval-knn", "k-NN accuracy of a frozen encoder");
  auto* lin = app.add_subcommand("eval-linear", "Linear-probe accuracy of a frozen encoder");
  auto* dump = app.add_subcommand("attack-dump", "Per-sample attack statistics as CSV");
  for (auto* sc : {knn, lin, dump}) {
    sc->add_option("--data", data, "Dataset file (default: generate from config)");
    sc->add_option("--checkpoint", ckpt, "Checkpoint with the query encoder")->check(CLI::ExistingFile);
    sc->add_flag("--random-init", random_init, "Use a freshly initialized encoder");
  }
  knn->add_option("--k", k, "Neighbours (default from config)");
  dump->add_option("--out", out, "Output CSV")->required();
  dump->add_option("--count", count, "Number of training samples");

  auto* abl = app.add_subcommand("ablate", "Run the B1-B4 and full configurations");
  abl->add_option("--data", data, "Dataset file (default: generate from config)");
  abl->add_option("--out", out, "Output directory")->required();
  abl->add_option("--only", only, "Subset of B1,B2,B3,B4,full")->delimiter(',');
  abl->add_flag("--no-linear", no_linear, "Skip the linear probe");

  auto* gc = app.add_subcommand("grad-check", "Finite-difference gradient suite");
  gc->add_option("--dtype", dtype, "Precision (f64)");
  gc->add_option("--instances", instances, "Random instances per case");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }
  if (seed_opt->count() > 0) common.seed = seed_value;

  try {
    if (gen->parsed()) return cmd_generate(common, out);
    if (pre->parsed()) return cmd_pretrain(common, data, out, resume);
    if (knn->parsed()) return cmd_eval_knn(common, data, ckpt, random_init, k);
    if (lin->parsed()) return cmd_eval_linear(common, data, ckpt, random_init);
    if (abl->parsed()) return cmd_ablate(common, data, out, only, no_linear);
    if (dump->parsed()) return cmd_attack_dump(common, data, ckpt, random_init, out, count);
    if (gc->parsed()) return cmd_grad_check(common, dtype, instances);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
