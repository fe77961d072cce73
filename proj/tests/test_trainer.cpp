#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "a2mc/ablation.hpp"
#include "a2mc/checkpoint.hpp"
#include "a2mc/trainer.hpp"
#include "test_util.hpp"

using namespace a2mc;
using a2mc::testing::TempDir;
using a2mc::testing::tiny_config;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

}  // namespace

TEST_CASE("learning rate schedule drops at the configured epochs") {
  TrainConfig t;
  CHECK(t.lr_at_epoch(0) == doctest::Approx(0.01));
  CHECK(t.lr_at_epoch(19) == doctest::Approx(0.01));
  CHECK(t.lr_at_epoch(20) == doctest::Approx(0.001));
  t.lr_drop_epochs = {2, 4};
  CHECK(t.lr_at_epoch(5) == doctest::Approx(1e-4));
}

TEST_CASE("a step produces finite stats and advances the counters") {
  const auto cfg = tiny_config();
  const auto data = generate_dataset(cfg.data);
  Trainer tr(cfg, data.train);
  CHECK(tr.steps_per_epoch() == 5);
  const auto st = tr.step();
  CHECK(std::isfinite(st.loss));
  CHECK(st.loss == doctest::Approx(st.l1 + st.l2 + st.l3).epsilon(1e-6));
  CHECK(st.grad_norm > 0.0);
  CHECK(st.bank_update_norm > 0.0);
  CHECK(tr.global_step() == 1);
  CHECK(tr.metrics().steps.size() == 1);
}

TEST_CASE("zero learning rate leaves the query fixed and moves the key by the momentum rule") {
  auto cfg = tiny_config();
  cfg.train.lr = 0.0;
  const auto data = generate_dataset(cfg.data);
  Trainer tr(cfg, data.train);
  const auto query = tr.state().query;
  const auto key = tr.state().key;
  tr.step();
  CHECK(tr.state().query == query);
  const float a = static_cast<float>(cfg.train.alpha), b = static_cast<float>(1.0 - cfg.train.alpha);
  auto kn = tr.state().key.names_and_tensors();
  auto ko = key.names_and_tensors();
  auto q = query.names_and_tensors();
  for (std::size_t i = 0; i < kn.size(); ++i)
    for (std::size_t j = 0; j < kn[i]->numel(); ++j) CHECK((*kn[i])[j] == a * (*ko[i])[j] + b * (*q[i])[j]);
}

TEST_CASE("fifo bank receives key features when mixing is off") {
  auto cfg = tiny_config();
  cfg.train.flags = {false, false, false};
  const auto data = generate_dataset(cfg.data);
  Trainer tr(cfg, data.train);
  CHECK(tr.bank().mode() == BankMode::kFifo);
  const auto st = tr.step();
  CHECK(st.l1 == 0.0);
  CHECK(st.l2 == 0.0);
  CHECK(tr.bank().cursor() == cfg.train.batch_size % cfg.train.bank_size);
}

TEST_CASE("hard positive branches follow the attack and mc flags") {
  CHECK(AblationFlags{true, false, false}.hard_positives());
  CHECK(AblationFlags{false, false, true}.hard_positives());
  CHECK_FALSE(AblationFlags{false, true, false}.hard_positives());
  auto cfg = tiny_config();
  CHECK(hard_positive_pipeline(cfg) != "none");
  cfg.train.flags = {false, true, false};
  CHECK(hard_positive_pipeline(cfg) == "none");
}

TEST_CASE("training is deterministic") {
  const auto cfg = tiny_config();
  const auto data = generate_dataset(cfg.data);
  Trainer a(cfg, data.train), b(cfg, data.train);
  for (int i = 0; i < 3; ++i) {
    const auto sa = a.step(), sb = b.step();
    CHECK(sa.loss == sb.loss);
    CHECK(sa.grad_norm == sb.grad_norm);
  }
  CHECK(a.state().query == b.state().query);
  CHECK(a.bank().rows() == b.bank().rows());
}

TEST_CASE("thread count does not change results") {
  auto cfg = tiny_config();
  const auto data = generate_dataset(cfg.data);
  Trainer a(cfg, data.train);
  cfg.train.threads = 3;
  Trainer b(cfg, data.train);
  for (int i = 0; i < 2; ++i) CHECK(a.step().loss == b.step().loss);
  CHECK(a.state().query == b.state().query);
}

TEST_CASE("resume from a checkpoint reproduces the next step") {
  const auto cfg = tiny_config();
  const auto data = generate_dataset(cfg.data);
  Trainer ref(cfg, data.train);
  for (int i = 0; i < 3; ++i) ref.step();
  TempDir dir("resume");
  save_checkpoint(dir.file("c.bin"), ref.checkpoint());
  Trainer resumed = Trainer::resume(cfg, data.train, load_checkpoint(dir.file("c.bin")));
  CHECK(resumed.global_step() == ref.global_step());
  CHECK(resumed.state().query == ref.state().query);
  CHECK(resumed.state().key == ref.state().key);
  CHECK(resumed.bank().rows() == ref.bank().rows());
  for (int i = 0; i < 4; ++i) {
    const auto a = ref.step(), b = resumed.step();
    CHECK(std::abs(a.loss - b.loss) <= 1e-6);
  }
  CHECK(resumed.state().query == ref.state().query);
}

TEST_CASE("resume rejects a checkpoint from a different model") {
  auto cfg = tiny_config();
  const auto data = generate_dataset(cfg.data);
  Trainer tr(cfg, data.train);
  const auto ckpt = tr.checkpoint();
  cfg.model.hidden = 7;
  CHECK_THROWS_AS(Trainer::resume(cfg, data.train, ckpt), Error);
}

TEST_CASE("pretrain writes artifacts and identical runs give identical metrics") {
  const auto cfg = tiny_config();
  const auto data = generate_dataset(cfg.data);
  TempDir d1("pre1"), d2("pre2");
  std::size_t epochs_seen = 0;
  pretrain(cfg, data.train, d1.path().string(), [&](const EpochStats&) { ++epochs_seen; });
  pretrain(cfg, data.train, d2.path().string());
  CHECK(epochs_seen == cfg.train.epochs);
  for (const char* f : {"config.json", "VERSION", "metrics_steps.csv", "metrics_epochs.csv", "timing.csv",
                        "checkpoint.bin"})
    CHECK(std::filesystem::exists(d1.path() / f));
  CHECK(slurp(d1.file("metrics_steps.csv")) == slurp(d2.file("metrics_steps.csv")));
  CHECK(slurp(d1.file("metrics_epochs.csv")) == slurp(d2.file("metrics_epochs.csv")));
  const std::string steps = slurp(d1.file("metrics_steps.csv"));
  CHECK(steps.find(MetricsRecord::step_header()) != std::string::npos);
}

TEST_CASE("resumed pretrain matches an unbroken run") {
  auto cfg = tiny_config();
  const auto data = generate_dataset(cfg.data);
  TempDir full("full"), part("part");
  const auto unbroken = pretrain(cfg, data.train, full.path().string());
  auto short_cfg = cfg;
  short_cfg.train.epochs = 1;
  pretrain(short_cfg, data.train, part.path().string());
  const auto ckpt = load_checkpoint(part.file("checkpoint.bin"));
  const auto resumed = pretrain(cfg, data.train, part.path().string(), {}, &ckpt);
  CHECK(resumed.state.query == unbroken.state.query);
  CHECK(slurp(part.file("metrics_steps.csv")) == slurp(full.file("metrics_steps.csv")));
}

TEST_CASE("ablation table has the five configurations with their flags") {
  const auto& t = ablation_table();
  REQUIRE(t.size() == 5);
  CHECK(t[0].name == "B1");
  CHECK(t[0].flags == AblationFlags{false, false, false});
  CHECK(t[1].flags == AblationFlags{false, true, false});
  CHECK(t[2].flags == AblationFlags{true, false, false});
  CHECK(t[3].flags == AblationFlags{true, false, true});
  CHECK(t[4].name == "full");
  CHECK(t[4].flags == AblationFlags{true, true, true});
}

TEST_CASE("ablation rows run and serialize") {
  const auto cfg = tiny_config();
  const auto data = generate_dataset(cfg.data);
  AblationOptions opts;
  opts.only = {"B1", "full"};
  opts.linear = false;
  const auto rows = run_ablation(cfg, data, opts);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].name == "B1");
  CHECK(rows[0].pipeline_hash != rows[1].pipeline_hash);
  CHECK(std::isnan(rows[0].linear));
  CHECK(rows[1].knn >= 0.0);
  CHECK(rows[1].knn <= 1.0);
  const std::string line = ablation_csv_row(rows[1]);
  CHECK(line.rfind("full,1,1,1,", 0) == 0);
  opts.only = {"B9"};
  CHECK_THROWS_AS(run_ablation(cfg, data, opts), ConfigError);
}
