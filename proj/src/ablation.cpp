#include "a2mc/ablation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>

#include "a2mc/eval.hpp"
#include "a2mc/trainer.hpp"

namespace a2mc {

const std::vector<AblationSpec>& ablation_table() {
  static const std::vector<AblationSpec> table = {
      {"B1", {false, false, false}},
      {"B2", {false, true, false}},
      {"B3", {true, false, false}},
      {"B4", {true, false, true}},
      {"full", {true, true, true}},
  };
  return table;
}

namespace {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) h = (h ^ c) * 1099511628211ULL;
  return h;
}

std::string flag_string(const AblationFlags& f) {
  return std::string("attack=") + (f.attack ? "1" : "0") + ",pnm=" + (f.pnm ? "1" : "0") + ",mc=" + (f.mc ? "1" : "0");
}

}  // namespace

std::vector<AblationRow> run_ablation(const RunConfig& base, const DatasetPair& data, const AblationOptions& opts,
                                      const std::function<void(const AblationRow&)>& on_row) {
  for (const auto& name : opts.only) {
    bool known = false;
    for (const auto& spec : ablation_table()) known = known || spec.name == name;
    if (!known) throw ConfigError("ablate: unknown configuration '" + name + "'");
  }
  std::vector<AblationRow> rows;
  for (const auto& spec : ablation_table()) {
    if (!opts.only.empty() && std::find(opts.only.begin(), opts.only.end(), spec.name) == opts.only.end()) continue;
    RunConfig cfg = base;
    cfg.train.flags = spec.flags;
    cfg.resolve();
    AblationRow row;
    row.name = spec.name;
    row.flags = spec.flags;
    row.pipeline = hard_positive_pipeline(cfg);
    row.pipeline_hash = fnv1a(flag_string(spec.flags) + "|" + row.pipeline);

    EncoderParams<float> query;
    if (!opts.out_dir.empty()) {
      auto result = pretrain(cfg, data.train, (std::filesystem::path(opts.out_dir) / spec.name).string());
      query = std::move(result.state.query);
      row.final_loss = result.metrics.epochs.empty() ? 0.0 : result.metrics.epochs.back().loss;
    } else {
      Trainer trainer(cfg, data.train);
      while (!trainer.finished()) trainer.run_epoch();
      query = trainer.state().query;
      row.final_loss = trainer.metrics().epochs.empty() ? 0.0 : trainer.metrics().epochs.back().loss;
    }
    row.knn = knn_accuracy(query, data.train, data.test, cfg.eval, cfg.train.threads);
    row.linear = opts.linear ? linear_eval(query, data.train, data.test, cfg.eval, cfg.seed, cfg.train.threads).test_accuracy
                             : std::numeric_limits<double>::quiet_NaN();
    if (on_row) on_row(row);
    rows.push_back(std::move(row));
  }
  return rows;
}

const char* ablation_csv_header() { return "config,attack,pnm,mc,pipeline_hash,final_loss,knn_acc,linear_acc"; }

std::string ablation_csv_row(const AblationRow& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%s,%d,%d,%d,%016llx,%.9g,%.6f,%s", r.name.c_str(), r.flags.attack ? 1 : 0,
                r.flags.pnm ? 1 : 0, r.flags.mc ? 1 : 0, static_cast<unsigned long long>(r.pipeline_hash), r.final_loss,
                r.knn, std::isnan(r.linear) ? "" : std::to_string(r.linear).c_str());
  return buf;
}

void write_ablation_csv(const std::string& path, const std::vector<AblationRow>& rows) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out << "# a2mc ablation v1\n" << ablation_csv_header() << "\n";
  for (const auto& r : rows) out << ablation_csv_row(r) << "\n";
}

}  // namespace a2mc
