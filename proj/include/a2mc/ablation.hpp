#pragma once

#include <functional>
#include <string>
#include <vector>

#include "a2mc/config.hpp"
#include "a2mc/skeleton.hpp"

namespace a2mc {

struct AblationSpec {
  std::string name;
  AblationFlags flags;
};

// B1 (basic contrast), B2 (+PNM), B3 (+attack), B4 (attack + MC), full.
const std::vector<AblationSpec>& ablation_table();

struct AblationRow {
  std::string name;
  AblationFlags flags;
  std::string pipeline;
  std::uint64_t pipeline_hash = 0;
  double final_loss = 0.0;
  double knn = 0.0;
  double linear = 0.0;  // NaN when the probe was skipped
};

struct AblationOptions {
  // Empty runs every row in table order.
  std::vector<std::string> only;
  bool linear = true;
  // When set, each row pretrains into out_dir/<name> with full run artifacts.
  std::string out_dir;
};

std::vector<AblationRow> run_ablation(const RunConfig& base, const DatasetPair& data, const AblationOptions& opts,
                                      const std::function<void(const AblationRow&)>& on_row = {});

const char* ablation_csv_header();
std::string ablation_csv_row(const AblationRow& r);
void write_ablation_csv(const std::string& path, const std::vector<AblationRow>& rows);

}  // namespace a2mc
