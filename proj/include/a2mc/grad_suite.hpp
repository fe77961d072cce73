#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace a2mc {

struct GradSuiteEntry {
  std::string name;
  std::size_t instances = 0;
  double max_rel_error = 0.0;
  double tolerance = 1e-4;

  bool passed() const { return max_rel_error < tolerance; }
};

// Central-difference check, in double precision, of every autodiff op, the
// encoder, the mixer and the composite losses on random tiny instances
// (dims <= 8, K <= 4).
std::vector<GradSuiteEntry> run_grad_suite(std::uint64_t seed = 2024, std::size_t instances = 20, double eps = 1e-5);

}  // namespace a2mc
