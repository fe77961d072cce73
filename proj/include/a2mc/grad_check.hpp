#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "a2mc/autodiff.hpp"

namespace a2mc {

// Builds a scalar loss on `tape` from one variable per input tensor.
using ScalarGraphFn = std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  std::size_t evaluations = 0;
};

// Compares reverse-mode gradients of `f` against central differences of
// `numeric_f`. The two differ only when `f` contains stop-gradient paths;
// `numeric_f` then holds those paths at their values at `at`. The error of a
// component is |analytic - numeric| / max(1, |numeric|). Reports, never
// asserts.
inline GradCheckReport grad_check_report(const ScalarGraphFn& f, const ScalarGraphFn& numeric_f,
                                         const std::vector<Tensor<double>>& at, double eps) {
  GradCheckReport report;
  std::vector<Tensor<double>> analytic;
  {
    Tape<double> tape;
    std::vector<Var<double>> leaves;
    for (const auto& t : at) leaves.push_back(tape.leaf(t));
    Var<double> loss = f(tape, leaves);
    tape.backward(loss);
    for (const auto& l : leaves) analytic.push_back(tape.grad(l));
  }
  auto evaluate = [&](const std::vector<Tensor<double>>& inputs) {
    Tape<double> tape;
    std::vector<Var<double>> leaves;
    for (const auto& t : inputs) leaves.push_back(tape.constant(t));
    ++report.evaluations;
    return numeric_f(tape, leaves).item();
  };
  std::vector<Tensor<double>> probe = at;
  for (std::size_t k = 0; k < at.size(); ++k) {
    for (std::size_t i = 0; i < at[k].numel(); ++i) {
      const double x0 = at[k][i];
      probe[k][i] = x0 + eps;
      const double fp = evaluate(probe);
      probe[k][i] = x0 - eps;
      const double fm = evaluate(probe);
      probe[k][i] = x0;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double err = std::abs(analytic[k][i] - numeric) / std::max(1.0, std::abs(numeric));
      if (err > report.max_rel_error) {
        report.max_rel_error = err;
        report.worst_input = k;
        report.worst_index = i;
      }
    }
  }
  return report;
}

inline GradCheckReport grad_check_report(const ScalarGraphFn& f, const std::vector<Tensor<double>>& at,
                                         double eps) {
  return grad_check_report(f, f, at, eps);
}

inline double grad_check(const std::function<Var<double>(Var<double>)>& f, const Tensor<double>& at,
                         double eps) {
  return grad_check_report([&](Tape<double>&, const std::vector<Var<double>>& v) { return f(v[0]); },
                           {at}, eps)
      .max_rel_error;
}

}  // namespace a2mc
