#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "a2mc/autodiff.hpp"

namespace a2mc {

enum class BankMode : std::uint8_t { kFifo = 0, kAdversarial = 1 };

inline const char* bank_mode_name(BankMode m) { return m == BankMode::kFifo ? "fifo" : "adversarial"; }

struct MixConfig {
  std::vector<double> lambdas{0.4, 0.3, 0.2, 0.1};
  // Rows are rescaled to unit norm after mixing and after each ascent step.
  bool renormalize = true;
  // Ascent step size for the adversarial bank.
  double beta = 3.0;

  void validate() const {
    if (lambdas.empty()) throw ConfigError("pnm lambdas must be non-empty");
    for (double l : lambdas)
      if (!(l > 0.0 && l <= 0.5)) throw ConfigError("pnm lambda " + std::to_string(l) + " outside (0, 0.5]");
    if (!(beta >= 0.0) || !std::isfinite(beta)) throw ConfigError("pnm beta must be finite and non-negative");
  }
};

// K x d negative store. FIFO mode overwrites the oldest rows; adversarial mode
// moves every row along the loss gradient.
template <typename T>
class MemoryBank {
 public:
  MemoryBank() = default;

  // Fills K rows from `features` (n x d), cycling when n < K; rows are
  // normalized.
  static MemoryBank init(const Tensor<T>& features, std::size_t capacity, BankMode mode) {
    if (capacity < 1) throw ConfigError("memory bank capacity must be at least 1");
    if (features.rank() != 2 || features.dim(0) == 0) throw ConfigError("memory bank init needs key features");
    const std::size_t n = features.dim(0), d = features.dim(1);
    MemoryBank bank;
    bank.mode_ = mode;
    bank.rows_ = Tensor<T>({capacity, d});
    for (std::size_t i = 0; i < capacity; ++i)
      for (std::size_t j = 0; j < d; ++j) bank.rows_.at(i, j) = features.at(i % n, j);
    normalize_rows(bank.rows_);
    return bank;
  }

  static MemoryBank restore(Tensor<T> rows, BankMode mode, std::size_t cursor) {
    if (rows.rank() != 2 || rows.dim(0) == 0) throw FormatError("memory bank tensor must be a non-empty matrix");
    MemoryBank bank;
    bank.rows_ = std::move(rows);
    bank.mode_ = mode;
    bank.cursor_ = cursor % bank.rows_.dim(0);
    return bank;
  }

  const Tensor<T>& rows() const { return rows_; }
  BankMode mode() const { return mode_; }
  std::size_t capacity() const { return rows_.dim(0); }
  std::size_t dim() const { return rows_.dim(1); }
  std::size_t cursor() const { return cursor_; }

  // Overwrites rows starting at the cursor with `features` (n x d).
  void fifo_enqueue(const Tensor<T>& features) {
    if (mode_ != BankMode::kFifo) throw ContractError("fifo_enqueue on an adversarial bank");
    if (features.rank() != 2 || features.dim(1) != dim()) {
      throw DimensionError("fifo_enqueue: features " + shape_string(features.shape()) + " do not match bank " +
                           shape_string(rows_.shape()));
    }
    for (std::size_t i = 0; i < features.dim(0); ++i) {
      for (std::size_t j = 0; j < dim(); ++j) rows_.at(cursor_, j) = features.at(i, j);
      cursor_ = (cursor_ + 1) % capacity();
    }
  }

  // rows <- rows + beta * grad, then per-row normalization. Returns false
  // (bank untouched) when the gradient is not finite.
  bool adversarial_update(const Tensor<T>& grad, double beta, bool renormalize = true) {
    if (mode_ != BankMode::kAdversarial) throw ContractError("adversarial_update on a FIFO bank");
    if (grad.shape() != rows_.shape()) {
      throw DimensionError("adversarial_update: gradient " + shape_string(grad.shape()) + " vs bank " +
                           shape_string(rows_.shape()));
    }
    if (!grad.all_finite()) return false;
    bool any = false;
    for (T g : grad.data()) any = any || g != T{0};
    if (!any) return true;
    axpy(static_cast<T>(beta), grad, rows_);
    if (renormalize) normalize_rows(rows_);
    return true;
  }

  static void normalize_rows(Tensor<T>& m) {
    for (std::size_t i = 0; i < m.dim(0); ++i) {
      T s{0};
      for (std::size_t j = 0; j < m.dim(1); ++j) s += m.at(i, j) * m.at(i, j);
      const T n = std::sqrt(s);
      if (!(static_cast<double>(n) > kMinNormalizeNorm)) {
        throw DegenerateInputError("memory bank row " + std::to_string(i) + " has near-zero norm");
      }
      for (std::size_t j = 0; j < m.dim(1); ++j) m.at(i, j) /= n;
    }
  }

 private:
  Tensor<T> rows_;
  BankMode mode_ = BankMode::kFifo;
  std::size_t cursor_ = 0;
};

// Hard negatives lambda * f + (1 - lambda) * m_i for every lambda and bank row,
// ordered by (lambda index, row). f: 1 x d, bank: K x d.
template <typename T>
Var<T> mix_graph(const Var<T>& f, const Var<T>& bank, std::span<const double> lambdas, bool renormalize) {
  if (lambdas.empty()) throw ContractError("mix: empty lambda list");
  if (f.shape().size() != 2 || f.shape()[0] != 1 || f.shape()[1] != bank.shape()[1]) {
    throw DimensionError("mix: feature " + shape_string(f.shape()) + " does not match bank " +
                         shape_string(bank.shape()));
  }
  std::vector<Var<T>> blocks;
  for (double lambda : lambdas) {
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("mix: lambda outside [0, 1]");
    const T l = static_cast<T>(lambda);
    blocks.push_back(add_row(scale(bank, T{1} - l), scale(f, l)));
  }
  Var<T> mixed = blocks.size() == 1 ? blocks[0] : concat(blocks, 0);
  return renormalize ? l2_normalize(mixed) : mixed;
}

template <typename T>
Tensor<T> mix(const Tensor<T>& f, const MemoryBank<T>& bank, const MixConfig& cfg) {
  Tape<T> tape;
  return mix_graph(tape.constant(f), tape.constant(bank.rows()), cfg.lambdas, cfg.renormalize).value();
}

}  // namespace a2mc
