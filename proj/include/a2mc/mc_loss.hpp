#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "a2mc/autodiff.hpp"
#include "a2mc/pnm.hpp"

namespace a2mc {

struct LossConfig {
  double tau = 0.07;
  double tau_bank = 0.03;

  void validate() const {
    if (!(tau > 0.0) || !(tau_bank > 0.0)) throw ConfigError("loss temperatures must be positive");
  }
};

template <typename T>
struct SimilarityDistribution {
  T p_pos{};
  std::vector<T> p_neg;
};

// Temperature-scaled softmax over {u.v} and {u.m_i}, computed with a max
// shift. u, v: 1 x d; bank: K x d.
template <typename T>
SimilarityDistribution<T> psi(const Tensor<T>& u, const Tensor<T>& v, const Tensor<T>& bank, T tau) {
  if (!(tau > T{0})) throw ConfigError("psi: temperature must be positive");
  const std::size_t d = u.numel();
  if (v.numel() != d || (bank.numel() > 0 && bank.dim(1) != d)) throw DimensionError("psi: dimension mismatch");
  const std::size_t k = bank.numel() > 0 ? bank.dim(0) : 0;
  std::vector<T> logits(k + 1);
  auto dotp = [&](const T* a, const T* b) {
    T s{0};
    for (std::size_t j = 0; j < d; ++j) s += a[j] * b[j];
    return s;
  };
  logits[0] = dotp(u.data().data(), v.data().data()) / tau;
  for (std::size_t i = 0; i < k; ++i) logits[i + 1] = dotp(u.data().data(), bank.data().data() + i * d) / tau;
  const T mx = *std::max_element(logits.begin(), logits.end());
  T z{0};
  for (auto& l : logits) {
    l = std::exp(l - mx);
    z += l;
  }
  SimilarityDistribution<T> out;
  out.p_pos = logits[0] / z;
  out.p_neg.resize(k);
  for (std::size_t i = 0; i < k; ++i) out.p_neg[i] = logits[i + 1] / z;
  return out;
}

// 1 x (1 + N) raw similarities [u.v, u.m_1, ..., u.m_N].
template <typename T>
Var<T> similarity_logits(const Var<T>& u, const Var<T>& v, const Var<T>& bank) {
  Var<T> pos = dot(u, v);
  Var<T> neg = transpose(matmul(bank, transpose(u)));
  return concat<T>({pos, neg}, 1);
}

// -log psi(f, f0) with one log-sum-exp. f0 never receives a gradient.
template <typename T>
Var<T> infonce_graph(const Var<T>& f, const Var<T>& f0, const Var<T>& bank, T tau) {
  Var<T> logp = log_softmax_t(similarity_logits(f, detach(f0), bank), tau);
  return scale(slice(logp, 1, 0, 1), T{-1});
}

// The same loss written as a cross-entropy against the one-hot target
// (1, 0, ..., 0): -sum_j y_j log(psi_j), with psi formed explicitly.
template <typename T>
Var<T> infonce_onehot_graph(const Var<T>& f, const Var<T>& f0, const Var<T>& bank, T tau) {
  Var<T> p = softmax_t(similarity_logits(f, detach(f0), bank), tau);
  Tensor<T> onehot = Tensor<T>::zeros(p.shape());
  onehot[0] = T{1};
  return scale(sum(mul(f.tape().constant(std::move(onehot)), log(p))), T{-1});
}

// Concatenated bank M0 u M*; with an empty lambda list this is M0 itself.
template <typename T>
Var<T> loss_bank(const Var<T>& f, const Var<T>& m0, std::span<const double> lambdas, bool renormalize) {
  if (lambdas.empty()) return m0;
  return concat<T>({m0, mix_graph(f, m0, lambdas, renormalize)}, 0);
}

// L1 (and L3): one-hot contrast of f against f0 over M0 u mix(f, M0).
template <typename T>
Var<T> loss_l1_graph(const Var<T>& f, const Var<T>& f0, const Var<T>& m0, std::span<const double> lambdas,
                     bool renormalize, T tau) {
  return infonce_graph(f, f0, loss_bank(f, m0, lambdas, renormalize), tau);
}

// L2: cross-entropy of psi(f2, .) against the detached target psi(f3, .),
// both over {f0} u M0 u mix(f2, M0).
template <typename T>
Var<T> l2_target(const Var<T>& f3, const Var<T>& f0, const Var<T>& m02, T tau) {
  return detach(softmax_t(similarity_logits(f3, detach(f0), m02), tau));
}

// -sum_j target_j log psi(f2, .)_j over {f0} u m02.
template <typename T>
Var<T> cross_entropy_to_target(const Var<T>& target, const Var<T>& f2, const Var<T>& f0, const Var<T>& m02, T tau) {
  Var<T> logp = log_softmax_t(similarity_logits(f2, detach(f0), m02), tau);
  return scale(sum(mul(target, logp)), T{-1});
}

template <typename T>
Var<T> loss_l2_graph(const Var<T>& f2, const Var<T>& f3, const Var<T>& f0, const Var<T>& m02, T tau) {
  return cross_entropy_to_target(l2_target(f3, f0, m02, tau), f2, f0, m02, tau);
}

template <typename T>
Var<T> loss_l2_graph(const Var<T>& f2, const Var<T>& f3, const Var<T>& f0, const Var<T>& m0,
                     std::span<const double> lambdas, bool renormalize, T tau) {
  return loss_l2_graph(f2, f3, f0, loss_bank(f2, m0, lambdas, renormalize), tau);
}

// Which pieces of the objective are active (the ablation axes).
struct ObjectiveFlags {
  bool hard_positives = true;  // f1 / f2 branches present
  bool mixing = true;          // PNM hard negatives
  bool mixing_contrast = true; // L2 distribution matching instead of one-hot
};

template <typename T>
struct LossTerms {
  Var<T> total;
  std::optional<Var<T>> l1, l2, l3;

  T value(const std::optional<Var<T>>& v) const { return v ? v->item() : T{0}; }
};

template <typename T>
struct FeatureSet {
  Var<T> f0, f1, f2, f3;
};

// Per-sample objective. Full configuration: L = L1 + L2 + L3. Without the
// mixing-contrast term every active branch uses the one-hot form; without
// mixing the bank is M0 alone.
template <typename T>
LossTerms<T> contrastive_objective(const FeatureSet<T>& f, const Var<T>& m0, const ObjectiveFlags& flags,
                                   const MixConfig& mix_cfg, T tau) {
  const std::span<const double> lambdas =
      flags.mixing ? std::span<const double>(mix_cfg.lambdas) : std::span<const double>();
  const bool renorm = mix_cfg.renormalize;
  LossTerms<T> out;
  out.l3 = loss_l1_graph(f.f3, f.f0, m0, lambdas, renorm, tau);
  if (!flags.hard_positives) {
    if (flags.mixing_contrast) throw ConfigError("mixing contrast requires the hard positive branches");
    out.total = *out.l3;
    return out;
  }
  out.l1 = loss_l1_graph(f.f1, f.f0, m0, lambdas, renorm, tau);
  out.l2 = flags.mixing_contrast ? loss_l2_graph(f.f2, f.f3, f.f0, m0, lambdas, renorm, tau)
                                 : loss_l1_graph(f.f2, f.f0, m0, lambdas, renorm, tau);
  out.total = add(add(*out.l1, *out.l2), *out.l3);
  return out;
}

// L = L1 + L2 + L3 with all components on.
template <typename T>
LossTerms<T> mc_total_graph(const FeatureSet<T>& f, const Var<T>& m0, const MixConfig& mix_cfg, T tau) {
  return contrastive_objective(f, m0, ObjectiveFlags{}, mix_cfg, tau);
}

template <typename T>
struct LossBreakdown {
  T total{}, l1{}, l2{}, l3{};
};

// Value-only evaluation on plain tensors.
template <typename T>
LossBreakdown<T> mc_total(const Tensor<T>& f0, const Tensor<T>& f1, const Tensor<T>& f2, const Tensor<T>& f3,
                          const Tensor<T>& m0, const MixConfig& mix_cfg, const LossConfig& loss_cfg) {
  Tape<T> tape;
  FeatureSet<T> f{tape.constant(f0), tape.constant(f1), tape.constant(f2), tape.constant(f3)};
  auto terms = mc_total_graph(f, tape.constant(m0), mix_cfg, static_cast<T>(loss_cfg.tau));
  return {terms.total.item(), terms.value(terms.l1), terms.value(terms.l2), terms.value(terms.l3)};
}

template <typename T>
T infonce(const Tensor<T>& f3, const Tensor<T>& f0, const Tensor<T>& bank, T tau) {
  Tape<T> tape;
  return infonce_graph(tape.constant(f3), tape.constant(f0), tape.constant(bank), tau).item();
}

}  // namespace a2mc
