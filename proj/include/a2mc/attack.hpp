#pragma once

#include <cmath>
#include <string>

#include "a2mc/augment.hpp"
#include "a2mc/encoder.hpp"

namespace a2mc {

struct AttackConfig {
  double epsilon = 0.1;
  double eta = 0.5;
  std::size_t steps = 1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const {
    if (!(epsilon > 0.0)) throw ConfigError("attack epsilon must be positive");
    if (!(eta > 0.0)) throw ConfigError("attack eta must be positive");
    if (steps < 1) throw ConfigError("attack steps must be at least 1");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
      throw ConfigError("attack adam betas must lie in [0, 1)");
    }
    if (!(adam_eps > 0.0)) throw ConfigError("attack adam_eps must be positive");
  }

  std::string descriptor() const {
    return "attack{eps=" + std::to_string(epsilon) + ",eta=" + std::to_string(eta) +
           ",steps=" + std::to_string(steps) + "}";
  }
};

// Mean squared deviation of the class distribution from uniform:
// (1/C) * sum_c (f_a[c] - 1/C)^2.
template <typename T>
Var<T> attack_loss(const Var<T>& fa, std::size_t num_classes) {
  if (fa.numel() != num_classes) {
    throw ContractError("attack_loss: distribution has " + std::to_string(fa.numel()) + " entries, expected " +
                        std::to_string(num_classes));
  }
  Var<T> uniform = fa.tape().constant(Tensor<T>::full(fa.shape(), T{1} / static_cast<T>(num_classes)));
  Var<T> diff = sub(fa, uniform);
  return mean(mul(diff, diff));
}

template <typename T>
T attack_loss_value(const Tensor<T>& fa) {
  const T u = T{1} / static_cast<T>(fa.numel());
  T s{0};
  for (T v : fa.data()) s += (v - u) * (v - u);
  return s / static_cast<T>(fa.numel());
}

template <typename T>
struct AttackResult {
  SkeletonSequence attacked;
  // frames x (3 * joints), the perturbation actually applied.
  Tensor<T> rho;
  bool aborted = false;
  std::string warning;

  T rho_norm() const { return frobenius_norm(rho); }
};

namespace detail {

// Gradient of the attack loss with respect to the input sequence, with the
// encoder and head held constant.
template <typename T>
Tensor<T> attack_gradient(const Tensor<T>& x, const EncoderParams<T>& params, const AttackHead<T>& head) {
  Tape<T> tape;
  auto w = bind(tape, params, false);
  Var<T> xv = tape.leaf(x);
  Var<T> fa = class_feature_graph(w, tape.constant(head.w), tape.constant(head.b), xv);
  Var<T> loss = attack_loss(fa, head.num_classes());
  tape.backward(loss);
  return tape.grad(xv);
}

}  // namespace detail

// One (or `steps`) Adam update(s) from fresh state in the loss-decreasing
// direction, then projection of the whole-sequence perturbation into the open
// l2 ball of radius eta.
template <typename T>
AttackResult<T> attack_step(const SkeletonSequence& x, const EncoderParams<T>& params, const AttackHead<T>& head,
                            const AttackConfig& cfg) {
  cfg.validate();
  check_sequence_shape<T>(params.dims, x);
  if (head.w.dim(0) != params.dims.feature) throw ConfigError("attack head does not match encoder feature size");
  const Tensor<T> x0 = x.template to_matrix<T>();
  AttackResult<T> result{x, Tensor<T>::zeros(x0.shape()), false, {}};
  std::vector<double> m(x0.numel(), 0.0), v(x0.numel(), 0.0);
  Tensor<T> rho = Tensor<T>::zeros(x0.shape());
  Tensor<T> current = x0;
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    Tensor<T> g;
    try {
      g = detail::attack_gradient(current, params, head);
    } catch (const NumericDomainError& e) {
      result.aborted = true;
      result.warning = std::string("attack aborted: ") + e.what();
      return result;
    }
    if (!g.all_finite()) {
      result.aborted = true;
      result.warning = "attack aborted: non-finite input gradient";
      return result;
    }
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
    for (std::size_t i = 0; i < g.numel(); ++i) {
      const double gi = static_cast<double>(g[i]);
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
      const double update = (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.adam_eps);
      rho[i] = static_cast<T>(static_cast<double>(rho[i]) - cfg.epsilon * update);
    }
    const double norm = static_cast<double>(frobenius_norm(rho));
    if (norm >= cfg.eta) {
      const double s = cfg.eta * (1.0 - 1e-6) / norm;
      for (auto& r : rho.data()) r = static_cast<T>(static_cast<double>(r) * s);
    }
    for (std::size_t i = 0; i < current.numel(); ++i) current[i] = x0[i] + rho[i];
  }
  result.rho = rho;
  result.attacked = SkeletonSequence::from_matrix(current, x.topology());
  return result;
}

template <typename T>
struct AttAugViews {
  AttackResult<T> attack;
  SkeletonSequence weak_view;
  SkeletonSequence strong_view;
};

// Targeted attack followed by the weak and strong appearance pipelines, each
// drawing from its own stream.
template <typename T>
AttAugViews<T> att_aug_views(const SkeletonSequence& x, const EncoderParams<T>& params, const AttackHead<T>& head,
                             const AttackConfig& cfg, const AugmentationSpec& weak, const AugmentationSpec& strong,
                             Rng& weak_rng, Rng& strong_rng) {
  AttAugViews<T> out{attack_step(x, params, head, cfg), {}, {}};
  out.weak_view = apply(weak, out.attack.attacked, weak_rng);
  out.strong_view = apply(strong, out.attack.attacked, strong_rng);
  return out;
}

template <typename T>
struct AttAugFeatures {
  Tensor<T> f1;
  Tensor<T> f2;
  SkeletonSequence attacked;
};

template <typename T>
AttAugFeatures<T> att_aug(const SkeletonSequence& x, const EncoderParams<T>& params, const AttackHead<T>& head,
                          const AttackConfig& cfg, const AugmentationSpec& weak, const AugmentationSpec& strong,
                          Rng& weak_rng, Rng& strong_rng) {
  auto views = att_aug_views(x, params, head, cfg, weak, strong, weak_rng, strong_rng);
  return {encode(params, views.weak_view), encode(params, views.strong_view), std::move(views.attack.attacked)};
}

}  // namespace a2mc
