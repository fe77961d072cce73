#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>

#include "a2mc/autodiff.hpp"
#include "a2mc/rng.hpp"
#include "a2mc/skeleton.hpp"

namespace a2mc {

struct EncoderDims {
  std::size_t joints = 10;
  std::size_t frames = 32;
  std::size_t embed = 32;
  std::size_t hidden = 48;
  std::size_t proj_hidden = 64;
  std::size_t feature = 128;

  std::size_t input() const { return 3 * joints; }
  void validate() const {
    if (joints < 2 || frames < 2 || embed < 1 || hidden < 1 || proj_hidden < 1 || feature < 1) {
      throw ConfigError("encoder dimensions must be positive (joints, frames >= 2)");
    }
  }
  friend bool operator==(const EncoderDims&, const EncoderDims&) = default;
};

// Per-frame linear embedding -> one GRU layer over time -> temporal mean pool
// -> two-layer projection head. V is Tensor<T> for stored parameters and
// Var<T> for parameters bound to a tape.
template <typename V>
struct EncoderWeights {
  V embed_w, embed_b;
  V w_z, w_r, w_n;
  V u_z, u_r, u_n;
  V b_z, b_r, b_n;
  V proj1_w, proj1_b;
  V proj2_w, proj2_b;

  // Visits every parameter with a stable name, in a fixed order.
  template <typename Self, typename F>
  static void visit(Self& self, F&& f) {
    f("embed.w", self.embed_w);
    f("embed.b", self.embed_b);
    f("gru.w_z", self.w_z);
    f("gru.w_r", self.w_r);
    f("gru.w_n", self.w_n);
    f("gru.u_z", self.u_z);
    f("gru.u_r", self.u_r);
    f("gru.u_n", self.u_n);
    f("gru.b_z", self.b_z);
    f("gru.b_r", self.b_r);
    f("gru.b_n", self.b_n);
    f("proj1.w", self.proj1_w);
    f("proj1.b", self.proj1_b);
    f("proj2.w", self.proj2_w);
    f("proj2.b", self.proj2_b);
  }

  template <typename F>
  void for_each(F&& f) {
    visit(*this, f);
  }
  template <typename F>
  void for_each(F&& f) const {
    visit(*this, f);
  }
};

template <typename T>
struct EncoderParams : EncoderWeights<Tensor<T>> {
  EncoderDims dims;

  std::size_t parameter_count() const {
    std::size_t n = 0;
    this->for_each([&](std::string_view, const Tensor<T>& t) { n += t.numel(); });
    return n;
  }

  template <typename U>
  EncoderParams<U> cast() const {
    EncoderParams<U> out;
    out.dims = dims;
    auto src = this->names_and_tensors();
    std::size_t i = 0;
    out.for_each([&](std::string_view, Tensor<U>& t) { t = src[i++]->template cast<U>(); });
    return out;
  }

  std::vector<const Tensor<T>*> names_and_tensors() const {
    std::vector<const Tensor<T>*> v;
    this->for_each([&](std::string_view, const Tensor<T>& t) { v.push_back(&t); });
    return v;
  }

  friend bool operator==(const EncoderParams& a, const EncoderParams& b) {
    if (!(a.dims == b.dims)) return false;
    auto ta = a.names_and_tensors();
    auto tb = b.names_and_tensors();
    for (std::size_t i = 0; i < ta.size(); ++i)
      if (!(*ta[i] == *tb[i])) return false;
    return true;
  }
};

// Fixed linear map feature -> C logits used by the attack.
template <typename T>
struct AttackHead {
  Tensor<T> w;  // feature x C
  Tensor<T> b;  // 1 x C

  std::size_t num_classes() const { return w.rank() == 2 ? w.dim(1) : 0; }

  template <typename U>
  AttackHead<U> cast() const {
    return {w.template cast<U>(), b.template cast<U>()};
  }
  friend bool operator==(const AttackHead& a, const AttackHead& b) { return a.w == b.w && a.b == b.b; }
};

namespace detail {

template <typename T>
Tensor<T> fan_in_uniform(Rng& rng, Shape shape, std::size_t fan_in) {
  Tensor<T> t(std::move(shape));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

}  // namespace detail

// U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases alike.
template <typename T>
EncoderParams<T> init_encoder(const EncoderDims& dims, std::uint64_t seed) {
  dims.validate();
  Rng rng = Rng::stream(seed, {0xE9C0DEULL});
  EncoderParams<T> p;
  p.dims = dims;
  const std::size_t in = dims.input(), e = dims.embed, h = dims.hidden, ph = dims.proj_hidden, d = dims.feature;
  p.embed_w = detail::fan_in_uniform<T>(rng, {in, e}, in);
  p.embed_b = Tensor<T>::zeros({1, e});
  p.w_z = detail::fan_in_uniform<T>(rng, {e, h}, e);
  p.w_r = detail::fan_in_uniform<T>(rng, {e, h}, e);
  p.w_n = detail::fan_in_uniform<T>(rng, {e, h}, e);
  p.u_z = detail::fan_in_uniform<T>(rng, {h, h}, h);
  p.u_r = detail::fan_in_uniform<T>(rng, {h, h}, h);
  p.u_n = detail::fan_in_uniform<T>(rng, {h, h}, h);
  p.b_z = Tensor<T>::zeros({1, h});
  p.b_r = Tensor<T>::zeros({1, h});
  p.b_n = Tensor<T>::zeros({1, h});
  p.proj1_w = detail::fan_in_uniform<T>(rng, {h, ph}, h);
  p.proj1_b = Tensor<T>::zeros({1, ph});
  p.proj2_w = detail::fan_in_uniform<T>(rng, {ph, d}, ph);
  p.proj2_b = Tensor<T>::zeros({1, d});
  return p;
}

template <typename T>
AttackHead<T> init_attack_head(std::size_t feature, std::size_t num_classes, std::uint64_t seed) {
  if (feature < 1 || num_classes < 2) throw ConfigError("attack head needs feature >= 1 and C >= 2");
  Rng rng = Rng::stream(seed, {0xA77ACCULL});
  return {detail::fan_in_uniform<T>(rng, {feature, num_classes}, feature),
          detail::fan_in_uniform<T>(rng, {1, num_classes}, feature)};
}

// Records every parameter as a tape leaf.
template <typename T>
EncoderWeights<Var<T>> bind(Tape<T>& tape, const EncoderParams<T>& p, bool requires_grad) {
  EncoderWeights<Var<T>> w;
  auto src = p.names_and_tensors();
  std::size_t i = 0;
  w.for_each([&](std::string_view, Var<T>& v) { v = tape.leaf(*src[i++], requires_grad); });
  return w;
}

// x: frames x (3 * joints). Returns the 1 x feature unit-norm embedding.
template <typename T>
Var<T> encode_graph(const EncoderWeights<Var<T>>& w, const Var<T>& x) {
  Tape<T>& tape = x.tape();
  detail::require_matrix(x, "encode");
  if (x.shape()[1] != w.embed_w.shape()[0]) {
    throw ConfigError("encode: input has " + std::to_string(x.shape()[1]) + " columns, encoder expects " +
                      std::to_string(w.embed_w.shape()[0]));
  }
  const std::size_t frames = x.shape()[0];
  const std::size_t hidden = w.u_z.shape()[0];
  // Input standardization: remove the temporal mean, (I - 11^T / T) x, then
  // rescale the whole sequence to unit RMS.
  const std::size_t cols = x.shape()[1];
  Tensor<T> center = Tensor<T>::full({frames, frames}, T{-1} / static_cast<T>(frames));
  for (std::size_t t = 0; t < frames; ++t) center.at(t, t) += T{1};
  Var<T> xc = matmul(tape.constant(std::move(center)), x);
  xc = scale(reshape(l2_normalize(reshape(xc, 1, frames * cols)), frames, cols),
             static_cast<T>(std::sqrt(static_cast<double>(frames * cols))));
  Var<T> emb = add_row(matmul(xc, w.embed_w), w.embed_b);
  Var<T> xz = add_row(matmul(emb, w.w_z), w.b_z);
  Var<T> xr = add_row(matmul(emb, w.w_r), w.b_r);
  Var<T> xn = add_row(matmul(emb, w.w_n), w.b_n);
  Var<T> h = tape.constant(Tensor<T>::zeros({1, hidden}));
  Var<T> pooled;
  for (std::size_t t = 0; t < frames; ++t) {
    Var<T> z = sigmoid(add(slice(xz, 0, t, t + 1), matmul(h, w.u_z)));
    Var<T> r = sigmoid(add(slice(xr, 0, t, t + 1), matmul(h, w.u_r)));
    Var<T> n = tanh(add(slice(xn, 0, t, t + 1), matmul(mul(r, h), w.u_n)));
    // h' = (1 - z) * n + z * h
    h = add(n, mul(z, sub(h, n)));
    pooled = t == 0 ? h : add(pooled, h);
  }
  pooled = scale(pooled, T{1} / static_cast<T>(frames));
  Var<T> p1 = relu(add_row(matmul(pooled, w.proj1_w), w.proj1_b));
  Var<T> out = add_row(matmul(p1, w.proj2_w), w.proj2_b);
  return l2_normalize(out);
}

template <typename T>
void check_sequence_shape(const EncoderDims& dims, const SkeletonSequence& s) {
  if (s.joints() != dims.joints || s.frames() != dims.frames) {
    throw ConfigError("encode: sequence is " + std::to_string(s.frames()) + " x " + std::to_string(s.joints()) +
                      ", encoder expects " + std::to_string(dims.frames) + " x " + std::to_string(dims.joints));
  }
}

// Forward pass without gradients.
template <typename T>
Tensor<T> encode(const EncoderParams<T>& params, const SkeletonSequence& s) {
  check_sequence_shape<T>(params.dims, s);
  Tape<T> tape;
  auto w = bind(tape, params, false);
  return encode_graph(w, tape.constant(s.template to_matrix<T>())).value();
}

// softmax(head(feature)) with unit temperature.
template <typename T>
Var<T> class_feature_graph(const EncoderWeights<Var<T>>& w, const Var<T>& head_w, const Var<T>& head_b,
                           const Var<T>& x) {
  Var<T> f = encode_graph(w, x);
  return softmax_t(add_row(matmul(f, head_w), head_b), T{1});
}

template <typename T>
Tensor<T> class_feature(const EncoderParams<T>& params, const AttackHead<T>& head, const SkeletonSequence& s) {
  check_sequence_shape<T>(params.dims, s);
  if (head.w.dim(0) != params.dims.feature) throw ConfigError("attack head does not match encoder feature size");
  Tape<T> tape;
  auto w = bind(tape, params, false);
  return class_feature_graph(w, tape.constant(head.w), tape.constant(head.b),
                             tape.constant(s.template to_matrix<T>()))
      .value();
}

// theta_k <- alpha * theta_k + (1 - alpha) * theta_q
template <typename T>
void momentum_update(EncoderParams<T>& key, const EncoderParams<T>& query, double alpha) {
  if (!(alpha >= 0.0 && alpha < 1.0)) throw ConfigError("momentum alpha must lie in [0, 1)");
  if (!(key.dims == query.dims)) throw ContractError("momentum_update: encoder shapes differ");
  auto src = query.names_and_tensors();
  std::size_t i = 0;
  const T a = static_cast<T>(alpha);
  const T b = static_cast<T>(1.0 - alpha);
  key.for_each([&](std::string_view name, Tensor<T>& k) {
    const Tensor<T>& q = *src[i++];
    if (k.shape() != q.shape()) throw ContractError("momentum_update: shape mismatch for " + std::string(name));
    for (std::size_t j = 0; j < k.numel(); ++j) k[j] = a * k[j] + b * q[j];
  });
}

template <typename T>
T entropy(const Tensor<T>& p) {
  T h{0};
  for (T v : p.data())
    if (v > T{0}) h -= v * std::log(v);
  return h;
}

}  // namespace a2mc
