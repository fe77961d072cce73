#include "a2mc/grad_suite.hpp"

#include <functional>

#include "a2mc/attack.hpp"
#include "a2mc/grad_check.hpp"
#include "a2mc/mc_loss.hpp"

namespace a2mc {

namespace {

using V = Var<double>;
using Leaves = std::vector<V>;

Tensor<double> random_tensor(Rng& rng, const Shape& shape, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(shape);
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

Tensor<double> unit_rows(Rng& rng, const Shape& shape) {
  Tensor<double> t = random_tensor(rng, shape);
  for (std::size_t r = 0; r < shape[0]; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < shape[1]; ++c) s += t.at(r, c) * t.at(r, c);
    for (std::size_t c = 0; c < shape[1]; ++c) t.at(r, c) /= std::sqrt(s);
  }
  return t;
}

// Contracts an op output with fixed random weights so every component counts.
V weighted_sum(const V& y, std::uint64_t seed) {
  Rng rng(seed);
  return sum(mul(y, y.tape().constant(random_tensor(rng, y.shape()))));
}

struct Instance {
  std::vector<Tensor<double>> inputs;
  ScalarGraphFn f;
  ScalarGraphFn numeric;  // empty: same as f
};

using Maker = std::function<Instance(Rng&)>;

struct Case {
  std::string name;
  Maker make;
};

Instance simple(std::vector<Tensor<double>> in, ScalarGraphFn f) { return {std::move(in), std::move(f), {}}; }

Case op_case(std::string name, std::vector<Shape> shapes, std::function<V(const Leaves&)> f, double lo = -1.0) {
  return {name, [shapes, f, lo](Rng& rng) {
            std::vector<Tensor<double>> in;
            for (const auto& s : shapes) in.push_back(random_tensor(rng, s, lo, 1.0));
            return simple(std::move(in), [f](Tape<double>&, const Leaves& v) { return f(v); });
          }};
}

constexpr double kTau = 0.07;
const std::vector<double> kLambdas{0.4, 0.3, 0.2, 0.1};

EncoderParams<double> random_encoder(Rng& rng, const EncoderDims& dims) {
  EncoderParams<double> p = init_encoder<double>(dims, rng.next_u64());
  p.for_each([&](std::string_view, Tensor<double>& t) { t = random_tensor(rng, t.shape(), -0.8, 0.8); });
  return p;
}

const EncoderDims kTinyEncoder{2, 5, 4, 4, 5, 4};

std::vector<Case> suite_cases() {
  std::vector<Case> c;
  c.push_back(op_case("op.matmul", {{3, 4}, {4, 2}}, [](const Leaves& v) { return weighted_sum(matmul(v[0], v[1]), 1); }));
  c.push_back(op_case("op.add", {{2, 3}, {2, 3}}, [](const Leaves& v) { return weighted_sum(add(v[0], v[1]), 2); }));
  c.push_back(op_case("op.sub", {{2, 3}, {2, 3}}, [](const Leaves& v) { return weighted_sum(sub(v[0], v[1]), 3); }));
  c.push_back(op_case("op.scale", {{2, 3}}, [](const Leaves& v) { return weighted_sum(scale(v[0], -1.7), 4); }));
  c.push_back(op_case("op.mul", {{2, 3}, {2, 3}}, [](const Leaves& v) { return weighted_sum(mul(v[0], v[1]), 5); }));
  c.push_back(op_case("op.add_row", {{3, 4}, {1, 4}}, [](const Leaves& v) { return weighted_sum(add_row(v[0], v[1]), 6); }));
  c.push_back(op_case("op.concat", {{2, 3}, {1, 3}, {3, 2}}, [](const Leaves& v) {
    return add(weighted_sum(concat<double>({v[0], v[1]}, 0), 7), weighted_sum(concat<double>({transpose(v[0]), v[2]}, 1), 8));
  }));
  c.push_back(op_case("op.slice", {{4, 3}}, [](const Leaves& v) {
    return add(weighted_sum(slice(v[0], 0, 1, 3), 9), weighted_sum(slice(v[0], 1, 2, 3), 10));
  }));
  c.push_back(op_case("op.reshape", {{2, 6}}, [](const Leaves& v) { return weighted_sum(reshape(v[0], 3, 4), 11); }));
  c.push_back(op_case("op.transpose", {{2, 3}}, [](const Leaves& v) { return weighted_sum(transpose(v[0]), 12); }));
  c.push_back(op_case("op.tanh", {{2, 3}}, [](const Leaves& v) { return weighted_sum(tanh(v[0]), 13); }));
  c.push_back(op_case("op.sigmoid", {{2, 3}}, [](const Leaves& v) { return weighted_sum(sigmoid(v[0]), 14); }));
  c.push_back(op_case("op.exp", {{2, 3}}, [](const Leaves& v) { return weighted_sum(exp(v[0]), 15); }));
  c.push_back(op_case("op.log", {{2, 3}}, [](const Leaves& v) { return weighted_sum(log(v[0]), 16); }, 0.5));
  c.push_back({"op.relu", [](Rng& rng) {
                 auto t = random_tensor(rng, {2, 3});
                 for (auto& x : t.data())
                   if (std::abs(x) < 1e-3) x = 0.5;
                 return simple({t}, [](Tape<double>&, const Leaves& v) { return weighted_sum(relu(v[0]), 17); });
               }});
  c.push_back(op_case("op.sum", {{2, 3}}, [](const Leaves& v) { return scale(sum(v[0]), 1.3); }));
  c.push_back(op_case("op.mean", {{2, 3}}, [](const Leaves& v) { return scale(mean(v[0]), 2.1); }));
  c.push_back(op_case("op.dot", {{1, 5}, {1, 5}}, [](const Leaves& v) { return dot(v[0], v[1]); }));
  c.push_back(op_case("op.l2_norm", {{2, 3}}, [](const Leaves& v) { return l2_norm(v[0]); }));
  c.push_back(op_case("op.softmax_t", {{2, 4}}, [](const Leaves& v) { return weighted_sum(softmax_t(v[0], 0.3), 18); }));
  c.push_back(
      op_case("op.log_softmax_t", {{2, 4}}, [](const Leaves& v) { return weighted_sum(log_softmax_t(v[0], kTau), 19); }));
  c.push_back(op_case("op.l2_normalize", {{3, 4}}, [](const Leaves& v) { return weighted_sum(l2_normalize(v[0]), 20); }));
  c.push_back({"op.detach", [](Rng& rng) {
                 const auto base = random_tensor(rng, {2, 3});
                 Instance inst;
                 inst.inputs = {base};
                 inst.f = [](Tape<double>&, const Leaves& v) { return add(weighted_sum(detach(v[0]), 21), sum(v[0])); };
                 inst.numeric = [base](Tape<double>& t, const Leaves& v) {
                   return add(weighted_sum(t.constant(base), 21), sum(v[0]));
                 };
                 return inst;
               }});

  c.push_back({"encoder", [](Rng& rng) {
                 auto p = random_encoder(rng, kTinyEncoder);
                 std::vector<Tensor<double>> in{random_tensor(rng, {kTinyEncoder.frames, kTinyEncoder.input()})};
                 p.for_each([&](std::string_view, const Tensor<double>& t) { in.push_back(t); });
                 return simple(std::move(in), [](Tape<double>&, const Leaves& v) {
                   EncoderWeights<V> w;
                   std::size_t i = 1;
                   w.for_each([&](std::string_view, V& x) { x = v[i++]; });
                   return weighted_sum(encode_graph(w, v[0]), 22);
                 });
               }});

  c.push_back({"loss.attack", [](Rng& rng) {
                 return simple({random_tensor(rng, {1, 5}, -2.0, 2.0)}, [](Tape<double>&, const Leaves& v) {
                   return attack_loss(softmax_t(v[0], 1.0), 5);
                 });
               }});
  c.push_back({"loss.attack_through_encoder", [](Rng& rng) {
                 auto p = random_encoder(rng, kTinyEncoder);
                 const std::size_t C = 3;
                 std::vector<Tensor<double>> in{random_tensor(rng, {kTinyEncoder.frames, kTinyEncoder.input()}),
                                                random_tensor(rng, {kTinyEncoder.feature, C}),
                                                random_tensor(rng, {1, C})};
                 return simple(std::move(in), [p, C](Tape<double>& tape, const Leaves& v) {
                   auto w = bind(tape, p, false);
                   return attack_loss(class_feature_graph(w, v[1], v[2], v[0]), C);
                 });
               }});

  c.push_back({"pnm.mix", [](Rng& rng) {
                 return simple({unit_rows(rng, {1, 6}), unit_rows(rng, {3, 6})}, [](Tape<double>&, const Leaves& v) {
                   return weighted_sum(mix_graph(v[0], v[1], kLambdas, true), 23);
                 });
               }});

  c.push_back({"loss.infonce", [](Rng& rng) {
                 const auto f0 = unit_rows(rng, {1, 6});
                 return simple({unit_rows(rng, {1, 6}), unit_rows(rng, {4, 6})},
                               [f0](Tape<double>& t, const Leaves& v) {
                                 return infonce_graph(l2_normalize(v[0]), t.constant(f0), l2_normalize(v[1]), kTau);
                               });
               }});
  // L1 and L3 share one formula; both are checked on their own draws.
  for (const char* name : {"loss.l1", "loss.l3"}) {
    c.push_back({name, [](Rng& rng) {
                   const auto f0 = unit_rows(rng, {1, 6});
                   return simple({unit_rows(rng, {1, 6}), unit_rows(rng, {4, 6})},
                                 [f0](Tape<double>& t, const Leaves& v) {
                                   return loss_l1_graph(l2_normalize(v[0]), t.constant(f0), l2_normalize(v[1]), kLambdas,
                                                        true, kTau);
                                 });
                 }});
  }
  c.push_back({"loss.l2", [](Rng& rng) {
                 const auto f0 = unit_rows(rng, {1, 6});
                 std::vector<Tensor<double>> in{unit_rows(rng, {1, 6}), unit_rows(rng, {1, 6}), unit_rows(rng, {4, 6})};
                 // Target held at its value at the base point.
                 Tensor<double> target;
                 {
                   Tape<double> t;
                   auto f2 = l2_normalize(t.constant(in[0]));
                   auto m02 = loss_bank(f2, l2_normalize(t.constant(in[2])), kLambdas, true);
                   target = l2_target(l2_normalize(t.constant(in[1])), t.constant(f0), m02, kTau).value();
                 }
                 Instance inst;
                 inst.inputs = std::move(in);
                 inst.f = [f0](Tape<double>& t, const Leaves& v) {
                   return loss_l2_graph(l2_normalize(v[0]), l2_normalize(v[1]), t.constant(f0), l2_normalize(v[2]),
                                        kLambdas, true, kTau);
                 };
                 inst.numeric = [f0, target](Tape<double>& t, const Leaves& v) {
                   auto f2 = l2_normalize(v[0]);
                   auto m02 = loss_bank(f2, l2_normalize(v[2]), kLambdas, true);
                   return cross_entropy_to_target(t.constant(target), f2, t.constant(f0), m02, kTau);
                 };
                 return inst;
               }});
  c.push_back({"loss.mc_total", [](Rng& rng) {
                 const auto f0 = unit_rows(rng, {1, 6});
                 std::vector<Tensor<double>> in{unit_rows(rng, {1, 6}), unit_rows(rng, {1, 6}), unit_rows(rng, {1, 6}),
                                                unit_rows(rng, {4, 6})};
                 MixConfig mix;
                 Tensor<double> target;
                 {
                   Tape<double> t;
                   auto f2 = l2_normalize(t.constant(in[1]));
                   auto m02 = loss_bank(f2, l2_normalize(t.constant(in[3])), kLambdas, true);
                   target = l2_target(l2_normalize(t.constant(in[2])), t.constant(f0), m02, kTau).value();
                 }
                 Instance inst;
                 inst.inputs = std::move(in);
                 inst.f = [f0, mix](Tape<double>& t, const Leaves& v) {
                   FeatureSet<double> fs{t.constant(f0), l2_normalize(v[0]), l2_normalize(v[1]), l2_normalize(v[2])};
                   return mc_total_graph(fs, l2_normalize(v[3]), mix, kTau).total;
                 };
                 inst.numeric = [f0, target](Tape<double>& t, const Leaves& v) {
                   auto k = t.constant(f0);
                   auto m0 = l2_normalize(v[3]);
                   auto f1 = l2_normalize(v[0]), f2 = l2_normalize(v[1]), f3 = l2_normalize(v[2]);
                   auto l1 = loss_l1_graph(f1, k, m0, kLambdas, true, kTau);
                   auto l3 = loss_l1_graph(f3, k, m0, kLambdas, true, kTau);
                   auto l2 = cross_entropy_to_target(t.constant(target), f2, k, loss_bank(f2, m0, kLambdas, true), kTau);
                   return add(add(l1, l2), l3);
                 };
                 return inst;
               }});
  return c;
}

}  // namespace

std::vector<GradSuiteEntry> run_grad_suite(std::uint64_t seed, std::size_t instances, double eps) {
  std::vector<GradSuiteEntry> out;
  for (const auto& c : suite_cases()) {
    GradSuiteEntry e;
    e.name = c.name;
    std::uint64_t tag = 1469598103934665603ULL;
    for (unsigned char ch : c.name) tag = (tag ^ ch) * 1099511628211ULL;
    Rng rng = Rng::stream(seed, {tag});
    for (std::size_t i = 0; i < instances; ++i) {
      const Instance inst = c.make(rng);
      const auto r = grad_check_report(inst.f, inst.numeric ? inst.numeric : inst.f, inst.inputs, eps);
      e.max_rel_error = std::max(e.max_rel_error, r.max_rel_error);
      ++e.instances;
    }
    out.push_back(e);
  }
  return out;
}

}  // namespace a2mc
