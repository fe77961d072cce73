#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "a2mc/binary_io.hpp"
#include "a2mc/grad_check.hpp"
#include "a2mc/rng.hpp"

using namespace a2mc;

namespace {

Tensor<double> random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// Contracts an op output with fixed random weights so every output component
// contributes to the scalar under test.
Var<double> weighted_sum(const Var<double>& y, std::uint64_t seed) {
  Rng rng(seed);
  return sum(mul(y, y.tape().constant(random_tensor(rng, y.shape()))));
}

}  // namespace

TEST_CASE("matmul and shape arithmetic") {
  Tape<double> tape;
  auto a = tape.constant(Tensor<double>::matrix({{1, 2}, {3, 4}}));
  auto i2 = tape.constant(Tensor<double>::identity(2));
  CHECK(matmul(a, i2).value() == Tensor<double>::matrix({{1, 2}, {3, 4}}));

  auto x = tape.constant(Tensor<double>::zeros({2, 3}));
  auto y = tape.constant(Tensor<double>::zeros({5, 3}));
  CHECK(concat<double>({x, y}, 0).shape() == Shape{7, 3});
  CHECK(concat<double>({tape.constant(Tensor<double>::zeros({2, 3})), tape.constant(Tensor<double>::zeros({2, 1}))}, 1)
            .shape() == Shape{2, 4});
}

TEST_CASE("shape mismatch names both shapes") {
  Tape<double> tape;
  auto a = tape.constant(Tensor<double>::zeros({2, 3}));
  auto b = tape.constant(Tensor<double>::zeros({2, 2}));
  try {
    (void)matmul(a, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("(2, 3)") != std::string::npos);
    CHECK(msg.find("(2, 2)") != std::string::npos);
  }
  CHECK_THROWS_AS(add(a, b), DimensionError);
  CHECK_THROWS_AS(slice(a, 1, 2, 5), DimensionError);
}

TEST_CASE("add gradient is ones against central differences") {
  Rng rng(3);
  auto a = random_tensor(rng, {3, 4});
  auto b = random_tensor(rng, {3, 4});
  Tape<double> tape;
  auto va = tape.leaf(a);
  auto vb = tape.leaf(b);
  tape.backward(sum(add(va, vb)));
  CHECK(tape.grad(va) == Tensor<double>::ones({3, 4}));
  const double err =
      grad_check_report([](Tape<double>&, const std::vector<Var<double>>& v) { return sum(add(v[0], v[1])); },
                        {a, b}, 1e-6)
          .max_rel_error;
  CHECK(err < 1e-6);
}

TEST_CASE("nonlinear forward values") {
  Tape<double> tape;
  CHECK(tanh(tape.constant(Tensor<double>::scalar(0.0))).item() == 0.0);
  auto u = tape.constant(Tensor<double>::row({0.6, 0.8}));
  CHECK(dot(u, u).item() == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(relu(tape.constant(Tensor<double>::row({-1.0, 2.0}))).value() == Tensor<double>::row({0.0, 2.0}));
  CHECK(mean(tape.constant(Tensor<double>::row({1.0, 2.0, 3.0}))).item() == doctest::Approx(2.0));
  CHECK(l2_norm(tape.constant(Tensor<double>::row({3.0, 4.0}))).item() == doctest::Approx(5.0));
  CHECK(sigmoid(tape.constant(Tensor<double>::scalar(0.0))).item() == doctest::Approx(0.5));
}

TEST_CASE("exp gradient at random points") {
  Rng rng(5);
  for (int trial = 0; trial < 5; ++trial) {
    const double err = grad_check([](Var<double> x) { return sum(exp(x)); }, random_tensor(rng, {2, 3}), 1e-5);
    CHECK(err < 1e-6);
  }
}

TEST_CASE("domain errors") {
  Tape<double> tape;
  CHECK_THROWS_AS(log(tape.constant(Tensor<double>::row({1.0, 0.0}))), NumericDomainError);
  CHECK_THROWS_AS(log(tape.constant(Tensor<double>::row({-1.0}))), NumericDomainError);
  CHECK_THROWS_AS(l2_normalize(tape.constant(Tensor<double>::row({0.0, 0.0}))), DegenerateInputError);
  CHECK_THROWS_AS(softmax_t(tape.constant(Tensor<double>::row({1.0})), 0.0), ConfigError);
  CHECK_THROWS_AS(softmax_t(tape.constant(Tensor<double>::row({1.0})), -1.0), ConfigError);
  CHECK_THROWS_AS(exp(tape.constant(Tensor<double>::scalar(1000.0))), NumericDomainError);
}

TEST_CASE("softmax_t") {
  Tape<double> tape;
  auto p = softmax_t(tape.constant(Tensor<double>::row({2.5, 2.5, 2.5})), 0.3).value();
  for (double v : p.data()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  auto q = softmax_t(tape.constant(Tensor<double>::row({1.0, 0.0})), 1.0).value();
  const double e = std::exp(1.0);
  CHECK(q[0] == doctest::Approx(e / (e + 1.0)).epsilon(1e-14));
  CHECK(q[1] == doctest::Approx(1.0 / (e + 1.0)).epsilon(1e-14));
  CHECK(q[0] == doctest::Approx(0.7311).epsilon(1e-4));

  Rng rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    auto v = tape.constant(random_tensor(rng, {1, 6}));
    auto sharp = softmax_t(v, 0.07).value();
    auto flat = softmax_t(v, 1.0).value();
    std::size_t arg = 0;
    for (std::size_t i = 1; i < 6; ++i)
      if (v.value()[i] > v.value()[arg]) arg = i;
    CHECK(sharp[arg] >= flat[arg]);
    double s = 0;
    for (double x : flat.data()) {
      CHECK(x > 0.0);
      CHECK(x < 1.0);
      s += x;
    }
    CHECK(std::abs(s - 1.0) < 1e-9);
  }
}

TEST_CASE("softmax survives large logits") {
  Tape<double> tape;
  auto p = softmax_t(tape.constant(Tensor<double>::row({1.0, -1.0, 0.5})), 0.03).value();
  double s = 0;
  for (double v : p.data()) s += v;
  CHECK(std::abs(s - 1.0) < 1e-12);
  auto lp = log_softmax_t(tape.constant(Tensor<float>::row({1.0f, -1.0f}).cast<double>()), 0.01).value();
  CHECK(std::isfinite(lp[1]));
}

TEST_CASE("l2_normalize") {
  Tape<double> tape;
  auto y = l2_normalize(tape.constant(Tensor<double>::row({3.0, 4.0}))).value();
  CHECK(y[0] == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(y[1] == doctest::Approx(0.8).epsilon(1e-15));
  auto u = Tensor<double>::row({0.0, 1.0, 0.0});
  CHECK(l2_normalize(tape.constant(u)).value() == u);

  Rng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    auto v = random_tensor(rng, {2, 5});
    const auto n = l2_normalize(tape.constant(v)).value();
    for (std::size_t r = 0; r < 2; ++r) {
      double s = 0;
      for (std::size_t c = 0; c < 5; ++c) s += n.at(r, c) * n.at(r, c);
      CHECK(std::abs(std::sqrt(s) - 1.0) < 1e-6);
    }
    const double err = grad_check([](Var<double> x) { return weighted_sum(l2_normalize(x), 77); }, v, 1e-5);
    CHECK(err < 1e-5);
  }
}

TEST_CASE("backward contracts") {
  Rng rng(4);
  auto x0 = random_tensor(rng, {3, 2});
  Tape<double> tape;
  auto x = tape.leaf(x0);
  auto unused = tape.leaf(random_tensor(rng, {2, 2}));
  auto c = tape.leaf(random_tensor(rng, {1, 1}));
  tape.backward(sum(x));
  CHECK(tape.grad(x) == Tensor<double>::ones({3, 2}));
  CHECK(tape.grad(unused) == Tensor<double>::zeros({2, 2}));
  CHECK(tape.grad(c) == Tensor<double>::zeros({1, 1}));
  CHECK_THROWS_AS(tape.backward(x), ContractError);

  // A constant loss leaves its would-be leaf at zero.
  Tape<double> t2;
  auto leaf = t2.leaf(x0);
  auto k = sum(t2.constant(Tensor<double>::ones({2, 2})));
  (void)leaf;
  t2.backward(k);
  CHECK(t2.grad(leaf) == Tensor<double>::zeros({3, 2}));
}

TEST_CASE("reshape keeps row-major order and rejects size changes") {
  Tape<double> tape;
  auto x = tape.leaf(Tensor<double>::matrix({{1.0, 2.0, 3.0}, {4.0, 5.0, 6.0}}));
  auto y = reshape(x, 3, 2);
  CHECK(y.value() == Tensor<double>::matrix({{1.0, 2.0}, {3.0, 4.0}, {5.0, 6.0}}));
  CHECK_THROWS_AS(reshape(x, 4, 2), DimensionError);
}

TEST_CASE("detach blocks gradient") {
  Tape<double> tape;
  auto x = tape.leaf(Tensor<double>::row({1.0, 2.0}));
  tape.backward(sum(mul(detach(x), x)));
  CHECK(tape.grad(x) == Tensor<double>::row({1.0, 2.0}));
}

TEST_CASE("every backward rule passes the finite-difference check") {
  Rng rng(2024);
  const double eps = 1e-5;
  using F = std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;
  struct Case {
    const char* name;
    std::vector<Shape> shapes;
    F f;
    double lo = -1.0;
  };
  const std::vector<Case> cases = {
      {"matmul", {{3, 4}, {4, 2}}, [](auto&, auto& v) { return weighted_sum(matmul(v[0], v[1]), 1); }},
      {"add", {{2, 3}, {2, 3}}, [](auto&, auto& v) { return weighted_sum(add(v[0], v[1]), 2); }},
      {"sub", {{2, 3}, {2, 3}}, [](auto&, auto& v) { return weighted_sum(sub(v[0], v[1]), 3); }},
      {"scale", {{2, 3}}, [](auto&, auto& v) { return weighted_sum(scale(v[0], -1.7), 4); }},
      {"mul", {{2, 3}, {2, 3}}, [](auto&, auto& v) { return weighted_sum(mul(v[0], v[1]), 5); }},
      {"add_row", {{3, 4}, {1, 4}}, [](auto&, auto& v) { return weighted_sum(add_row(v[0], v[1]), 6); }},
      {"concat0", {{2, 3}, {1, 3}}, [](auto&, auto& v) { return weighted_sum(concat<double>({v[0], v[1]}, 0), 7); }},
      {"concat1", {{2, 3}, {2, 2}}, [](auto&, auto& v) { return weighted_sum(concat<double>({v[0], v[1]}, 1), 8); }},
      {"reshape", {{2, 6}}, [](auto&, auto& v) { return weighted_sum(reshape(v[0], 3, 4), 40); }},
      {"slice", {{4, 3}}, [](auto&, auto& v) { return weighted_sum(slice(v[0], 0, 1, 3), 9); }},
      {"transpose", {{2, 3}}, [](auto&, auto& v) { return weighted_sum(transpose(v[0]), 10); }},
      {"tanh", {{2, 3}}, [](auto&, auto& v) { return weighted_sum(tanh(v[0]), 11); }},
      {"sigmoid", {{2, 3}}, [](auto&, auto& v) { return weighted_sum(sigmoid(v[0]), 12); }},
      {"exp", {{2, 3}}, [](auto&, auto& v) { return weighted_sum(exp(v[0]), 13); }},
      {"log", {{2, 3}}, [](auto&, auto& v) { return weighted_sum(log(v[0]), 14); }, 0.5},
      {"relu", {{2, 3}}, [](auto&, auto& v) { return weighted_sum(relu(v[0]), 15); }},
      {"sum", {{2, 3}}, [](auto&, auto& v) { return scale(sum(v[0]), 1.3); }},
      {"mean", {{2, 3}}, [](auto&, auto& v) { return scale(mean(v[0]), 2.1); }},
      {"dot", {{1, 5}, {1, 5}}, [](auto&, auto& v) { return dot(v[0], v[1]); }},
      {"l2_norm", {{2, 3}}, [](auto&, auto& v) { return l2_norm(v[0]); }},
      {"softmax_t", {{2, 4}}, [](auto&, auto& v) { return weighted_sum(softmax_t(v[0], 0.3), 16); }},
      {"log_softmax_t", {{2, 4}}, [](auto&, auto& v) { return weighted_sum(log_softmax_t(v[0], 0.07), 17); }},
      {"l2_normalize", {{3, 4}}, [](auto&, auto& v) { return weighted_sum(l2_normalize(v[0]), 18); }},
  };
  for (const auto& c : cases) {
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<Tensor<double>> inputs;
      for (const auto& s : c.shapes) {
        auto t = random_tensor(rng, s, c.lo, 1.0);
        if (std::string(c.name) == "relu")
          for (auto& v : t.data())
            if (std::abs(v) < 1e-3) v = 0.5;
        inputs.push_back(t);
      }
      worst = std::max(worst, grad_check_report(c.f, inputs, eps).max_rel_error);
    }
    INFO(c.name);
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("grad_check oracle") {
  Rng rng(8);
  auto x = random_tensor(rng, {1, 6});
  CHECK(grad_check([](Var<double> v) { return scale(dot(v, v), 0.5); }, x, 1e-5) < 1e-8);

  // Fault injection: a rule that reports twice the true derivative.
  auto bad_square = [](const Var<double>& a) {
    Tensor<double> out = a.value();
    for (auto& v : out.data()) v = v * v;
    const std::size_t ia = a.id();
    return a.tape().record("bad_square", std::move(out), {a},
                           [ia](Tape<double>& t, std::size_t, const Tensor<double>& g) {
                             auto* ga = t.grad_slot(ia);
                             for (std::size_t i = 0; i < g.numel(); ++i) (*ga)[i] += 4.0 * t.value(ia)[i] * g[i];
                           });
  };
  CHECK(grad_check([&](Var<double> v) { return sum(bad_square(v)); }, x, 1e-5) > 1e-2);
}

TEST_CASE("forward results are bit-identical across runs") {
  auto run = [] {
    Rng rng(77);
    Tape<float> tape;
    auto a = tape.leaf(random_tensor(rng, {5, 7}).cast<float>());
    auto b = tape.leaf(random_tensor(rng, {7, 3}).cast<float>());
    auto loss = sum(softmax_t(matmul(a, b), 0.07f));
    tape.backward(loss);
    return std::make_pair(loss.item(), tape.grad(a));
  };
  auto r1 = run();
  auto r2 = run();
  CHECK(r1.first == r2.first);
  CHECK(r1.second == r2.second);
}

TEST_CASE("tensor serialization") {
  Rng rng(12);
  auto t = random_tensor(rng, {3, 4, 2});
  std::stringstream ss;
  BinaryWriter w(ss);
  write_tensor(w, t);
  const std::string bytes = ss.str();
  CHECK(bytes.substr(0, 8) == "A2MCTNSR");
  CHECK(bytes.size() == 8 + 4 + 4 + 3 * 8 + 1 + 24 * 8);
  {
    std::stringstream in(bytes);
    BinaryReader r(in);
    CHECK(read_tensor<double>(r) == t);
  }
  {
    std::stringstream ss32;
    BinaryWriter w32(ss32);
    write_tensor(w32, t.cast<float>());
    std::stringstream in(ss32.str());
    BinaryReader r(in);
    CHECK(read_tensor<float>(r) == t.cast<float>());
  }
  {
    std::stringstream in(bytes.substr(0, bytes.size() - 3));
    BinaryReader r(in);
    CHECK_THROWS_AS(read_tensor<double>(r), FormatError);
  }
  {
    std::string bad = bytes;
    bad[0] = 'X';
    std::stringstream in(bad);
    BinaryReader r(in);
    CHECK_THROWS_WITH_AS(read_tensor<double>(r), doctest::Contains("magic"), FormatError);
  }
  {
    std::string bad = bytes;
    bad[8] = 9;
    std::stringstream in(bad);
    BinaryReader r(in);
    CHECK_THROWS_AS(read_tensor<double>(r), UnsupportedVersionError);
  }
  const std::string path = "test_tensor_roundtrip.bin";
  save_tensor(path, t.cast<float>());
  CHECK(load_tensor<float>(path) == t.cast<float>());
  std::remove(path.c_str());
}

TEST_CASE("rng streams are deterministic and distinct") {
  Rng a = Rng::stream(1, {2, 3});
  Rng b = Rng::stream(1, {2, 3});
  Rng c = Rng::stream(1, {2, 4});
  const auto va = a.next_u64();
  CHECK(va == b.next_u64());
  CHECK(va != c.next_u64());
  Rng n(5);
  double s = 0, s2 = 0;
  const int N = 20000;
  for (int i = 0; i < N; ++i) {
    const double x = n.normal();
    s += x;
    s2 += x * x;
  }
  CHECK(std::abs(s / N) < 0.03);
  CHECK(std::abs(s2 / N - 1.0) < 0.05);
}
