#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "qtsad/errors.hpp"
#include "qtsad/layers.hpp"
#include "test_util.hpp"

using namespace qtsad;
using namespace qtsad::layers;
using qsim::AngleSource;
using qsim::GateKind;
using qsim::GateOp;
using qtsad::testing::finite_difference;
using qtsad::testing::finite_difference_bundle;
using qtsad::testing::max_rel_err;
using qtsad::testing::random_vec;

namespace {

const qsim::NoiseSpec kNoiseless{};

HqlConfig toy_hql(int in_dim, int out_dim, int n_qubits = 2, int blocks = 2, int inject = 2) {
  return {in_dim, n_qubits, blocks, inject, out_dim, qsim::Encoding::ArcTan};
}

double dot(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

TEST_CASE("HQL program layout") {
  SUBCASE("three qubits, two injected blocks") {
    const auto prog = build_hql_program(toy_hql(4, 4, 3, 2, 2));
    CHECK(prog.n_input_slots == 6);
    CHECK(prog.n_param_slots == 12);
    std::vector<GateOp> expected;
    for (int b = 0; b < 2; ++b) {
      for (int q = 0; q < 3; ++q) expected.push_back(GateOp::ry(q, AngleSource::input(3 * b + q, qsim::Encoding::ArcTan)));
      for (int q = 0; q < 3; ++q) {
        expected.push_back(GateOp::rz(q, AngleSource::param(6 * b + 2 * q)));
        expected.push_back(GateOp::rx(q, AngleSource::param(6 * b + 2 * q + 1)));
      }
      expected.push_back(GateOp::cnot(0, 1));
      expected.push_back(GateOp::cnot(1, 2));
    }
    CHECK(prog.ops == expected);
  }
  SUBCASE("single qubit degenerate case") {
    const auto prog = build_hql_program(toy_hql(1, 1, 1, 1, 1));
    const std::vector<GateOp> expected = {GateOp::ry(0, AngleSource::input(0, qsim::Encoding::ArcTan)),
                                          GateOp::rz(0, AngleSource::param(0)), GateOp::rx(0, AngleSource::param(1))};
    CHECK(prog.ops == expected);
  }
  SUBCASE("default depth") {
    const HqlConfig cfg{8, 6, 12, 6, 4, qsim::Encoding::ArcTan};
    const auto prog = build_hql_program(cfg);
    CHECK(prog.n_input_slots == 36);
    CHECK(prog.n_param_slots == 144);
    CHECK(injection_blocks(cfg) == std::vector<int>{0, 2, 4, 6, 8, 10});
  }
  SUBCASE("too many injection blocks") {
    CHECK_THROWS_AS(build_hql_program(toy_hql(1, 1, 2, 2, 3)), ConfigError);
  }
  SUBCASE("gate and slot counts over random configs") {
    Rng rng(5);
    for (int i = 0; i < 200; ++i) {
      const int n = 1 + static_cast<int>(uniform_index(rng, 6));
      const int blocks = 1 + static_cast<int>(uniform_index(rng, 10));
      const int inject = 1 + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(blocks)));
      const auto prog = build_hql_program(toy_hql(3, 2, n, blocks, inject));
      std::size_t cnots = 0, inputs = 0, params = 0;
      for (const auto& op : prog.ops) {
        if (op.kind == GateKind::CNOT) ++cnots;
        else if (op.angle.kind == AngleSource::Kind::Input) ++inputs;
        else ++params;
      }
      CHECK(cnots == static_cast<std::size_t>((n - 1) * blocks));
      CHECK(inputs == static_cast<std::size_t>(n * inject));
      CHECK(params == static_cast<std::size_t>(2 * n * blocks));
      CHECK(prog.n_input_slots == n * inject);
      const auto inj = injection_blocks(toy_hql(3, 2, n, blocks, inject));
      CHECK(inj.size() == static_cast<std::size_t>(inject));
      for (std::size_t k = 1; k < inj.size(); ++k) CHECK(inj[k] > inj[k - 1]);
    }
  }
}

TEST_CASE("HQL forward") {
  Rng rng(1);
  SUBCASE("constant path") {
    const HybridQuantumLayer layer(toy_hql(3, 2));
    HqlParams p = HqlParams::zeros(layer.config());
    p.b_out = {0.25, -1.5};
    for (int i = 0; i < 5; ++i) {
      const Vec x = random_vec(3, rng, -3, 3);
      CHECK(layer.forward(p, x, kNoiseless, rng, nullptr) == Vec{0.25, -1.5});
    }
  }
  SUBCASE("saturated arctan inputs stay finite") {
    const HybridQuantumLayer layer(toy_hql(2, 2));
    HqlParams p = HqlParams::random(layer.config(), rng);
    for (double& b : p.b_in) b = -1e12;
    HqlCache cache;
    const Vec y = layer.forward(p, Vec{0.5, 0.5}, kNoiseless, rng, &cache);
    for (double v : y) CHECK(std::isfinite(v));
    for (std::size_t i = 0; i < cache.angles.size(); ++i) {
      if (layer.program().ops[i].angle.kind == AngleSource::Kind::Input) {
        CHECK(cache.angles[i] == doctest::Approx(-std::numbers::pi / 2));
      }
    }
  }
  SUBCASE("single qubit closed form") {
    const HybridQuantumLayer layer(toy_hql(1, 1, 1, 1, 1));
    HqlParams p = HqlParams::zeros(layer.config());
    p.w_in(0, 0) = 1.0;
    p.w_out(0, 0) = 1.0;
    for (double x : {-2.0, 0.0, 0.4, 3.0}) {
      const Vec y = layer.forward(p, Vec{x}, kNoiseless, rng, nullptr);
      CHECK(y[0] == doctest::Approx(std::cos(std::atan(x))).epsilon(1e-13));
    }
  }
  SUBCASE("output bounded by the projection weights") {
    const HybridQuantumLayer layer(toy_hql(3, 3, 3, 3, 2));
    for (int t = 0; t < 50; ++t) {
      const HqlParams p = HqlParams::random(layer.config(), rng);
      const Vec y = layer.forward(p, random_vec(3, rng, -5, 5), kNoiseless, rng, nullptr);
      for (std::size_t i = 0; i < y.size(); ++i) {
        double bound = std::abs(p.b_out[i]);
        for (double w : p.w_out.row(i)) bound += std::abs(w);
        CHECK(std::abs(y[i]) <= bound + 1e-12);
      }
    }
  }
  SUBCASE("shape mismatch") {
    const HybridQuantumLayer layer(toy_hql(3, 2));
    const HqlParams p = HqlParams::zeros(layer.config());
    CHECK_THROWS_AS(layer.forward(p, Vec{1.0}, kNoiseless, rng, nullptr), ShapeError);
  }
}

TEST_CASE("HQL backward") {
  Rng rng(2);
  for (qsim::Encoding enc : {qsim::Encoding::ArcTan, qsim::Encoding::ArcCos}) {
    HqlConfig cfg = toy_hql(3, 2);
    cfg.encoding = enc;
    const HybridQuantumLayer layer(cfg);
    HqlParams p = HqlParams::random(cfg, rng);
    // Keep arccos arguments inside the unclamped range.
    if (enc == qsim::Encoding::ArcCos) {
      for (double& w : p.w_in.data) w *= 0.2;
      for (double& b : p.b_in) b *= 0.2;
    }
    const Vec x = random_vec(3, rng, -1, 1);
    const Vec up = random_vec(2, rng, -1, 1);

    HqlCache cache;
    layer.forward(p, x, kNoiseless, rng, &cache);
    HqlParams grads = zeros_like(p);
    const Vec dx = layer.backward(p, cache, up, grads);

    const Vec fd = finite_difference_bundle<HqlParams>(
        [&](const HqlParams& q) { return dot(up, layer.forward(q, x, kNoiseless, rng, nullptr)); }, p);
    CHECK(max_rel_err(flatten(grads), fd) <= 1e-4);

    const Vec fdx = finite_difference([&](const Vec& v) { return dot(up, layer.forward(p, v, kNoiseless, rng, nullptr)); }, x);
    CHECK(max_rel_err(dx, fdx) <= 1e-4);

    HqlParams zero_grads = zeros_like(p);
    const Vec zero_dx = layer.backward(p, cache, Vec{0.0, 0.0}, zero_grads);
    for (double v : flatten(zero_grads)) CHECK(v == 0.0);
    for (double v : zero_dx) CHECK(v == 0.0);
  }
}

TEST_CASE("QGRU step") {
  Rng rng(3);
  const GruConfig cfg{2, 3, {2, 2, 2, qsim::Encoding::ArcTan}};
  const QuantumGru gru(cfg);
  SUBCASE("zero parameters halve the state") {
    const GruParams p = GruParams::zeros(cfg);
    const Vec h_prev{0.4, -0.8, 0.2};
    GruStepCache cache;
    const Vec h = gru.step(p, Vec{0.3, 0.9}, h_prev, kNoiseless, rng, &cache);
    for (std::size_t j = 0; j < 3; ++j) {
      CHECK(cache.z[j] == 0.5);
      CHECK(cache.r[j] == 0.5);
      CHECK(cache.h_tilde[j] == 0.0);
      CHECK(h[j] == doctest::Approx(0.5 * h_prev[j]));
    }
  }
  SUBCASE("constant candidate from a zero state") {
    GruParams p = GruParams::zeros(cfg);
    p.candidate.b_out = {0.7, -0.2, 1.5};
    const Vec h = gru.step(p, Vec{0.3, 0.9}, Vec(3, 0.0), kNoiseless, rng, nullptr);
    for (std::size_t j = 0; j < 3; ++j) CHECK(h[j] == doctest::Approx(0.5 * std::tanh(p.candidate.b_out[j])));
  }
  SUBCASE("state stays in (-1, 1)") {
    for (int t = 0; t < 30; ++t) {
      GruParams p = GruParams::random(cfg, rng);
      for (double& b : p.candidate.b_out) b *= 20.0;
      Vec h(3, 0.0);
      for (int s = 0; s < 10; ++s) {
        h = gru.step(p, random_vec(2, rng, -3, 3), h, kNoiseless, rng, nullptr);
        for (double v : h) CHECK(std::abs(v) < 1.0);
      }
    }
  }
  SUBCASE("shape mismatch") {
    const GruParams p = GruParams::zeros(cfg);
    CHECK_THROWS_AS(gru.step(p, Vec{0.1}, Vec(3, 0.0), kNoiseless, rng, nullptr), ShapeError);
  }
}

TEST_CASE("QGRU forward") {
  Rng rng(4);
  const GruConfig cfg{2, 2, {2, 2, 1, qsim::Encoding::ArcTan}};
  const QuantumGru gru(cfg);
  Matrix seq(3, 2);
  for (double& v : seq.data) v = uniform01(rng);

  SUBCASE("one step equals step()") {
    const GruParams p = GruParams::random(cfg, rng);
    const Vec a = gru.forward(p, seq, 1, {}, kNoiseless, rng, nullptr);
    const Vec b = gru.step(p, seq.row(0), Vec(2, 0.0), kNoiseless, rng, nullptr);
    CHECK(a == b);
  }
  SUBCASE("zero parameters keep a zero state") {
    const GruParams p = GruParams::zeros(cfg);
    CHECK(gru.forward(p, seq, 3, {}, kNoiseless, rng, nullptr) == Vec{0.0, 0.0});
  }
  SUBCASE("order sensitivity") {
    const GruParams p = GruParams::random(cfg, rng);
    Matrix rev(3, 2);
    for (std::size_t t = 0; t < 3; ++t) std::copy_n(seq.row(2 - t).begin(), 2, rev.row(t).begin());
    const Vec a = gru.forward(p, seq, 3, {}, kNoiseless, rng, nullptr);
    const Vec b = gru.forward(p, rev, 3, {}, kNoiseless, rng, nullptr);
    CHECK(max_rel_err(a, b) > 1e-6);
  }
  SUBCASE("empty sequence") {
    const GruParams p = GruParams::zeros(cfg);
    CHECK_THROWS_AS(gru.forward(p, seq, 0, {}, kNoiseless, rng, nullptr), InputError);
  }
}

TEST_CASE("QGRU backward through time") {
  Rng rng(5);
  const GruConfig cfg{2, 2, {2, 2, 2, qsim::Encoding::ArcTan}};
  const QuantumGru gru(cfg);
  const GruParams p = GruParams::random(cfg, rng);
  Matrix seq(3, 2);
  for (double& v : seq.data) v = uniform01(rng);
  const Vec up = random_vec(2, rng, -1, 1);

  SUBCASE("full-parameter finite differences, 3 steps") {
    std::vector<GruStepCache> caches;
    gru.forward(p, seq, 3, {}, kNoiseless, rng, &caches);
    GruParams grads = zeros_like(p);
    const GruBackward back = gru.backward(p, caches, up, grads);
    const Vec fd = finite_difference_bundle<GruParams>(
        [&](const GruParams& q) { return dot(up, gru.forward(q, seq, 3, {}, kNoiseless, rng, nullptr)); }, p);
    CHECK(max_rel_err(flatten(grads), fd) <= 1e-3);

    // Input gradient of the last step.
    const Vec fdx = finite_difference(
        [&](const Vec& x) {
          Matrix s = seq;
          std::copy(x.begin(), x.end(), s.row(2).begin());
          return dot(up, gru.forward(p, s, 3, {}, kNoiseless, rng, nullptr));
        },
        Vec(seq.row(2).begin(), seq.row(2).end()));
    CHECK(max_rel_err(back.dx[2], fdx) <= 1e-4);
  }
  SUBCASE("single step matches the step gradient") {
    std::vector<GruStepCache> caches;
    gru.forward(p, seq, 1, {}, kNoiseless, rng, &caches);
    GruParams grads = zeros_like(p);
    gru.backward(p, caches, up, grads);
    const Vec fd = finite_difference_bundle<GruParams>(
        [&](const GruParams& q) { return dot(up, gru.step(q, seq.row(0), Vec(2, 0.0), kNoiseless, rng, nullptr)); }, p);
    CHECK(max_rel_err(flatten(grads), fd) <= 1e-3);
  }
  SUBCASE("zero upstream") {
    std::vector<GruStepCache> caches;
    gru.forward(p, seq, 3, {}, kNoiseless, rng, &caches);
    GruParams grads = zeros_like(p);
    gru.backward(p, caches, Vec{0.0, 0.0}, grads);
    for (double v : flatten(grads)) CHECK(v == 0.0);
  }
}

TEST_CASE("noisy forward and backward are reproducible") {
  const GruConfig cfg{2, 2, {2, 2, 2, qsim::Encoding::ArcTan}};
  const QuantumGru gru(cfg);
  Rng init(6);
  const GruParams p = GruParams::random(cfg, init);
  Matrix seq(3, 2, 0.3);
  const qsim::NoiseSpec noise{true, 0.1, 0.2, 42};

  auto run = [&] {
    Rng rng(noise.seed);
    std::vector<GruStepCache> caches;
    const Vec h = gru.forward(p, seq, 3, {}, noise, rng, &caches);
    GruParams grads = zeros_like(p);
    gru.backward(p, caches, Vec{1.0, -1.0}, grads);
    return std::make_pair(h, flatten(grads));
  };
  const auto a = run();
  const auto b = run();
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
}
