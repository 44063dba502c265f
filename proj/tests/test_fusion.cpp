#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "lfuse/fusion.hpp"
#include "lfuse/gradcheck.hpp"
#include "lfuse/transformer.hpp"
#include "oracles.hpp"

using namespace lfuse;

namespace {

using D = double;

RunConfig cfg(FusionMode mode, std::size_t L = 8, std::size_t d = 16) {
  RunConfig c;
  c.fusion_mode = mode;
  c.layers = L;
  c.width = d;
  c.precision = Precision::kF64;
  return c;
}

// Fusion parameters with every entry redrawn at `spread`, so nothing sits at
// a special value (zero biases, unit gains).
template <typename T = D>
ParameterSet<T> random_params(const RunConfig& c, std::uint64_t seed, double spread = 0.3) {
  ParameterSet<T> p;
  Rng rng(seed);
  init_fusion_params(p, c, rng);
  for (const auto& name : p.names()) {
    if (name == "fusion.temp") continue;
    p.set(name, rng.normal_tensor<T>(p.get(name).shape(), spread));
  }
  return p;
}

Tensor<D> rows_of(const Tensor<D>& w) {
  return w.rank() == 1 ? w.reshaped({1, w.numel()}) : w;
}

void check_normalized(const Tensor<D>& weights) {
  const Tensor<D> w = rows_of(weights);
  for (std::size_t r = 0; r < w.rows(); ++r) {
    D total = 0;
    for (std::size_t l = 0; l < w.cols(); ++l) {
      CHECK(w.at(r, l) >= 0);
      total += w.at(r, l);
    }
    CHECK(std::abs(total - 1) <= 1e-6);
  }
}

}  // namespace

TEST_SUITE("fusion") {
  TEST_CASE("effective_temperature examples") {
    CHECK(effective_temperature(1e2, 0.01, 1e5) == doctest::Approx(1100).epsilon(1e-12));
    CHECK(effective_temperature(1, 0, 1e5) == 1.0);
    CHECK(effective_temperature(100, -0.001, 1e5) == doctest::Approx(0).scale(1));
    CHECK(std::abs(effective_temperature(100, -0.001, 1e5)) < 1e-9);
    CHECK_NOTHROW(warn_if_nonpositive_temperature(0.0));
    CHECK_NOTHROW(warn_if_nonpositive_temperature(-3.0));
  }

  TEST_CASE("global_alpha examples") {
    RunConfig c = cfg(FusionMode::kGlobal, 2);
    c.temperature_mode = TemperatureMode::kFixed;
    c.temp_init = 1;
    Tape<D> tape;
    const auto a = global_alpha(tape.constant(Tensor<D>({2}, {std::log(2.0), 0})), Var<D>(), c);
    CHECK(a.value()[0] == doctest::Approx(2.0 / 3).epsilon(1e-14));
    CHECK(a.value()[1] == doctest::Approx(1.0 / 3).epsilon(1e-14));

    for (double tau : {0.5, 1100.0, 1e6}) {
      RunConfig c8 = cfg(FusionMode::kGlobal);
      c8.temperature_mode = TemperatureMode::kFixed;
      c8.temp_init = tau;
      const auto u = global_alpha(tape.constant(Tensor<D>({8})), Var<D>(), c8).value();
      for (D x : u.data()) CHECK(x == doctest::Approx(1.0 / 8).epsilon(1e-15));
    }

    RunConfig sharp = cfg(FusionMode::kGlobal, 4);
    sharp.temperature_mode = TemperatureMode::kFixed;
    sharp.temp_init = 1e6;
    const auto one = global_alpha(tape.constant(Tensor<D>({4}, {0.1, 0.3, -0.2, 0.29})), Var<D>(),
                                  sharp).value();
    CHECK(std::abs(one[1] - 1) <= 1e-6);
    CHECK(one[0] + one[2] + one[3] <= 1e-6);
  }

  TEST_CASE("learned temperature uses base + temp * factor") {
    const RunConfig c = cfg(FusionMode::kGlobal, 3);  // 100 + 0.01 * 1e5
    Tape<D> tape;
    const Tensor<D> w({3}, {0.001, -0.002, 0.0005});
    const auto a = global_alpha(tape.constant(w), tape.constant(Tensor<D>::scalar(0.01)), c);
    const auto want = oracle::softmax({1.1, -2.2, 0.55});
    for (std::size_t i = 0; i < 3; ++i) CHECK(a.value()[i] == doctest::Approx(want[i]).epsilon(1e-12));
  }

  TEST_CASE("global_fuse examples") {
    Tape<D> tape;
    // T=1, L=2, d=2: h1=(1,0), h2=(0,1)
    const auto stack = tape.constant(Tensor<D>({1, 2, 2}, {1, 0, 0, 1}));
    const auto out = global_fuse(stack, tape.constant(Tensor<D>({2}, {0.25, 0.75})));
    CHECK(out.vectors.value() == Tensor<D>({1, 2}, {0.25, 0.75}));

    CHECK_THROWS_AS(global_fuse(stack, tape.constant(Tensor<D>({3}, {0.2, 0.3, 0.5}))),
                    DimensionError);

    Rng rng(3);
    const auto v = rng.normal_tensor<D>({5}, 1.0);
    Tensor<D> same({2, 4, 5});
    for (std::size_t i = 0; i < same.numel(); ++i) same[i] = v[i % 5];
    const auto alpha = softmax_values(rng.normal_tensor<D>({4}, 1.0));
    const auto fused = global_fuse(tape.constant(same), tape.constant(alpha)).vectors.value();
    for (std::size_t t = 0; t < 2; ++t)
      for (std::size_t j = 0; j < 5; ++j) CHECK(fused.at(t, j) == doctest::Approx(v[j]).epsilon(1e-14));
  }

  TEST_CASE("one-hot global selection is exact") {
    Rng rng(5);
    Tape<D> tape;
    const auto stack = rng.normal_tensor<D>({3, 4, 6}, 1.0);
    Tensor<D> hot({4});
    hot[3] = 1;
    const auto g = global_fuse(tape.constant(stack), tape.constant(hot)).vectors.value();
    for (std::size_t t = 0; t < 3; ++t)
      for (std::size_t j = 0; j < 6; ++j) CHECK(g.at(t, j) == stack[(t * 4 + 3) * 6 + j]);
  }

  TEST_CASE("last-layer fusion") {
    Rng rng(6);
    for (std::size_t L : {1, 2, 8}) {
      Tape<D> tape;
      const auto stack = rng.normal_tensor<D>({4, L, 5}, 1.0);
      const auto last = last_layer_fuse(tape.constant(stack));
      Tensor<D> hot({L});
      hot[L - 1] = 1;
      CHECK(last.weights.value() == hot);
      CHECK(last.vectors.value() == global_fuse(tape.constant(stack), tape.constant(hot)).vectors.value());
      if (L == 1) CHECK(last.vectors.value() == stack.reshaped({4, 5}));

      auto perturbed = stack;
      for (std::size_t t = 0; t < 4; ++t)
        for (std::size_t l = 0; l + 1 < L; ++l)
          for (std::size_t j = 0; j < 5; ++j) perturbed[(t * L + l) * 5 + j] += 3.0;
      CHECK(last_layer_fuse(tape.constant(perturbed)).vectors.value() == last.vectors.value());
    }
  }

  TEST_CASE("tokenwise shapes and normalization") {
    const RunConfig c = cfg(FusionMode::kTokenwise);
    const auto p = random_params(c, 1);
    Rng rng(2);
    const auto out = fuse_values(p, rng.normal_tensor<D>({5, 8, 16}, 1.0), c);
    CHECK(out.vectors.shape() == Shape{5, 16});
    CHECK(out.weights.shape() == Shape{5, 8});
    check_normalized(out.weights);
  }

  TEST_CASE("tokenwise with zero scores is the layer mean") {
    const RunConfig c = cfg(FusionMode::kTokenwise);
    auto p = random_params(c, 3);
    p.set("fusion.score.weight", Tensor<D>({8, 16}));
    p.set("fusion.score.bias", Tensor<D>({8}));
    Rng rng(4);
    const auto stack = rng.normal_tensor<D>({3, 8, 16}, 1.0);
    const auto out = fuse_values(p, stack, c);
    for (D w : out.weights.data()) CHECK(w == doctest::Approx(1.0 / 8).epsilon(1e-15));
    for (std::size_t t = 0; t < 3; ++t)
      for (std::size_t j = 0; j < 16; ++j) {
        D mean = 0;
        for (std::size_t l = 0; l < 8; ++l) mean += stack[(t * 8 + l) * 16 + j];
        CHECK(out.vectors.at(t, j) == doctest::Approx(mean / 8).epsilon(1e-12));
      }

    // Matches global fusion with w = 0.
    RunConfig g = cfg(FusionMode::kGlobal);
    ParameterSet<D> gp;
    gp.add("fusion.w", Tensor<D>({8}));
    gp.add("fusion.temp", Tensor<D>::scalar(0.01));
    const auto gout = fuse_values(gp, stack, g);
    CHECK(relative_error(gout.vectors, out.vectors) <= 1e-6);
  }

  TEST_CASE("tokenwise matches the straight-line oracle") {
    const RunConfig c = cfg(FusionMode::kTokenwise);
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const auto p = random_params(c, 100 + seed);
      Rng rng(seed);
      const auto layers = rng.normal_tensor<D>({8, 16}, 1.0);
      const auto got = fuse_values(p, layers.reshaped({1, 8, 16}), c);

      Tape<D> tape;
      const auto bound = p.bind(tape, false);
      const auto [vec, alpha] = oracle::tokenwise_single(bound, tape.constant(layers), c.heads);
      CHECK(relative_error(got.vectors, vec.value()) <= 1e-10);
      CHECK(relative_error(got.weights, alpha.value()) <= 1e-10);
    }
  }

  TEST_CASE("tokenwise rejects a width mismatch") {
    const RunConfig c = cfg(FusionMode::kTokenwise);
    const auto p = random_params(c, 1);
    CHECK_THROWS_AS(fuse_values(p, Tensor<D>({2, 8, 12}), c), DimensionError);
  }

  TEST_CASE("normalization over 1000 random draws") {
    for (FusionMode mode : {FusionMode::kGlobal, FusionMode::kTokenwise}) {
      const RunConfig c = cfg(mode);
      Rng rng(77);
      for (std::uint64_t draw = 0; draw < 1000; ++draw) {
        auto p = random_params(c, draw, 0.05 + rng.uniform());
        if (mode == FusionMode::kGlobal) p.set("fusion.temp", Tensor<D>::scalar(rng.uniform() * 0.02));
        const std::size_t T = 1 + rng.below(3);
        const auto out = fuse_values(p, rng.normal_tensor<D>({T, 8, 16}, 2.0), c);
        check_normalized(out.weights);
      }
    }
  }

  TEST_CASE("temperature monotonicity and argmax invariance") {
    Rng rng(12);
    for (int trial = 0; trial < 50; ++trial) {
      const auto w = rng.normal_tensor<D>({8}, 1.0);
      const std::size_t arg = std::max_element(w.data().begin(), w.data().end()) - w.data().begin();
      D prev = 0;
      for (double tau = 0.01; tau < 2e4; tau *= 1.7) {
        RunConfig c = cfg(FusionMode::kGlobal);
        c.temperature_mode = TemperatureMode::kFixed;
        c.temp_init = tau;
        Tape<D> tape;
        const auto a = global_alpha(tape.constant(w), Var<D>(), c).value();
        CHECK(static_cast<std::size_t>(std::max_element(a.data().begin(), a.data().end()) -
                                       a.data().begin()) == arg);
        CHECK(a[arg] >= prev);
        prev = a[arg];
      }
    }
  }

  TEST_CASE("tokenwise is equivariant under token permutations") {
    const RunConfig c = cfg(FusionMode::kTokenwise);
    const auto p = random_params(c, 9);
    Rng rng(10);
    for (int trial = 0; trial < 10; ++trial) {
      const std::size_t T = 2 + rng.below(5);
      const auto stack = rng.normal_tensor<D>({T, 8, 16}, 1.0);
      std::vector<std::size_t> perm(T);
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      rng.shuffle(perm);
      Tensor<D> ps({T, 8, 16});
      for (std::size_t t = 0; t < T; ++t)
        std::copy_n(stack.ptr() + perm[t] * 128, 128, ps.ptr() + t * 128);
      const auto a = fuse_values(p, stack, c), b = fuse_values(p, ps, c);
      for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t j = 0; j < 16; ++j)
          CHECK(b.vectors.at(t, j) == doctest::Approx(a.vectors.at(perm[t], j)).epsilon(1e-13));
        for (std::size_t l = 0; l < 8; ++l)
          CHECK(b.weights.at(t, l) == doctest::Approx(a.weights.at(perm[t], l)).epsilon(1e-13));
      }
    }
  }

  TEST_CASE("fuse and fuse_values agree in every mode") {
    Rng rng(14);
    for (FusionMode mode : {FusionMode::kLast, FusionMode::kGlobal, FusionMode::kTokenwise}) {
      const RunConfig c = cfg(mode);
      const auto p = random_params(c, 15);
      const auto stack = rng.normal_tensor<D>({3, 8, 16}, 1.0);
      Tape<D> tape;
      const auto out = fuse(p.bind(tape, true), tape.constant(stack), c);
      const auto vals = fuse_values(p, stack, c);
      CHECK(out.vectors.value() == vals.vectors);
      CHECK(out.weights.value() == vals.weights);
    }
  }

  TEST_CASE("block with zero output projections is the identity") {
    ParameterSet<D> p;
    Rng rng(1);
    init_block(p, "b.", BlockShape{16, 64}, rng, 0.3);
    p.set("b.attn.wo", Tensor<D>({16, 16}));
    p.set("b.ff.w2", Tensor<D>({16, 64}));
    Tape<D> tape;
    const auto x = rng.normal_tensor<D>({9, 16}, 1.0);
    const auto y = block_forward(bind_block(p.bind(tape, false), "b."), tape.constant(x), 4, 9, false);
    CHECK(y.value() == x);
  }

  TEST_CASE("block keeps the input shape and is deterministic") {
    ParameterSet<D> p;
    Rng rng(2);
    init_block(p, "b.", BlockShape{8, 32}, rng, 0.3);
    for (std::size_t rows : {1, 2, 5, 9}) {
      const auto x = rng.normal_tensor<D>({rows, 8}, 1.0);
      Tape<D> t1, t2;
      const auto y1 = block_forward(bind_block(p.bind(t1, false), "b."), t1.constant(x), 4, rows, false);
      const auto y2 = block_forward(bind_block(p.bind(t2, false), "b."), t2.constant(x), 4, rows, false);
      CHECK(y1.shape() == x.shape());
      CHECK(y1.value() == y2.value());
    }
  }

  TEST_CASE("block gradients match finite differences") {
    ParameterSet<D> p;
    Rng rng(3);
    init_block(p, "b.", BlockShape{8, 32}, rng, 0.3);
    for (const auto& name : p.names()) p.set(name, rng.normal_tensor<D>(p.get(name).shape(), 0.3));
    const auto x = rng.normal_tensor<D>({5, 8}, 1.0);
    const auto r = rng.normal_tensor<D>({5, 8}, 1.0);
    auto loss = [&](const ParameterSet<D>& ps, const Tensor<D>& xv, Tape<D>& tape) {
      const auto bound = ps.bind(tape, true);
      const auto in = tape.parameter(xv);
      const auto y = block_forward(bind_block(bound, "b."), in, 4, 5, false);
      return std::make_tuple(sum(mul(y, tape.constant(r))), bound, in);
    };
    Tape<D> tape;
    auto [l, bound, in] = loss(p, x, tape);
    auto grads = tape.backward(l);
    const Tensor<D> gx = grads.at(in.id());
    const auto named = bound.name_gradients(std::move(grads));

    const std::function<D(const Tensor<D>&)> fx = [&](const Tensor<D>& xv) {
      Tape<D> t;
      return std::get<0>(loss(p, xv, t)).value().item();
    };
    CHECK(relative_error(gx, finite_diff_grad(fx, x, 1e-5)) <= 1e-6);
    for (const auto& name : p.names()) {
      const std::function<D(const Tensor<D>&)> f = [&](const Tensor<D>& v) {
        ParameterSet<D> q = p;
        q.set(name, v);
        Tape<D> t;
        return std::get<0>(loss(q, x, t)).value().item();
      };
      INFO(name);
      const auto numeric = finite_diff_grad(f, p.get(name), 1e-5);
      if (name == "b.attn.bk") {
        // Adding the same bias to every key shifts each score row uniformly.
        for (D g : named.at(name).data()) CHECK(std::abs(g) <= 1e-12);
        for (D g : numeric.data()) CHECK(std::abs(g) <= 1e-9);
        continue;
      }
      CHECK(relative_error(named.at(name), numeric) <= 1e-6);
    }
  }

  TEST_CASE("fusion gradients match finite differences") {
    for (FusionMode mode : {FusionMode::kGlobal, FusionMode::kTokenwise}) {
      RunConfig c = cfg(mode, 4, 8);
      c.base_temp = 1;
      c.factor = 10;
      auto p = random_params(c, 21);
      if (mode == FusionMode::kGlobal) p.set("fusion.temp", Tensor<D>::scalar(0.05));
      Rng rng(22);
      const auto stack = rng.normal_tensor<D>({3, 4, 8}, 1.0);
      const auto r = rng.normal_tensor<D>({3, 8}, 1.0);
      auto loss = [&](const ParameterSet<D>& ps, Tape<D>& tape) {
        const auto bound = ps.bind(tape, true);
        return std::make_pair(sum(mul(fuse(bound, tape.constant(stack), c).vectors, tape.constant(r))),
                              bound);
      };
      Tape<D> tape;
      auto [l, bound] = loss(p, tape);
      const auto named = bound.name_gradients(tape.backward(l));
      for (const auto& name : p.names()) {
        const std::function<D(const Tensor<D>&)> f = [&](const Tensor<D>& v) {
          ParameterSet<D> q = p;
          q.set(name, v);
          Tape<D> t;
          return loss(q, t).first.value().item();
        };
        INFO(name);
        const auto numeric = finite_diff_grad(f, p.get(name), 1e-5);
        auto it = named.find(name);
        REQUIRE(it != named.end());
        double ref = 0;
        for (D g : numeric.data()) ref = std::max(ref, std::abs(g));
        if (ref < 1e-9) continue;  // e.g. the attention key bias: softmax shift invariance
        CHECK(relative_error(it->second, numeric) <= 1e-6);
      }
    }
  }

  TEST_CASE("f32 fusion gradients stay within 1e-2") {
    RunConfig c = cfg(FusionMode::kTokenwise, 4, 8);
    c.precision = Precision::kF32;
    const auto p = random_params<float>(c, 31);
    Rng rng(32);
    const auto stack = rng.normal_tensor<float>({2, 4, 8}, 1.0);
    const auto r = rng.normal_tensor<float>({2, 8}, 1.0);
    auto loss = [&](const ParameterSet<float>& ps, Tape<float>& tape) {
      const auto bound = ps.bind(tape, true);
      return std::make_pair(
          sum(mul(fuse(bound, tape.constant(stack), c).vectors, tape.constant(r))), bound);
    };
    Tape<float> tape;
    auto [l, bound] = loss(p, tape);
    const auto named = bound.name_gradients(tape.backward(l));
    for (const char* name : {"fusion.query", "fusion.score.weight", "fusion.score.bias", "fusion.block.ff.w1"}) {
      const std::function<float(const Tensor<float>&)> f = [&](const Tensor<float>& v) {
        ParameterSet<float> q = p;
        q.set(name, v);
        Tape<float> t;
        return loss(q, t).first.value().item();
      };
      INFO(name);
      CHECK(relative_error(named.at(name), finite_diff_grad(f, p.get(name), 1e-2f)) <= 1e-2);
    }
  }
}
