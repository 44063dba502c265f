#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "lfuse/data_io.hpp"
#include "lfuse/trainer.hpp"

using namespace lfuse;

namespace {

const Vocabulary& vocab() {
  static const Vocabulary v = Vocabulary::builtin(64);
  return v;
}

RunConfig toy(FusionMode mode, std::uint64_t seed = 0) {
  RunConfig c;
  c.fusion_mode = mode;
  c.lr_base = 3e-2;
  c.seed = seed;
  return c;
}

template <typename T>
std::vector<EncodedExample<T>> data(const BridgeModel<T>& model, ToyTask task, std::size_t n,
                                    std::uint64_t seed) {
  return encode_dataset(gen_toy_task(task, n, seed, vocab()), vocab(), model.encoder());
}

template <typename T>
double mean_loss(const BridgeModel<T>& model, const std::vector<EncodedExample<T>>& d) {
  double total = 0;
  for (const auto& ex : d) total += bridge_forward(model, *ex.stack, ex.target).loss;
  return total / d.size();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

}  // namespace

TEST_SUITE("trainer") {
  TEST_CASE("cosine_lr examples") {
    CHECK(cosine_lr(0, 100, 3e-5) == 3e-5);
    CHECK(cosine_lr(100, 100, 3e-5) == doctest::Approx(0).scale(1e-5));
    CHECK(std::abs(cosine_lr(100, 100, 3e-5)) < 1e-20);
    CHECK(cosine_lr(50, 100, 3e-5) == doctest::Approx(1.5e-5).epsilon(1e-12));
    CHECK_THROWS_AS(cosine_lr(101, 100, 3e-5), ContractError);
    CHECK_THROWS_AS(cosine_lr(0, 0, 3e-5), ContractError);
  }

  TEST_CASE("adam leaves parameters alone under a zero gradient") {
    ParameterSet<double> p;
    p.add("x", Tensor<double>({3}, {1, -2, 3}));
    AdamState<double> s;
    NamedGradients<double> g;
    g.emplace("x", Tensor<double>({3}));
    adam_step(p, g, s, 0.1);
    CHECK(p.get("x") == Tensor<double>({3}, {1, -2, 3}));
  }

  TEST_CASE("adam first step moves each coordinate by about lr") {
    ParameterSet<double> p;
    p.add("x", Tensor<double>({4}, {0, 0, 0, 0}));
    AdamState<double> s;
    NamedGradients<double> g;
    g.emplace("x", Tensor<double>({4}, {3.0, -0.001, 250, -7}));
    adam_step(p, g, s, 0.01);
    const Tensor<double>& x = p.get("x");
    CHECK(x[0] == doctest::Approx(-0.01).epsilon(1e-6));
    CHECK(x[1] == doctest::Approx(0.01).epsilon(1e-4));
    CHECK(x[2] == doctest::Approx(-0.01).epsilon(1e-6));
    CHECK(x[3] == doctest::Approx(0.01).epsilon(1e-6));
  }

  TEST_CASE("adam shape mismatch") {
    ParameterSet<double> p;
    p.add("x", Tensor<double>({3}));
    AdamState<double> s;
    NamedGradients<double> g;
    g.emplace("x", Tensor<double>({2}));
    CHECK_THROWS_AS(adam_step(p, g, s, 0.1), DimensionError);
  }

  TEST_CASE("adam on x^2 matches a scalar simulation and decreases f") {
    ParameterSet<double> p;
    p.add("x", Tensor<double>::scalar(1.0));
    AdamState<double> s;
    // Independent scalar Adam.
    double x = 1, m = 0, v = 0;
    double prev = 1;
    for (int t = 1; t <= 10; ++t) {
      NamedGradients<double> g;
      g.emplace("x", Tensor<double>::scalar(2 * p.get("x").item()));
      adam_step(p, g, s, 0.05);
      const double gx = 2 * x;
      m = 0.9 * m + 0.1 * gx;
      v = 0.999 * v + 0.001 * gx * gx;
      x -= 0.05 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
      const double now = p.get("x").item();
      CHECK(now == doctest::Approx(x).epsilon(1e-12));
      CHECK(now * now < prev);
      prev = now * now;
    }
  }

  TEST_CASE("clip_gradients caps the joint norm") {
    NamedGradients<double> g;
    g.emplace("a", Tensor<double>({2}, {3, 0}));
    g.emplace("b", Tensor<double>({1}, {4}));
    CHECK(clip_gradients(g, 1.0) == doctest::Approx(5.0));
    CHECK(g.at("a")[0] == doctest::Approx(0.6));
    CHECK(g.at("b")[0] == doctest::Approx(0.8));
  }

  TEST_CASE("copy task: final-epoch loss at most half the first") {
    RunConfig c = toy(FusionMode::kGlobal);
    c.epochs = 6;
    BridgeModel<float> model(c, vocab());
    const auto d = data(model, ToyTask::kCopy, 2000, 1);
    const auto log = train(model, d);
    REQUIRE(log.epochs.size() == 6);
    const double first = log.epochs.front().mean_loss, last = log.epochs.back().mean_loss;
    INFO("first " << first << " last " << last);
    CHECK(last <= 0.5 * first);
  }

  TEST_CASE("epochs = 0 keeps the initialization and logs nothing") {
    RunConfig c = toy(FusionMode::kTokenwise);
    c.epochs = 0;
    BridgeModel<double> model(c, vocab());
    const std::string before = parameter_bytes(model.trainable());
    const auto log = train(model, data(model, ToyTask::kCopy, 10, 1));
    CHECK(log.steps.empty());
    CHECK(parameter_bytes(model.trainable()) == before);
  }

  TEST_CASE("step count, schedule conformance and exact trainable set") {
    for (FusionMode mode : {FusionMode::kLast, FusionMode::kGlobal, FusionMode::kTokenwise}) {
      RunConfig c = toy(mode);
      c.epochs = 2;
      c.batch = 8;
      BridgeModel<float> model(c, vocab());
      const auto d = data(model, ToyTask::kTagmap, 45, 2);
      const std::string enc = parameter_bytes(model.encoder().parameters());
      const std::string dec = parameter_bytes(model.decoder().parameters());
      const ParameterSet<float> init = model.trainable();
      const auto log = train(model, d);

      const std::size_t total = 2 * 6;  // ceil(45 / 8) per epoch
      REQUIRE(log.steps.size() == total);
      for (std::size_t i = 0; i < total; ++i) {
        CHECK(log.steps[i].step == i);
        CHECK(log.steps[i].lr == cosine_lr(i, total, c.lr_base));
      }
      CHECK(parameter_bytes(model.encoder().parameters()) == enc);
      CHECK(parameter_bytes(model.decoder().parameters()) == dec);
      for (const auto& name : init.names()) {
        if (name == "fusion.block.attn.bk") continue;  // provably zero gradient
        CHECK_MESSAGE(!(model.trainable().get(name) == init.get(name)), name);
      }
    }
  }

  TEST_CASE("same seed twice gives bit-identical results") {
    auto run = [] {
      RunConfig c = toy(FusionMode::kTokenwise, 3);
      c.epochs = 1;
      BridgeModel<float> model(c, vocab());
      const auto log = train(model, data(model, ToyTask::kXnliLike, 40, 3));
      return std::make_pair(encode_checkpoint(make_checkpoint(model, vocab())), log_csv(log));
    };
    CHECK(run() == run());
  }

  TEST_CASE("thread count does not change training") {
    auto run = [](std::size_t threads) {
      RunConfig c = toy(FusionMode::kGlobal, 4);
      c.epochs = 1;
      c.threads = threads;
      BridgeModel<float> model(c, vocab());
      return log_csv(train(model, data(model, ToyTask::kXnliLike, 40, 4)));
    };
    CHECK(run(1) == run(3));
  }

  TEST_CASE("loss decreases over 5 seeds") {
    std::vector<double> before, after;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      RunConfig c = toy(FusionMode::kGlobal, seed);
      c.epochs = 1;
      BridgeModel<float> model(c, vocab());
      const auto d = data(model, ToyTask::kXnliLike, 300, 10 + seed);
      before.push_back(mean_loss(model, d));
      train(model, d);
      after.push_back(mean_loss(model, d));
    }
    CHECK(median(after) < median(before));
  }

  TEST_CASE("a non-finite loss aborts with the step number") {
    RunConfig c = toy(FusionMode::kGlobal);
    BridgeModel<float> model(c, vocab());
    Tensor<float> w = model.trainable().get("proj.bias");
    w[0] = std::numeric_limits<float>::quiet_NaN();
    model.trainable().set("proj.bias", w);
    try {
      train(model, data(model, ToyTask::kCopy, 16, 1));
      FAIL("expected NumericError");
    } catch (const NumericError& e) {
      CHECK(std::string(e.what()).find("step 0") != std::string::npos);
    }
  }

  TEST_CASE("log formats") {
    TrainRunLog log;
    log.steps = {{0, 0.03, 4.5}, {1, 0.015, 3.25}};
    CHECK(log_csv(log) == "step,lr,loss\n0,0.03,4.5\n1,0.015,3.25\n");
    CHECK(log_summary(log, RunConfig{}).find("steps: 2") != std::string::npos);
  }
}
