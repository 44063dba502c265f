#include <doctest.h>

#include <cmath>

#include "lfuse/bridge_check.hpp"
#include "lfuse/data_io.hpp"
#include "lfuse/gradcheck.hpp"
#include "oracles.hpp"

using namespace lfuse;

namespace {

using D = double;

RunConfig cfg(FusionMode mode) {
  RunConfig c;
  c.fusion_mode = mode;
  c.precision = Precision::kF64;
  return c;
}

const Vocabulary& vocab() {
  static const Vocabulary v = Vocabulary::builtin(64);
  return v;
}

std::vector<EncodedExample<D>> examples(const BridgeModel<D>& model, std::size_t n,
                                        std::uint64_t seed) {
  return encode_dataset(gen_toy_task(ToyTask::kXnliLike, n, seed, vocab()), vocab(),
                        model.encoder());
}

}  // namespace

TEST_SUITE("bridge") {
  TEST_CASE("project examples") {
    Tape<D> tape;
    const auto w = tape.constant(Tensor<D>({3, 2}, {1, 0, 0, 1, 1, 1}));
    const auto b0 = tape.constant(Tensor<D>({3}));
    CHECK(project(tape.constant(Tensor<D>({1, 2}, {2, 5})), w, b0).value() ==
          Tensor<D>({1, 3}, {2, 5, 7}));

    const auto b = tape.constant(Tensor<D>({3}, {0.5, -1, 2}));
    CHECK(project(tape.constant(Tensor<D>({2, 2})), w, b).value() ==
          Tensor<D>({2, 3}, {0.5, -1, 2, 0.5, -1, 2}));

    Rng rng(1);
    const auto h = rng.normal_tensor<D>({4, 3}, 1.0);
    const auto eye = tape.constant(Tensor<D>({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1}));
    CHECK(project(tape.constant(h), eye, b0).value() == h);

    CHECK_THROWS_AS(project(tape.constant(Tensor<D>({1, 3})), w, b0), DimensionError);
  }

  TEST_CASE("trainable set is fusion plus projection, exactly") {
    for (FusionMode mode : {FusionMode::kLast, FusionMode::kGlobal, FusionMode::kTokenwise}) {
      const BridgeModel<D> model(cfg(mode), vocab());
      for (const auto& name : model.trainable().names()) {
        const bool ok = name.rfind("fusion.", 0) == 0 || name == "proj.weight" || name == "proj.bias";
        CHECK_MESSAGE(ok, name);
      }
      CHECK(model.trainable().get("proj.weight").shape() == Shape{32, 16});
      CHECK(model.trainable().contains("proj.bias"));
      CHECK(model.trainable().contains("fusion.w") == (mode == FusionMode::kGlobal));
      CHECK(model.trainable().contains("fusion.query") == (mode == FusionMode::kTokenwise));
    }
  }

  TEST_CASE("untrained per-token loss stays within [0, 2 ln V]") {
    const double bound = 2 * std::log(64.0);
    for (FusionMode mode : {FusionMode::kLast, FusionMode::kGlobal, FusionMode::kTokenwise}) {
      const BridgeModel<D> model(cfg(mode), vocab());
      double total = 0;
      std::size_t count = 0;
      for (const auto& ex : examples(model, 40, 3)) {
        const auto r = bridge_forward(model, *ex.stack, ex.target);
        for (D l : r.position_losses) {
          CHECK(l >= 0);
          CHECK(l <= bound);
          total += l;
          ++count;
        }
      }
      const double mean = total / count;
      INFO("mean untrained loss " << mean);
      CHECK(std::abs(mean - std::log(64.0)) < 1.5);
    }
  }

  TEST_CASE("identical examples give bit-identical losses") {
    const BridgeModel<D> model(cfg(FusionMode::kTokenwise), vocab());
    const auto a = bridge_forward(model, vocab(), "cat dog | also moon", "entailment", true);
    const auto b = bridge_forward(model, vocab(), "cat dog | also moon", "entailment", true);
    CHECK(a.loss == b.loss);
    CHECK(a.grads == b.grads);
  }

  TEST_CASE("empty source or target is a contract error") {
    const BridgeModel<D> model(cfg(FusionMode::kGlobal), vocab());
    CHECK_THROWS_AS(bridge_forward(model, vocab(), "", "neutral"), ContractError);
    CHECK_THROWS_AS(bridge_forward(model, vocab(), "cat", ""), ContractError);
    const auto stack = model.encoder().encode({20});
    CHECK_THROWS_AS(bridge_forward(model, stack, TokenSequence{}), ContractError);
  }

  TEST_CASE("loss reduction sum is K times the mean") {
    RunConfig c = cfg(FusionMode::kGlobal);
    const BridgeModel<D> mean_model(c, vocab());
    c.loss_reduction = Reduction::kSum;
    const BridgeModel<D> sum_model(c, mean_model.shared_encoder(), mean_model.shared_decoder());
    const auto stack = mean_model.encoder().encode({20, 21, 22});
    const TokenSequence target = {30, 31, 32, kEosId};
    const D m = bridge_forward(mean_model, stack, target).loss;
    const D s = bridge_forward(sum_model, stack, target).loss;
    CHECK(s == doctest::Approx(4 * m).epsilon(1e-12));
  }

  TEST_CASE("bridge gradients match finite differences") {
    for (FusionMode mode : {FusionMode::kLast, FusionMode::kGlobal, FusionMode::kTokenwise}) {
      RunConfig c = gradcheck_config();
      c.fusion_mode = mode;
      for (std::uint64_t seed = 0; seed < 3; ++seed) {
        const auto r = check_bridge_gradients(c, Vocabulary::builtin(32), seed);
        INFO(to_string(mode) << " seed " << seed << " max error " << r.max_error());
        CHECK(r.passes(1e-6));
        CHECK(r.tensors.size() > 0);
      }
    }
  }

  TEST_CASE("no gradient reaches the frozen backbones") {
    for (FusionMode mode : {FusionMode::kLast, FusionMode::kGlobal, FusionMode::kTokenwise}) {
      const BridgeModel<D> model(cfg(mode), vocab());
      const auto r = bridge_forward(model, vocab(), "cat dog | maybe sun", "neutral", true);
      std::vector<std::string> got;
      for (const auto& [name, _] : r.grads) got.push_back(name);
      CHECK(got == model.trainable().names());
    }
  }

  TEST_CASE("last mode equals a hand-wired final-layer pipeline") {
    const BridgeModel<D> model(cfg(FusionMode::kLast), vocab());
    for (const auto& ex : examples(model, 20, 5)) {
      const D got = bridge_forward(model, *ex.stack, ex.target).loss;
      const D want = oracle::last_layer_pipeline_loss(model, *ex.stack, ex.target);
      CHECK(std::abs(got - want) <= 1e-12);
    }
  }

  TEST_CASE("diagnostic weights are normalized end to end") {
    for (FusionMode mode : {FusionMode::kLast, FusionMode::kGlobal, FusionMode::kTokenwise}) {
      const BridgeModel<D> model(cfg(mode), vocab());
      for (const auto& ex : examples(model, 5, 6)) {
        const auto r = bridge_forward(model, *ex.stack, ex.target);
        const Tensor<D>& w = r.weights;
        const std::size_t rows = w.rank() == 1 ? 1 : w.dim(0), L = w.numel() / rows;
        if (mode == FusionMode::kTokenwise) CHECK(rows == ex.stack->dim(0));
        for (std::size_t t = 0; t < rows; ++t) {
          D total = 0;
          for (std::size_t l = 0; l < L; ++l) {
            CHECK(w[t * L + l] >= 0);
            total += w[t * L + l];
          }
          CHECK(std::abs(total - 1) <= 1e-6);
        }
      }
    }
  }

  TEST_CASE("batch_forward examples") {
    const BridgeModel<D> model(cfg(FusionMode::kTokenwise), vocab());
    const auto data = examples(model, 4, 7);
    const EncodedExample<D>* a = &data[0];
    const EncodedExample<D>* b = &data[1];

    const EncodedExample<D>* one[] = {a};
    const auto single = batch_forward<D>(model, one, true);
    const auto direct = bridge_forward(model, *a->stack, a->target, true);
    CHECK(single.loss == direct.loss);
    CHECK(single.grads == direct.grads);

    const EncodedExample<D>* ab[] = {a, b};
    const EncodedExample<D>* ba[] = {b, a};
    const auto r_ab = batch_forward<D>(model, ab, true);
    const auto r_ba = batch_forward<D>(model, ba, true);
    const D la = direct.loss, lb = bridge_forward(model, *b->stack, b->target).loss;
    CHECK(r_ab.loss == doctest::Approx((la + lb) / 2).epsilon(1e-15));
    CHECK(r_ab.loss == r_ba.loss);
    CHECK(r_ab.losses == std::vector<D>{la, lb});
    for (const auto& [name, g] : r_ab.grads) CHECK(relative_error(g, r_ba.grads.at(name)) <= 1e-15);
  }

  TEST_CASE("batch_forward does not depend on the thread count") {
    const BridgeModel<D> model(cfg(FusionMode::kGlobal), vocab());
    const auto data = examples(model, 9, 8);
    std::vector<const EncodedExample<D>*> ptrs;
    for (const auto& ex : data) ptrs.push_back(&ex);
    const auto serial = batch_forward<D>(model, ptrs, true, 1);
    const auto parallel = batch_forward<D>(model, ptrs, true, 4);
    CHECK(serial.loss == parallel.loss);
    CHECK(serial.losses == parallel.losses);
    CHECK(serial.grads == parallel.grads);
  }

  TEST_CASE("an empty batch is rejected") {
    const BridgeModel<D> model(cfg(FusionMode::kGlobal), vocab());
    CHECK_THROWS_AS(batch_forward<D>(model, {}, false), ContractError);
  }

  TEST_CASE("model and vocabulary must agree") {
    RunConfig c = cfg(FusionMode::kGlobal);
    c.vocab_size = 48;
    CHECK_THROWS_AS(BridgeModel<D>(c, vocab()), ConfigError);
  }
}
