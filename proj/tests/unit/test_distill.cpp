#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "wecar/core/errors.hpp"
#include "wecar/data/synth.hpp"
#include "wecar/distill/distill.hpp"
#include "wecar/train/trainer.hpp"

using namespace wecar;
using core::Tensor2;

namespace {

double mse_oracle(const Tensor2& a, const Tensor2& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

std::vector<Tensor2> random_heads(std::size_t h, std::size_t r, std::size_t c, core::Rng& rng) {
  std::vector<Tensor2> out;
  for (std::size_t i = 0; i < h; ++i) out.push_back(testing::random_matrix(r, c, rng));
  return out;
}

train::TrainConfig small_config(std::size_t epochs) {
  train::TrainConfig cfg;
  cfg.model.n = 8;
  cfg.model.d = 8;
  cfg.model.heads = 2;
  cfg.model.ranges = 4;
  cfg.model.prefix_len = 2;
  cfg.model.mlp_widths = {16, 16};
  cfg.epochs = epochs;
  cfg.distill.epochs = epochs;
  return cfg;
}

/// Teacher after task 1 on classes {0, 1} of a small synthetic set.
struct Trained {
  train::TrainConfig cfg;
  model::Model teacher;
  std::vector<train::Example> data;
};

Trained trained_teacher(std::size_t epochs) {
  Trained t{small_config(epochs), {}, {}};
  auto ds = data::synthesize({.classes = 2, .per_class = 8, .n = 8, .d = 8, .seed = 3});
  t.data = train::to_examples(ds);
  core::Rng rng(1);
  t.teacher = model::Model::create(model::ModelKind::Full, t.cfg.model, rng);
  auto init = train::PrefixInitializer::create(t.cfg, rng);
  const std::vector<std::size_t> classes = {0, 1};
  train::train_initial(t.teacher, classes, t.data, t.cfg, init, rng);
  return t;
}

}  // namespace

TEST_SUITE("distill") {
  TEST_CASE("attention relation loss") {
    core::Rng rng(1);
    auto a = random_heads(2, 3, 3, rng), b = random_heads(2, 3, 3, rng);
    CHECK(distill::attention_relation_loss(a, a) == 0.0);
    const std::vector<Tensor2> uniform = {Tensor2{{0.5, 0.5}, {0.5, 0.5}}};
    const std::vector<Tensor2> onehot = {Tensor2{{1, 0}, {1, 0}}};
    CHECK(distill::attention_relation_loss(uniform, onehot) == 0.25);
    CHECK(distill::attention_relation_loss(a, b) == distill::attention_relation_loss(b, a));
    CHECK(distill::attention_relation_loss(a, b) ==
          doctest::Approx((mse_oracle(a[0], b[0]) + mse_oracle(a[1], b[1])) / 2).epsilon(1e-12));
    CHECK_THROWS_AS(distill::attention_relation_loss(a, std::vector<Tensor2>{b[0]}), DimensionError);
  }

  TEST_CASE("value relation loss") {
    core::Rng rng(2);
    auto a = random_heads(3, 4, 2, rng), b = random_heads(3, 4, 2, rng);
    CHECK(distill::value_relation_loss(a, a) == 0.0);
    auto shifted = a;
    for (auto& t : shifted)
      for (auto& v : t.data()) v += 0.3;
    CHECK(distill::value_relation_loss(a, shifted) == doctest::Approx(0.09).epsilon(1e-12));
    double expect = 0.0;
    for (std::size_t h = 0; h < 3; ++h) expect += mse_oracle(a[h], b[h]) / 3.0;
    CHECK(distill::value_relation_loss(a, b) == doctest::Approx(expect).epsilon(1e-12));
  }

  TEST_CASE("logits loss") {
    core::Rng rng(3);
    Tensor2 a = testing::random_matrix(4, 5, rng), b = testing::random_matrix(4, 5, rng);
    CHECK(distill::logits_loss(a, a) == 0.0);
    Tensor2 c = a;
    c(2, 3) += 1.0;
    CHECK(distill::logits_loss(a, c) == doctest::Approx(1.0 / 20.0).epsilon(1e-12));
    CHECK(distill::logits_loss(a, b) == doctest::Approx(mse_oracle(a, b)).epsilon(1e-12));
    CHECK_THROWS_AS(distill::logits_loss(a, Tensor2(4, 4)), DimensionError);
  }

  TEST_CASE("prefix relation loss") {
    core::Rng rng(4);
    model::PrefixStore teacher;
    for (std::size_t t = 1; t <= 3; ++t) {
      teacher.push(model::make_prefix_block(t, testing::random_matrix(2, 8, rng),
                                            testing::random_matrix(2, 8, rng), 2));
      teacher.freeze_and_accumulate(t);
    }
    model::PrefixBlock copy;
    for (std::size_t h = 0; h < 2; ++h) {
      copy.keys.emplace_back("k", teacher.stacked_keys(h));
      copy.values.emplace_back("v", teacher.stacked_values(h));
    }
    CHECK(distill::prefix_relation_loss(teacher, copy) == 0.0);

    auto student = model::make_prefix_block(9, testing::random_matrix(6, 8, rng),
                                            testing::random_matrix(6, 8, rng), 2);
    double k = 0.0, v = 0.0;
    for (std::size_t h = 0; h < 2; ++h) {
      k += mse_oracle(teacher.stacked_keys(h), student.keys[h].value) / 2.0;
      v += mse_oracle(teacher.stacked_values(h), student.values[h].value) / 2.0;
    }
    CHECK(distill::prefix_relation_loss(teacher, student) == doctest::Approx(k + v).epsilon(1e-12));

    auto wrong = model::make_prefix_block(9, testing::random_matrix(4, 8, rng),
                                          testing::random_matrix(4, 8, rng), 2);
    try {
      distill::prefix_relation_loss(teacher, wrong);
      FAIL("expected a shape error");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("6x4") != std::string::npos);
    }
  }

  TEST_CASE("single-task prefix loss is a plain mse") {
    core::Rng rng(5);
    model::PrefixStore teacher;
    teacher.push(model::make_prefix_block(1, testing::random_matrix(3, 4, rng),
                                          testing::random_matrix(3, 4, rng), 1));
    auto student = model::make_prefix_block(1, testing::random_matrix(3, 4, rng),
                                            testing::random_matrix(3, 4, rng), 1);
    const auto& tb = teacher.blocks()[0];
    CHECK(distill::prefix_relation_loss(teacher, student) ==
          doctest::Approx(mse_oracle(tb.keys[0].value, student.keys[0].value) +
                          mse_oracle(tb.values[0].value, student.values[0].value))
              .epsilon(1e-12));
  }

  TEST_CASE("config validation") {
    distill::DistillConfig c;
    CHECK_NOTHROW(c.validate());
    c.lambda_at = c.lambda_vr = c.lambda_log = c.lambda_p = c.lambda_ce = 0.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.rho = 0.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c.rho = 1.5;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.lambda_log = -1.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
  }

  TEST_CASE("all-zero weights are rejected by the initial stage") {
    auto t = trained_teacher(1);
    distill::DistillConfig c;
    c.lambda_at = c.lambda_vr = c.lambda_log = c.lambda_p = c.lambda_ce = 0.0;
    core::Rng rng(1);
    CHECK_THROWS_AS(distill::distill_initial(t.teacher, c, t.data, rng), ConfigError);
  }

  TEST_CASE("full-width copy with no training reproduces the teacher") {
    auto t = trained_teacher(3);
    distill::DistillConfig c;
    c.rho = 1.0;
    c.epochs = 0;
    core::Rng rng(2);
    auto student = distill::distill_initial(t.teacher, c, t.data, rng);
    for (const auto& ex : t.data) {
      auto a = t.teacher.logits(ex.x), b = student.logits(ex.x);
      for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) < 1e-5);
    }
    CHECK(student.attention.wq[0].trainable == false);
  }

  TEST_CASE("narrow student keeps most of the teacher accuracy on held-out data") {
    auto ds = data::synthesize({.classes = 2, .per_class = 30, .seed = 11});
    auto [train_ds, test_ds] = data::split_train_test(ds, 0.25, 11);
    auto train_ex = train::to_examples(train_ds), test_ex = train::to_examples(test_ds);
    train::TrainConfig cfg;
    train::ContinualSession s(cfg);
    const std::vector<std::size_t> classes = {0, 1};
    s.learn_task(classes, train_ex);
    REQUIRE(s.lwm());
    const double teacher = train::evaluate(s.fsm(), test_ex);
    const double student = train::evaluate(*s.lwm(), test_ex);
    INFO("teacher ", teacher, " student ", student);
    CHECK(student >= 0.9 * teacher);
    CHECK(s.lwm()->parameter_count() < s.fsm().parameter_count());
  }

  TEST_CASE("student copies the accumulated prefixes exactly") {
    auto t = trained_teacher(2);
    core::Rng rng(3);
    auto student = distill::make_student(t.teacher, 0.25, rng);
    REQUIRE(student.prefixes.size() == 1);
    CHECK(distill::prefix_relation_loss(t.teacher.prefixes, student.prefixes.blocks()[0]) == 0.0);
    core::Tape tt(false), ts(false);
    const auto& x = t.data[0].x;
    auto ta = t.teacher.forward(std::as_const(t.teacher).bind(tt), tt.constant(x)).attention;
    auto sa = student.forward(std::as_const(student).bind(ts), ts.constant(x)).attention;
    for (std::size_t h = 0; h < ta.attn.size(); ++h) {
      const auto& a = ta.attn[h].value();
      const auto& b = sa.attn[h].value();
      REQUIRE(a.same_shape(b));
      for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) < 1e-5);
    }
    CHECK(student.mlp[0].out_dim() == 4);
    CHECK(student.parameter_count() < t.teacher.parameter_count());
    CHECK_THROWS_AS(distill::make_student(t.teacher, 0.0, rng), ConfigError);
  }

  TEST_CASE("student holds one block after five tasks") {
    auto cfg = small_config(2);
    auto ds = data::synthesize({.classes = 5, .per_class = 6, .n = 8, .d = 8, .seed = 4});
    train::ContinualSession s(cfg);
    for (std::size_t c = 0; c < 5; ++c) {
      const std::vector<std::size_t> classes = {c};
      s.learn_task(classes, train::to_examples(ds, classes));
    }
    CHECK(s.fsm().prefixes.size() == 5);
    REQUIRE(s.lwm());
    CHECK(s.lwm()->prefixes.size() == 1);
    CHECK(s.lwm()->prefixes.total_rows() == 5 * cfg.model.prefix_len);
    CHECK(s.lwm()->classifier.size() == 5);
  }

  TEST_CASE("incremental stage rejects mismatched teacher and student") {
    auto t = trained_teacher(1);
    auto other_cfg = t.cfg.model;
    other_cfg.d = 12;
    other_cfg.heads = 4;
    core::Rng rng(5);
    auto other = model::Model::create(model::ModelKind::Light, other_cfg, rng);
    CHECK_THROWS_AS(distill::distill_incremental(t.teacher, other, {}, t.data, rng), DimensionError);
  }

  TEST_CASE("light model stays close to the full model over three tasks") {
    auto ds = data::synthesize({.classes = 6, .per_class = 30, .seed = 1});
    auto sched = data::make_schedule(6, data::Regime::Long, 2);
    train::TrainConfig cfg;
    cfg.seed = 1;
    auto r = train::run_session(ds, sched, cfg);
    REQUIRE(r.lwm);
    INFO("full ", r.fsm.average, " light ", r.lwm->average);
    CHECK(r.lwm->average >= r.fsm.average - 0.05);
  }
}
