#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "cola/trainer/trainer.hpp"
#include "support.hpp"

using namespace cola;
using cola::test::random_image;
using cola::test::random_mat;
using cola::test::tiny_config;

namespace {

const glyph::Corpus& corpus() {
  static const glyph::Corpus c = glyph::generate_corpus(test::tiny_corpus_config());
  return c;
}

template <class T>
model::ColaModel<T> model_with_teacher(int teacher_steps = 20) {
  const auto cfg = test::tiny_corpus_model();
  model::TeacherTrainConfig tc;
  tc.steps = teacher_steps;
  tc.batch_size = 8;
  model::ColaModel<T> m(cfg);
  m.set_teacher(model::train_teacher<T>(corpus(), corpus().split("char_16_8"), cfg, tc));
  return m;
}

trainer::TrainConfig small_train(long steps) {
  trainer::TrainConfig c;
  c.batch_size = 16;
  c.total_steps = steps;
  c.phase1_steps = 3;
  c.warmup_steps = 2;
  c.halve_every_steps = 4;
  c.lr_backbone_peak = 1e-3;
  c.lr_decoder_peak = 3e-3;
  c.lambda = 0.5;
  c.seed = 11;
  return c;
}

// A fixed tiny batch with centroid table for loss-level tests.
struct LossFixture {
  model::ModelConfig cfg = tiny_config();
  model::ColaModel<double> m{cfg};
  Mat<double> x, F;
  trainer::CentroidTable<double> table;
  std::vector<int> labels;

  explicit LossFixture(std::uint64_t seed, int classes = 4) {
    Rng rng(seed);
    std::vector<Image> imgs = {random_image(rng, 16), random_image(rng, 16), random_image(rng, 16)};
    x = model::prepare_batch<double>(imgs, cfg);
    F = random_mat<double>(rng, 3 * cfg.teacher_positions(), cfg.teacher_channels, 0.3);
    table.rows = random_mat<double>(rng, classes, cfg.K * cfg.D_slot, 0.3);
    for (int i = 0; i < classes; ++i) table.index[100 + i] = i;
    for (int b = 0; b < 3; ++b) labels.push_back(100 + static_cast<int>(rng.below(static_cast<std::uint64_t>(classes))));
  }

  trainer::LossResult<double> loss(Tape<double>& tape, double lambda, std::uint64_t sample_seed = 5) {
    Rng rng(sample_seed);
    return trainer::compute_loss<double>(tape, m, x, F, labels, table, lambda, tape.constant(m.eps_mean()), &rng);
  }
};

}  // namespace

TEST(Schedule, WarmupThenHalving) {
  EXPECT_EQ(trainer::lr_schedule(0, 1e-4, 1000, 10000), 0.0);
  EXPECT_DOUBLE_EQ(trainer::lr_schedule(500, 1e-4, 1000, 10000), 5e-5);
  EXPECT_DOUBLE_EQ(trainer::lr_schedule(1000, 1e-4, 1000, 10000), 1e-4);
  EXPECT_DOUBLE_EQ(trainer::lr_schedule(10999, 1e-4, 1000, 10000), 1e-4);
  EXPECT_DOUBLE_EQ(trainer::lr_schedule(11000, 1e-4, 1000, 10000), 5e-5);
  EXPECT_DOUBLE_EQ(trainer::lr_schedule(21000, 1e-4, 1000, 10000), 2.5e-5);
  EXPECT_DOUBLE_EQ(trainer::lr_schedule(30000, 3e-4, 30000, 250000), 3e-4);
  EXPECT_THROW(trainer::lr_schedule(-1, 1e-4, 10, 10), InvalidArgument);
}

TEST(Schedule, MonotoneAroundWarmup) {
  double prev = -1;
  for (long s = 0; s <= 100; ++s) {
    const double lr = trainer::lr_schedule(s, 1.0, 100, 50);
    EXPECT_GE(lr, prev);
    prev = lr;
  }
  for (long s = 101; s < 600; ++s) {
    const double lr = trainer::lr_schedule(s, 1.0, 100, 50);
    EXPECT_LE(lr, prev);
    prev = lr;
  }
}

TEST(Loss, TotalIsReconPlusLambdaPredExactly) {
  LossFixture f(1);
  for (double lambda : {0.0, 0.01, 1.0, 7.5}) {
    Tape<double> tape(false);
    auto r = f.loss(tape, lambda);
    EXPECT_EQ(r.report.total - (r.report.recon + lambda * r.report.pred), 0.0);
    EXPECT_EQ(r.total.scalar(), r.recon.scalar() + lambda * r.pred.scalar());
    EXPECT_EQ(r.report.kl_input, 0.0);
    EXPECT_EQ(r.report.kl_temp, 0.0);
    if (lambda == 0.0) {
      EXPECT_EQ(r.report.total, r.report.recon);
    }
    EXPECT_GT(r.report.pred, 0.0);
  }
}

TEST(Loss, ZeroAtDegenerateMinimum) {
  LossFixture f(2, 1);
  Tape<double> t0(false);
  const auto first = f.loss(t0, 1.0);
  f.F = first.mu_d.value();
  Tape<double> t1(false);
  const auto r = f.loss(t1, 1.0);
  EXPECT_EQ(r.report.recon, 0.0);
  EXPECT_EQ(r.report.pred, 0.0);
  EXPECT_EQ(r.report.total, 0.0);
}

TEST(Loss, MissingLabelNamesIt) {
  LossFixture f(3);
  f.labels[1] = 4242;
  Tape<double> tape(false);
  try {
    f.loss(tape, 0.1);
    FAIL() << "expected InvalidArgument";
  } catch (const InvalidArgument& e) {
    EXPECT_NE(std::string(e.what()).find("4242"), std::string::npos);
  }
}

TEST(Loss, NegativeLambdaIsInvalid) {
  LossFixture f(4);
  Tape<double> tape(false);
  EXPECT_THROW(f.loss(tape, -0.1), InvalidArgument);
}

TEST(Loss, EqualsNegativeElboPlusBatchIndependentConstant) {
  std::vector<double> gaps;
  for (std::uint64_t seed = 10; seed < 20; ++seed) {
    LossFixture f(seed, 5);
    Tape<double> tape(false);
    auto r = f.loss(tape, 1.0, seed);
    const auto rows = f.table.labels_to_rows(f.labels);
    const double elbo = test::elbo_mc(f.F, r.mu_d.value(), r.S.value(), f.table.rows, rows, f.cfg.sigma);
    gaps.push_back(r.report.total + elbo);
  }
  const double n = static_cast<double>(tiny_config().teacher_positions() * tiny_config().teacher_channels);
  for (double g : gaps) {
    EXPECT_NEAR(g, gaps.front(), 1e-8);
    EXPECT_NEAR(g, -0.5 * n * std::log(std::numbers::pi), 1e-8);
  }
}

TEST(Loss, TemplatePathIsDetached) {
  auto cfg = tiny_config();
  model::ColaModel<double> m(cfg);
  Rng rng(21);
  std::vector<Image> inputs = {random_image(rng, 16), random_image(rng, 16)};
  std::vector<std::vector<Image>> tpl(3);
  for (auto& t : tpl)
    for (int n = 0; n < 2; ++n) t.push_back(random_image(rng, 16));
  const std::vector<int> ids = {0, 1, 2}, labels = {2, 0};
  const Mat<double> x = model::prepare_batch<double>(inputs, cfg);
  const Mat<double> F = random_mat<double>(rng, 2 * cfg.teacher_positions(), cfg.teacher_channels, 0.3);

  auto run = [&](const std::vector<std::vector<Image>>& templates, bool live, Mat<double>* grad) {
    const auto bank = matcher::encode_templates(templates, ids, m, m.eps_mean());
    const auto table = trainer::CentroidTable<double>::from(bank);
    trainer::LiveTemplates<double> lt;
    lt.class_ids = ids;
    for (const auto& t : templates) {
      lt.images.emplace_back();
      for (const auto& img : t) lt.images.back().push_back(&img);
    }
    m.params().zero_grad();
    Tape<double> tape;
    auto r = trainer::compute_loss<double>(tape, m, x, F, labels, table, 1.0, m.eps_var(tape, nullptr), nullptr,
                                           live ? &lt : nullptr);
    tape.backward(r.total);
    if (grad) *grad = m.params().at("backbone.conv1.w").grad;
    return r.report.total;
  };
  Mat<double> g_detached, g_live;
  const double v_detached = run(tpl, false, &g_detached);
  const double v_live = run(tpl, true, &g_live);
  EXPECT_NEAR(v_detached, v_live, 1e-10);
  EXPECT_GT((g_detached - g_live).cwiseAbs().maxCoeff(), 1e-8);

  auto moved = tpl;
  for (auto& v : moved[2][0].pixels) v = 1.0f - v;
  EXPECT_NE(run(moved, false, nullptr), v_detached);
}

TEST(Training, NeedsTrainedTeacher) {
  model::ColaModel<float> m(test::tiny_corpus_model());
  EXPECT_THROW(trainer::init_training(m, corpus(), corpus().split("char_16_8"), small_train(2)), StateError);
}

TEST(Training, TeacherMustCoverSplitClasses) {
  auto m = model_with_teacher<float>(2);
  const auto other = glyph::make_character_zeroshot_split(corpus().classes, 20, 4);
  EXPECT_THROW(trainer::init_training(m, corpus(), other, small_train(2)), StateError);
}

TEST(Training, PhasesStageThePredictionTerm) {
  auto s = trainer::init_training(model_with_teacher<float>(), corpus(), corpus().split("char_16_8"), small_train(7));
  const auto teacher_sum = s.model.teacher().params().checksum();
  const auto before = s.model.params().checksum();
  std::vector<trainer::StepRecord<float>> recs;
  trainer::TrainHooks<float> hooks;
  hooks.on_step = [&](const trainer::StepRecord<float>& r) { recs.push_back(r); };
  trainer::run_training(s, corpus(), hooks);
  ASSERT_EQ(recs.size(), 7u);
  for (const auto& r : recs) {
    if (r.step <= 3) {
      EXPECT_EQ(r.phase, 1);
      EXPECT_EQ(r.loss.total, r.loss.recon);
    } else {
      EXPECT_EQ(r.phase, 2);
      EXPECT_GT(r.loss.total, r.loss.recon);
    }
    EXPECT_GT(r.loss.pred, 0.0);
    EXPECT_TRUE(std::isfinite(r.loss.total));
  }
  EXPECT_EQ(recs.front().lr_backbone, 0.0);
  EXPECT_DOUBLE_EQ(recs[2].lr_backbone, 1e-3);
  EXPECT_EQ(s.model.teacher().params().checksum(), teacher_sum);
  EXPECT_NE(s.model.params().checksum(), before);
  EXPECT_EQ(trainer::to_json(recs.back()).at("lambda_phase"), 2);
}

TEST(Training, ResumeIsBitIdentical) {
  const auto split = corpus().split("char_16_8");
  const auto m = model_with_teacher<float>();
  // 16 classes x 7 images / 16 per batch = 7 steps per epoch.
  const long total = 10, cut = 5;

  auto straight = trainer::init_training(m, corpus(), split, small_train(total));
  std::vector<double> ref;
  trainer::TrainHooks<float> h1;
  h1.on_step = [&](const trainer::StepRecord<float>& r) { ref.push_back(r.loss.total); };
  trainer::run_training(straight, corpus(), h1);

  auto first = trainer::init_training(m, corpus(), split, small_train(total));
  trainer::TrainHooks<float> h2;
  h2.should_stop = [&] { return first.step >= cut; };
  trainer::run_training(first, corpus(), h2);
  ASSERT_EQ(first.step, cut);
  const auto path = std::filesystem::temp_directory_path() / "cola_resume_test.cola";
  trainer::save_state(first).write(path);
  auto resumed = trainer::load_state<float>(Archive::read(path));
  std::filesystem::remove(path);
  std::vector<double> tail;
  trainer::TrainHooks<float> h3;
  h3.on_step = [&](const trainer::StepRecord<float>& r) { tail.push_back(r.loss.total); };
  trainer::run_training(resumed, corpus(), h3);

  ASSERT_EQ(tail.size(), static_cast<std::size_t>(total - cut));
  for (long i = 0; i < total - cut; ++i) EXPECT_EQ(tail[i], ref[cut + i]) << "step " << cut + i + 1;
  EXPECT_EQ(resumed.model.params().checksum(), straight.model.params().checksum());
  EXPECT_EQ(resumed.rng.state(), straight.rng.state());
}

TEST(Training, ConfigValidation) {
  auto c = small_train(5);
  c.lambda = -1;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = small_train(5);
  c.lr_backbone_peak = 0;
  EXPECT_THROW(c.validate(), InvalidArgument);
  const auto j = trainer::to_json(small_train(5));
  EXPECT_EQ(trainer::to_json(trainer::train_config_from_json(j)), j);
}

TEST(Training, TrainedClassesIncludeTeacherClasses) {
  auto s = trainer::init_training(model_with_teacher<float>(2), corpus(), corpus().split("char_16_8"), small_train(1));
  const auto classes = trainer::trained_classes_of(trainer::save_state(s));
  EXPECT_EQ(classes, corpus().split("char_16_8").train_classes);
}
