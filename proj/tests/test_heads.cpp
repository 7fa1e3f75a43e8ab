#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "scanqa/heads.hpp"

using namespace scanqa;

namespace {

Matrix unit_random(int r, int c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0, 1);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

DetectionLoss constant_det(ag::Tape& tape, double v) {
  DetectionLoss d;
  d.vote = d.objectness = d.box = d.semcls = tape.constant(Matrix::Zero(1, 1));
  d.total = tape.constant(Matrix::Constant(1, 1, v));
  return d;
}

std::vector<Box3D> random_boxes(int n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> c(0, 2), s(0.2, 1.0);
  std::vector<Box3D> out;
  for (int i = 0; i < n; ++i) out.push_back({Vec3(c(rng), c(rng), c(rng)), Vec3(s(rng), s(rng), s(rng))});
  return out;
}

HeadConfig config(HeadMode mode, bool obj, bool loc, int d = 8, int n_a = 5) {
  HeadConfig c;
  c.d = d;
  c.num_answers = n_a;
  c.mode = mode;
  c.use_obj = obj;
  c.use_loc = loc;
  return c;
}

}  // namespace

TEST(Heads, ModeNames) {
  EXPECT_EQ(parse_head_mode("single"), HeadMode::kSingle);
  EXPECT_EQ(parse_head_mode("multiple"), HeadMode::kMultiple);
  EXPECT_EQ(head_mode_name(HeadMode::kMultiple), "multiple");
  EXPECT_THROW(parse_head_mode("both"), std::invalid_argument);
}

TEST(Heads, Shapes) {
  nn::ParameterStore store;
  nn::Rng rng(1);
  Heads h(store, config(HeadMode::kSingle, true, true, 16, 50), rng);
  ag::Tape tape;
  const auto out = h.forward(tape, tape.constant(unit_random(256, 16, 1)), tape.constant(unit_random(1, 16, 2)));
  EXPECT_EQ(out.s_loc.cols(), 256);
  EXPECT_EQ(out.s_obj.cols(), 18);
  EXPECT_EQ(out.s_ans.cols(), 50);
}

TEST(Heads, ZeroParametersAnalyticValues) {
  nn::ParameterStore store;
  nn::Rng rng(1);
  Heads h(store, config(HeadMode::kSingle, true, true, 8, 4), rng);
  for (Parameter* p : store.all()) p->value.setZero();
  ag::Tape tape;
  const auto out = h.forward(tape, tape.constant(unit_random(256, 8, 1)), tape.constant(unit_random(1, 8, 2)));
  HeadTargets t;
  t.loc_index = 7;
  t.loc_binary = Matrix::Zero(1, 256);
  t.obj_binary = Matrix::Zero(1, 18);
  t.obj_index = 3;
  t.ans_binary = Matrix::Zero(1, 4);
  t.ans_binary(0, 2) = 1;
  t.has_answer = t.has_objects = true;
  const auto l = h.total_loss(out, t, constant_det(tape, 0.0));
  EXPECT_NEAR(l.loc.scalar(), std::log(256.0), 1e-12);
  EXPECT_NEAR(l.obj.scalar(), std::log(18.0), 1e-12);
  // every logit is 0, so each of the 4 elements costs ln 2
  EXPECT_NEAR(l.ans.scalar(), 4 * std::log(2.0), 1e-12);
  const Matrix probs = (out.s_obj.value().array().exp() / out.s_obj.value().array().exp().sum()).matrix();
  EXPECT_LT((probs.array() - 1.0 / 18).abs().maxCoeff(), 1e-15);
}

TEST(LocTargets, ForcedCases) {
  std::vector<Box3D> props;
  for (int i = 0; i < 10; ++i) props.push_back({Vec3(10.0 * i + 20, 0, 0), Vec3(1, 1, 1)});
  const Box3D gt{Vec3(3, 3, 3), Vec3(1, 2, 1)};
  props[7] = gt;
  EXPECT_EQ(assign_localization_targets(props, {gt}, HeadMode::kSingle).index, 7);
  const Box3D gt2{Vec3(-5, 0, 0), Vec3(1, 1, 1)};
  props[2] = gt2;
  const auto m = assign_localization_targets(props, {gt, gt2}, HeadMode::kMultiple);
  std::vector<int> expect(10, 0);
  expect[2] = expect[7] = 1;
  EXPECT_EQ(m.binary, expect);
  // ties go to the lower index
  props[4] = gt;
  EXPECT_EQ(assign_localization_targets(props, {gt}, HeadMode::kSingle).index, 4);
  // nothing overlaps: the best (all zero) proposal is 0
  const auto none = assign_localization_targets(props, {Box3D{Vec3(-100, 0, 0), Vec3(1, 1, 1)}}, HeadMode::kMultiple);
  EXPECT_EQ(std::count(none.binary.begin(), none.binary.end(), 1), 1);
  EXPECT_EQ(none.binary[0], 1);
}

TEST(LocTargets, MatchesBruteForce) {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 100; ++t) {
    const auto props = random_boxes(12, rng);
    const auto gt = random_boxes(1 + static_cast<int>(rng() % 3), rng);
    int best = 0;
    double best_iou = -1;
    for (int i = 0; i < 12; ++i) {
      const double v = iou_aabb(props[i], gt[0]);
      if (v > best_iou) {
        best_iou = v;
        best = i;
      }
    }
    EXPECT_EQ(assign_localization_targets(props, gt, HeadMode::kSingle).index, best);

    std::vector<int> bin(12, 0);
    double top = -1;
    int arg = 0;
    for (int i = 0; i < 12; ++i) {
      double m = 0;
      for (const Box3D& g : gt) m = std::max(m, iou_aabb(props[i], g));
      if (m >= 0.25) bin[i] = 1;
      if (m > top) {
        top = m;
        arg = i;
      }
    }
    if (std::count(bin.begin(), bin.end(), 1) == 0) bin[arg] = 1;
    EXPECT_EQ(assign_localization_targets(props, gt, HeadMode::kMultiple).binary, bin);
  }
}

TEST(HeadTargets, AnswersOutsideVocabulary) {
  const HeadConfig c = config(HeadMode::kSingle, true, true, 8, 4);
  auto t = build_head_targets(c, {}, {}, {}, {-1});
  EXPECT_FALSE(t.has_answer);
  EXPECT_FALSE(t.has_objects);
  t = build_head_targets(c, {Box3D{Vec3(0, 0, 0), Vec3(1, 1, 1)}}, {Box3D{Vec3(0, 0, 0), Vec3(1, 1, 1)}}, {4, 9},
                         {1, 3});
  EXPECT_TRUE(t.has_answer);
  EXPECT_EQ(t.ans_binary.sum(), 2.0);
  EXPECT_EQ(t.obj_index, 4);
  EXPECT_EQ(t.obj_binary.sum(), 2.0);
}

TEST(Heads, RankTieBreak) {
  Matrix s(1, 6);
  s << 0.5, 0.9, 0.5, 0.1, 0.9, 0.5;
  EXPECT_EQ(rank_answers(s, 10), (std::vector<int>{1, 4, 0, 2, 5, 3}));
  EXPECT_EQ(rank_answers(s, 2), (std::vector<int>{1, 4}));
}

TEST(Heads, TogglesLeaveAnswerPlusDetection) {
  for (HeadMode mode : {HeadMode::kSingle, HeadMode::kMultiple}) {
    nn::ParameterStore store;
    nn::Rng rng(2);
    Heads h(store, config(mode, false, false), rng);
    EXPECT_EQ(store.count("heads.obj"), 0u);
    EXPECT_EQ(store.count("heads.loc"), 0u);
    ag::Tape tape;
    const auto out = h.forward(tape, tape.constant(unit_random(6, 8, 1)), tape.constant(unit_random(1, 8, 2)));
    EXPECT_FALSE(out.s_loc.valid());
    EXPECT_FALSE(out.s_obj.valid());
    const auto t = build_head_targets(h.config(), {Box3D{Vec3(0, 0, 0), Vec3(1, 1, 1)}},
                                      {Box3D{Vec3(0, 0, 0), Vec3(1, 1, 1)}}, {2}, {0});
    const auto l = h.total_loss(out, t, constant_det(tape, 1.25));
    EXPECT_EQ(l.obj.scalar(), 0.0);
    EXPECT_EQ(l.loc.scalar(), 0.0);
    EXPECT_EQ(l.total.scalar(), l.ans.scalar() + 1.25);
  }
}

TEST(Heads, TotalIsSumOfParts) {
  for (HeadMode mode : {HeadMode::kSingle, HeadMode::kMultiple}) {
    nn::ParameterStore store;
    nn::Rng rng(3);
    Heads h(store, config(mode, true, true), rng);
    std::mt19937_64 brng(5);
    const auto props = random_boxes(6, brng);
    ag::Tape tape;
    const auto out = h.forward(tape, tape.constant(unit_random(6, 8, 1)), tape.constant(unit_random(1, 8, 2)));
    const auto t = build_head_targets(h.config(), props, {props[3], props[1]}, {5, 2}, {1, 4});
    const auto l = h.total_loss(out, t, constant_det(tape, 0.7));
    for (const ag::Var& v : {l.ans, l.obj, l.loc}) EXPECT_GT(v.scalar(), 0.0);
    EXPECT_NEAR(l.total.scalar(), l.ans.scalar() + l.obj.scalar() + l.loc.scalar() + 0.7, 1e-12);
    // recompute the answer part by hand
    const Matrix& z = out.s_ans.value();
    double bce = 0;
    for (int j = 0; j < z.cols(); ++j) {
      const double p = 1.0 / (1.0 + std::exp(-z(0, j)));
      bce += t.ans_binary(0, j) ? -std::log(p) : -std::log(1 - p);
    }
    EXPECT_NEAR(l.ans.scalar(), bce, 1e-12);
  }
}

TEST(Heads, GradientsMatchFiniteDifferences) {
  for (HeadMode mode : {HeadMode::kSingle, HeadMode::kMultiple}) {
    nn::ParameterStore store;
    nn::Rng rng(7);
    Heads h(store, config(mode, true, true), rng);
    std::mt19937_64 brng(8);
    const auto props = random_boxes(4, brng);
    const auto t = build_head_targets(h.config(), props, {props[2]}, {6}, {0, 3});
    const Matrix v = unit_random(4, 8, 1), f = unit_random(1, 8, 2);
    auto loss = [&](bool backward) {
      ag::Tape tape;
      const auto l = h.total_loss(h.forward(tape, tape.constant(v), tape.constant(f)), t, constant_det(tape, 0.0));
      if (backward) {
        tape.backward(l.total);
        tape.flush_param_grads();
      }
      return l.total.scalar();
    };
    const auto r = oracle::grad_check(store, loss, 20, 1e-6);
    EXPECT_GT(r.analytic_norm, 0.0);
    EXPECT_LT(r.rel_error, 1e-4) << head_mode_name(mode);
    for (const char* prefix : {"heads.loc", "heads.obj", "heads.ans"}) EXPECT_GT(store.grad_norm(prefix), 0.0);
  }
}
