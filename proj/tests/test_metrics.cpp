#include <gtest/gtest.h>

#include <nlohmann/json.hpp>

#include <numeric>
#include <random>

#include "oracles.hpp"
#include "scanqa/metrics.hpp"
#include "scanqa/text_encoder.hpp"

using namespace scanqa;

namespace {

Tokens toks(const std::string& s) { return split_words(s); }

struct Corpus {
  std::vector<Tokens> cands;
  std::vector<std::vector<Tokens>> refs;
};

Corpus random_corpus(std::mt19937_64& rng) {
  static const std::vector<std::string> words = {"the", "a", "red", "chair", "table", "on", "left", "wall"};
  Corpus c;
  const int n = 1 + static_cast<int>(rng() % 10);
  auto sentence = [&] {
    Tokens t;
    const int len = static_cast<int>(rng() % 9);  // 0..8 tokens
    for (int i = 0; i < len; ++i) t.push_back(words[rng() % words.size()]);
    return t;
  };
  for (int i = 0; i < n; ++i) {
    c.cands.push_back(sentence());
    std::vector<Tokens> r;
    const int nr = 1 + static_cast<int>(rng() % 3);
    for (int j = 0; j < nr; ++j) r.push_back(sentence());
    c.refs.push_back(r);
  }
  return c;
}

QASample gold(const std::string& id, const std::string& q, std::vector<std::string> answers,
              std::vector<Box3D> boxes = {}) {
  QASample s;
  s.question_id = id;
  s.scene_id = "scene0000_00";
  s.question = q;
  s.answers = std::move(answers);
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    s.object_ids.push_back(static_cast<int>(i));
    s.object_names.push_back("chair");
    s.object_classes.push_back(0);
  }
  s.object_boxes = std::move(boxes);
  return s;
}

const Box3D kUnit{Vec3(0, 0, 0), Vec3(1, 1, 1)};
const Box3D kFar{Vec3(9, 9, 9), Vec3(1, 1, 1)};

}  // namespace

TEST(ExactMatch, Examples) {
  EXPECT_EQ(em_at_k({{"brown"}}, {{"brown"}}, 1), 1.0);
  const std::vector<std::vector<std::string>> ranked = {{"red", "brown", "blue"}};
  EXPECT_EQ(em_at_k(ranked, {{"brown"}}, 1), 0.0);
  EXPECT_EQ(em_at_k(ranked, {{"brown"}}, 10), 1.0);
  EXPECT_EQ(em_at_k({{"a"}, {"b"}, {"c"}, {"d"}}, {{"a"}, {"x"}, {"y"}, {"z"}}, 1), 0.25);
  EXPECT_EQ(em_at_k({{" Brown "}}, {{"brown"}}, 1), 1.0);
}

TEST(Bleu, Examples) {
  EXPECT_DOUBLE_EQ(bleu({toks("the cat sat")}, {{toks("the cat sat")}}, 1), 1.0);
  EXPECT_NEAR(bleu({toks("the the the")}, {{toks("the cat sat")}}, 1), 1.0 / 3.0, 1e-15);
  EXPECT_EQ(bleu({Tokens{}}, {{toks("a b")}}, 1), 0.0);
  // brevity penalty uses the closest reference length, ties to the shorter
  EXPECT_DOUBLE_EQ(bleu({toks("a b c")}, {{toks("a b"), toks("a b c d")}}, 1), 1.0);
  EXPECT_NEAR(bleu({toks("a")}, {{toks("a b c")}}, 1), std::exp(1.0 - 3.0), 1e-15);
}

TEST(Rouge, Examples) {
  EXPECT_DOUBLE_EQ(rouge_l({toks("a b c")}, {{toks("a b c")}}), 1.0);
  // LCS = 2, P = 2/3, R = 1
  const double p = 2.0 / 3.0, r = 1.0, b2 = 1.44;
  EXPECT_NEAR(rouge_l({toks("the cat sat")}, {{toks("the cat")}}), (1 + b2) * p * r / (r + b2 * p), 1e-12);
  EXPECT_NEAR(rouge_l({toks("the cat sat")}, {{toks("the cat")}}), 0.829931972789, 1e-9);
  EXPECT_EQ(rouge_l({Tokens{}}, {{toks("x")}}), 0.0);
  EXPECT_EQ(lcs_length(toks("a b c d"), toks("b d a")), 2u);
}

TEST(Rouge, ExtraReferenceNeverHurts) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 50; ++t) {
    Corpus c = random_corpus(rng);
    const double before = rouge_l(c.cands, c.refs);
    for (auto& r : c.refs) r.push_back(toks("unrelated words here"));
    EXPECT_GE(rouge_l(c.cands, c.refs), before);
  }
}

TEST(Cider, Examples) {
  EXPECT_EQ(cider({Tokens{}, toks("a b")}, {{toks("a b")}, {toks("c d")}}), 0.0);
  EXPECT_EQ(cider({toks("the red chair")}, {{toks("the red chair")}}), 0.0);
  const std::vector<Tokens> cands = {toks("red"), toks("the chair"), toks("on the left"), Tokens{}, toks("two")};
  const std::vector<std::vector<Tokens>> refs = {
      {toks("red")}, {toks("a chair"), toks("the chair")}, {toks("left of the bed")}, {toks("blue")}, {toks("three")}};
  EXPECT_NEAR(cider(cands, refs), oracle::cider(cands, refs), 1e-9);
  EXPECT_GT(cider(cands, refs), 0.0);
}

TEST(CaptionMetrics, MatchOraclesOnRandomCorpora) {
  std::mt19937_64 rng(2024);
  for (int t = 0; t < 100; ++t) {
    const Corpus c = random_corpus(rng);
    const auto b = bleu(c.cands, c.refs);
    for (int n = 1; n <= 4; ++n) {
      EXPECT_NEAR(b[n - 1], oracle::bleu(c.cands, c.refs, n), 1e-9) << "corpus " << t << " n " << n;
      EXPECT_GE(b[n - 1], 0.0);
      EXPECT_LE(b[n - 1], 1.0);
    }
    EXPECT_NEAR(rouge_l(c.cands, c.refs), oracle::rouge_l(c.cands, c.refs), 1e-9) << t;
    EXPECT_NEAR(cider(c.cands, c.refs), oracle::cider(c.cands, c.refs), 1e-9) << t;
  }
}

TEST(CaptionMetrics, PermutationInvariant) {
  std::mt19937_64 rng(77);
  for (int t = 0; t < 20; ++t) {
    Corpus c = random_corpus(rng);
    const auto b = bleu(c.cands, c.refs);
    const double r = rouge_l(c.cands, c.refs), ci = cider(c.cands, c.refs);
    std::vector<std::size_t> perm(c.cands.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Corpus p;
    for (std::size_t i : perm) {
      p.cands.push_back(c.cands[i]);
      p.refs.push_back(c.refs[i]);
    }
    const auto bp = bleu(p.cands, p.refs);
    for (int n = 0; n < 4; ++n) EXPECT_NEAR(b[n], bp[n], 1e-12);
    EXPECT_NEAR(r, rouge_l(p.cands, p.refs), 1e-12);
    EXPECT_NEAR(ci, cider(p.cands, p.refs), 1e-12);
  }
}

TEST(AccIou, Examples) {
  EXPECT_EQ(acc_at_iou({kUnit}, {{kUnit}}, 0.25), 1.0);
  EXPECT_EQ(acc_at_iou({kUnit}, {{kUnit}}, 0.5), 1.0);
  EXPECT_EQ(acc_at_iou({kFar}, {{kUnit}}, 0.25), 0.0);
  EXPECT_EQ(acc_at_iou({std::nullopt}, {{kUnit}}, 0.25), 0.0);
  // strictly greater: IoU 1/3 is not above 1/3
  const Box3D shifted{Vec3(0.5, 0, 0), Vec3(1, 1, 1)};
  EXPECT_EQ(acc_at_iou({shifted}, {{kUnit}}, 1.0 / 3.0), 0.0);
  EXPECT_EQ(acc_at_iou({shifted}, {{kUnit}}, 0.33), 1.0);

  std::vector<Box3D> top(9, kFar);
  top.push_back(kUnit);
  EXPECT_EQ(top10_acc_at_iou({top}, {{kUnit}}, 0.25), 1.0);
  EXPECT_EQ(top10_acc_at_iou({std::vector<Box3D>(10, kFar)}, {{kUnit}}, 0.25), 0.0);
  EXPECT_EQ(top10_acc_at_iou({{}}, {{kUnit}}, 0.25), 0.0);
}

TEST(AccIou, MatchesBruteForce) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> c(0, 2), s(0.3, 1.2);
  auto rbox = [&] { return Box3D{Vec3(c(rng), c(rng), c(rng)), Vec3(s(rng), s(rng), s(rng))}; };
  for (int t = 0; t < 30; ++t) {
    std::vector<std::optional<Box3D>> pred;
    std::vector<std::vector<Box3D>> top, gt;
    double hits = 0, hits10 = 0;
    const int n = 1 + static_cast<int>(rng() % 20);
    for (int i = 0; i < n; ++i) {
      std::vector<Box3D> g;
      for (int k = 0; k < 1 + static_cast<int>(rng() % 3); ++k) g.push_back(rbox());
      std::vector<Box3D> tk;
      for (int k = 0; k < 10; ++k) tk.push_back(rbox());
      double best = 0, best10 = 0;
      for (const Box3D& b : g) {
        best = std::max(best, iou_aabb(tk[0], b));
        for (const Box3D& q : tk) best10 = std::max(best10, iou_aabb(q, b));
      }
      hits += best > 0.25;
      hits10 += best10 > 0.25;
      pred.push_back(tk[0]);
      top.push_back(tk);
      gt.push_back(g);
    }
    EXPECT_DOUBLE_EQ(acc_at_iou(pred, gt, 0.25), hits / n);
    EXPECT_DOUBLE_EQ(top10_acc_at_iou(top, gt, 0.25), hits10 / n);
    EXPECT_GE(top10_acc_at_iou(top, gt, 0.25), acc_at_iou(pred, gt, 0.25));
    EXPECT_LE(acc_at_iou(pred, gt, 0.5), acc_at_iou(pred, gt, 0.25));
  }
}

TEST(Report, PerfectPredictions) {
  const std::vector<QASample> g = {gold("1", "What color is the chair?", {"red"}, {kUnit}),
                                   gold("2", "Where is the bed?", {"in the corner", "by the wall"}, {kUnit}),
                                   gold("3", "How many chairs are there?", {"3"}, {kUnit, kFar})};
  std::vector<Prediction> p;
  for (const auto& s : g) p.push_back({s.question_id, {s.answers.front()}, s.object_boxes.front(), s.object_boxes});
  const MetricReport r = report(p, g);
  EXPECT_EQ(r.overall.em1, 1.0);
  EXPECT_EQ(r.overall.em10, 1.0);
  EXPECT_DOUBLE_EQ(r.overall.bleu[0], 1.0);
  EXPECT_DOUBLE_EQ(r.overall.rouge_l, 1.0);
  EXPECT_EQ(r.overall.acc_025, 1.0);
  EXPECT_EQ(r.overall.acc_05, 1.0);
  EXPECT_EQ(r.overall.top10_acc_025, 1.0);
  EXPECT_EQ(r.per_type.size(), 3u);
}

TEST(Report, PerTypeRecombines) {
  std::mt19937_64 rng(5);
  const std::vector<std::string> qs = {"What color is the chair?", "Where is the desk?", "How many beds?",
                                       "What is next to the sink?", "What kind of table?", "Is there a bed?"};
  const std::vector<std::string> answers = {"red", "blue", "2", "sink", "yes", "no"};
  std::vector<QASample> g;
  std::vector<Prediction> p;
  for (int i = 0; i < 60; ++i) {
    const std::string id = std::to_string(i);
    std::vector<Box3D> boxes;
    if (rng() % 4) boxes.push_back(kUnit);
    g.push_back(gold(id, qs[rng() % qs.size()], {answers[rng() % answers.size()]}, boxes));
    if (rng() % 7 == 0) continue;  // missing prediction
    std::optional<Box3D> box;
    if (rng() % 2) box = (rng() % 2) ? kUnit : kFar;
    p.push_back({id, {answers[rng() % answers.size()], answers[rng() % answers.size()]}, box, {}});
  }
  const MetricReport r = report(p, g);
  double em = 0, acc = 0;
  std::size_t n = 0, nl = 0;
  for (const auto& [type, s] : r.per_type) {
    em += s.em1 * s.count;
    acc += s.acc_025 * s.loc_count;
    n += s.count;
    nl += s.loc_count;
  }
  EXPECT_EQ(n, 60u);
  EXPECT_EQ(nl, r.overall.loc_count);
  EXPECT_NEAR(em / n, r.overall.em1, 1e-12);
  EXPECT_NEAR(acc / nl, r.overall.acc_025, 1e-12);
  EXPECT_LE(r.overall.em1, r.overall.em10);

  // order of predictions and gold does not matter
  std::reverse(p.begin(), p.end());
  std::reverse(g.begin(), g.end());
  const MetricReport r2 = report(p, g);
  EXPECT_NEAR(r2.overall.cider, r.overall.cider, 1e-12);
  EXPECT_NEAR(r2.overall.bleu[3], r.overall.bleu[3], 1e-12);
  EXPECT_EQ(r2.overall.em1, r.overall.em1);
}

TEST(Report, ErrorsListOffenders) {
  const std::vector<QASample> g = {gold("1", "What color?", {"red"})};
  try {
    report({{"1", {"red"}, std::nullopt, {}}, {"zz", {"a"}, std::nullopt, {}}, {"yy", {"a"}, std::nullopt, {}}}, g);
    FAIL() << "expected MetricsError";
  } catch (const MetricsError& e) {
    EXPECT_NE(std::string(e.what()).find("zz"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("yy"), std::string::npos);
  }
  EXPECT_THROW(report({{"1", {"red"}, std::nullopt, {}}, {"1", {"red"}, std::nullopt, {}}}, g), MetricsError);
}

TEST(Report, JsonRoundTripAndColumns) {
  const std::vector<QASample> g = {gold("1", "What color is the chair?", {"red"}, {kUnit}),
                                   gold("2", "Where is the bed?", {"by the wall"})};
  const MetricReport r = report({{"1", {"blue", "red"}, kUnit, {kUnit}}}, g);
  EXPECT_EQ(report_from_json(to_json(r)), r);
  const auto j = to_json(r.overall);
  for (const char* k : {"em1", "em10", "bleu1", "bleu4", "rouge_l", "cider", "acc_025", "acc_05", "top10_acc_025"})
    EXPECT_TRUE(j.contains(k)) << k;
  EXPECT_EQ(metric_columns().front(), "EM@1");
  EXPECT_EQ(metric_columns().size(), metric_row(r.overall).size());
  EXPECT_NE(render_report(r).find("CIDEr"), std::string::npos);
  const MetricReport m = mean_report({r, r});
  EXPECT_NEAR(m.overall.em10, r.overall.em10, 1e-15);
}
