#include "scanqa/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "scanqa/text_encoder.hpp"

namespace scanqa {

namespace {

using NgramCounts = std::map<Tokens, double>;

NgramCounts ngrams(const Tokens& t, int n) {
  NgramCounts out;
  for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= t.size(); ++i) {
    out[Tokens(t.begin() + static_cast<std::ptrdiff_t>(i), t.begin() + static_cast<std::ptrdiff_t>(i) + n)] += 1.0;
  }
  return out;
}

void check_corpus(std::size_t a, std::size_t b) {
  if (a != b) throw MetricsError("candidate and reference corpora differ in size");
}

}  // namespace

double em_at_k(const std::vector<std::vector<std::string>>& ranked, const std::vector<std::vector<std::string>>& refs,
               int k) {
  check_corpus(ranked.size(), refs.size());
  if (ranked.empty()) return 0.0;
  double hits = 0.0;
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    std::unordered_set<std::string> gold;
    for (const auto& r : refs[i]) gold.insert(normalize_answer(r));
    const std::size_t top = std::min(ranked[i].size(), static_cast<std::size_t>(std::max(k, 0)));
    for (std::size_t j = 0; j < top; ++j) {
      if (gold.contains(normalize_answer(ranked[i][j]))) {
        hits += 1.0;
        break;
      }
    }
  }
  return hits / static_cast<double>(ranked.size());
}

std::array<double, 4> bleu(const std::vector<Tokens>& candidates, const std::vector<std::vector<Tokens>>& refs) {
  check_corpus(candidates.size(), refs.size());
  std::array<double, 4> matched{}, total{};
  double cand_len = 0.0, ref_len = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const Tokens& c = candidates[i];
    cand_len += static_cast<double>(c.size());
    // closest reference length, shorter one on ties
    std::size_t best = 0;
    bool first = true;
    for (const Tokens& r : refs[i]) {
      const auto diff = [&](std::size_t len) {
        return len > c.size() ? len - c.size() : c.size() - len;
      };
      if (first || diff(r.size()) < diff(best) || (diff(r.size()) == diff(best) && r.size() < best)) {
        best = r.size();
        first = false;
      }
    }
    ref_len += static_cast<double>(best);
    for (int n = 1; n <= 4; ++n) {
      const NgramCounts cc = ngrams(c, n);
      NgramCounts max_ref;
      for (const Tokens& r : refs[i]) {
        for (const auto& [g, cnt] : ngrams(r, n)) max_ref[g] = std::max(max_ref[g], cnt);
      }
      for (const auto& [g, cnt] : cc) {
        auto it = max_ref.find(g);
        if (it != max_ref.end()) matched[static_cast<std::size_t>(n - 1)] += std::min(cnt, it->second);
        total[static_cast<std::size_t>(n - 1)] += cnt;
      }
    }
  }
  std::array<double, 4> out{};
  if (cand_len == 0.0) return out;
  const double bp = cand_len >= ref_len ? 1.0 : std::exp(1.0 - ref_len / cand_len);
  double log_sum = 0.0;
  for (int n = 1; n <= 4; ++n) {
    const double m = matched[static_cast<std::size_t>(n - 1)];
    const double t = total[static_cast<std::size_t>(n - 1)];
    if (m == 0.0 || t == 0.0) break;  // this and all higher orders are 0
    log_sum += std::log(m / t);
    out[static_cast<std::size_t>(n - 1)] = bp * std::exp(log_sum / n);
  }
  return out;
}

double bleu(const std::vector<Tokens>& candidates, const std::vector<std::vector<Tokens>>& refs, int n) {
  if (n < 1 || n > 4) throw std::invalid_argument("bleu order must be 1..4");
  return bleu(candidates, refs)[static_cast<std::size_t>(n - 1)];
}

std::size_t lcs_length(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double rouge_l(const std::vector<Tokens>& candidates, const std::vector<std::vector<Tokens>>& refs, double beta) {
  check_corpus(candidates.size(), refs.size());
  if (candidates.empty()) return 0.0;
  const double b2 = beta * beta;
  double sum = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    double best = 0.0;
    for (const Tokens& r : refs[i]) {
      const double lcs = static_cast<double>(lcs_length(candidates[i], r));
      if (lcs == 0.0) continue;
      const double p = lcs / static_cast<double>(candidates[i].size());
      const double rec = lcs / static_cast<double>(r.size());
      best = std::max(best, (1.0 + b2) * p * rec / (rec + b2 * p));
    }
    sum += best;
  }
  return sum / static_cast<double>(candidates.size());
}

double cider(const std::vector<Tokens>& candidates, const std::vector<std::vector<Tokens>>& refs, double sigma) {
  check_corpus(candidates.size(), refs.size());
  if (candidates.empty()) return 0.0;
  const double n_docs = static_cast<double>(candidates.size());
  const double log_docs = std::log(n_docs);

  // document frequency per n-gram over each sample's reference set
  std::map<Tokens, double> df;
  for (const auto& sample_refs : refs) {
    std::set<Tokens> seen;
    for (const Tokens& r : sample_refs) {
      for (int n = 1; n <= 4; ++n) {
        for (const auto& [g, c] : ngrams(r, n)) seen.insert(g);
      }
    }
    for (const Tokens& g : seen) df[g] += 1.0;
  }

  struct Vec {
    std::array<NgramCounts, 4> w;
    std::array<double, 4> norm{};
    double length = 0.0;
  };
  auto to_vec = [&](const Tokens& t) {
    Vec v;
    v.length = static_cast<double>(t.size());
    for (int n = 1; n <= 4; ++n) {
      auto& w = v.w[static_cast<std::size_t>(n - 1)];
      for (const auto& [g, c] : ngrams(t, n)) {
        auto it = df.find(g);
        const double idf = log_docs - std::log(std::max(1.0, it == df.end() ? 0.0 : it->second));
        w[g] = c * idf;
        v.norm[static_cast<std::size_t>(n - 1)] += w[g] * w[g];
      }
      v.norm[static_cast<std::size_t>(n - 1)] = std::sqrt(v.norm[static_cast<std::size_t>(n - 1)]);
    }
    return v;
  };

  double total = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (refs[i].empty()) continue;
    const Vec hyp = to_vec(candidates[i]);
    double sample = 0.0;
    for (const Tokens& r : refs[i]) {
      const Vec ref = to_vec(r);
      const double delta = hyp.length - ref.length;
      const double penalty = std::exp(-(delta * delta) / (2.0 * sigma * sigma));
      double sim = 0.0;
      for (std::size_t n = 0; n < 4; ++n) {
        double dot = 0.0;
        for (const auto& [g, wh] : hyp.w[n]) {
          auto it = ref.w[n].find(g);
          if (it != ref.w[n].end()) dot += std::min(wh, it->second) * it->second;
        }
        if (hyp.norm[n] != 0.0 && ref.norm[n] != 0.0) sim += dot / (hyp.norm[n] * ref.norm[n]) * penalty;
      }
      sample += sim / 4.0;
    }
    total += sample / static_cast<double>(refs[i].size()) * 10.0;
  }
  return total / n_docs;
}

double acc_at_iou(const std::vector<std::optional<Box3D>>& pred, const std::vector<std::vector<Box3D>>& gt,
                  double threshold) {
  check_corpus(pred.size(), gt.size());
  if (pred.empty()) return 0.0;
  double hits = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!pred[i] || !pred[i]->valid()) continue;
    double best = 0.0;
    for (const Box3D& g : gt[i]) best = std::max(best, iou_aabb(*pred[i], g));
    if (best > threshold) hits += 1.0;
  }
  return hits / static_cast<double>(pred.size());
}

double top10_acc_at_iou(const std::vector<std::vector<Box3D>>& pred_top10, const std::vector<std::vector<Box3D>>& gt,
                        double threshold) {
  check_corpus(pred_top10.size(), gt.size());
  if (pred_top10.empty()) return 0.0;
  double hits = 0.0;
  for (std::size_t i = 0; i < pred_top10.size(); ++i) {
    double best = 0.0;
    const std::size_t n = std::min<std::size_t>(pred_top10[i].size(), 10);
    for (std::size_t j = 0; j < n; ++j) {
      if (!pred_top10[i][j].valid()) continue;
      for (const Box3D& g : gt[i]) best = std::max(best, iou_aabb(pred_top10[i][j], g));
    }
    if (best > threshold) hits += 1.0;
  }
  return hits / static_cast<double>(pred_top10.size());
}

MetricScores score_samples(const std::vector<const Prediction*>& preds, const std::vector<const QASample*>& gold) {
  check_corpus(preds.size(), gold.size());
  MetricScores s;
  s.count = gold.size();
  if (gold.empty()) return s;

  std::vector<std::vector<std::string>> ranked, refs;
  std::vector<Tokens> cand_tokens;
  std::vector<std::vector<Tokens>> ref_tokens;
  std::vector<std::optional<Box3D>> boxes;
  std::vector<std::vector<Box3D>> top10, gt_boxes;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const Prediction* p = preds[i];
    ranked.push_back(p ? p->answer_ranked : std::vector<std::string>{});
    refs.push_back(gold[i]->answers);
    cand_tokens.push_back(ranked.back().empty() ? Tokens{} : split_words(ranked.back().front()));
    std::vector<Tokens> rt;
    for (const auto& a : gold[i]->answers) rt.push_back(split_words(a));
    ref_tokens.push_back(std::move(rt));
    if (!gold[i]->object_boxes.empty()) {
      boxes.push_back(p ? p->box : std::nullopt);
      top10.push_back(p ? p->boxes_top10 : std::vector<Box3D>{});
      gt_boxes.push_back(gold[i]->object_boxes);
    }
  }
  s.em1 = em_at_k(ranked, refs, 1);
  s.em10 = em_at_k(ranked, refs, 10);
  s.bleu = bleu(cand_tokens, ref_tokens);
  s.rouge_l = rouge_l(cand_tokens, ref_tokens);
  s.cider = cider(cand_tokens, ref_tokens);
  s.loc_count = gt_boxes.size();
  s.acc_025 = acc_at_iou(boxes, gt_boxes, 0.25);
  s.acc_05 = acc_at_iou(boxes, gt_boxes, 0.5);
  s.top10_acc_025 = top10_acc_at_iou(top10, gt_boxes, 0.25);
  return s;
}

MetricReport report(const std::vector<Prediction>& preds, const std::vector<QASample>& gold) {
  std::unordered_map<std::string, const QASample*> by_id;
  for (const QASample& g : gold) {
    if (!by_id.emplace(g.question_id, &g).second) throw MetricsError("duplicate gold question_id: " + g.question_id);
  }
  std::unordered_map<std::string, const Prediction*> pred_by_id;
  std::vector<std::string> unknown, duplicate;
  for (const Prediction& p : preds) {
    if (!by_id.contains(p.question_id)) {
      unknown.push_back(p.question_id);
    } else if (!pred_by_id.emplace(p.question_id, &p).second) {
      duplicate.push_back(p.question_id);
    }
  }
  if (!unknown.empty()) {
    throw MetricsError(fmt::format("{} prediction(s) with unknown question_id: {}", unknown.size(),
                                   fmt::join(unknown, ", ")));
  }
  if (!duplicate.empty()) {
    throw MetricsError(fmt::format("duplicate prediction question_id: {}", fmt::join(duplicate, ", ")));
  }

  std::vector<const Prediction*> all_p;
  std::vector<const QASample*> all_g;
  std::map<std::string, std::pair<std::vector<const Prediction*>, std::vector<const QASample*>>> groups;
  for (const QASample& g : gold) {
    auto it = pred_by_id.find(g.question_id);
    const Prediction* p = it == pred_by_id.end() ? nullptr : it->second;
    all_p.push_back(p);
    all_g.push_back(&g);
    auto& grp = groups[question_type_name(classify_question_type(g.question))];
    grp.first.push_back(p);
    grp.second.push_back(&g);
  }
  MetricReport r;
  r.overall = score_samples(all_p, all_g);
  for (const auto& [name, grp] : groups) r.per_type[name] = score_samples(grp.first, grp.second);
  return r;
}

namespace {

MetricScores mean_scores(const std::vector<const MetricScores*>& xs) {
  MetricScores m = *xs.front();
  const double n = static_cast<double>(xs.size());
  auto avg = [&](auto field) {
    double s = 0.0;
    for (const MetricScores* x : xs) s += field(*x);
    return s / n;
  };
  m.em1 = avg([](const MetricScores& x) { return x.em1; });
  m.em10 = avg([](const MetricScores& x) { return x.em10; });
  for (std::size_t k = 0; k < 4; ++k) m.bleu[k] = avg([k](const MetricScores& x) { return x.bleu[k]; });
  m.rouge_l = avg([](const MetricScores& x) { return x.rouge_l; });
  m.cider = avg([](const MetricScores& x) { return x.cider; });
  m.acc_025 = avg([](const MetricScores& x) { return x.acc_025; });
  m.acc_05 = avg([](const MetricScores& x) { return x.acc_05; });
  m.top10_acc_025 = avg([](const MetricScores& x) { return x.top10_acc_025; });
  return m;
}

}  // namespace

MetricReport mean_report(const std::vector<MetricReport>& reports) {
  if (reports.empty()) throw MetricsError("mean of zero reports");
  MetricReport out;
  std::vector<const MetricScores*> xs;
  for (const auto& r : reports) xs.push_back(&r.overall);
  out.overall = mean_scores(xs);
  for (const auto& [name, _] : reports.front().per_type) {
    xs.clear();
    for (const auto& r : reports) xs.push_back(&r.per_type.at(name));
    out.per_type[name] = mean_scores(xs);
  }
  return out;
}

nlohmann::json to_json(const MetricScores& s) {
  return {{"count", s.count},   {"loc_count", s.loc_count}, {"em1", s.em1},         {"em10", s.em10},
          {"bleu1", s.bleu[0]}, {"bleu2", s.bleu[1]},       {"bleu3", s.bleu[2]},   {"bleu4", s.bleu[3]},
          {"rouge_l", s.rouge_l}, {"cider", s.cider},       {"acc_025", s.acc_025}, {"acc_05", s.acc_05},
          {"top10_acc_025", s.top10_acc_025}};
}

nlohmann::json to_json(const MetricReport& r) {
  nlohmann::json j = to_json(r.overall);
  nlohmann::json types = nlohmann::json::object();
  for (const auto& [name, s] : r.per_type) types[name] = to_json(s);
  j["per_type"] = std::move(types);
  return j;
}

MetricScores scores_from_json(const nlohmann::json& j) {
  MetricScores s;
  s.count = j.at("count").get<std::size_t>();
  s.loc_count = j.at("loc_count").get<std::size_t>();
  s.em1 = j.at("em1").get<double>();
  s.em10 = j.at("em10").get<double>();
  s.bleu = {j.at("bleu1").get<double>(), j.at("bleu2").get<double>(), j.at("bleu3").get<double>(),
            j.at("bleu4").get<double>()};
  s.rouge_l = j.at("rouge_l").get<double>();
  s.cider = j.at("cider").get<double>();
  s.acc_025 = j.at("acc_025").get<double>();
  s.acc_05 = j.at("acc_05").get<double>();
  s.top10_acc_025 = j.at("top10_acc_025").get<double>();
  return s;
}

MetricReport report_from_json(const nlohmann::json& j) {
  MetricReport r;
  r.overall = scores_from_json(j);
  if (j.contains("per_type")) {
    for (const auto& [name, v] : j.at("per_type").items()) r.per_type[name] = scores_from_json(v);
  }
  return r;
}

const std::vector<std::string>& metric_columns() {
  static const std::vector<std::string> cols = {"EM@1",   "EM@10", "BLEU-1",  "BLEU-2",   "BLEU-3",
                                                "BLEU-4", "ROUGE", "CIDEr",   "Acc@0.25", "Acc@0.5",
                                                "Top10-Acc@0.25"};
  return cols;
}

std::vector<double> metric_row(const MetricScores& s) {
  // rates shown as percentages, CIDEr on its own x10 scale
  return {100 * s.em1,     100 * s.em10,    100 * s.bleu[0],  100 * s.bleu[1],
          100 * s.bleu[2], 100 * s.bleu[3], 100 * s.rouge_l,  100 * s.cider,
          100 * s.acc_025, 100 * s.acc_05,  100 * s.top10_acc_025};
}

std::string render_report(const MetricReport& r) {
  std::string out = fmt::format("{:<14} {:>6}", "type", "n");
  std::vector<std::size_t> widths;
  for (const auto& c : metric_columns()) {
    widths.push_back(std::max<std::size_t>(8, c.size()));
    out += fmt::format(" {:>{}}", c, widths.back());
  }
  out += "\n";
  auto line = [&](const std::string& name, const MetricScores& s) {
    out += fmt::format("{:<14} {:>6}", name, s.count);
    const auto row = metric_row(s);
    for (std::size_t i = 0; i < row.size(); ++i) out += fmt::format(" {:>{}.2f}", row[i], widths[i]);
    out += "\n";
  };
  line("overall", r.overall);
  for (const auto& [name, s] : r.per_type) line(name, s);
  return out;
}

}  // namespace scanqa
