#pragma once

#include <array>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "scanqa/data.hpp"

namespace scanqa {

struct MetricsError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Tokens = std::vector<std::string>;

/// Mean over samples of [any of the top-k normalized predictions equals a
/// normalized reference]. k larger than a list uses the whole list.
double em_at_k(const std::vector<std::vector<std::string>>& ranked, const std::vector<std::vector<std::string>>& refs,
               int k);

/// Corpus BLEU-1..4: clipped n-gram precisions pooled over the corpus,
/// closest-reference-length brevity penalty (ties to the shorter), no smoothing.
std::array<double, 4> bleu(const std::vector<Tokens>& candidates, const std::vector<std::vector<Tokens>>& refs);
double bleu(const std::vector<Tokens>& candidates, const std::vector<std::vector<Tokens>>& refs, int n);

std::size_t lcs_length(const Tokens& a, const Tokens& b);
/// Mean over samples of the best LCS F-measure against any reference.
double rouge_l(const std::vector<Tokens>& candidates, const std::vector<std::vector<Tokens>>& refs, double beta = 1.2);

/// CIDEr-D, x10. Document frequencies come from the references of this corpus.
double cider(const std::vector<Tokens>& candidates, const std::vector<std::vector<Tokens>>& refs, double sigma = 6.0);

/// Positive iff max IoU against the sample's boxes is strictly above the threshold.
/// Samples without ground-truth boxes must be filtered out by the caller.
double acc_at_iou(const std::vector<std::optional<Box3D>>& pred, const std::vector<std::vector<Box3D>>& gt,
                  double threshold);
double top10_acc_at_iou(const std::vector<std::vector<Box3D>>& pred_top10, const std::vector<std::vector<Box3D>>& gt,
                        double threshold);

struct MetricScores {
  std::size_t count = 0;      // samples scored
  std::size_t loc_count = 0;  // samples that have ground-truth boxes (Acc denominators)
  double em1 = 0.0;
  double em10 = 0.0;
  std::array<double, 4> bleu{};
  double rouge_l = 0.0;
  double cider = 0.0;
  double acc_025 = 0.0;
  double acc_05 = 0.0;
  double top10_acc_025 = 0.0;

  bool operator==(const MetricScores&) const = default;
};

struct MetricReport {
  MetricScores overall;
  std::map<std::string, MetricScores> per_type;  // keyed by question type name

  bool operator==(const MetricReport&) const = default;
};

/// Scores every gold sample; a gold sample without a prediction scores as an
/// empty answer with no box. Unknown or duplicate prediction ids throw.
MetricReport report(const std::vector<Prediction>& preds, const std::vector<QASample>& gold);
MetricScores score_samples(const std::vector<const Prediction*>& preds, const std::vector<const QASample*>& gold);

/// Field-wise arithmetic mean (counts taken from the first report).
MetricReport mean_report(const std::vector<MetricReport>& reports);

nlohmann::json to_json(const MetricScores& s);
nlohmann::json to_json(const MetricReport& r);
MetricScores scores_from_json(const nlohmann::json& j);
MetricReport report_from_json(const nlohmann::json& j);

/// Column order used for tables.
const std::vector<std::string>& metric_columns();
std::vector<double> metric_row(const MetricScores& s);
std::string render_report(const MetricReport& r);

}  // namespace scanqa
