#include "scanqa/heads.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace scanqa {

std::string head_mode_name(HeadMode m) { return m == HeadMode::kSingle ? "single" : "multiple"; }

HeadMode parse_head_mode(const std::string& s) {
  if (s == "single") return HeadMode::kSingle;
  if (s == "multiple") return HeadMode::kMultiple;
  throw std::invalid_argument("unknown head mode: " + s);
}

LocalizationTarget assign_localization_targets(const std::vector<Box3D>& proposals, const std::vector<Box3D>& gt,
                                               HeadMode mode, double threshold) {
  if (proposals.empty() || gt.empty()) throw std::invalid_argument("localization targets need proposals and gt boxes");
  LocalizationTarget t;
  if (mode == HeadMode::kSingle) {
    double best = -1.0;
    for (std::size_t i = 0; i < proposals.size(); ++i) {
      const double iou = iou_aabb(proposals[i], gt.front());
      if (iou > best) {
        best = iou;
        t.index = static_cast<int>(i);
      }
    }
    return t;
  }
  t.binary.assign(proposals.size(), 0);
  double best = -1.0;
  int best_index = 0;
  bool any = false;
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    double iou = 0.0;
    for (const Box3D& g : gt) iou = std::max(iou, iou_aabb(proposals[i], g));
    if (iou >= threshold) {
      t.binary[i] = 1;
      any = true;
    }
    if (iou > best) {
      best = iou;
      best_index = static_cast<int>(i);
    }
  }
  if (!any) t.binary[static_cast<std::size_t>(best_index)] = 1;
  t.index = best_index;
  return t;
}

HeadTargets build_head_targets(const HeadConfig& cfg, const std::vector<Box3D>& proposals,
                               const std::vector<Box3D>& gt_boxes, const std::vector<int>& gt_classes,
                               const std::vector<int>& answer_indices) {
  HeadTargets t;
  t.ans_binary = Matrix::Zero(1, cfg.num_answers);
  for (int a : answer_indices) {
    if (a < 0 || a >= cfg.num_answers) continue;
    t.ans_binary(0, a) = 1.0;
    t.has_answer = true;
  }
  t.has_objects = !gt_boxes.empty() && !proposals.empty();
  if (!t.has_objects) return t;

  const LocalizationTarget loc = assign_localization_targets(proposals, gt_boxes, cfg.mode, cfg.multiple_iou);
  t.loc_index = loc.index;
  t.loc_binary = Matrix::Zero(1, static_cast<Eigen::Index>(proposals.size()));
  for (std::size_t i = 0; i < loc.binary.size(); ++i) t.loc_binary(0, static_cast<Eigen::Index>(i)) = loc.binary[i];

  t.obj_index = gt_classes.front();
  t.obj_binary = Matrix::Zero(1, kNumClasses);
  for (int c : gt_classes) t.obj_binary(0, c) = 1.0;
  return t;
}

std::vector<int> rank_answers(const Matrix& scores, int k) {
  std::vector<int> order(static_cast<std::size_t>(scores.size()));
  std::iota(order.begin(), order.end(), 0);
  const double* s = scores.data();
  std::stable_sort(order.begin(), order.end(), [s](int a, int b) { return s[a] > s[b]; });
  if (k >= 0 && static_cast<std::size_t>(k) < order.size()) order.resize(static_cast<std::size_t>(k));
  return order;
}

Heads::Heads(nn::ParameterStore& store, HeadConfig cfg, nn::Rng& rng, const std::string& prefix) : cfg_(cfg) {
  if (cfg_.num_answers < 1) throw std::invalid_argument("answer head needs at least one candidate");
  if (cfg_.use_loc) loc_ = nn::Mlp::create(store, prefix + ".loc", {cfg_.d, cfg_.d, 1}, nn::Activation::kGelu, false, rng);
  if (cfg_.use_obj) {
    obj_ = nn::Mlp::create(store, prefix + ".obj", {cfg_.d, cfg_.d, kNumClasses}, nn::Activation::kGelu, false, rng);
  }
  ans_ = nn::Linear::create(store, prefix + ".ans", cfg_.d, cfg_.num_answers, rng);
}

ag::Var Heads::localize(ag::Tape& tape, ag::Var v_dec) const {
  if (!cfg_.use_loc) throw std::logic_error("localization head is disabled");
  return ag::transpose(loc_(tape, v_dec));
}

ag::Var Heads::classify_object(ag::Tape& tape, ag::Var fused) const {
  if (!cfg_.use_obj) throw std::logic_error("object classification head is disabled");
  return obj_(tape, fused);
}

ag::Var Heads::answer(ag::Tape& tape, ag::Var fused) const { return ans_(tape, fused); }

HeadOutputs Heads::forward(ag::Tape& tape, ag::Var v_dec, ag::Var fused) const {
  HeadOutputs out;
  if (cfg_.use_loc) out.s_loc = localize(tape, v_dec);
  if (cfg_.use_obj) out.s_obj = classify_object(tape, fused);
  out.s_ans = answer(tape, fused);
  return out;
}

LossParts Heads::total_loss(const HeadOutputs& out, const HeadTargets& targets, const DetectionLoss& det) const {
  ag::Tape& tape = *out.s_ans.tape();
  auto zero = [&] { return tape.constant(Matrix::Zero(1, 1)); };
  LossParts parts;
  parts.det = det;

  // Summed over candidates per sample; a sample without an in-vocabulary answer contributes nothing.
  parts.ans = targets.has_answer ? ag::bce_with_logits(out.s_ans, targets.ans_binary, false) : zero();

  parts.obj = zero();
  if (cfg_.use_obj && targets.has_objects) {
    if (cfg_.mode == HeadMode::kSingle) {
      const int t = targets.obj_index;
      parts.obj = ag::softmax_cross_entropy(out.s_obj, std::span<const int>(&t, 1));
    } else {
      parts.obj = ag::bce_with_logits(out.s_obj, targets.obj_binary, true);
    }
  }

  parts.loc = zero();
  if (cfg_.use_loc && targets.has_objects) {
    if (out.s_loc.cols() != targets.loc_binary.cols()) throw std::invalid_argument("localization target size mismatch");
    if (cfg_.mode == HeadMode::kSingle) {
      const int t = targets.loc_index;
      parts.loc = ag::softmax_cross_entropy(out.s_loc, std::span<const int>(&t, 1));
    } else {
      parts.loc = ag::bce_with_logits(out.s_loc, targets.loc_binary, true);
    }
  }

  parts.total = ag::add(ag::add(parts.ans, parts.obj), ag::add(parts.loc, det.total));
  return parts;
}

}  // namespace scanqa
