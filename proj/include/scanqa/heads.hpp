#pragma once

#include <string>
#include <vector>

#include "scanqa/detector.hpp"
#include "scanqa/nn.hpp"

namespace scanqa {

/// single: softmax + CE against one target; multiple: sigmoid + BCE against every qualifying target.
enum class HeadMode { kSingle, kMultiple };

std::string head_mode_name(HeadMode m);
HeadMode parse_head_mode(const std::string& s);

struct HeadConfig {
  int d = 256;
  int num_answers = 1;
  HeadMode mode = HeadMode::kSingle;
  bool use_obj = true;  // the answer head is always on
  bool use_loc = true;
  double multiple_iou = 0.25;
};

struct HeadOutputs {
  ag::Var s_loc;  // 1 x n_v, invalid when LOC is disabled
  ag::Var s_obj;  // 1 x 18, invalid when OBJ is disabled
  ag::Var s_ans;  // 1 x n_a
};

struct HeadTargets {
  // localization
  int loc_index = -1;  // single mode
  Matrix loc_binary;   // 1 x n_v, multiple mode
  // object class
  int obj_index = -1;
  Matrix obj_binary;   // 1 x 18
  // answers
  Matrix ans_binary;   // 1 x n_a
  bool has_answer = false;
  bool has_objects = false;
};

struct LocalizationTarget {
  int index = -1;
  std::vector<int> binary;
};

/// single: argmax IoU against the first annotated box, ties to the lowest index.
/// multiple: 1 for every proposal with IoU >= threshold against any annotated
/// box, or the single best proposal when none qualifies.
LocalizationTarget assign_localization_targets(const std::vector<Box3D>& proposals, const std::vector<Box3D>& gt,
                                               HeadMode mode, double threshold = 0.25);

/// Targets for one sample. `answer_indices` are vocabulary ids of the ground-truth answers.
HeadTargets build_head_targets(const HeadConfig& cfg, const std::vector<Box3D>& proposals,
                               const std::vector<Box3D>& gt_boxes, const std::vector<int>& gt_classes,
                               const std::vector<int>& answer_indices);

/// Descending order by score, ties by lower index, truncated to k.
std::vector<int> rank_answers(const Matrix& scores, int k);

struct LossParts {
  ag::Var total;
  ag::Var ans;
  ag::Var obj;
  ag::Var loc;
  DetectionLoss det;
};

class Heads {
 public:
  Heads(nn::ParameterStore& store, HeadConfig cfg, nn::Rng& rng, const std::string& prefix = "heads");

  const HeadConfig& config() const { return cfg_; }

  ag::Var localize(ag::Tape& tape, ag::Var v_dec) const;
  ag::Var classify_object(ag::Tape& tape, ag::Var fused) const;
  ag::Var answer(ag::Tape& tape, ag::Var fused) const;
  HeadOutputs forward(ag::Tape& tape, ag::Var v_dec, ag::Var fused) const;

  /// L = L_ans + [OBJ] L_obj + [LOC] L_loc + L_det.
  LossParts total_loss(const HeadOutputs& out, const HeadTargets& targets, const DetectionLoss& det) const;

 private:
  HeadConfig cfg_;
  nn::Mlp loc_;
  nn::Mlp obj_;
  nn::Linear ans_;
};

}  // namespace scanqa
