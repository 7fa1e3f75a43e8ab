#pragma once

#include <string>
#include <vector>

#include "scanqa/data.hpp"
#include "scanqa/nn.hpp"

namespace scanqa {

struct SetAbstractionConfig {
  int npoint = 256;
  double radius = 0.3;
  int nsample = 16;
  std::vector<int> mlp = {64, 64, 128};
};

struct DetectorConfig {
  int input_channels = 135;
  // The last stage's npoint is the seed count M and its last width is the seed feature size F.
  std::vector<SetAbstractionConfig> stages = {{512, 0.2, 32, {64, 64, 128}}, {256, 0.4, 16, {128, 128, 128}}};
  int num_proposals = 256;
  double proposal_radius = 0.3;
  int proposal_nsample = 16;
  std::vector<int> proposal_mlp = {128, 128, 128};

  int seed_count() const { return stages.back().npoint; }
  int seed_dim() const { return stages.back().mlp.back(); }
  int proposal_dim() const { return proposal_mlp.back(); }
  void validate() const;
};

struct SeedSet {
  Matrix xyz;          // M x 3
  ag::Var features;    // M x F
  std::vector<int> point_index;  // source point per seed
};

struct Votes {
  ag::Var xyz;       // M x 3, seed xyz + predicted offset
  ag::Var features;  // M x F, seed features + predicted residual
};

struct ProposalSet {
  std::vector<Box3D> boxes;      // decoded values
  ag::Var features;              // n_v x F'
  ag::Var objectness_logits;     // n_v x 2, column 1 = object
  ag::Var class_logits;          // n_v x 18
  ag::Var centers;               // n_v x 3
  ag::Var log_sizes;             // n_v x 3
  Matrix cluster_xyz;            // n_v x 3, vote positions the proposals were grouped around
  std::vector<int> cluster_index;  // vote row per proposal

  int size() const { return static_cast<int>(boxes.size()); }
};

struct DetectorOutput {
  SeedSet seeds;
  Votes votes;
  ProposalSet proposals;
};

struct DetectionTargets {
  std::vector<Box3D> gt_boxes;
  std::vector<int> gt_classes;
  std::vector<int> seed_instance;  // gt index containing each seed, -1 for background

  static DetectionTargets build(const Matrix& seed_xyz, std::vector<Box3D> boxes, std::vector<int> classes);
};

struct DetectionLossConfig {
  double vote_weight = 1.0;
  double objectness_weight = 0.5;
  double box_weight = 1.0;
  double semcls_weight = 0.1;
  double positive_radius = 0.3;
  double negative_radius = 0.6;
};

struct DetectionLoss {
  ag::Var total;
  ag::Var vote;
  ag::Var objectness;
  ag::Var box;
  ag::Var semcls;
};

/// 1 = positive, 0 = negative, -1 = ignored, by distance from each center to
/// the nearest ground-truth center.
std::vector<int> assign_objectness(const Matrix& centers, const std::vector<Box3D>& gt, double positive_radius,
                                   double negative_radius);
/// Index of the ground-truth box with the nearest center, per proposal (-1 when gt is empty).
std::vector<int> nearest_gt(const Matrix& centers, const std::vector<Box3D>& gt);

DetectionLoss detection_loss(const Votes& votes, const ProposalSet& proposals, const DetectionTargets& targets,
                             const DetectionLossConfig& cfg = {});

/// Set-abstraction backbone, voting module and proposal module.
class Detector {
 public:
  Detector(nn::ParameterStore& store, DetectorConfig cfg, nn::Rng& rng, const std::string& prefix = "detector");

  const DetectorConfig& config() const { return cfg_; }

  /// `fps_start` anchors farthest point sampling in the first stage.
  SeedSet backbone(ag::Tape& tape, const PointCloud& pc, int fps_start = 0) const;
  Votes vote(ag::Tape& tape, const SeedSet& seeds) const;
  ProposalSet propose(ag::Tape& tape, const Votes& votes) const;
  DetectorOutput forward(ag::Tape& tape, const PointCloud& pc, int fps_start = 0) const;

  nn::Linear& offset_head() { return vote_offset_; }

 private:
  struct Stage {
    SetAbstractionConfig cfg;
    nn::Mlp mlp;
  };

  DetectorConfig cfg_;
  std::vector<Stage> stages_;
  nn::Mlp vote_mlp_;
  nn::Linear vote_offset_;
  nn::Linear vote_residual_;
  nn::Mlp proposal_mlp_;
  nn::Mlp proposal_head_;
};

}  // namespace scanqa
