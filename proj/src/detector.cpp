#include "scanqa/detector.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace scanqa {

namespace {

constexpr int kHeadObjectness = 0;
constexpr int kHeadCenter = 2;
constexpr int kHeadSize = 5;
constexpr int kHeadClass = 8;
constexpr int kHeadWidth = kHeadClass + kNumClasses;

// Rows of the shared MLP input for grouped points: [(p - center) / r, features(p)].
ag::Var grouped_input(ag::Tape& tape, const Matrix& xyz, const ag::Var* features, const Matrix& centers,
                      const std::vector<std::vector<int>>& groups, double radius) {
  const int k = static_cast<int>(groups.front().size());
  std::vector<int> flat;
  flat.reserve(groups.size() * static_cast<std::size_t>(k));
  Matrix rel(static_cast<Eigen::Index>(groups.size()) * k, 3);
  for (std::size_t g = 0; g < groups.size(); ++g) {
    for (int j = 0; j < k; ++j) {
      const int idx = groups[g][static_cast<std::size_t>(j)];
      flat.push_back(idx);
      rel.row(static_cast<Eigen::Index>(g) * k + j) = (xyz.row(idx) - centers.row(static_cast<Eigen::Index>(g))) / radius;
    }
  }
  ag::Var rel_var = tape.constant(std::move(rel));
  if (!features || features->cols() == 0) return rel_var;
  const std::vector<ag::Var> parts = {rel_var, ag::gather_rows(*features, flat)};
  return ag::concat_cols(parts);
}

Matrix take_rows(const Matrix& m, const std::vector<int>& idx) {
  Matrix out(static_cast<Eigen::Index>(idx.size()), m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(idx[i]);
  return out;
}

std::vector<int> with_width(int in, const std::vector<int>& widths) {
  std::vector<int> out = {in};
  out.insert(out.end(), widths.begin(), widths.end());
  return out;
}

}  // namespace

void DetectorConfig::validate() const {
  if (stages.empty()) throw std::invalid_argument("detector needs at least one set-abstraction stage");
  int prev = std::numeric_limits<int>::max();
  for (const auto& s : stages) {
    if (s.npoint < 1 || s.nsample < 1 || !(s.radius > 0) || s.mlp.empty()) {
      throw std::invalid_argument("invalid set-abstraction stage");
    }
    if (s.npoint > prev) throw std::invalid_argument("set-abstraction stages must not grow");
    prev = s.npoint;
  }
  if (num_proposals < 1 || num_proposals > seed_count()) {
    throw std::invalid_argument("proposal count must be between 1 and the seed count");
  }
  if (proposal_mlp.empty() || proposal_nsample < 1 || !(proposal_radius > 0)) {
    throw std::invalid_argument("invalid proposal module configuration");
  }
  if (input_channels < 0) throw std::invalid_argument("negative input channel count");
}

Detector::Detector(nn::ParameterStore& store, DetectorConfig cfg, nn::Rng& rng, const std::string& prefix)
    : cfg_(std::move(cfg)) {
  cfg_.validate();
  int in = cfg_.input_channels;
  for (std::size_t i = 0; i < cfg_.stages.size(); ++i) {
    const auto& s = cfg_.stages[i];
    stages_.push_back({s, nn::Mlp::create(store, prefix + ".sa" + std::to_string(i + 1), with_width(3 + in, s.mlp),
                                          nn::Activation::kRelu, true, rng)});
    in = s.mlp.back();
  }
  const int f = cfg_.seed_dim();
  vote_mlp_ = nn::Mlp::create(store, prefix + ".vote", {f, f, f}, nn::Activation::kRelu, true, rng);
  vote_offset_ = nn::Linear::create(store, prefix + ".vote_offset", f, 3, rng);
  vote_residual_ = nn::Linear::create(store, prefix + ".vote_residual", f, f, rng);
  proposal_mlp_ = nn::Mlp::create(store, prefix + ".proposal", with_width(3 + f, cfg_.proposal_mlp),
                                  nn::Activation::kRelu, true, rng);
  const int p = cfg_.proposal_dim();
  proposal_head_ = nn::Mlp::create(store, prefix + ".proposal_head", {p, p, kHeadWidth}, nn::Activation::kRelu,
                                   false, rng);
}

SeedSet Detector::backbone(ag::Tape& tape, const PointCloud& pc, int fps_start) const {
  if (pc.features.cols() != cfg_.input_channels) {
    throw std::invalid_argument("backbone: point features do not match the configured channel count");
  }
  if (pc.size() < cfg_.stages.front().npoint) {
    throw std::invalid_argument("backbone: fewer points than first-stage centroids");
  }
  Matrix xyz = pc.coords;
  ag::Var features = tape.constant(pc.features);
  std::vector<int> source(static_cast<std::size_t>(pc.size()));
  for (std::size_t i = 0; i < source.size(); ++i) source[i] = static_cast<int>(i);

  for (std::size_t s = 0; s < stages_.size(); ++s) {
    const auto& cfg = stages_[s].cfg;
    const auto centroids = farthest_point_sample(xyz, cfg.npoint, s == 0 ? fps_start : 0);
    Matrix centers = take_rows(xyz, centroids);
    const auto groups = ball_query(xyz, centers, cfg.radius, cfg.nsample);
    ag::Var input = grouped_input(tape, xyz, &features, centers, groups, cfg.radius);
    features = ag::group_max(stages_[s].mlp(tape, input), cfg.nsample);
    std::vector<int> next_source;
    for (int c : centroids) next_source.push_back(source[static_cast<std::size_t>(c)]);
    source = std::move(next_source);
    xyz = std::move(centers);
  }
  return {std::move(xyz), features, std::move(source)};
}

Votes Detector::vote(ag::Tape& tape, const SeedSet& seeds) const {
  ag::Var hidden = vote_mlp_(tape, seeds.features);
  ag::Var offset = vote_offset_(tape, hidden);
  ag::Var residual = vote_residual_(tape, hidden);
  return {ag::add(tape.constant(seeds.xyz), offset), ag::add(seeds.features, residual)};
}

ProposalSet Detector::propose(ag::Tape& tape, const Votes& votes) const {
  const Matrix& vote_xyz = votes.xyz.value();
  ProposalSet out;
  out.cluster_index = farthest_point_sample(vote_xyz, cfg_.num_proposals, 0);
  out.cluster_xyz = take_rows(vote_xyz, out.cluster_index);
  const auto groups = ball_query(vote_xyz, out.cluster_xyz, cfg_.proposal_radius, cfg_.proposal_nsample);
  ag::Var input = grouped_input(tape, vote_xyz, &votes.features, out.cluster_xyz, groups, cfg_.proposal_radius);
  out.features = ag::group_max(proposal_mlp_(tape, input), cfg_.proposal_nsample);

  ag::Var head = proposal_head_(tape, out.features);
  out.objectness_logits = ag::slice_cols(head, kHeadObjectness, 2);
  out.centers = ag::add(ag::gather_rows(votes.xyz, out.cluster_index), ag::slice_cols(head, kHeadCenter, 3));
  out.log_sizes = ag::slice_cols(head, kHeadSize, 3);
  out.class_logits = ag::slice_cols(head, kHeadClass, kNumClasses);

  const Matrix& c = out.centers.value();
  const Matrix& ls = out.log_sizes.value();
  for (Eigen::Index i = 0; i < c.rows(); ++i) {
    Box3D b;
    b.center = c.row(i).transpose();
    b.size = ls.row(i).transpose().cwiseMax(-10.0).cwiseMin(10.0).array().exp().matrix();
    out.boxes.push_back(b);
  }
  return out;
}

DetectorOutput Detector::forward(ag::Tape& tape, const PointCloud& pc, int fps_start) const {
  DetectorOutput out;
  out.seeds = backbone(tape, pc, fps_start);
  out.votes = vote(tape, out.seeds);
  out.proposals = propose(tape, out.votes);
  return out;
}

DetectionTargets DetectionTargets::build(const Matrix& seed_xyz, std::vector<Box3D> boxes, std::vector<int> classes) {
  if (boxes.size() != classes.size()) throw std::invalid_argument("detection targets: boxes and classes differ");
  DetectionTargets t;
  t.gt_boxes = std::move(boxes);
  t.gt_classes = std::move(classes);
  t.seed_instance.assign(static_cast<std::size_t>(seed_xyz.rows()), -1);
  for (Eigen::Index i = 0; i < seed_xyz.rows(); ++i) {
    const Vec3 p = seed_xyz.row(i).transpose();
    for (std::size_t g = 0; g < t.gt_boxes.size(); ++g) {
      if (t.gt_boxes[g].contains(p)) {
        t.seed_instance[static_cast<std::size_t>(i)] = static_cast<int>(g);
        break;
      }
    }
  }
  return t;
}

std::vector<int> nearest_gt(const Matrix& centers, const std::vector<Box3D>& gt) {
  std::vector<int> out(static_cast<std::size_t>(centers.rows()), -1);
  for (Eigen::Index i = 0; i < centers.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t g = 0; g < gt.size(); ++g) {
      const double d = (centers.row(i).transpose() - gt[g].center).squaredNorm();
      if (d < best) {
        best = d;
        out[static_cast<std::size_t>(i)] = static_cast<int>(g);
      }
    }
  }
  return out;
}

std::vector<int> assign_objectness(const Matrix& centers, const std::vector<Box3D>& gt, double positive_radius,
                                   double negative_radius) {
  const auto nearest = nearest_gt(centers, gt);
  std::vector<int> label(nearest.size(), 0);
  for (std::size_t i = 0; i < nearest.size(); ++i) {
    if (nearest[i] < 0) continue;
    const double d = (centers.row(static_cast<Eigen::Index>(i)).transpose() - gt[static_cast<std::size_t>(nearest[i])].center).norm();
    if (d < positive_radius) {
      label[i] = 1;
    } else if (d <= negative_radius) {
      label[i] = -1;
    }
  }
  return label;
}

DetectionLoss detection_loss(const Votes& votes, const ProposalSet& proposals, const DetectionTargets& targets,
                             const DetectionLossConfig& cfg) {
  ag::Tape& tape = *proposals.objectness_logits.tape();
  auto zero = [&] { return tape.constant(Matrix::Zero(1, 1)); };
  DetectionLoss loss;

  // Votes of seeds inside a ground-truth box regress to that box's center.
  {
    std::vector<int> rows;
    Matrix target(0, 3);
    std::vector<Eigen::RowVector3d> centers;
    for (std::size_t i = 0; i < targets.seed_instance.size(); ++i) {
      const int g = targets.seed_instance[i];
      if (g < 0) continue;
      rows.push_back(static_cast<int>(i));
      centers.push_back(targets.gt_boxes[static_cast<std::size_t>(g)].center.transpose());
    }
    if (rows.empty()) {
      loss.vote = zero();
    } else {
      target.resize(static_cast<Eigen::Index>(rows.size()), 3);
      for (std::size_t i = 0; i < centers.size(); ++i) target.row(static_cast<Eigen::Index>(i)) = centers[i];
      ag::Var diff = ag::sub(ag::gather_rows(votes.xyz, rows), tape.constant(std::move(target)));
      loss.vote = ag::scale(ag::smooth_l1_sum(diff), 1.0 / static_cast<double>(rows.size()));
    }
  }

  const auto labels = assign_objectness(proposals.cluster_xyz, targets.gt_boxes, cfg.positive_radius,
                                        cfg.negative_radius);
  {
    std::vector<int> cls(labels.size());
    std::vector<double> w(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
      cls[i] = labels[i] == 1 ? 1 : 0;
      w[i] = labels[i] < 0 ? 0.0 : 1.0;
    }
    loss.objectness = ag::softmax_cross_entropy(proposals.objectness_logits, cls, w);
  }

  const auto match = nearest_gt(proposals.cluster_xyz, targets.gt_boxes);
  std::vector<int> pos;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == 1) pos.push_back(static_cast<int>(i));
  }
  if (pos.empty()) {
    loss.box = zero();
    loss.semcls = zero();
  } else {
    const auto n = static_cast<Eigen::Index>(pos.size());
    Matrix center_t(n, 3), log_size_t(n, 3);
    std::vector<int> cls_t;
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto g = static_cast<std::size_t>(match[static_cast<std::size_t>(pos[static_cast<std::size_t>(i)])]);
      center_t.row(i) = targets.gt_boxes[g].center.transpose();
      log_size_t.row(i) = targets.gt_boxes[g].size.array().log().matrix().transpose();
      cls_t.push_back(targets.gt_classes[g]);
    }
    const double inv = 1.0 / static_cast<double>(n);
    ag::Var center_l = ag::smooth_l1_sum(ag::sub(ag::gather_rows(proposals.centers, pos), tape.constant(center_t)));
    ag::Var size_l = ag::smooth_l1_sum(ag::sub(ag::gather_rows(proposals.log_sizes, pos), tape.constant(log_size_t)));
    loss.box = ag::scale(ag::add(center_l, size_l), inv);
    loss.semcls = ag::softmax_cross_entropy(ag::gather_rows(proposals.class_logits, pos), cls_t);
  }

  loss.total = ag::add(ag::add(ag::scale(loss.vote, cfg.vote_weight), ag::scale(loss.objectness, cfg.objectness_weight)),
                       ag::add(ag::scale(loss.box, cfg.box_weight), ag::scale(loss.semcls, cfg.semcls_weight)));
  return loss;
}

}  // namespace scanqa
