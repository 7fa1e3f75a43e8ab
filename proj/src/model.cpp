#include "scanqa/model.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace scanqa {

DetectorConfig ModelConfig::detector() const {
  DetectorConfig c;
  c.input_channels = feature_width();
  const int w = det_width;
  const int second = std::max(points / 8, num_proposals);
  const int first = std::max(points / 4, second);
  c.stages = {{first, 0.2, 32, {w / 2, w / 2, w}}, {second, 0.4, 16, {w, w, w}}};
  c.num_proposals = num_proposals;
  c.proposal_radius = 0.3;
  c.proposal_nsample = 16;
  c.proposal_mlp = {w, w, w};
  return c;
}

FusionConfig ModelConfig::fusion() const {
  FusionConfig f;
  f.d = d;
  f.layers = layers;
  f.heads = attn_heads;
  f.ffn_mult = ffn_mult;
  f.dropout = dropout;
  f.max_question_len = max_question_len;
  return f;
}

HeadConfig ModelConfig::heads(int num_answers) const {
  HeadConfig h;
  h.d = d;
  h.num_answers = num_answers;
  h.mode = mode;
  h.use_obj = use_obj;
  h.use_loc = use_loc;
  return h;
}

int ModelConfig::feature_width() const {
  int w = 0;
  for (Channel c : features) w += channel_width(c);
  return w;
}

void ModelConfig::validate() const {
  if (d < 2 || d % 2 != 0) throw std::invalid_argument("d must be a positive even number");
  if (attn_heads < 1 || d % attn_heads != 0) throw std::invalid_argument("d must be divisible by the attention heads");
  if (num_proposals < 1) throw std::invalid_argument("num_proposals must be positive");
  if (points < num_proposals) throw std::invalid_argument("points must be at least num_proposals");
  if (det_width < 2 || det_width % 2 != 0) throw std::invalid_argument("det_width must be a positive even number");
  if (features.empty()) throw std::invalid_argument("at least one feature channel is required");
  for (std::size_t i = 0; i < features.size(); ++i) {
    for (std::size_t j = i + 1; j < features.size(); ++j) {
      if (features[i] == features[j]) throw std::invalid_argument("duplicate feature channel");
    }
  }
  fusion().validate();
  detector().validate();
}

Model::Model(ModelConfig cfg, AnswerVocab vocab, EmbeddingTable table, std::uint64_t seed)
    : cfg_(std::move(cfg)), vocab_(std::move(vocab)), table_(std::move(table)) {
  cfg_.validate();
  if (vocab_.size() < 1) throw std::invalid_argument("model needs a non-empty answer vocabulary");
  nn::Rng rng(seed);
  text_ = std::make_unique<TextEncoder>(store_, cfg_.d, rng);
  detector_ = std::make_unique<Detector>(store_, cfg_.detector(), rng);
  fusion_ = std::make_unique<Fusion>(store_, cfg_.fusion(), cfg_.detector().proposal_dim(), rng);
  heads_ = std::make_unique<Heads>(store_, cfg_.heads(vocab_.size()), rng);
}

ModelOutput Model::forward(ag::Tape& tape, const PointCloud& pc, const std::string& question, int fps_start,
                           AttentionTrace* trace) const {
  ModelOutput out;
  out.tokens = tokenize(question);
  if (out.tokens.size() > cfg_.max_question_len) {
    out.tokens.tokens.resize(static_cast<std::size_t>(cfg_.max_question_len));
  }
  table_.index(out.tokens);
  ag::Var q = text_->encode(tape, text_->embed(tape, out.tokens, table_));
  out.det = detector_->forward(tape, pc.select(cfg_.features), fps_start);
  out.fusion = fusion_->forward(tape, q, out.det.proposals.features, {}, trace);
  out.heads = heads_->forward(tape, out.fusion.v_dec, out.fusion.fused);
  return out;
}

std::vector<int> answer_targets(const AnswerVocab& vocab, const QASample& sample) {
  std::vector<int> ids;
  for (const auto& a : sample.answers) {
    if (auto i = vocab.index(a)) ids.push_back(*i);
  }
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return ids;
}

LossParts Model::loss(ag::Tape& tape, const ModelOutput& out, const QASample& sample,
                      const std::vector<Box3D>& scene_boxes, const std::vector<int>& scene_classes,
                      const std::vector<Box3D>& sample_boxes) const {
  (void)tape;
  const DetectionTargets det_t = DetectionTargets::build(out.det.seeds.xyz, scene_boxes, scene_classes);
  const DetectionLoss det = detection_loss(out.det.votes, out.det.proposals, det_t);
  const HeadTargets t = build_head_targets(heads_->config(), out.det.proposals.boxes, sample_boxes,
                                           sample.object_classes, answer_targets(vocab_, sample));
  return heads_->total_loss(out.heads, t, det);
}

Matrix Model::grounding_scores(const ModelOutput& out) const {
  if (cfg_.use_loc) return out.heads.s_loc.value();
  const Matrix& obj = out.det.proposals.objectness_logits.value();
  return (obj.col(1) - obj.col(0)).transpose();
}

Prediction Model::predict(const ModelOutput& out, const std::string& question_id, int top_k) const {
  Prediction p;
  p.question_id = question_id;
  for (int i : rank_answers(out.heads.s_ans.value(), top_k)) p.answer_ranked.push_back(vocab_.answer(i));
  const auto order = rank_answers(grounding_scores(out), 10);
  const auto& boxes = out.det.proposals.boxes;
  p.box = boxes[static_cast<std::size_t>(order.front())];
  for (int i : order) p.boxes_top10.push_back(boxes[static_cast<std::size_t>(i)]);
  return p;
}

}  // namespace scanqa
