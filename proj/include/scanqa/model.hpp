#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "scanqa/data.hpp"
#include "scanqa/detector.hpp"
#include "scanqa/fusion.hpp"
#include "scanqa/heads.hpp"
#include "scanqa/text_encoder.hpp"

namespace scanqa {

struct ModelConfig {
  int d = 256;
  int layers = 2;
  int attn_heads = 8;
  int ffn_mult = 4;
  double dropout = 0.1;
  int max_question_len = 64;
  int num_proposals = 256;
  // Detector sizing: first-stage sample count is points/4, second stage half of that
  // (never below num_proposals); `det_width` is the seed feature width.
  int points = 2048;
  int det_width = 128;
  std::vector<Channel> features = full_manifest();
  HeadMode mode = HeadMode::kSingle;
  bool use_obj = true;
  bool use_loc = true;

  DetectorConfig detector() const;
  FusionConfig fusion() const;
  HeadConfig heads(int num_answers) const;
  int feature_width() const;
  void validate() const;
};

struct ModelOutput {
  TokenSeq tokens;
  DetectorOutput det;
  FusionOutput fusion;
  HeadOutputs heads;
};

class Model {
 public:
  Model(ModelConfig cfg, AnswerVocab vocab, EmbeddingTable table, std::uint64_t seed);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return cfg_; }
  const AnswerVocab& vocab() const { return vocab_; }
  const EmbeddingTable& table() const { return table_; }
  nn::ParameterStore& store() { return store_; }
  const nn::ParameterStore& store() const { return store_; }
  const Detector& detector() const { return *detector_; }
  const Fusion& fusion() const { return *fusion_; }
  const Heads& heads() const { return *heads_; }
  const TextEncoder& text() const { return *text_; }

  /// `pc` carries the full channel manifest; the configured channels are selected here.
  ModelOutput forward(ag::Tape& tape, const PointCloud& pc, const std::string& question, int fps_start = 0,
                      AttentionTrace* trace = nullptr) const;

  /// Loss for one sample. `scene_boxes/classes` supervise the detector,
  /// the sample's own annotations supervise the heads.
  LossParts loss(ag::Tape& tape, const ModelOutput& out, const QASample& sample, const std::vector<Box3D>& scene_boxes,
                 const std::vector<int>& scene_classes, const std::vector<Box3D>& sample_boxes) const;

  /// Per-proposal grounding score: localization logit with LOC on, objectness otherwise.
  Matrix grounding_scores(const ModelOutput& out) const;
  Prediction predict(const ModelOutput& out, const std::string& question_id, int top_k = 10) const;

 private:
  ModelConfig cfg_;
  AnswerVocab vocab_;
  EmbeddingTable table_;
  nn::ParameterStore store_;
  std::unique_ptr<TextEncoder> text_;
  std::unique_ptr<Detector> detector_;
  std::unique_ptr<Fusion> fusion_;
  std::unique_ptr<Heads> heads_;
};

/// Ground-truth answer ids present in the vocabulary.
std::vector<int> answer_targets(const AnswerVocab& vocab, const QASample& sample);

}  // namespace scanqa
