#pragma once

#include <string>
#include <vector>

#include "scanqa/nn.hpp"

namespace scanqa {

struct FusionConfig {
  int d = 256;
  int layers = 2;
  int heads = 8;
  int ffn_mult = 4;
  double dropout = 0.1;
  int max_question_len = 64;

  void validate() const;
};

/// Padding mask over question tokens: true marks a padded position.
using TokenMask = std::vector<bool>;

/// Attention weights captured during a forward pass, one entry per layer and
/// per head. Used by tests and diagnostics.
struct AttentionTrace {
  std::vector<std::vector<Matrix>> encoder_self;
  std::vector<std::vector<Matrix>> decoder_self;
  std::vector<std::vector<Matrix>> decoder_cross;
  Matrix question_pool;   // n_q x 1 reduction weights
  Matrix proposal_pool;   // n_v x 1 reduction weights
};

struct FusionOutput {
  ag::Var q_enc;  // n_q x d
  ag::Var v_dec;  // n_v x d
  ag::Var fused;  // 1 x d
};

/// Question encoder stack, question-conditioned proposal decoder stack and the
/// attentional reduction of both streams into a single vector.
class Fusion {
 public:
  Fusion(nn::ParameterStore& store, FusionConfig cfg, int proposal_dim, nn::Rng& rng,
         const std::string& prefix = "fusion");

  const FusionConfig& config() const { return cfg_; }

  /// GELU(P W + b): proposal features (n_v x F) to V (n_v x d).
  ag::Var project_proposals(ag::Tape& tape, ag::Var proposal_features) const;
  ag::Var encode_language(ag::Tape& tape, ag::Var q_prime, const TokenMask& pad_mask,
                          AttentionTrace* trace = nullptr) const;
  ag::Var decode_objects(ag::Tape& tape, ag::Var v, ag::Var q_enc, const TokenMask& pad_mask,
                         AttentionTrace* trace = nullptr) const;
  /// f = LayerNorm(W_q q~ + W_v v~), where q~ and v~ are attention-pooled rows.
  ag::Var fuse(ag::Tape& tape, ag::Var q_enc, ag::Var v_dec, const TokenMask& pad_mask,
               AttentionTrace* trace = nullptr) const;

  FusionOutput forward(ag::Tape& tape, ag::Var q_prime, ag::Var proposal_features, const TokenMask& pad_mask,
                       AttentionTrace* trace = nullptr) const;

  /// Pooling of one stream alone; exposed for tests.
  ag::Var pool_question(ag::Tape& tape, ag::Var q_enc, const TokenMask& pad_mask) const;

 private:
  struct MultiHead {
    nn::Linear q, k, v, o;
  };
  struct EncoderBlock {
    nn::LayerNorm ln_attn, ln_ffn;
    MultiHead attn;
    nn::Mlp ffn;
  };
  struct DecoderBlock {
    nn::LayerNorm ln_self, ln_cross, ln_ffn;
    MultiHead self_attn, cross_attn;
    nn::Mlp ffn;
  };
  struct Pool {
    nn::Mlp score;
  };

  MultiHead make_mha(nn::ParameterStore& store, const std::string& name, nn::Rng& rng) const;
  ag::Var run_mha(ag::Tape& tape, const MultiHead& mha, ag::Var queries, ag::Var keys, const TokenMask& key_mask,
                  std::vector<Matrix>* weights) const;
  ag::Var pool(ag::Tape& tape, const Pool& p, ag::Var x, const TokenMask& mask, Matrix* weights) const;

  FusionConfig cfg_;
  nn::Linear proposal_proj_;
  Parameter* positions_;
  std::vector<EncoderBlock> encoder_;
  nn::LayerNorm encoder_norm_;
  std::vector<DecoderBlock> decoder_;
  nn::LayerNorm decoder_norm_;
  Pool question_pool_;
  Pool proposal_pool_;
  nn::Linear w_q_;
  nn::Linear w_v_;
  nn::LayerNorm fused_norm_;
};

}  // namespace scanqa
