#include "scanqa/fusion.hpp"

#include <stdexcept>

namespace scanqa {

void FusionConfig::validate() const {
  if (d < 1 || heads < 1 || d % heads != 0) throw std::invalid_argument("fusion: d must be divisible by heads");
  if (layers < 1) throw std::invalid_argument("fusion: need at least one layer");
  if (ffn_mult < 1) throw std::invalid_argument("fusion: ffn_mult must be >= 1");
  if (dropout < 0.0 || dropout >= 1.0) throw std::invalid_argument("fusion: dropout must be in [0, 1)");
  if (max_question_len < 1) throw std::invalid_argument("fusion: max_question_len must be >= 1");
}

Fusion::MultiHead Fusion::make_mha(nn::ParameterStore& store, const std::string& name, nn::Rng& rng) const {
  return {nn::Linear::create(store, name + ".q", cfg_.d, cfg_.d, rng),
          nn::Linear::create(store, name + ".k", cfg_.d, cfg_.d, rng),
          nn::Linear::create(store, name + ".v", cfg_.d, cfg_.d, rng),
          nn::Linear::create(store, name + ".o", cfg_.d, cfg_.d, rng)};
}

Fusion::Fusion(nn::ParameterStore& store, FusionConfig cfg, int proposal_dim, nn::Rng& rng, const std::string& prefix)
    : cfg_(cfg) {
  cfg_.validate();
  const int d = cfg_.d;
  const std::vector<int> ffn_widths = {d, d * cfg_.ffn_mult, d};
  proposal_proj_ = nn::Linear::create(store, prefix + ".proposal_proj", proposal_dim, d, rng);
  positions_ = &store.create(prefix + ".question_positions", cfg_.max_question_len, d);
  for (int l = 0; l < cfg_.layers; ++l) {
    const std::string name = prefix + ".encoder." + std::to_string(l);
    encoder_.push_back({nn::LayerNorm::create(store, name + ".ln_attn", d),
                        nn::LayerNorm::create(store, name + ".ln_ffn", d), make_mha(store, name + ".attn", rng),
                        nn::Mlp::create(store, name + ".ffn", ffn_widths, nn::Activation::kGelu, false, rng)});
  }
  encoder_norm_ = nn::LayerNorm::create(store, prefix + ".encoder.ln_out", d);
  for (int l = 0; l < cfg_.layers; ++l) {
    const std::string name = prefix + ".decoder." + std::to_string(l);
    decoder_.push_back({nn::LayerNorm::create(store, name + ".ln_self", d),
                        nn::LayerNorm::create(store, name + ".ln_cross", d),
                        nn::LayerNorm::create(store, name + ".ln_ffn", d), make_mha(store, name + ".self_attn", rng),
                        make_mha(store, name + ".cross_attn", rng),
                        nn::Mlp::create(store, name + ".ffn", ffn_widths, nn::Activation::kGelu, false, rng)});
  }
  decoder_norm_ = nn::LayerNorm::create(store, prefix + ".decoder.ln_out", d);
  question_pool_ = {nn::Mlp::create(store, prefix + ".pool_q", {d, d, 1}, nn::Activation::kGelu, false, rng)};
  proposal_pool_ = {nn::Mlp::create(store, prefix + ".pool_v", {d, d, 1}, nn::Activation::kGelu, false, rng)};
  w_q_ = nn::Linear::create(store, prefix + ".w_q", d, d, rng);
  w_v_ = nn::Linear::create(store, prefix + ".w_v", d, d, rng);
  fused_norm_ = nn::LayerNorm::create(store, prefix + ".ln_fused", d);
}

ag::Var Fusion::project_proposals(ag::Tape& tape, ag::Var proposal_features) const {
  return ag::gelu(proposal_proj_(tape, proposal_features));
}

ag::Var Fusion::run_mha(ag::Tape& tape, const MultiHead& mha, ag::Var queries, ag::Var keys,
                        const TokenMask& key_mask, std::vector<Matrix>* weights) const {
  ag::Var out = ag::attention(mha.q(tape, queries), mha.k(tape, keys), mha.v(tape, keys), cfg_.heads, key_mask, weights);
  return mha.o(tape, out);
}

ag::Var Fusion::encode_language(ag::Tape& tape, ag::Var q_prime, const TokenMask& pad_mask,
                                AttentionTrace* trace) const {
  const auto n = q_prime.rows();
  if (q_prime.cols() != cfg_.d) throw std::invalid_argument("encode_language: width must equal d");
  if (n > cfg_.max_question_len) throw std::invalid_argument("encode_language: question longer than max_question_len");
  if (!pad_mask.empty() && static_cast<Eigen::Index>(pad_mask.size()) != n) {
    throw std::invalid_argument("encode_language: mask length differs from question length");
  }
  ag::Var x = ag::add(q_prime, ag::slice_rows(tape.param(*positions_), 0, n));
  for (const EncoderBlock& b : encoder_) {
    std::vector<Matrix> w;
    ag::Var h = b.ln_attn(tape, x);
    x = ag::add(x, ag::dropout(run_mha(tape, b.attn, h, h, pad_mask, trace ? &w : nullptr), cfg_.dropout));
    x = ag::add(x, ag::dropout(b.ffn(tape, b.ln_ffn(tape, x)), cfg_.dropout));
    if (trace) trace->encoder_self.push_back(std::move(w));
  }
  return encoder_norm_(tape, x);
}

ag::Var Fusion::decode_objects(ag::Tape& tape, ag::Var v, ag::Var q_enc, const TokenMask& pad_mask,
                               AttentionTrace* trace) const {
  if (v.cols() != cfg_.d || q_enc.cols() != cfg_.d) throw std::invalid_argument("decode_objects: width must equal d");
  ag::Var x = v;
  for (const DecoderBlock& b : decoder_) {
    std::vector<Matrix> ws, wc;
    ag::Var h = b.ln_self(tape, x);
    x = ag::add(x, ag::dropout(run_mha(tape, b.self_attn, h, h, {}, trace ? &ws : nullptr), cfg_.dropout));
    x = ag::add(x, ag::dropout(run_mha(tape, b.cross_attn, b.ln_cross(tape, x), q_enc, pad_mask, trace ? &wc : nullptr),
                               cfg_.dropout));
    x = ag::add(x, ag::dropout(b.ffn(tape, b.ln_ffn(tape, x)), cfg_.dropout));
    if (trace) {
      trace->decoder_self.push_back(std::move(ws));
      trace->decoder_cross.push_back(std::move(wc));
    }
  }
  return decoder_norm_(tape, x);
}

ag::Var Fusion::pool(ag::Tape& tape, const Pool& p, ag::Var x, const TokenMask& mask, Matrix* weights) const {
  ag::Var scores = ag::transpose(p.score(tape, x));  // 1 x n
  ag::Var alpha = ag::softmax_rows(scores, mask);
  if (weights) *weights = alpha.value().transpose();
  return ag::matmul(alpha, x);
}

ag::Var Fusion::pool_question(ag::Tape& tape, ag::Var q_enc, const TokenMask& pad_mask) const {
  return pool(tape, question_pool_, q_enc, pad_mask, nullptr);
}

ag::Var Fusion::fuse(ag::Tape& tape, ag::Var q_enc, ag::Var v_dec, const TokenMask& pad_mask,
                     AttentionTrace* trace) const {
  ag::Var q = pool(tape, question_pool_, q_enc, pad_mask, trace ? &trace->question_pool : nullptr);
  ag::Var v = pool(tape, proposal_pool_, v_dec, {}, trace ? &trace->proposal_pool : nullptr);
  return fused_norm_(tape, ag::add(w_q_(tape, q), w_v_(tape, v)));
}

FusionOutput Fusion::forward(ag::Tape& tape, ag::Var q_prime, ag::Var proposal_features, const TokenMask& pad_mask,
                             AttentionTrace* trace) const {
  FusionOutput out;
  out.q_enc = encode_language(tape, q_prime, pad_mask, trace);
  out.v_dec = decode_objects(tape, project_proposals(tape, proposal_features), out.q_enc, pad_mask, trace);
  out.fused = fuse(tape, out.q_enc, out.v_dec, pad_mask, trace);
  return out;
}

}  // namespace scanqa
