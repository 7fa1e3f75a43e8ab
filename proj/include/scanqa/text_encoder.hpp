#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "scanqa/nn.hpp"

namespace scanqa {

inline constexpr int kWordDim = 300;
inline const std::string kUnkToken = "<unk>";

struct TokenSeq {
  std::vector<std::string> tokens;
  std::vector<int> ids;  // filled by EmbeddingTable::index

  int size() const { return static_cast<int>(tokens.size()); }
};

/// Lowercase, punctuation to spaces, split on whitespace. May be empty.
std::vector<std::string> split_words(std::string_view text);
/// split_words with "<unk>" standing in for an empty question.
TokenSeq tokenize(std::string_view question);

/// Frozen word vectors. Row 0 is reserved for out-of-vocabulary tokens and is
/// never read; OOV positions take the trainable vector owned by the encoder.
class EmbeddingTable {
 public:
  static constexpr int kOov = 0;

  EmbeddingTable();
  /// Seeded unit-variance rows; a token's row depends only on (seed, token).
  static EmbeddingTable random(const std::vector<std::string>& words, std::uint64_t seed);
  /// Text format: `token v1 ... v300` per line. When `keep` is non-empty only
  /// those tokens are retained.
  static EmbeddingTable load_text(const std::filesystem::path& file, const std::vector<std::string>& keep = {});
  static EmbeddingTable from_rows(std::vector<std::string> words, Matrix rows);

  int id(const std::string& token) const;
  void index(TokenSeq& seq) const;
  int size() const { return static_cast<int>(words_.size()); }
  const std::vector<std::string>& words() const { return words_; }
  /// |V| x 300 including the reserved row 0.
  const Matrix& matrix() const { return rows_; }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> lookup_;
  Matrix rows_;
};

/// Sorted distinct tokens of a set of questions.
std::vector<std::string> question_vocabulary(const std::vector<std::string>& questions);

/// Q: n_q x 300; OOV rows equal `oov` (1 x 300).
Matrix embed(const TokenSeq& seq, const EmbeddingTable& table, const Matrix& oov);

/// One-layer bidirectional LSTM (d/2 per direction) followed by affine + GELU to d.
class TextEncoder {
 public:
  TextEncoder(nn::ParameterStore& store, int d, nn::Rng& rng, const std::string& prefix = "text");

  int dim() const { return d_; }
  Parameter& oov() { return *oov_; }

  ag::Var embed(ag::Tape& tape, const TokenSeq& seq, const EmbeddingTable& table) const;
  /// Q (n x 300) -> Q' (n x d). Rows at or beyond `valid_len` are padding:
  /// they are skipped by the recurrence and come out as zero rows.
  ag::Var encode(ag::Tape& tape, ag::Var q, int valid_len = -1) const;

 private:
  struct Direction {
    Parameter* w_ih;
    Parameter* w_hh;
    Parameter* bias;
  };
  ag::Var run_direction(ag::Tape& tape, ag::Var gates_in, const Direction& dir, bool reverse) const;

  int d_;
  int hidden_;
  Direction fwd_{};
  Direction bwd_{};
  nn::Linear proj_;
  Parameter* oov_;
};

}  // namespace scanqa
