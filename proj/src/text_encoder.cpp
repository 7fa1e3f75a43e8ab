#include "scanqa/text_encoder.hpp"

#include <cctype>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

namespace scanqa {

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::string cur;
  for (unsigned char c : text) {
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      words.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

TokenSeq tokenize(std::string_view question) {
  TokenSeq seq;
  seq.tokens = split_words(question);
  if (seq.tokens.empty()) seq.tokens.push_back(kUnkToken);
  return seq;
}

EmbeddingTable::EmbeddingTable() : words_{kUnkToken}, rows_(Matrix::Zero(1, kWordDim)) {
  lookup_[kUnkToken] = kOov;
}

EmbeddingTable EmbeddingTable::from_rows(std::vector<std::string> words, Matrix rows) {
  if (rows.cols() != kWordDim || rows.rows() != static_cast<Eigen::Index>(words.size())) {
    throw std::invalid_argument("embedding rows must be |V| x 300");
  }
  EmbeddingTable t;
  t.rows_.resize(static_cast<Eigen::Index>(words.size()) + 1, kWordDim);
  t.rows_.row(0).setZero();
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (words[i] == kUnkToken || t.lookup_.contains(words[i])) {
      throw std::invalid_argument("duplicate or reserved embedding token: " + words[i]);
    }
    t.lookup_[words[i]] = static_cast<int>(t.words_.size());
    t.words_.push_back(words[i]);
    t.rows_.row(static_cast<Eigen::Index>(i) + 1) = rows.row(static_cast<Eigen::Index>(i));
  }
  return t;
}

EmbeddingTable EmbeddingTable::random(const std::vector<std::string>& words, std::uint64_t seed) {
  Matrix rows(static_cast<Eigen::Index>(words.size()), kWordDim);
  for (std::size_t i = 0; i < words.size(); ++i) {
    // FNV-1a keeps the row independent of vocabulary order and of std::hash.
    std::uint64_t h = 1469598103934665603ULL ^ seed;
    for (unsigned char c : words[i]) h = (h ^ c) * 1099511628211ULL;
    std::mt19937_64 rng(h);
    std::normal_distribution<double> g(0.0, 1.0);
    for (int k = 0; k < kWordDim; ++k) rows(static_cast<Eigen::Index>(i), k) = g(rng);
  }
  return from_rows(words, std::move(rows));
}

EmbeddingTable EmbeddingTable::load_text(const std::filesystem::path& file, const std::vector<std::string>& keep) {
  std::ifstream in(file);
  if (!in) throw std::runtime_error("cannot open embedding table " + file.string());
  const std::set<std::string> wanted(keep.begin(), keep.end());
  std::vector<std::string> words;
  std::vector<std::vector<double>> values;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string token;
    if (!(ls >> token)) continue;
    if (!wanted.empty() && !wanted.contains(token)) continue;
    std::vector<double> v;
    double x;
    while (ls >> x) v.push_back(x);
    if (v.size() != static_cast<std::size_t>(kWordDim)) {
      throw std::runtime_error(file.string() + ":" + std::to_string(lineno) + ": expected 300 values");
    }
    words.push_back(token);
    values.push_back(std::move(v));
  }
  Matrix rows(static_cast<Eigen::Index>(words.size()), kWordDim);
  for (std::size_t i = 0; i < values.size(); ++i) {
    for (int k = 0; k < kWordDim; ++k) rows(static_cast<Eigen::Index>(i), k) = values[i][static_cast<std::size_t>(k)];
  }
  return from_rows(std::move(words), std::move(rows));
}

int EmbeddingTable::id(const std::string& token) const {
  auto it = lookup_.find(token);
  return it == lookup_.end() ? kOov : it->second;
}

void EmbeddingTable::index(TokenSeq& seq) const {
  seq.ids.clear();
  for (const std::string& t : seq.tokens) seq.ids.push_back(id(t));
}

std::vector<std::string> question_vocabulary(const std::vector<std::string>& questions) {
  std::set<std::string> words;
  for (const std::string& q : questions) {
    for (auto& t : tokenize(q).tokens) {
      if (t != kUnkToken) words.insert(t);
    }
  }
  return {words.begin(), words.end()};
}

Matrix embed(const TokenSeq& seq, const EmbeddingTable& table, const Matrix& oov) {
  Matrix q(seq.size(), kWordDim);
  for (int i = 0; i < seq.size(); ++i) {
    const int id = seq.ids.empty() ? table.id(seq.tokens[static_cast<std::size_t>(i)]) : seq.ids[static_cast<std::size_t>(i)];
    if (id == EmbeddingTable::kOov) {
      q.row(i) = oov.row(0);
    } else {
      q.row(i) = table.matrix().row(id);
    }
  }
  return q;
}

TextEncoder::TextEncoder(nn::ParameterStore& store, int d, nn::Rng& rng, const std::string& prefix) : d_(d) {
  if (d <= 0 || d % 2 != 0) throw std::invalid_argument("text encoder: d must be positive and even");
  hidden_ = d / 2;
  auto make_dir = [&](const std::string& name) {
    Direction dir;
    dir.w_ih = &store.create(prefix + "." + name + ".w_ih", kWordDim, 4 * hidden_);
    dir.w_hh = &store.create(prefix + "." + name + ".w_hh", hidden_, 4 * hidden_);
    dir.bias = &store.create(prefix + "." + name + ".bias", 1, 4 * hidden_);
    nn::init_fan_in(*dir.w_ih, hidden_, rng);
    nn::init_orthogonal(*dir.w_hh, rng);
    nn::init_fan_in(*dir.bias, hidden_, rng);
    return dir;
  };
  fwd_ = make_dir("lstm_fwd");
  bwd_ = make_dir("lstm_bwd");
  proj_ = nn::Linear::create(store, prefix + ".proj", d, d, rng);
  oov_ = &store.create(prefix + ".oov", 1, kWordDim);
  std::normal_distribution<double> g(0.0, 1.0);
  for (Eigen::Index i = 0; i < oov_->value.size(); ++i) oov_->value.data()[i] = g(rng);
}

ag::Var TextEncoder::embed(ag::Tape& tape, const TokenSeq& seq, const EmbeddingTable& table) const {
  const Matrix zero_oov = Matrix::Zero(1, kWordDim);
  Matrix base = scanqa::embed(seq, table, zero_oov);
  Matrix mask = Matrix::Zero(seq.size(), kWordDim);
  bool any_oov = false;
  for (int i = 0; i < seq.size(); ++i) {
    const int id = seq.ids.empty() ? table.id(seq.tokens[static_cast<std::size_t>(i)]) : seq.ids[static_cast<std::size_t>(i)];
    if (id == EmbeddingTable::kOov) {
      mask.row(i).setOnes();
      any_oov = true;
    }
  }
  ag::Var q = tape.constant(std::move(base));
  if (!any_oov) return q;
  const std::vector<int> zeros(static_cast<std::size_t>(seq.size()), 0);
  ag::Var oov_rows = ag::gather_rows(tape.param(*oov_), zeros);
  return ag::add(q, ag::mul(tape.constant(std::move(mask)), oov_rows));
}

ag::Var TextEncoder::run_direction(ag::Tape& tape, ag::Var gates_in, const Direction& dir, bool reverse) const {
  const int n = static_cast<int>(gates_in.rows());
  const int h = hidden_;
  ag::Var w_hh = tape.param(*dir.w_hh);
  ag::Var hs = tape.constant(Matrix::Zero(1, h));
  ag::Var cs = tape.constant(Matrix::Zero(1, h));
  std::vector<ag::Var> outputs(static_cast<std::size_t>(n));
  for (int step = 0; step < n; ++step) {
    const int t = reverse ? n - 1 - step : step;
    ag::Var gates = ag::add(ag::slice_rows(gates_in, t, 1), ag::matmul(hs, w_hh));
    ag::Var in_gate = ag::sigmoid(ag::slice_cols(gates, 0, h));
    ag::Var forget = ag::sigmoid(ag::slice_cols(gates, h, h));
    ag::Var cell_in = ag::tanh(ag::slice_cols(gates, 2 * h, h));
    ag::Var out_gate = ag::sigmoid(ag::slice_cols(gates, 3 * h, h));
    cs = ag::add(ag::mul(forget, cs), ag::mul(in_gate, cell_in));
    hs = ag::mul(out_gate, ag::tanh(cs));
    outputs[static_cast<std::size_t>(t)] = hs;
  }
  return ag::concat_rows(outputs);
}

ag::Var TextEncoder::encode(ag::Tape& tape, ag::Var q, int valid_len) const {
  if (q.cols() != kWordDim) throw std::invalid_argument("text encoder expects n x 300 input");
  const int n = static_cast<int>(q.rows());
  if (valid_len < 0) valid_len = n;
  if (valid_len < 1 || valid_len > n) throw std::invalid_argument("text encoder: bad valid length");

  ag::Var x = valid_len == n ? q : ag::slice_rows(q, 0, valid_len);
  ag::Var gates_f = ag::linear(x, tape.param(*fwd_.w_ih), tape.param(*fwd_.bias));
  ag::Var gates_b = ag::linear(x, tape.param(*bwd_.w_ih), tape.param(*bwd_.bias));
  const std::vector<ag::Var> both = {run_direction(tape, gates_f, fwd_, false),
                                     run_direction(tape, gates_b, bwd_, true)};
  ag::Var out = ag::gelu(proj_(tape, ag::concat_cols(both)));
  if (valid_len == n) return out;
  const std::vector<ag::Var> padded = {out, tape.constant(Matrix::Zero(n - valid_len, d_))};
  return ag::concat_rows(padded);
}

}  // namespace scanqa
