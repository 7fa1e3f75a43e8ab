#pragma once
// Independent reference implementations used by the unit and acceptance tests.
// Written directly from the metric / algorithm definitions, sharing no code with the library.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "scanqa/geometry.hpp"
#include "scanqa/nn.hpp"

namespace oracle {

using Sent = std::vector<std::string>;

inline std::string join(const Sent& s, std::size_t b, std::size_t n) {
  std::string k;
  for (std::size_t i = b; i < b + n; ++i) k += s[i] + "\x1f";
  return k;
}

inline std::unordered_map<std::string, int> grams(const Sent& s, std::size_t n) {
  std::unordered_map<std::string, int> m;
  if (s.size() < n) return m;
  for (std::size_t i = 0; i + n <= s.size(); ++i) m[join(s, i, n)]++;
  return m;
}

// corpus BLEU-n, plain product form
inline double bleu(const std::vector<Sent>& cands, const std::vector<std::vector<Sent>>& refs, int N) {
  double c_len = 0, r_len = 0;
  std::vector<double> num(N + 1, 0), den(N + 1, 0);
  for (std::size_t i = 0; i < cands.size(); ++i) {
    const Sent& c = cands[i];
    c_len += c.size();
    int best_r = -1;
    for (const Sent& r : refs[i]) {
      int rl = static_cast<int>(r.size()), cl = static_cast<int>(c.size());
      if (best_r < 0 || std::abs(rl - cl) < std::abs(best_r - cl) || (std::abs(rl - cl) == std::abs(best_r - cl) && rl < best_r))
        best_r = rl;
    }
    r_len += std::max(best_r, 0);
    for (int n = 1; n <= N; ++n) {
      auto cg = grams(c, n);
      for (auto& [g, cnt] : cg) {
        int mx = 0;
        for (const Sent& r : refs[i]) {
          auto rg = grams(r, n);
          if (rg.count(g)) mx = std::max(mx, rg[g]);
        }
        num[n] += std::min(cnt, mx);
        den[n] += cnt;
      }
    }
  }
  if (c_len == 0) return 0.0;
  double prod = 1.0;
  for (int n = 1; n <= N; ++n) {
    if (den[n] == 0) return 0.0;
    prod *= std::pow(num[n] / den[n], 1.0 / N);
  }
  double bp = c_len > r_len ? 1.0 : std::exp(1.0 - r_len / c_len);
  return bp * prod;
}

inline int lcs(const Sent& a, const Sent& b) {
  std::vector<std::vector<int>> t(a.size() + 1, std::vector<int>(b.size() + 1, 0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j)
      t[i + 1][j + 1] = a[i] == b[j] ? t[i][j] + 1 : std::max(t[i][j + 1], t[i + 1][j]);
  return t[a.size()][b.size()];
}

inline double rouge_l(const std::vector<Sent>& cands, const std::vector<std::vector<Sent>>& refs, double beta = 1.2) {
  if (cands.empty()) return 0;
  double total = 0;
  for (std::size_t i = 0; i < cands.size(); ++i) {
    double best = 0;
    for (const Sent& r : refs[i]) {
      int l = lcs(cands[i], r);
      if (!l) continue;
      double P = double(l) / cands[i].size(), R = double(l) / r.size();
      best = std::max(best, ((1 + beta * beta) * P * R) / (R + beta * beta * P));
    }
    total += best;
  }
  return total / cands.size();
}

// CIDEr-D, x10, token-length Gaussian penalty
inline double cider(const std::vector<Sent>& cands, const std::vector<std::vector<Sent>>& refs, double sigma = 6.0) {
  const double D = cands.size();
  if (D == 0) return 0;
  std::unordered_map<std::string, double> df;
  for (const auto& rs : refs) {
    std::set<std::string> seen;
    for (const Sent& r : rs)
      for (std::size_t n = 1; n <= 4; ++n)
        for (auto& [g, c] : grams(r, n)) seen.insert(std::to_string(n) + "|" + g);
    for (auto& g : seen) df[g] += 1;
  }
  auto tfidf = [&](const Sent& s, std::size_t n) {
    std::unordered_map<std::string, double> v;
    for (auto& [g, c] : grams(s, n)) {
      double d = df.count(std::to_string(n) + "|" + g) ? df[std::to_string(n) + "|" + g] : 0.0;
      v[g] = c * std::log(D / std::max(1.0, d));
    }
    return v;
  };
  auto norm = [](const std::unordered_map<std::string, double>& v) {
    double s = 0;
    for (auto& [g, x] : v) s += x * x;
    return std::sqrt(s);
  };
  double score = 0;
  for (std::size_t i = 0; i < cands.size(); ++i) {
    if (refs[i].empty()) continue;
    double acc = 0;
    for (const Sent& r : refs[i]) {
      double per_n = 0;
      for (std::size_t n = 1; n <= 4; ++n) {
        auto h = tfidf(cands[i], n), f = tfidf(r, n);
        double nh = norm(h), nf = norm(f);
        if (nh == 0 || nf == 0) continue;
        double dot = 0;
        for (auto& [g, x] : h)
          if (f.count(g)) dot += std::min(x, f[g]) * f[g];
        double dl = double(cands[i].size()) - double(r.size());
        per_n += dot / (nh * nf) * std::exp(-dl * dl / (2 * sigma * sigma));
      }
      acc += per_n / 4;
    }
    score += 10.0 * acc / refs[i].size();
  }
  return score / D;
}

// Stratified voxel Monte-Carlo: one jittered sample per cell of a res^3 grid over the union bounds.
inline double mc_iou(const scanqa::Box3D& a, const scanqa::Box3D& b, int res, std::mt19937_64& rng) {
  scanqa::Vec3 lo = a.min_corner().cwiseMin(b.min_corner());
  scanqa::Vec3 hi = a.max_corner().cwiseMax(b.max_corner());
  scanqa::Vec3 step = (hi - lo) / res;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto inside = [](const scanqa::Box3D& box, const scanqa::Vec3& p) {
    return (p.array() >= box.min_corner().array()).all() && (p.array() <= box.max_corner().array()).all();
  };
  long long both = 0, either = 0;
  for (int i = 0; i < res; ++i)
    for (int j = 0; j < res; ++j)
      for (int k = 0; k < res; ++k) {
        scanqa::Vec3 p(lo.x() + (i + u(rng)) * step.x(), lo.y() + (j + u(rng)) * step.y(), lo.z() + (k + u(rng)) * step.z());
        bool ia = inside(a, p), ib = inside(b, p);
        both += ia && ib;
        either += ia || ib;
      }
  return either ? double(both) / double(either) : 0.0;
}

// O(N m^2): distances to the chosen set recomputed from scratch each round.
inline std::vector<int> fps(const scanqa::Matrix& X, int m, int start) {
  std::vector<int> chosen{start};
  while (static_cast<int>(chosen.size()) < m) {
    int best = -1;
    double best_d = -1;
    for (int i = 0; i < X.rows(); ++i) {
      if (std::find(chosen.begin(), chosen.end(), i) != chosen.end()) continue;
      double d = 1e300;
      for (int c : chosen) d = std::min(d, (X.row(i) - X.row(c)).squaredNorm());
      if (d > best_d) {
        best_d = d;
        best = i;
      }
    }
    chosen.push_back(best);
  }
  return chosen;
}

inline std::vector<std::vector<int>> ball_query(const scanqa::Matrix& X, const scanqa::Matrix& C, double r, int k) {
  std::vector<std::vector<int>> out;
  for (int c = 0; c < C.rows(); ++c) {
    std::vector<int> in;
    for (int i = 0; i < X.rows(); ++i)
      if ((X.row(i) - C.row(c)).squaredNorm() <= r * r) in.push_back(i);
    if (in.empty()) {
      int arg = 0;
      for (int i = 1; i < X.rows(); ++i)
        if ((X.row(i) - C.row(c)).squaredNorm() < (X.row(arg) - C.row(c)).squaredNorm()) arg = i;
      in.push_back(arg);
    }
    if (static_cast<int>(in.size()) > k) in.resize(k);
    while (static_cast<int>(in.size()) < k) in.push_back(in.front());
    out.push_back(in);
  }
  return out;
}

// Central differences on a sampled subset of parameter entries. Returns
// ||analytic - numeric|| / max(||analytic|| + ||numeric||, 1e-12) over the subset.
struct GradCheck {
  double rel_error = 0;
  double analytic_norm = 0;
  int checked = 0;
};

inline GradCheck grad_check(scanqa::nn::ParameterStore& store, const std::function<double(bool)>& loss,
                            int per_param = 4, double h = 1e-5, std::uint64_t seed = 7,
                            const std::string& prefix = "") {
  store.zero_grad();
  loss(true);  // runs backward and flushes gradients
  std::mt19937_64 rng(seed);
  double diff2 = 0, a2 = 0, n2 = 0;
  int checked = 0;
  for (scanqa::Parameter* p : store.all()) {
    if (p->name.rfind(prefix, 0) != 0) continue;
    const auto size = p->value.size();
    std::vector<Eigen::Index> idx;
    if (size <= per_param) {
      for (Eigen::Index i = 0; i < size; ++i) idx.push_back(i);
    } else {
      std::uniform_int_distribution<Eigen::Index> pick(0, size - 1);
      for (int t = 0; t < per_param; ++t) idx.push_back(pick(rng));
    }
    for (Eigen::Index i : idx) {
      double& x = p->value.data()[i];
      const double orig = x;
      x = orig + h;
      const double up = loss(false);
      x = orig - h;
      const double down = loss(false);
      x = orig;
      const double num = (up - down) / (2 * h);
      const double ana = p->grad.size() ? p->grad.data()[i] : 0.0;
      diff2 += (ana - num) * (ana - num);
      a2 += ana * ana;
      n2 += num * num;
      ++checked;
    }
  }
  GradCheck r;
  r.analytic_norm = std::sqrt(a2);
  r.rel_error = std::sqrt(diff2) / std::max(std::sqrt(a2) + std::sqrt(n2), 1e-12);
  r.checked = checked;
  return r;
}

}  // namespace oracle
