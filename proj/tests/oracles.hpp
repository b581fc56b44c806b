#pragma once

// Independent reference computations used only by tests. Nothing here calls
// into the routines it is used to check.

#include "escm/escm.hpp"

#include <cmath>
#include <functional>
#include <queue>
#include <random>
#include <vector>

namespace escm::oracle {

inline Matrix random_matrix(Index rows, Index cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  Matrix m(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) m(i, j) = g(rng);
  return m;
}

inline Matrix unit_columns(Matrix m) {
  for (Index j = 0; j < m.cols(); ++j) m.col(j) /= m.col(j).norm();
  return m;
}

inline Matrix random_hollow(Index n, std::mt19937_64& rng, double scale = 0.3) {
  Matrix c = random_matrix(n, n, rng, scale);
  for (Index i = 0; i < n; ++i) c(i, i) = 0.0;
  return c;
}

/// 1/2 ||X - XC||_F^2 + lambda * sum |c_ij| by explicit loops.
inline double direct_loss(const Matrix& x, const Matrix& c, double lambda) {
  double fro = 0.0;
  for (Index i = 0; i < x.rows(); ++i) {
    for (Index j = 0; j < x.cols(); ++j) {
      double xc = 0.0;
      for (Index k = 0; k < x.cols(); ++k) xc += x(i, k) * c(k, j);
      fro += (x(i, j) - xc) * (x(i, j) - xc);
    }
  }
  double l1 = 0.0;
  for (Index i = 0; i < c.rows(); ++i)
    for (Index j = 0; j < c.cols(); ++j) l1 += std::abs(c(i, j));
  return 0.5 * fro + lambda * l1;
}

inline double sigmoid(double a) { return 1.0 / (1.0 + std::exp(-a)); }

struct NaiveLstm {
  // Gate order: forget, input, candidate, output; W[g] is h x (h + in).
  std::vector<std::vector<std::vector<double>>> w;
  std::vector<std::vector<double>> b;
  std::vector<std::vector<double>> w_fc;
  std::vector<double> b_fc;
};

inline NaiveLstm to_naive(const LstmModel& m) {
  NaiveLstm n;
  for (Gate g : kGates) {
    auto wg = m.w(g);
    std::vector<std::vector<double>> rows(static_cast<std::size_t>(wg.rows()), std::vector<double>(static_cast<std::size_t>(wg.cols())));
    for (Index i = 0; i < wg.rows(); ++i)
      for (Index j = 0; j < wg.cols(); ++j) rows[i][j] = wg(i, j);
    n.w.push_back(rows);
    std::vector<double> bg(static_cast<std::size_t>(m.hidden()));
    for (Index i = 0; i < m.hidden(); ++i) bg[i] = m.b(g)(i);
    n.b.push_back(bg);
  }
  n.w_fc.assign(static_cast<std::size_t>(m.output_size()), std::vector<double>(static_cast<std::size_t>(m.hidden())));
  for (Index i = 0; i < m.output_size(); ++i)
    for (Index j = 0; j < m.hidden(); ++j) n.w_fc[i][j] = m.w_fc()(i, j);
  n.b_fc.resize(static_cast<std::size_t>(m.output_size()));
  for (Index i = 0; i < m.output_size(); ++i) n.b_fc[i] = m.b_fc()(i);
  return n;
}

/// Scalar-loop LSTM step. Returns the projected output; updates h and c.
inline std::vector<double> naive_step(const NaiveLstm& m, const std::vector<double>& x, std::vector<double>& h,
                                      std::vector<double>& c) {
  const std::size_t hs = h.size();
  std::vector<double> z(h);
  z.insert(z.end(), x.begin(), x.end());
  std::vector<double> act[4];
  for (int g = 0; g < 4; ++g) {
    act[g].resize(hs);
    for (std::size_t i = 0; i < hs; ++i) {
      double a = m.b[g][i];
      for (std::size_t j = 0; j < z.size(); ++j) a += m.w[g][i][j] * z[j];
      act[g][i] = g == 2 ? std::tanh(a) : sigmoid(a);
    }
  }
  for (std::size_t i = 0; i < hs; ++i) {
    c[i] = act[0][i] * c[i] + act[1][i] * act[2][i];
    h[i] = act[3][i] * std::tanh(c[i]);
  }
  std::vector<double> out(m.b_fc);
  for (std::size_t i = 0; i < out.size(); ++i)
    for (std::size_t j = 0; j < hs; ++j) out[i] += m.w_fc[i][j] * h[j];
  return out;
}

/// Mean over the window of 1/2 ||X - XC||^2 + lambda |C|_1, with C built by
/// explicit diagonal insertion from the naive forward pass.
inline double naive_window_loss(const LstmModel& model, const SequenceWindow& w, double lambda) {
  const NaiveLstm nm = to_naive(model);
  std::vector<double> h(static_cast<std::size_t>(model.hidden()), 0.0), c(h);
  const Index n = model.points();
  double total = 0.0;
  for (int s = 0; s < w.length(); ++s) {
    std::vector<double> x(static_cast<std::size_t>(w.inputs.rows()));
    for (Index i = 0; i < w.inputs.rows(); ++i) x[i] = w.inputs(i, s);
    const auto raw = naive_step(nm, x, h, c);
    Matrix cm = Matrix::Zero(n, n);
    std::size_t k = 0;
    for (Index col = 0; col < n; ++col)
      for (Index row = 0; row < n; ++row)
        if (row != col) cm(row, col) = raw[k++];
    total += direct_loss(w.snapshot(s), cm, lambda);
  }
  return total / static_cast<double>(w.length());
}

/// Number of connected components and a component id per node, treating any
/// positive entry as an edge.
inline std::pair<int, Labels> connected_components(const Matrix& a) {
  const Index n = a.rows();
  Labels comp(static_cast<std::size_t>(n), 0);
  int count = 0;
  for (Index s = 0; s < n; ++s) {
    if (comp[s]) continue;
    ++count;
    std::queue<Index> q;
    q.push(s);
    comp[s] = count;
    while (!q.empty()) {
      const Index u = q.front();
      q.pop();
      for (Index v = 0; v < n; ++v) {
        if (!comp[v] && (a(u, v) > 0.0 || a(v, u) > 0.0)) {
          comp[v] = count;
          q.push(v);
        }
      }
    }
  }
  return {count, comp};
}

/// Clustering error by enumerating every bijection for k <= 3 clusters.
inline double brute_force_error(const Labels& pred, const Labels& truth, int k) {
  std::vector<int> perm(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) perm[i] = i + 1;
  std::size_t best = 0;
  do {
    std::size_t hit = 0;
    for (std::size_t i = 0; i < pred.size(); ++i)
      if (perm[pred[i] - 1] == truth[i]) ++hit;
    best = std::max(best, hit);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return 100.0 * (1.0 - static_cast<double>(best) / static_cast<double>(pred.size()));
}

}  // namespace escm::oracle
