#pragma once

#include "escm/common.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace escm {

/// Zero-diagonal self-expression coefficients for one time step.
/// Constructed only by pad_diagonal (recurrent model) or the baseline
/// learners, all of which zero the diagonal.
class SelfExpression {
 public:
  SelfExpression() = default;

  static SelfExpression from_matrix(Matrix c, int t = 1) {
    detail::require(c.rows() == c.cols(), Errc::shape,
                    "coefficient matrix must be square, got " + detail::shape_str(c.rows(), c.cols()));
    c.diagonal().setZero();
    SelfExpression out;
    out.c_ = std::move(c);
    out.t_ = t;
    return out;
  }

  const Matrix& matrix() const { return c_; }
  Index points() const { return c_.rows(); }
  int t() const { return t_; }
  void set_t(int t) { t_ = t; }

 private:
  Matrix c_;
  int t_ = 1;
};

struct ClusterLabels {
  Labels labels;  // 1-based
  int k = 0;
};

/// A = |C| + |C|^T.
inline Matrix affinity(const SelfExpression& c) {
  const Matrix abs = c.matrix().cwiseAbs();
  Matrix a = abs + abs.transpose();
  a.diagonal().setZero();
  return a;
}

/// I - D^{-1/2} A D^{-1/2}; isolated nodes get D^{-1/2} = 0.
inline Matrix normalized_laplacian(const Matrix& a) {
  const Index n = a.rows();
  Vector inv_sqrt(n);
  for (Index i = 0; i < n; ++i) {
    const double d = a.row(i).sum();
    inv_sqrt(i) = d > 0.0 ? 1.0 / std::sqrt(d) : 0.0;
  }
  Matrix l = -(inv_sqrt.asDiagonal() * a * inv_sqrt.asDiagonal());
  l.diagonal().array() += 1.0;
  // Exact symmetry regardless of rounding in the diagonal scaling.
  return 0.5 * (l + l.transpose());
}

struct KMeansResult {
  ClusterLabels labels;
  Matrix centroids;  // k x dim
  double wcss = 0.0;
};

struct KMeansOptions {
  int restarts = 10;
  int max_iters = 300;
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline Matrix kmeanspp_init(const Matrix& pts, int k, std::mt19937_64& rng) {
  const Index n = pts.rows();
  Matrix centers(k, pts.cols());
  std::vector<bool> chosen(static_cast<std::size_t>(n), false);
  Index first = std::uniform_int_distribution<Index>(0, n - 1)(rng);
  centers.row(0) = pts.row(first);
  chosen[static_cast<std::size_t>(first)] = true;
  Vector d2 = (pts.rowwise() - centers.row(0)).rowwise().squaredNorm();
  for (int c = 1; c < k; ++c) {
    const double total = d2.sum();
    Index pick = -1;
    if (total > 0.0) {
      double u = std::uniform_real_distribution<double>(0.0, total)(rng);
      for (Index i = 0; i < n; ++i) {
        if (d2(i) <= 0.0) continue;
        pick = i;
        u -= d2(i);
        if (u < 0.0) break;
      }
    } else {
      for (Index i = 0; i < n && pick < 0; ++i)
        if (!chosen[static_cast<std::size_t>(i)]) pick = i;
      if (pick < 0) pick = 0;
    }
    centers.row(c) = pts.row(pick);
    chosen[static_cast<std::size_t>(pick)] = true;
    d2 = d2.cwiseMin((pts.rowwise() - centers.row(c)).rowwise().squaredNorm());
  }
  return centers;
}

inline KMeansResult lloyd(const Matrix& pts, Matrix centers, int max_iters) {
  const Index n = pts.rows();
  const int k = static_cast<int>(centers.rows());
  std::vector<int> assign(static_cast<std::size_t>(n), -1);
  Vector dist(n);
  for (int iter = 0; iter < max_iters; ++iter) {
    std::vector<int> next(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) {
      int best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (int c = 0; c < k; ++c) {
        const double d = (pts.row(i) - centers.row(c)).squaredNorm();
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      next[static_cast<std::size_t>(i)] = best;
      dist(i) = best_d;
    }
    // Empty clusters take the farthest point not already alone in its cluster.
    std::vector<int> sizes(static_cast<std::size_t>(k), 0);
    for (int a : next) ++sizes[static_cast<std::size_t>(a)];
    for (int c = 0; c < k; ++c) {
      if (sizes[static_cast<std::size_t>(c)] > 0) continue;
      Index far = -1;
      for (Index i = 0; i < n; ++i) {
        if (sizes[static_cast<std::size_t>(next[static_cast<std::size_t>(i)])] <= 1) continue;
        if (far < 0 || dist(i) > dist(far)) far = i;
      }
      if (far < 0) break;
      --sizes[static_cast<std::size_t>(next[static_cast<std::size_t>(far)])];
      next[static_cast<std::size_t>(far)] = c;
      ++sizes[static_cast<std::size_t>(c)];
      dist(far) = 0.0;
    }
    const bool converged = next == assign;
    assign = std::move(next);
    centers.setZero();
    for (Index i = 0; i < n; ++i) centers.row(assign[static_cast<std::size_t>(i)]) += pts.row(i);
    for (int c = 0; c < k; ++c)
      if (sizes[static_cast<std::size_t>(c)] > 0) centers.row(c) /= static_cast<double>(sizes[static_cast<std::size_t>(c)]);
    if (converged) break;
  }
  KMeansResult out;
  out.labels.k = k;
  out.labels.labels.resize(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    const int a = assign[static_cast<std::size_t>(i)];
    out.labels.labels[static_cast<std::size_t>(i)] = a + 1;
    out.wcss += (pts.row(i) - centers.row(a)).squaredNorm();
  }
  out.centroids = std::move(centers);
  return out;
}

}  // namespace detail

/// Lloyd iterations from k-means++ seeds; the lowest-WCSS restart wins,
/// ties going to the earlier restart.
inline KMeansResult kmeans_detailed(const Matrix& points, int k, std::uint64_t seed,
                                    const KMeansOptions& opts = {}) {
  detail::require(k >= 1, Errc::parameter, "k must be >= 1");
  detail::require(k <= points.rows(), Errc::parameter,
                  "k = " + std::to_string(k) + " exceeds N = " + std::to_string(points.rows()));
  KMeansResult best;
  best.wcss = std::numeric_limits<double>::infinity();
  for (int r = 0; r < std::max(opts.restarts, 1); ++r) {
    std::mt19937_64 rng(detail::splitmix64(seed ^ detail::splitmix64(static_cast<std::uint64_t>(r))));
    KMeansResult res = detail::lloyd(points, detail::kmeanspp_init(points, k, rng), opts.max_iters);
    if (res.wcss < best.wcss) best = std::move(res);
  }
  return best;
}

inline ClusterLabels kmeans(const Matrix& points, int k, std::uint64_t seed) {
  return kmeans_detailed(points, k, seed).labels;
}

/// Bottom-k eigenvectors of the symmetric normalized Laplacian, rows
/// scaled to unit length (zero rows stay zero).
inline Matrix spectral_embedding(const Matrix& a, int k) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(normalized_laplacian(a));
  detail::require(eig.info() == Eigen::Success, Errc::degenerate_data, "eigendecomposition failed");
  Matrix emb = eig.eigenvectors().leftCols(k);
  for (Index i = 0; i < emb.rows(); ++i) {
    const double norm = emb.row(i).norm();
    if (norm > 0.0) emb.row(i) /= norm;
  }
  return emb;
}

inline ClusterLabels spectral_cluster(const Matrix& a, int k, std::uint64_t seed) {
  detail::require(a.rows() == a.cols(), Errc::shape, "affinity must be square");
  detail::require(k >= 1, Errc::parameter, "k must be >= 1");
  detail::require(k <= a.rows(), Errc::parameter,
                  "k = " + std::to_string(k) + " exceeds N = " + std::to_string(a.rows()));
  if (k == 1) return ClusterLabels{Labels(static_cast<std::size_t>(a.rows()), 1), 1};
  return kmeans(spectral_embedding(a, k), k, seed);
}

}  // namespace escm
