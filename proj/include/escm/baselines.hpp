#pragma once

#include "escm/common.hpp"
#include "escm/data_model.hpp"
#include "escm/lstm.hpp"
#include "escm/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace escm {

enum class LearnerKind { omp, l1pg };

inline const char* to_string(LearnerKind k) { return k == LearnerKind::omp ? "omp" : "l1pg"; }

inline LearnerKind parse_learner(const std::string& s) {
  if (s == "omp") return LearnerKind::omp;
  if (s == "l1pg" || s == "bp") return LearnerKind::l1pg;
  throw Error(Errc::parameter, "unknown learner '" + s + "'");
}

struct LearnerConfig {
  LearnerKind kind = LearnerKind::omp;
  int k_max = 0;            // 0 resolves to 2 * clusters
  double epsilon = 1e-6;    // OMP residual tolerance / l1pg relative objective tolerance scale
  double lambda_bp = 0.05;  // l1pg weight
  int iters = 1000;         // l1pg iteration cap
};

inline void validate(const LearnerConfig& cfg) {
  detail::require(cfg.k_max >= 0, Errc::parameter, "k_max must be >= 1 (0 = default)");
  detail::require(cfg.epsilon >= 0.0, Errc::parameter, "epsilon must be >= 0");
  detail::require(cfg.lambda_bp > 0.0, Errc::parameter, "lambda_bp must be > 0");
  detail::require(cfg.iters >= 1, Errc::parameter, "iters must be >= 1");
}

inline LearnerConfig resolve(LearnerConfig cfg, int clusters) {
  validate(cfg);
  if (cfg.k_max == 0) cfg.k_max = 2 * std::max(clusters, 1);
  return cfg;
}

// ---------------------------------------------------------------------------
// Orthogonal matching pursuit

struct OmpColumn {
  std::vector<Index> support;  // in selection order
  Vector coeffs;               // aligned with support
  std::vector<double> residual_norms;  // ||r|| before the first pick and after each pick
};

/// Greedy sparse code of `target` over the columns of `dict`, never using
/// column `exclude`.
inline OmpColumn omp_column(const Matrix& dict, const Eigen::Ref<const Vector>& target, Index exclude,
                            int k_max, double epsilon) {
  OmpColumn out;
  Vector residual = target;
  out.residual_norms.push_back(residual.norm());
  std::vector<bool> used(static_cast<std::size_t>(dict.cols()), false);
  if (exclude >= 0 && exclude < dict.cols()) used[static_cast<std::size_t>(exclude)] = true;
  Matrix sub(dict.rows(), 0);
  while (static_cast<int>(out.support.size()) < k_max && out.residual_norms.back() > epsilon) {
    const Vector corr = dict.transpose() * residual;
    Index pick = -1;
    double best = 0.0;
    for (Index i = 0; i < dict.cols(); ++i) {
      if (used[static_cast<std::size_t>(i)]) continue;
      const double a = std::abs(corr(i));
      if (a > best) {
        best = a;
        pick = i;
      }
    }
    if (pick < 0 || best <= 1e-14 * std::max(1.0, out.residual_norms.back())) break;
    used[static_cast<std::size_t>(pick)] = true;
    out.support.push_back(pick);
    sub.conservativeResize(Eigen::NoChange, sub.cols() + 1);
    sub.rightCols(1) = dict.col(pick);
    out.coeffs = sub.colPivHouseholderQr().solve(target);
    residual = target - sub * out.coeffs;
    out.residual_norms.push_back(residual.norm());
  }
  if (out.support.empty()) out.coeffs.resize(0);
  return out;
}

/// Column j of the result codes target column j over dict without atom j.
inline Matrix omp_represent(const Matrix& dict, const Matrix& targets, int k_max, double epsilon) {
  const Index n = dict.cols();
  Matrix c = Matrix::Zero(n, targets.cols());
  for (Index j = 0; j < targets.cols(); ++j) {
    const OmpColumn col = omp_column(dict, targets.col(j), j, k_max, epsilon);
    for (std::size_t s = 0; s < col.support.size(); ++s) c(col.support[s], j) = col.coeffs(static_cast<Index>(s));
  }
  return c;
}

inline SelfExpression omp_selfexpr(const Snapshot& x, const LearnerConfig& cfg, int clusters = 2) {
  const LearnerConfig r = resolve(cfg, clusters);
  return SelfExpression::from_matrix(omp_represent(x.data, x.data, r.k_max, r.epsilon), x.t);
}

// ---------------------------------------------------------------------------
// L1 proximal gradient (ISTA)

/// Largest eigenvalue of a symmetric PSD matrix by power iteration.
inline double power_iteration(const Matrix& g, int max_iters = 1000, double tol = 1e-12) {
  if (g.rows() == 0) return 0.0;
  Vector v = Vector::Ones(g.rows()).normalized();
  double lambda = 0.0;
  for (int it = 0; it < max_iters; ++it) {
    Vector w = g * v;
    const double norm = w.norm();
    if (norm == 0.0) return 0.0;
    const double next = v.dot(w);
    v = w / norm;
    if (std::abs(next - lambda) <= tol * std::abs(next)) return next;
    lambda = next;
  }
  return lambda;
}

struct L1pgResult {
  Matrix coeffs;
  std::vector<double> objective;  // after each iterate, starting with C = 0
  int iterations = 0;
};

inline double l1_objective(const Matrix& dict, const Matrix& targets, const Matrix& c, double lambda) {
  return 0.5 * (targets - dict * c).squaredNorm() + lambda * c.cwiseAbs().sum();
}

/// min 1/2 ||Y - X C||_F^2 + lambda ||C||_1 with diag(C) = 0, step 1/L.
inline L1pgResult l1pg_represent(const Matrix& dict, const Matrix& targets, double lambda, int iters,
                                 double rel_tol = 1e-8) {
  const Matrix gram = dict.transpose() * dict;
  const Matrix xty = dict.transpose() * targets;
  // Small margin so the power-iteration estimate never undershoots L.
  const double lip = power_iteration(gram) * (1.0 + 1e-9);
  L1pgResult out;
  out.coeffs = Matrix::Zero(dict.cols(), targets.cols());
  out.objective.push_back(l1_objective(dict, targets, out.coeffs, lambda));
  if (lip <= 0.0) return out;
  const double step = 1.0 / lip;
  const double thresh = lambda * step;
  const Index diag = std::min(out.coeffs.rows(), out.coeffs.cols());
  for (int it = 0; it < iters; ++it) {
    Matrix next = out.coeffs - step * (gram * out.coeffs - xty);
    next = next.unaryExpr([thresh](double v) {
      return v > thresh ? v - thresh : (v < -thresh ? v + thresh : 0.0);
    });
    for (Index i = 0; i < diag; ++i) next(i, i) = 0.0;
    out.coeffs = std::move(next);
    out.iterations = it + 1;
    const double obj = l1_objective(dict, targets, out.coeffs, lambda);
    const double prev = out.objective.back();
    out.objective.push_back(obj);
    if (std::abs(prev - obj) < rel_tol * std::max(std::abs(prev), std::numeric_limits<double>::min())) break;
  }
  return out;
}

inline SelfExpression l1pg_selfexpr(const Snapshot& x, const LearnerConfig& cfg) {
  validate(cfg);
  return SelfExpression::from_matrix(l1pg_represent(x.data, x.data, cfg.lambda_bp, cfg.iters).coeffs, x.t);
}

/// Codes `targets` over `dict` (atom j excluded for column j) with the
/// configured learner.
inline Matrix learner_represent(const Matrix& dict, const Matrix& targets, const LearnerConfig& cfg, int clusters) {
  const LearnerConfig r = resolve(cfg, clusters);
  if (r.kind == LearnerKind::omp) return omp_represent(dict, targets, r.k_max, r.epsilon);
  return l1pg_represent(dict, targets, r.lambda_bp, r.iters).coeffs;
}

inline SelfExpression static_selfexpr(const Snapshot& x, const LearnerConfig& cfg, int clusters) {
  return SelfExpression::from_matrix(learner_represent(x.data, x.data, cfg, clusters), x.t);
}

// ---------------------------------------------------------------------------
// Temporal smoothing

inline std::vector<SelfExpression> static_sequence(const EvolvingSequence& seq, const LearnerConfig& cfg) {
  std::vector<SelfExpression> out;
  for (const auto& s : seq.snapshots) out.push_back(static_selfexpr(s, cfg, seq.n_motions));
  return out;
}

/// C_1 = static; C_t = alpha * static_t + (1 - alpha) * C_{t-1}.
inline std::vector<SelfExpression> affect_smooth(const EvolvingSequence& seq, const LearnerConfig& cfg, double alpha) {
  detail::require(alpha >= 0.0 && alpha <= 1.0, Errc::parameter, "alpha must lie in [0, 1]");
  std::vector<SelfExpression> out;
  for (const auto& s : seq.snapshots) {
    const SelfExpression fresh = static_selfexpr(s, cfg, seq.n_motions);
    if (out.empty()) {
      out.push_back(fresh);
    } else {
      out.push_back(SelfExpression::from_matrix(alpha * fresh.matrix() + (1.0 - alpha) * out.back().matrix(), s.t));
    }
  }
  return out;
}

struct CesmStep {
  double alpha = 0.0;
  Matrix innovation;               // U, zero diagonal
  std::vector<double> objective;   // carry-over objective, then after each outer iteration
};

struct CesmResult {
  std::vector<SelfExpression> coeffs;
  std::vector<CesmStep> steps;  // entry t-1 for t >= 2; entry 0 is unused
};

inline constexpr int kCesmGridSize = 21;  // alpha in {0, 0.05, ..., 1}

/// Alternates an innovation update (learner on the residual target) with a
/// grid search over alpha, starting from U = C_{t-1}, alpha = 0.5. A
/// learner update that would raise the objective is rejected, so the per-step
/// objective never increases.
inline CesmStep cesm_step(const Matrix& x, const Matrix& c_prev, const LearnerConfig& cfg, int clusters,
                          int outer_iters) {
  const Matrix xc = x * c_prev;
  auto objective = [&](double alpha, const Matrix& xu) {
    return 0.5 * (x - alpha * xu - (1.0 - alpha) * xc).squaredNorm();
  };
  CesmStep st;
  st.alpha = 0.5;
  st.innovation = c_prev;
  Matrix xu = xc;
  double current = objective(st.alpha, xu);
  st.objective.push_back(current);
  for (int it = 0; it < outer_iters; ++it) {
    const double scale = st.alpha > 0.0 ? st.alpha : 1.0;
    const Matrix target = (x - (1.0 - st.alpha) * xc) / scale;
    Matrix u = learner_represent(x, target, cfg, clusters);
    u.diagonal().setZero();
    const Matrix xu_new = x * u;
    const double cand = objective(st.alpha, xu_new);
    if (cand <= current) {
      st.innovation = std::move(u);
      xu = xu_new;
      current = cand;
    }
    double best_alpha = st.alpha;
    for (int g = 0; g < kCesmGridSize; ++g) {
      const double a = static_cast<double>(g) / static_cast<double>(kCesmGridSize - 1);
      const double v = objective(a, xu);
      if (v < current || (v == current && a < best_alpha)) {
        current = v;
        best_alpha = a;
      }
    }
    st.alpha = best_alpha;
    st.objective.push_back(current);
  }
  return st;
}

inline CesmResult cesm_detailed(const EvolvingSequence& seq, const LearnerConfig& cfg, int outer_iters) {
  detail::require(seq.steps() >= 2, Errc::parameter, "CESM needs T >= 2");
  detail::require(outer_iters >= 1, Errc::parameter, "outer_iters must be >= 1");
  CesmResult out;
  out.coeffs.push_back(static_selfexpr(seq.snapshots.front(), cfg, seq.n_motions));
  out.steps.emplace_back();
  for (int t = 2; t <= seq.steps(); ++t) {
    const Snapshot& s = seq.snapshots[static_cast<std::size_t>(t - 1)];
    const Matrix& prev = out.coeffs.back().matrix();
    CesmStep st = cesm_step(s.data, prev, cfg, seq.n_motions, outer_iters);
    out.coeffs.push_back(SelfExpression::from_matrix(st.alpha * st.innovation + (1.0 - st.alpha) * prev, t));
    out.steps.push_back(std::move(st));
  }
  return out;
}

inline std::vector<SelfExpression> cesm(const EvolvingSequence& seq, const LearnerConfig& cfg, int outer_iters = 3) {
  return cesm_detailed(seq, cfg, outer_iters).coeffs;
}

// ---------------------------------------------------------------------------
// Method dispatch

enum class Method { static_, affect, cesm, lstm_escm };

inline Method parse_method(const std::string& s) {
  if (s == "static") return Method::static_;
  if (s == "affect") return Method::affect;
  if (s == "cesm") return Method::cesm;
  if (s == "lstm-escm" || s == "lstm") return Method::lstm_escm;
  throw Error(Errc::parameter, "unknown method '" + s + "'");
}

inline const char* to_string(Method m) {
  switch (m) {
    case Method::static_: return "static";
    case Method::affect: return "affect";
    case Method::cesm: return "cesm";
    case Method::lstm_escm: return "lstm-escm";
  }
  return "?";
}

struct MethodConfig {
  Method method = Method::static_;
  LearnerConfig learner;
  double affect_alpha = 0.5;
  int cesm_outer_iters = 3;
  TrainConfig train;
  int window = 0;  // 0 resolves to min(T, 8)
  int stride = 1;
};

inline int default_window(int steps) { return std::min(steps, 8); }

/// Trains on the first `train_steps` snapshots and infers over all of them.
inline std::vector<SelfExpression> lstm_coeffs(const EvolvingSequence& seq, int train_steps, const MethodConfig& cfg) {
  const EvolvingSequence train = train_steps == seq.steps() ? seq : slice(seq, 1, train_steps);
  const int length = cfg.window > 0 ? std::min(cfg.window, train.steps()) : default_window(train.steps());
  const auto wins = windows(train, length, cfg.stride);
  TrainResult res = train_sequence(train, wins, cfg.train);
  if (train_steps == seq.steps()) return std::move(res.coeffs);
  return infer_coeffs(res.model, seq);
}

inline std::vector<SelfExpression> representations(const EvolvingSequence& seq, const MethodConfig& cfg,
                                                   int train_steps = -1) {
  switch (cfg.method) {
    case Method::static_: return static_sequence(seq, cfg.learner);
    case Method::affect: return affect_smooth(seq, cfg.learner, cfg.affect_alpha);
    case Method::cesm: return cesm(seq, cfg.learner, cfg.cesm_outer_iters);
    case Method::lstm_escm: return lstm_coeffs(seq, train_steps < 0 ? seq.steps() : train_steps, cfg);
  }
  throw Error(Errc::parameter, "unknown method");
}

inline std::vector<ClusterLabels> cluster_coeffs(const std::vector<SelfExpression>& coeffs, int clusters,
                                                 std::uint64_t seed) {
  std::vector<ClusterLabels> out;
  for (const auto& c : coeffs) out.push_back(spectral_cluster(affinity(c), clusters, seed));
  return out;
}

/// C_t by the chosen method, then affinity and spectral clustering per t.
inline std::vector<ClusterLabels> smooth_cluster(const EvolvingSequence& seq, const MethodConfig& cfg, int clusters,
                                                 std::uint64_t seed) {
  return cluster_coeffs(representations(seq, cfg), clusters, seed);
}

inline std::vector<ClusterLabels> smooth_cluster(const EvolvingSequence& seq, const std::string& method,
                                                 int clusters, std::uint64_t seed, MethodConfig cfg = {}) {
  cfg.method = parse_method(method);
  return smooth_cluster(seq, cfg, clusters, seed);
}

}  // namespace escm
