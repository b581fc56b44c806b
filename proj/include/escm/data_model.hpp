#pragma once

#include "escm/common.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace escm {

/// Raw tracked trajectories: 2F x N, rows alternate x/y per frame.
struct Trajectories {
  Index frames = 0;
  int motions = 0;
  Matrix data;
  std::optional<Labels> labels;

  Index points() const { return data.cols(); }
};

/// One time step's data matrix X_t (features x points).
struct Snapshot {
  Matrix data;
  std::optional<Labels> labels;
  int t = 1;

  Index dim() const { return data.rows(); }
  Index points() const { return data.cols(); }
};

struct EvolvingSequence {
  std::vector<Snapshot> snapshots;
  int n_motions = 0;
  std::string name;

  int steps() const { return static_cast<int>(snapshots.size()); }
  Index points() const { return snapshots.empty() ? 0 : snapshots.front().points(); }
  bool has_labels() const {
    return !snapshots.empty() &&
           std::all_of(snapshots.begin(), snapshots.end(),
                       [](const Snapshot& s) { return s.labels.has_value(); });
  }
};

/// A moving-window slice of a sequence laid out for the recurrent learner.
/// Column s of `inputs` is vec(X) and column s of `targets` is vec(X^T X).
struct SequenceWindow {
  Matrix inputs;
  Matrix targets;
  std::string sequence;
  int start = 1;

  int length() const { return static_cast<int>(inputs.cols()); }
  Index points() const {
    return static_cast<Index>(std::llround(std::sqrt(static_cast<double>(targets.rows()))));
  }
  Index dim() const { return inputs.rows() / points(); }

  Matrix snapshot(int s) const { return detail::unvec(inputs.col(s), dim(), points()); }
  Matrix gram(int s) const { return detail::unvec(targets.col(s), points(), points()); }
};

struct SynthConfig {
  Index ambient_dim = 20;
  std::vector<Index> points_per_subspace{30, 30};
  std::vector<Index> subspace_dims{3, 3};
  int steps = 12;
  double rotation_rate = 0.05;
  double noise_sigma = 0.01;
  std::uint64_t seed = 0;
};

struct NormalizedSnapshot {
  Snapshot snapshot;
  std::vector<Index> zero_columns;
};

// ---------------------------------------------------------------------------
// Validation

inline void validate_labels(const Labels& labels, Index points, int motions) {
  detail::require(static_cast<Index>(labels.size()) == points, Errc::label,
                  "expected " + std::to_string(points) + " labels, got " +
                      std::to_string(labels.size()));
  std::vector<bool> seen(static_cast<std::size_t>(std::max(motions, 0)), false);
  for (int l : labels) {
    detail::require(l >= 1 && l <= motions, Errc::label,
                    "label " + std::to_string(l) + " outside 1.." + std::to_string(motions));
    seen[static_cast<std::size_t>(l - 1)] = true;
  }
  detail::require(std::all_of(seen.begin(), seen.end(), [](bool b) { return b; }), Errc::label,
                  "every motion must own at least one point");
}

inline void validate(const Snapshot& snap) {
  detail::require(snap.data.allFinite(), Errc::input, "snapshot contains non-finite entries");
  if (snap.labels) validate_labels(*snap.labels, snap.points(), detail::count_clusters(*snap.labels));
}

inline void validate(const EvolvingSequence& seq) {
  for (std::size_t i = 0; i < seq.snapshots.size(); ++i) {
    const Snapshot& s = seq.snapshots[i];
    validate(s);
    detail::require(s.points() == seq.points(), Errc::dimension,
                    "point count must be fixed across time");
    detail::require(s.t == static_cast<int>(i) + 1, Errc::input,
                    "time indices must be consecutive from 1");
  }
}

// ---------------------------------------------------------------------------
// Trajectory file format

namespace detail {

inline std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view tok, Errc code, const std::string& ctx) {
  double v = 0.0;
  const char* first = tok.data();
  if (!tok.empty() && tok.front() == '+') ++first;
  auto res = std::from_chars(first, tok.data() + tok.size(), v);
  require(res.ec == std::errc() && res.ptr == tok.data() + tok.size(), code,
          ctx + ": cannot parse '" + std::string(tok) + "'");
  require(std::isfinite(v), code, ctx + ": non-finite value '" + std::string(tok) + "'");
  return v;
}

inline long long parse_int(std::string_view tok, Errc code, const std::string& ctx) {
  long long v = 0;
  auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  require(res.ec == std::errc() && res.ptr == tok.data() + tok.size(), code,
          ctx + ": cannot parse '" + std::string(tok) + "'");
  return v;
}

inline std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

inline std::string_view strip_key(std::string_view tok, std::string_view key) {
  require(tok.size() > key.size() + 1 && tok.substr(0, key.size()) == key && tok[key.size()] == '=',
          Errc::format, "expected '" + std::string(key) + "=<value>', got '" + std::string(tok) + "'");
  return tok.substr(key.size() + 1);
}

}  // namespace detail

inline Trajectories read_trajectories(std::istream& in) {
  std::string line;
  detail::require(static_cast<bool>(std::getline(in, line)), Errc::format, "missing header line");
  auto header = detail::split_ws(line);
  detail::require(header.size() == 3, Errc::format,
                  "header must be 'frames=<F> points=<N> motions=<n>'");
  const long long frames = detail::parse_int(detail::strip_key(header[0], "frames"), Errc::format, "frames");
  const long long points = detail::parse_int(detail::strip_key(header[1], "points"), Errc::format, "points");
  const long long motions = detail::parse_int(detail::strip_key(header[2], "motions"), Errc::format, "motions");
  detail::require(frames >= 1 && points >= 1 && motions >= 1, Errc::format,
                  "frames, points and motions must be positive");

  Trajectories traj;
  traj.frames = frames;
  traj.motions = static_cast<int>(motions);

  detail::require(static_cast<bool>(std::getline(in, line)), Errc::format, "missing labels line");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  detail::require(line.rfind("labels=", 0) == 0, Errc::format, "second line must start with 'labels='");
  std::string_view rest = std::string_view(line).substr(7);
  if (rest != "none") {
    Labels labels;
    for (auto tok : detail::split_ws(rest))
      labels.push_back(static_cast<int>(detail::parse_int(tok, Errc::format, "labels")));
    detail::require(static_cast<long long>(labels.size()) == points, Errc::dimension,
                    "labels line has " + std::to_string(labels.size()) + " entries, expected " +
                        std::to_string(points));
    validate_labels(labels, points, traj.motions);
    traj.labels = std::move(labels);
  }

  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    auto toks = detail::split_ws(line);
    if (toks.empty()) continue;
    detail::require(static_cast<long long>(toks.size()) == points, Errc::dimension,
                    "row " + std::to_string(rows.size() + 1) + " has " + std::to_string(toks.size()) +
                        " columns, expected " + std::to_string(points));
    std::vector<double> row;
    row.reserve(toks.size());
    for (auto tok : toks) row.push_back(detail::parse_double(tok, Errc::format, "body"));
    rows.push_back(std::move(row));
  }
  detail::require(static_cast<long long>(rows.size()) == 2 * frames, Errc::dimension,
                  "body has " + std::to_string(rows.size()) + " rows, expected 2F = " +
                      std::to_string(2 * frames));

  traj.data.resize(static_cast<Index>(rows.size()), points);
  for (Index r = 0; r < traj.data.rows(); ++r)
    for (Index c = 0; c < points; ++c) traj.data(r, c) = rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
  return traj;
}

inline Trajectories load_sequence(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  detail::require(in.good(), Errc::io, "cannot open " + path);
  return read_trajectories(in);
}

/// Shortest round-trip decimal for each value, so reloading is bit-exact.
inline void write_trajectories(std::ostream& out, const Trajectories& traj) {
  detail::require(traj.data.rows() == 2 * traj.frames, Errc::dimension, "data must have 2F rows");
  detail::require(traj.data.allFinite(), Errc::input, "trajectories contain non-finite entries");
  out << "frames=" << traj.frames << " points=" << traj.points() << " motions=" << traj.motions << '\n';
  out << "labels=";
  if (traj.labels) {
    for (std::size_t i = 0; i < traj.labels->size(); ++i) out << (i ? " " : "") << (*traj.labels)[i];
  } else {
    out << "none";
  }
  out << '\n';
  for (Index r = 0; r < traj.data.rows(); ++r) {
    for (Index c = 0; c < traj.data.cols(); ++c) {
      if (c) out << ' ';
      out << detail::format_double(traj.data(r, c));
    }
    out << '\n';
  }
}

inline void save_sequence(const std::string& path, const Trajectories& traj) {
  std::ofstream out(path, std::ios::binary);
  detail::require(out.good(), Errc::io, "cannot write " + path);
  write_trajectories(out, traj);
  detail::require(out.good(), Errc::io, "write failed for " + path);
}

// ---------------------------------------------------------------------------
// Preprocessing

/// Frame count of every snapshot produced by snapshotize.
inline std::vector<Index> snapshot_frame_counts(Index frames, int motions) {
  detail::require(motions >= 1, Errc::parameter, "motions must be >= 1");
  const Index block = 2 * static_cast<Index>(motions);
  detail::require(frames >= block, Errc::insufficient_frames,
                  "F = " + std::to_string(frames) + " < 2n = " + std::to_string(block));
  const Index steps = frames / block;
  std::vector<Index> counts(static_cast<std::size_t>(steps), block);
  counts.back() += frames % block;
  return counts;
}

/// Splits F frames into floor(F / 2n) contiguous blocks; the last block
/// absorbs the remainder.
inline EvolvingSequence snapshotize(const Trajectories& traj, int motions, std::string name = {}) {
  detail::require(traj.data.rows() == 2 * traj.frames, Errc::dimension, "data must have 2F rows");
  const auto counts = snapshot_frame_counts(traj.frames, motions);
  EvolvingSequence seq;
  seq.n_motions = motions;
  seq.name = std::move(name);
  Index row = 0;
  int t = 1;
  for (Index f : counts) {
    Snapshot s;
    s.data = traj.data.middleRows(row, 2 * f);
    s.labels = traj.labels;
    s.t = t++;
    row += 2 * f;
    seq.snapshots.push_back(std::move(s));
  }
  return seq;
}

inline NormalizedSnapshot normalize_columns(Snapshot snap) {
  NormalizedSnapshot out;
  for (Index j = 0; j < snap.data.cols(); ++j) {
    const double norm = snap.data.col(j).norm();
    if (norm > 0.0) {
      snap.data.col(j) /= norm;
    } else {
      out.zero_columns.push_back(j);
    }
  }
  out.snapshot = std::move(snap);
  return out;
}

/// Number of rows pca_project keeps: min(4n, rows, cols).
inline Index pca_rank(const Snapshot& snap, int motions) {
  return std::min<Index>({4 * static_cast<Index>(motions), snap.dim(), snap.points()});
}

/// U_r^T X for the top r = min(4n, rows, cols) left singular vectors.
inline Matrix pca_projection(const Snapshot& snap, int motions) {
  detail::require(motions >= 1, Errc::parameter, "motions must be >= 1");
  detail::require(snap.data.size() > 0 && snap.data.cwiseAbs().maxCoeff() > 0.0, Errc::degenerate_data,
                  "snapshot t=" + std::to_string(snap.t) + " is all zeros");
  const Index r = pca_rank(snap, motions);
  Eigen::BDCSVD<Matrix> svd(snap.data, Eigen::ComputeThinU);
  return svd.matrixU().leftCols(r).transpose() * snap.data;
}

/// PCA projection followed by column normalization.
inline Snapshot pca_project(const Snapshot& snap, int motions) {
  Snapshot out;
  out.data = pca_projection(snap, motions);
  out.labels = snap.labels;
  out.t = snap.t;
  return normalize_columns(std::move(out)).snapshot;
}

/// PCA plus normalization on every snapshot.
inline EvolvingSequence preprocess(const EvolvingSequence& seq) {
  EvolvingSequence out = seq;
  for (auto& s : out.snapshots) s = pca_project(s, seq.n_motions);
  return out;
}

inline EvolvingSequence load_and_preprocess(const std::string& path, std::optional<int> motions = {}) {
  const Trajectories traj = load_sequence(path);
  std::string name = path;
  if (auto slash = name.find_last_of('/'); slash != std::string::npos) name = name.substr(slash + 1);
  return preprocess(snapshotize(traj, motions.value_or(traj.motions), name));
}

/// Restricts a sequence to the snapshots [first, first + count).
inline EvolvingSequence slice(const EvolvingSequence& seq, int first, int count) {
  detail::require(first >= 1 && count >= 1 && first + count - 1 <= seq.steps(), Errc::parameter,
                  "slice out of range");
  EvolvingSequence out;
  out.n_motions = seq.n_motions;
  out.name = seq.name;
  for (int i = 0; i < count; ++i) {
    Snapshot s = seq.snapshots[static_cast<std::size_t>(first - 1 + i)];
    s.t = i + 1;
    out.snapshots.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Windowing

inline int window_count(int steps, int length, int stride) {
  return (steps - length) / stride + 1;
}

inline std::vector<SequenceWindow> windows(const EvolvingSequence& seq, int length, int stride = 1) {
  detail::require(length >= 1 && stride >= 1, Errc::parameter, "window length and stride must be >= 1");
  detail::require(length <= seq.steps(), Errc::window_too_long,
                  "S = " + std::to_string(length) + " > T = " + std::to_string(seq.steps()));
  const Index dim = seq.snapshots.front().dim();
  const Index n = seq.points();
  for (const auto& s : seq.snapshots)
    detail::require(s.dim() == dim && s.points() == n, Errc::shape,
                    "windowing requires every snapshot to be " + detail::shape_str(dim, n));

  std::vector<SequenceWindow> out;
  for (int start = 1; start + length - 1 <= seq.steps(); start += stride) {
    SequenceWindow w;
    w.inputs.resize(dim * n, length);
    w.targets.resize(n * n, length);
    w.sequence = seq.name;
    w.start = start;
    for (int s = 0; s < length; ++s) {
      const Matrix& x = seq.snapshots[static_cast<std::size_t>(start - 1 + s)].data;
      w.inputs.col(s) = detail::vec(x);
      w.targets.col(s) = detail::vec(x.transpose() * x);
    }
    out.push_back(std::move(w));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic evolving subspaces

inline void validate(const SynthConfig& cfg) {
  detail::require(cfg.ambient_dim >= 1, Errc::config, "ambient_dim must be >= 1");
  detail::require(!cfg.subspace_dims.empty(), Errc::config, "subspace_dims must not be empty");
  detail::require(cfg.points_per_subspace.size() == cfg.subspace_dims.size(), Errc::config,
                  "points_per_subspace and subspace_dims must have equal length");
  for (Index d : cfg.subspace_dims)
    detail::require(d >= 1 && d < cfg.ambient_dim, Errc::config,
                    "subspace_dims entries must lie in 1..ambient_dim-1");
  for (Index p : cfg.points_per_subspace)
    detail::require(p >= 1, Errc::config, "points_per_subspace entries must be >= 1");
  detail::require(cfg.steps >= 1, Errc::config, "T must be >= 1");
  detail::require(std::isfinite(cfg.rotation_rate) && cfg.rotation_rate >= 0.0, Errc::config,
                  "rotation_rate must be >= 0");
  detail::require(std::isfinite(cfg.noise_sigma) && cfg.noise_sigma >= 0.0, Errc::config,
                  "noise_sigma must be >= 0");
}

/// Ground-truth generator state, exposed so tests can project points onto
/// the generator's own bases.
struct SynthTruth {
  std::vector<Matrix> bases;   // U_i(1), ambient x d_i
  std::vector<Matrix> planes;  // rotation plane per subspace, ambient x 2
  double rotation_rate = 0.0;

  Matrix basis_at(std::size_t i, int t) const {
    const double theta = rotation_rate * (t - 1);
    const Matrix& u = bases[i];
    const auto p = planes[i].col(0);
    const auto q = planes[i].col(1);
    const Eigen::RowVectorXd pu = p.transpose() * u;
    const Eigen::RowVectorXd qu = q.transpose() * u;
    return u + (std::cos(theta) - 1.0) * (p * pu + q * qu) + std::sin(theta) * (q * pu - p * qu);
  }
};

struct SynthResult {
  EvolvingSequence sequence;
  SynthTruth truth;
};

inline SynthResult synth_evolving_with_truth(const SynthConfig& cfg, std::string name = "synthetic") {
  validate(cfg);
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto gaussian = [&](Index rows, Index cols) {
    Matrix m(rows, cols);
    for (Index j = 0; j < cols; ++j)
      for (Index i = 0; i < rows; ++i) m(i, j) = gauss(rng);
    return m;
  };
  auto orthonormal = [&](Index rows, Index cols) -> Matrix {
    Eigen::HouseholderQR<Matrix> qr(gaussian(rows, cols));
    return qr.householderQ() * Matrix::Identity(rows, cols);
  };

  SynthResult out;
  out.truth.rotation_rate = cfg.rotation_rate;
  const std::size_t k = cfg.subspace_dims.size();
  for (std::size_t i = 0; i < k; ++i) out.truth.bases.push_back(orthonormal(cfg.ambient_dim, cfg.subspace_dims[i]));
  for (std::size_t i = 0; i < k; ++i) out.truth.planes.push_back(orthonormal(cfg.ambient_dim, 2));

  std::vector<Matrix> coeffs;
  Labels labels;
  for (std::size_t i = 0; i < k; ++i) {
    Matrix c = gaussian(cfg.subspace_dims[i], cfg.points_per_subspace[i]);
    c.colwise().normalize();
    coeffs.push_back(std::move(c));
    labels.insert(labels.end(), static_cast<std::size_t>(cfg.points_per_subspace[i]), static_cast<int>(i) + 1);
  }
  const Index n = static_cast<Index>(labels.size());

  EvolvingSequence& seq = out.sequence;
  seq.n_motions = static_cast<int>(k);
  seq.name = std::move(name);
  for (int t = 1; t <= cfg.steps; ++t) {
    Snapshot s;
    s.data.resize(cfg.ambient_dim, n);
    Index col = 0;
    for (std::size_t i = 0; i < k; ++i) {
      const Index pts = cfg.points_per_subspace[i];
      s.data.middleCols(col, pts) = out.truth.basis_at(i, t) * coeffs[i];
      col += pts;
    }
    if (cfg.noise_sigma > 0.0) s.data += cfg.noise_sigma * gaussian(cfg.ambient_dim, n);
    s.labels = labels;
    s.t = t;
    seq.snapshots.push_back(std::move(s));
  }
  return out;
}

inline EvolvingSequence synth_evolving(const SynthConfig& cfg, std::string name = "synthetic") {
  return synth_evolving_with_truth(cfg, std::move(name)).sequence;
}

/// Stacks every snapshot's rows into a trajectory matrix. Requires an even
/// feature dimension so rows pair up as x/y frames.
inline Trajectories to_trajectories(const EvolvingSequence& seq) {
  detail::require(!seq.snapshots.empty(), Errc::input, "empty sequence");
  Index rows = 0;
  for (const auto& s : seq.snapshots) {
    detail::require(s.dim() % 2 == 0, Errc::config, "snapshot row count must be even (x/y pairs)");
    rows += s.dim();
  }
  Trajectories traj;
  traj.frames = rows / 2;
  traj.motions = seq.n_motions;
  traj.data.resize(rows, seq.points());
  Index r = 0;
  for (const auto& s : seq.snapshots) {
    traj.data.middleRows(r, s.dim()) = s.data;
    r += s.dim();
  }
  traj.labels = seq.snapshots.front().labels;
  return traj;
}

namespace detail {

inline std::vector<Index> parse_index_list(const std::string& key, std::string value) {
  std::replace(value.begin(), value.end(), ',', ' ');
  std::vector<Index> out;
  for (auto tok : split_ws(value)) out.push_back(static_cast<Index>(parse_int(tok, Errc::config, key)));
  require(!out.empty(), Errc::config, key + ": empty list");
  return out;
}

}  // namespace detail

/// Flat `key=value` config; blank lines and `#` comments are ignored.
inline SynthConfig parse_synth_config(std::istream& in) {
  SynthConfig cfg;
  std::string line;
  while (std::getline(in, line)) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    auto toks = detail::split_ws(line);
    if (toks.empty()) continue;
    const auto eq = line.find('=');
    detail::require(eq != std::string::npos, Errc::config, "expected key=value, got '" + line + "'");
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key == "ambient_dim" || key == "D") {
      cfg.ambient_dim = static_cast<Index>(detail::parse_int(value, Errc::config, key));
    } else if (key == "points_per_subspace") {
      cfg.points_per_subspace = detail::parse_index_list(key, value);
    } else if (key == "subspace_dims") {
      cfg.subspace_dims = detail::parse_index_list(key, value);
    } else if (key == "T" || key == "steps") {
      cfg.steps = static_cast<int>(detail::parse_int(value, Errc::config, key));
    } else if (key == "rotation_rate") {
      cfg.rotation_rate = detail::parse_double(value, Errc::config, key);
    } else if (key == "noise_sigma") {
      cfg.noise_sigma = detail::parse_double(value, Errc::config, key);
    } else if (key == "seed") {
      detail::require(!value.empty() && value.front() != '-', Errc::config, "seed: must be non-negative");
      cfg.seed = static_cast<std::uint64_t>(detail::parse_int(value, Errc::config, key));
    } else {
      throw Error(Errc::config, "unknown key '" + key + "'");
    }
  }
  validate(cfg);
  return cfg;
}

inline SynthConfig parse_synth_config(const std::string& text) {
  std::istringstream in(text);
  return parse_synth_config(in);
}

inline std::string to_config_text(const SynthConfig& cfg) {
  auto join = [](const std::vector<Index>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
  };
  std::ostringstream out;
  out << "ambient_dim=" << cfg.ambient_dim << '\n'
      << "points_per_subspace=" << join(cfg.points_per_subspace) << '\n'
      << "subspace_dims=" << join(cfg.subspace_dims) << '\n'
      << "T=" << cfg.steps << '\n'
      << "rotation_rate=" << detail::format_double(cfg.rotation_rate) << '\n'
      << "noise_sigma=" << detail::format_double(cfg.noise_sigma) << '\n'
      << "seed=" << cfg.seed << '\n';
  return out.str();
}

}  // namespace escm
