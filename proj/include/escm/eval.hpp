#pragma once

#include "escm/baselines.hpp"
#include "escm/common.hpp"
#include "escm/data_model.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <ctime>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace escm {

// ---------------------------------------------------------------------------
// Clustering error

namespace detail {

/// Minimum-cost perfect assignment on a square cost matrix (Kuhn-Munkres with
/// potentials). Returns the column assigned to each row.
inline std::vector<int> hungarian_min(const std::vector<std::vector<double>>& cost) {
  const int n = static_cast<int>(cost.size());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> row_to_col(n, -1);
  for (int j = 1; j <= n; ++j)
    if (p[j] > 0) row_to_col[p[j] - 1] = j - 1;
  return row_to_col;
}

inline std::vector<std::vector<long>> confusion(const Labels& pred, const Labels& truth, int k) {
  std::vector<std::vector<long>> m(k, std::vector<long>(k, 0));
  for (std::size_t i = 0; i < pred.size(); ++i) ++m[pred[i] - 1][truth[i] - 1];
  return m;
}

inline long best_matching_permutation(const std::vector<std::vector<long>>& m) {
  const int k = static_cast<int>(m.size());
  std::vector<int> perm(k);
  std::iota(perm.begin(), perm.end(), 0);
  long best = 0;
  do {
    long hit = 0;
    for (int i = 0; i < k; ++i) hit += m[i][perm[i]];
    best = std::max(best, hit);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

inline long best_matching_hungarian(const std::vector<std::vector<long>>& m) {
  const int k = static_cast<int>(m.size());
  std::vector<std::vector<double>> cost(k, std::vector<double>(k));
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) cost[i][j] = -static_cast<double>(m[i][j]);
  const auto assign = hungarian_min(cost);
  long hit = 0;
  for (int i = 0; i < k; ++i) hit += m[i][assign[i]];
  return hit;
}

}  // namespace detail

/// Number of points matched under the best bijection between cluster ids.
/// Exhaustive over permutations for up to 5 ids, Hungarian above.
inline long matched_points(const Labels& pred, const Labels& truth) {
  detail::require(pred.size() == truth.size(), Errc::input,
                  "label vectors differ in length (" + std::to_string(pred.size()) + " vs " +
                      std::to_string(truth.size()) + ")");
  for (int l : pred) detail::require(l >= 1, Errc::input, "predicted labels must be >= 1");
  for (int l : truth) detail::require(l >= 1, Errc::input, "true labels must be >= 1");
  if (pred.empty()) return 0;
  const int k = std::max(detail::count_clusters(pred), detail::count_clusters(truth));
  const auto m = detail::confusion(pred, truth, k);
  return k <= 5 ? detail::best_matching_permutation(m) : detail::best_matching_hungarian(m);
}

/// 100 * (1 - best-bijection accuracy).
inline double clustering_error(const Labels& pred, const Labels& truth) {
  const long hit = matched_points(pred, truth);
  if (pred.empty()) return 0.0;
  return 100.0 * (1.0 - static_cast<double>(hit) / static_cast<double>(pred.size()));
}

inline double clustering_error(const ClusterLabels& pred, const ClusterLabels& truth) {
  return clustering_error(pred.labels, truth.labels);
}

// ---------------------------------------------------------------------------
// Benchmark

enum class Protocol { smoothing, test_last_1, test_last_2 };

inline const char* to_string(Protocol p) {
  switch (p) {
    case Protocol::smoothing: return "smoothing";
    case Protocol::test_last_1: return "test_last_1";
    case Protocol::test_last_2: return "test_last_2";
  }
  return "?";
}

inline Protocol parse_protocol(const std::string& s) {
  if (s == "smoothing") return Protocol::smoothing;
  if (s == "test1" || s == "test_last_1") return Protocol::test_last_1;
  if (s == "test2" || s == "test_last_2") return Protocol::test_last_2;
  throw Error(Errc::parameter, "unknown protocol '" + s + "'");
}

inline int held_out_steps(Protocol p) {
  return p == Protocol::test_last_1 ? 1 : (p == Protocol::test_last_2 ? 2 : 0);
}

struct SequenceResult {
  std::string name;
  double error_pct = 0.0;
  double runtime_s = 0.0;       // representation + spectral clustering
  double repr_runtime_s = 0.0;  // representation learning only
  std::vector<double> step_errors;  // per scored t
};

struct BenchmarkRow {
  std::string method;
  std::string learner;
  std::string protocol;
  double mean_error_pct = 0.0;
  double mean_runtime_s = 0.0;
  double mean_repr_runtime_s = 0.0;
  std::vector<SequenceResult> per_sequence;
};

struct BenchmarkMetadata {
  std::uint64_t seed = 0;
  std::string config_hash;
  std::string timestamp;
};

struct BenchmarkReport {
  std::vector<BenchmarkRow> rows;
  Protocol protocol = Protocol::smoothing;
  BenchmarkMetadata metadata;
};

struct BenchmarkOptions {
  Protocol protocol = Protocol::smoothing;
  std::uint64_t seed = 0;
  int jobs = 1;
};

namespace detail {

inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xF];
  return s;
}

inline std::string utc_timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline std::string describe(const MethodConfig& m) {
  std::ostringstream s;
  s << to_string(m.method) << '/' << to_string(m.learner.kind) << " k_max=" << m.learner.k_max
    << " eps=" << m.learner.epsilon << " lbp=" << m.learner.lambda_bp << " iters=" << m.learner.iters
    << " alpha=" << m.affect_alpha << " outer=" << m.cesm_outer_iters << " lambda=" << m.train.lambda
    << " lr=" << m.train.lr << " epochs=" << m.train.epochs << " h=" << m.train.hidden
    << " clip=" << m.train.grad_clip << " seed=" << m.train.seed << " opt=" << to_string(m.train.optimizer)
    << " window=" << m.window << " stride=" << m.stride << ';';
  return s.str();
}

inline SequenceResult run_cell(const EvolvingSequence& seq, const MethodConfig& cfg, Protocol protocol,
                               std::uint64_t seed) {
  using clock = std::chrono::steady_clock;
  const int steps = seq.steps();
  const int held = held_out_steps(protocol);
  int first_scored = 2;
  if (protocol == Protocol::smoothing) {
    require(steps >= 2, Errc::protocol, seq.name + ": smoothing protocol needs T >= 2");
  } else {
    require(steps - held >= 1, Errc::protocol,
            seq.name + ": T = " + std::to_string(steps) + " leaves no training snapshots");
    first_scored = steps - held + 1;
  }
  SequenceResult res;
  res.name = seq.name;
  const auto t0 = clock::now();
  const auto coeffs = representations(seq, cfg, steps - held);
  const auto t1 = clock::now();
  std::vector<ClusterLabels> labels;
  for (int t = first_scored; t <= steps; ++t)
    labels.push_back(spectral_cluster(affinity(coeffs[static_cast<std::size_t>(t - 1)]), seq.n_motions, seed));
  const auto t2 = clock::now();
  for (int t = first_scored; t <= steps; ++t) {
    const Snapshot& s = seq.snapshots[static_cast<std::size_t>(t - 1)];
    res.step_errors.push_back(clustering_error(labels[static_cast<std::size_t>(t - first_scored)].labels, *s.labels));
  }
  res.error_pct = std::accumulate(res.step_errors.begin(), res.step_errors.end(), 0.0) /
                  static_cast<double>(res.step_errors.size());
  res.repr_runtime_s = std::chrono::duration<double>(t1 - t0).count();
  res.runtime_s = std::chrono::duration<double>(t2 - t0).count();
  return res;
}

template <class F>
void parallel_for(std::size_t count, int jobs, F&& body) {
  const std::size_t workers = std::min<std::size_t>(count, static_cast<std::size_t>(std::max(jobs, 1)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(count);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          body(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace detail

/// Runs every (method, sequence) cell. Smoothing scores t = 2..T; the test
/// protocols train on the first T - m snapshots and score the last m.
inline BenchmarkReport run_benchmark(const std::vector<EvolvingSequence>& dataset,
                                     const std::vector<MethodConfig>& methods, const BenchmarkOptions& opts) {
  for (const auto& seq : dataset)
    detail::require(seq.has_labels(), Errc::protocol, "sequence '" + seq.name + "' has no ground-truth labels");

  BenchmarkReport report;
  report.protocol = opts.protocol;
  report.metadata.seed = opts.seed;
  report.metadata.timestamp = detail::utc_timestamp();
  std::string desc = std::string(to_string(opts.protocol)) + " seed=" + std::to_string(opts.seed) + ";";
  for (const auto& m : methods) desc += detail::describe(m);
  for (const auto& s : dataset) desc += s.name + ";";
  report.metadata.config_hash = detail::hex64(detail::fnv1a(desc));

  const std::size_t cells = methods.size() * dataset.size();
  std::vector<SequenceResult> results(cells);
  detail::parallel_for(cells, opts.jobs, [&](std::size_t i) {
    const std::size_t m = i / dataset.size();
    const std::size_t s = i % dataset.size();
    results[i] = detail::run_cell(dataset[s], methods[m], opts.protocol, opts.seed);
  });

  for (std::size_t m = 0; m < methods.size(); ++m) {
    BenchmarkRow row;
    row.method = to_string(methods[m].method);
    row.learner = methods[m].method == Method::lstm_escm ? "lstm" : to_string(methods[m].learner.kind);
    row.protocol = to_string(opts.protocol);
    for (std::size_t s = 0; s < dataset.size(); ++s) row.per_sequence.push_back(results[m * dataset.size() + s]);
    if (!row.per_sequence.empty()) {
      const double n = static_cast<double>(row.per_sequence.size());
      for (const auto& r : row.per_sequence) {
        row.mean_error_pct += r.error_pct / n;
        row.mean_runtime_s += r.runtime_s / n;
        row.mean_repr_runtime_s += r.repr_runtime_s / n;
      }
    }
    report.rows.push_back(std::move(row));
  }
  return report;
}

// ---------------------------------------------------------------------------
// Report emission

enum class ReportFormat { csv, markdown };

/// Fixed two-decimal formatting; exact binary ties round half to even.
inline std::string format_fixed2(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::fixed, 2);
  std::string s(buf, res.ptr);
  if (s == "-0.00") s = "0.00";
  return s;
}

inline std::string emit_report(const BenchmarkReport& report, ReportFormat format) {
  std::ostringstream out;
  if (format == ReportFormat::csv) {
    out << "method,learner,protocol,error_pct,runtime_s\n";
    for (const auto& r : report.rows)
      out << r.method << ',' << r.learner << ',' << r.protocol << ',' << format_fixed2(r.mean_error_pct) << ','
          << format_fixed2(r.mean_runtime_s) << '\n';
  } else {
    out << "| method | learner | protocol | error (%) | runtime (s) |\n";
    out << "|---|---|---|---:|---:|\n";
    for (const auto& r : report.rows)
      out << "| " << r.method << " | " << r.learner << " | " << r.protocol << " | " << format_fixed2(r.mean_error_pct)
          << " | " << format_fixed2(r.mean_runtime_s) << " |\n";
  }
  return out.str();
}

struct ReportLine {
  std::string method;
  std::string learner;
  std::string protocol;
  double error_pct = 0.0;
  double runtime_s = 0.0;

  bool operator==(const ReportLine&) const = default;
};

/// Reads back a markdown table produced by emit_report.
inline std::vector<ReportLine> parse_markdown_report(const std::string& text) {
  std::vector<ReportLine> rows;
  std::istringstream in(text);
  std::string line;
  int table_line = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line.front() != '|') continue;
    ++table_line;
    if (table_line <= 2) continue;  // header and alignment rows
    std::vector<std::string> cells;
    std::size_t pos = 1;
    while (pos < line.size()) {
      const std::size_t bar = line.find('|', pos);
      if (bar == std::string::npos) break;
      std::string cell = line.substr(pos, bar - pos);
      const auto b = cell.find_first_not_of(' ');
      const auto e = cell.find_last_not_of(' ');
      cells.push_back(b == std::string::npos ? std::string() : cell.substr(b, e - b + 1));
      pos = bar + 1;
    }
    detail::require(cells.size() == 5, Errc::format, "markdown row must have 5 cells: " + line);
    ReportLine r{cells[0], cells[1], cells[2],
                 detail::parse_double(cells[3], Errc::format, "error (%)"),
                 detail::parse_double(cells[4], Errc::format, "runtime (s)")};
    rows.push_back(std::move(r));
  }
  return rows;
}

inline std::vector<ReportLine> parse_csv_report(const std::string& text) {
  std::vector<ReportLine> rows;
  std::istringstream in(text);
  std::string line;
  detail::require(static_cast<bool>(std::getline(in, line)) && line == "method,learner,protocol,error_pct,runtime_s",
                  Errc::format, "unexpected CSV header");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    detail::require(cells.size() == 5, Errc::format, "CSV row must have 5 fields: " + line);
    rows.push_back({cells[0], cells[1], cells[2], detail::parse_double(cells[3], Errc::format, "error_pct"),
                    detail::parse_double(cells[4], Errc::format, "runtime_s")});
  }
  return rows;
}

}  // namespace escm
