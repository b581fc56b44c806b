#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace escm {

using Index = Eigen::Index;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Labels = std::vector<int>;

enum class Errc {
  format,
  dimension,
  label,
  insufficient_frames,
  degenerate_data,
  window_too_long,
  shape,
  divergence,
  input,
  parameter,
  protocol,
  config,
  io,
};

inline const char* to_string(Errc code) {
  switch (code) {
    case Errc::format: return "format error";
    case Errc::dimension: return "dimension error";
    case Errc::label: return "label error";
    case Errc::insufficient_frames: return "insufficient-frames error";
    case Errc::degenerate_data: return "degenerate-data error";
    case Errc::window_too_long: return "window-too-long error";
    case Errc::shape: return "shape error";
    case Errc::divergence: return "divergence error";
    case Errc::input: return "input error";
    case Errc::parameter: return "parameter error";
    case Errc::protocol: return "protocol error";
    case Errc::config: return "config error";
    case Errc::io: return "io error";
  }
  return "error";
}

/// Every failure raised by the library carries one of the Errc kinds so
/// callers (the CLI in particular) can map it to a stable exit code.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

/// Raised when training produces a non-finite or exploding loss.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, int epoch, int step)
      : Error(Errc::divergence, what + " (epoch " + std::to_string(epoch) + ", step " +
                                    std::to_string(step) + ")"),
        epoch_(epoch),
        step_(step) {}

  int epoch() const noexcept { return epoch_; }
  int step() const noexcept { return step_; }

 private:
  int epoch_;
  int step_;
};

namespace detail {

inline void require(bool cond, Errc code, const std::string& what) {
  if (!cond) throw Error(code, what);
}

inline std::string shape_str(Index rows, Index cols) {
  return std::to_string(rows) + "x" + std::to_string(cols);
}

// Column-major vectorization and its inverse.
inline Vector vec(const Matrix& m) {
  return Eigen::Map<const Vector>(m.data(), m.size());
}

inline Matrix unvec(const Vector& v, Index rows, Index cols) {
  return Eigen::Map<const Matrix>(v.data(), rows, cols);
}

inline int count_clusters(const Labels& labels) {
  int k = 0;
  for (int l : labels) k = std::max(k, l);
  return k;
}

}  // namespace detail
}  // namespace escm
