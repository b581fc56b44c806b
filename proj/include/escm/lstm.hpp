#pragma once

#include "escm/common.hpp"
#include "escm/data_model.hpp"
#include "escm/spectral.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace escm {

enum class Gate { forget = 0, input = 1, candidate = 2, output = 3 };
inline constexpr std::array<Gate, 4> kGates{Gate::forget, Gate::input, Gate::candidate, Gate::output};

enum class Optimizer { adam, sgd };

inline const char* to_string(Optimizer opt) { return opt == Optimizer::adam ? "adam" : "sgd"; }

inline Optimizer parse_optimizer(const std::string& s) {
  if (s == "adam") return Optimizer::adam;
  if (s == "sgd") return Optimizer::sgd;
  throw Error(Errc::parameter, "unknown optimizer '" + s + "'");
}

struct TrainConfig {
  double lambda = 0.1;
  double lr = 0.001;
  int epochs = 300;
  Index hidden = 0;  // 0 resolves to ceil(N / 5)
  double grad_clip = 5.0;  // global-norm threshold; <= 0 disables clipping
  std::uint64_t seed = 0;
  Optimizer optimizer = Optimizer::adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double divergence_threshold = 1e12;
};

inline Index default_hidden(Index points) { return (points + 4) / 5; }

inline void validate(const TrainConfig& cfg) {
  detail::require(std::isfinite(cfg.lambda) && cfg.lambda >= 0.0, Errc::parameter, "lambda must be >= 0");
  detail::require(std::isfinite(cfg.lr) && cfg.lr > 0.0, Errc::parameter, "learning rate must be > 0");
  detail::require(cfg.epochs >= 1, Errc::parameter, "epochs must be >= 1");
  detail::require(cfg.hidden >= 0, Errc::parameter, "hidden size must be >= 0 (0 = default)");
}

inline TrainConfig resolve(TrainConfig cfg, Index points) {
  validate(cfg);
  if (cfg.hidden == 0) cfg.hidden = default_hidden(points);
  return cfg;
}

/// All trainable parameters in one flat vector. Each tensor is exposed as a
/// column-major view; the tensor order is W_f, b_f, W_i, b_i, W_m, b_m,
/// W_o, b_o, W_fc, b_fc. Gradients and optimizer moments reuse this type.
class LstmModel {
 public:
  using MatrixMap = Eigen::Map<Matrix>;
  using ConstMatrixMap = Eigen::Map<const Matrix>;
  using VectorMap = Eigen::Map<Vector>;
  using ConstVectorMap = Eigen::Map<const Vector>;

  LstmModel() = default;

  LstmModel(Index dim, Index points, Index hidden) : dim_(dim), points_(points), hidden_(hidden) {
    detail::require(dim >= 1 && points >= 2 && hidden >= 1, Errc::shape,
                    "model needs dim >= 1, points >= 2, hidden >= 1");
    params_ = Vector::Zero(total_size());
  }

  Index dim() const { return dim_; }
  Index points() const { return points_; }
  Index hidden() const { return hidden_; }
  Index input_size() const { return dim_ * points_; }
  Index concat_size() const { return hidden_ + input_size(); }
  Index output_size() const { return points_ * points_ - points_; }
  Index size() const { return params_.size(); }

  Vector& params() { return params_; }
  const Vector& params() const { return params_; }

  MatrixMap w(Gate g) { return {params_.data() + gate_offset(g), hidden_, concat_size()}; }
  ConstMatrixMap w(Gate g) const { return {params_.data() + gate_offset(g), hidden_, concat_size()}; }
  VectorMap b(Gate g) { return {params_.data() + gate_offset(g) + hidden_ * concat_size(), hidden_}; }
  ConstVectorMap b(Gate g) const { return {params_.data() + gate_offset(g) + hidden_ * concat_size(), hidden_}; }
  MatrixMap w_fc() { return {params_.data() + fc_offset(), output_size(), hidden_}; }
  ConstMatrixMap w_fc() const { return {params_.data() + fc_offset(), output_size(), hidden_}; }
  VectorMap b_fc() { return {params_.data() + fc_offset() + output_size() * hidden_, output_size()}; }
  ConstVectorMap b_fc() const { return {params_.data() + fc_offset() + output_size() * hidden_, output_size()}; }

  LstmModel zeros_like() const {
    LstmModel out = *this;
    out.params_.setZero();
    return out;
  }

  bool same_shape(const LstmModel& o) const {
    return dim_ == o.dim_ && points_ == o.points_ && hidden_ == o.hidden_;
  }

  /// Visits tensors in checkpoint order as (name, rows, cols, column-major data).
  template <class F>
  void for_each_tensor(F&& f) const {
    static constexpr std::array<const char*, 4> wn{"W_f", "W_i", "W_m", "W_o"};
    static constexpr std::array<const char*, 4> bn{"b_f", "b_i", "b_m", "b_o"};
    for (Gate g : kGates) {
      const auto gi = static_cast<std::size_t>(g);
      f(wn[gi], hidden_, concat_size(), params_.data() + gate_offset(g));
      f(bn[gi], hidden_, Index{1}, params_.data() + gate_offset(g) + hidden_ * concat_size());
    }
    f("W_fc", output_size(), hidden_, params_.data() + fc_offset());
    f("b_fc", output_size(), Index{1}, params_.data() + fc_offset() + output_size() * hidden_);
  }

 private:
  Index gate_block() const { return hidden_ * concat_size() + hidden_; }
  Index gate_offset(Gate g) const { return static_cast<Index>(g) * gate_block(); }
  Index fc_offset() const { return 4 * gate_block(); }
  Index total_size() const { return fc_offset() + output_size() * hidden_ + output_size(); }

  Index dim_ = 0;
  Index points_ = 0;
  Index hidden_ = 0;
  Vector params_;
};

/// Gate weights and projection ~ U(-1/sqrt(h), 1/sqrt(h)), forget bias 1,
/// other biases 0.
inline LstmModel init_model(Index dim, Index points, Index hidden, std::uint64_t seed) {
  LstmModel model(dim, points, hidden);
  std::mt19937_64 rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  std::uniform_real_distribution<double> uni(-bound, bound);
  auto fill = [&](auto&& m) {
    for (Index j = 0; j < m.cols(); ++j)
      for (Index i = 0; i < m.rows(); ++i) m(i, j) = uni(rng);
  };
  for (Gate g : kGates) fill(model.w(g));
  model.b(Gate::forget).setOnes();
  fill(model.w_fc());
  return model;
}

struct LstmState {
  Vector cell;
  Vector hidden;

  static LstmState zeros(Index h) { return {Vector::Zero(h), Vector::Zero(h)}; }
};

/// Activations retained for backpropagation through one step.
struct StepCache {
  Vector concat;  // [hidden_{t-1}; x_t]
  Vector forget, input, candidate, output;
  Vector cell_prev, cell, tanh_cell, hidden;
};

struct ForwardStep {
  LstmState state;
  Vector raw;  // length N^2 - N
  StepCache cache;
};

namespace detail {

inline double sigmoid(double a) {
  if (a >= 0.0) return 1.0 / (1.0 + std::exp(-a));
  const double e = std::exp(a);
  return e / (1.0 + e);
}

inline Vector sigmoid(const Vector& a) { return a.unaryExpr([](double v) { return sigmoid(v); }); }

}  // namespace detail

inline ForwardStep lstm_forward(const LstmModel& model, const Eigen::Ref<const Vector>& x,
                                const LstmState& state) {
  detail::require(x.size() == model.input_size(), Errc::shape,
                  "input length " + std::to_string(x.size()) + " != D*N = " + std::to_string(model.input_size()));
  detail::require(state.hidden.size() == model.hidden() && state.cell.size() == model.hidden(), Errc::shape,
                  "state size does not match hidden size " + std::to_string(model.hidden()));
  ForwardStep out;
  StepCache& c = out.cache;
  c.concat.resize(model.concat_size());
  c.concat << state.hidden, x;
  c.forget = detail::sigmoid(model.w(Gate::forget) * c.concat + model.b(Gate::forget));
  c.input = detail::sigmoid(model.w(Gate::input) * c.concat + model.b(Gate::input));
  c.candidate = (model.w(Gate::candidate) * c.concat + model.b(Gate::candidate)).array().tanh();
  c.output = detail::sigmoid(model.w(Gate::output) * c.concat + model.b(Gate::output));
  c.cell_prev = state.cell;
  c.cell = c.forget.cwiseProduct(state.cell) + c.input.cwiseProduct(c.candidate);
  c.tanh_cell = c.cell.array().tanh();
  c.hidden = c.output.cwiseProduct(c.tanh_cell);
  out.raw = model.w_fc() * c.hidden + model.b_fc();
  detail::require(out.raw.allFinite() && c.cell.allFinite(), Errc::divergence, "non-finite forward output");
  out.state = {c.cell, c.hidden};
  return out;
}

// ---------------------------------------------------------------------------
// Diagonal padding

inline Index points_from_offdiag(Index len) {
  const auto n = static_cast<Index>(std::llround((1.0 + std::sqrt(1.0 + 4.0 * static_cast<double>(len))) / 2.0));
  detail::require(len >= 2 && n * n - n == len, Errc::shape,
                  "length " + std::to_string(len) + " is not N^2 - N for any N >= 2");
  return n;
}

/// Fills off-diagonal entries column by column (skipping the diagonal).
inline SelfExpression pad_diagonal(const Eigen::Ref<const Vector>& raw, int t = 1) {
  const Index n = points_from_offdiag(raw.size());
  Matrix c = Matrix::Zero(n, n);
  Index k = 0;
  for (Index j = 0; j < n; ++j)
    for (Index i = 0; i < n; ++i)
      if (i != j) c(i, j) = raw(k++);
  return SelfExpression::from_matrix(std::move(c), t);
}

/// Inverse of pad_diagonal; diagonal entries are dropped.
inline Vector unpad_diagonal(const Matrix& c) {
  const Index n = c.rows();
  Vector raw(n * n - n);
  Index k = 0;
  for (Index j = 0; j < n; ++j)
    for (Index i = 0; i < n; ++i)
      if (i != j) raw(k++) = c(i, j);
  return raw;
}

// ---------------------------------------------------------------------------
// Loss

struct LossGrad {
  double loss = 0.0;   // smooth + lambda * ||C||_1
  double recon = 0.0;  // 1/2 tr(G (I-C)(I-C)^T)
  Matrix grad;         // zero diagonal
};

inline double sign0(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

/// L = 1/2 tr(G (I-C)(I-C)^T) + lambda |C|_1 and dL/dC = G (C - I) + lambda sign(C)
/// with G = X^T X. The diagonal of the gradient is zeroed.
inline LossGrad loss_and_grad(const Matrix& c, const Matrix& gram, double lambda) {
  const Index n = c.rows();
  detail::require(c.cols() == n && gram.rows() == n && gram.cols() == n, Errc::shape,
                  "C and G must both be N x N");
  const double scale = std::max(1.0, gram.cwiseAbs().maxCoeff());
  detail::require((gram - gram.transpose()).cwiseAbs().maxCoeff() <= 1e-9 * scale, Errc::input,
                  "Gram matrix is not symmetric");
  Matrix residual = -c;  // I - C
  residual.diagonal().array() += 1.0;
  const Matrix g_res = gram * residual;
  LossGrad out;
  // tr(G E E^T) = sum_ij (G E)_ij E_ij
  out.recon = 0.5 * g_res.cwiseProduct(residual).sum();
  out.loss = out.recon + lambda * c.cwiseAbs().sum();
  out.grad = -g_res + lambda * c.unaryExpr([](double v) { return sign0(v); });
  out.grad.diagonal().setZero();
  return out;
}

inline LossGrad loss_and_grad(const SelfExpression& c, const Matrix& gram, double lambda) {
  return loss_and_grad(c.matrix(), gram, lambda);
}

/// 1/2 ||X - X C||_F^2.
inline double reconstruction_loss(const Matrix& x, const Matrix& c) {
  return 0.5 * (x - x * c).squaredNorm();
}

// ---------------------------------------------------------------------------
// Backpropagation through time

struct BpttResult {
  LstmModel grad;
  double loss = 0.0;   // mean over window steps
  double recon = 0.0;  // mean reconstruction part
  double grad_norm = 0.0;  // before clipping
};

inline double clip_global_norm(LstmModel& grad, double threshold) {
  const double norm = grad.params().norm();
  if (threshold > 0.0 && norm > threshold) grad.params() *= threshold / norm;
  return norm;
}

inline BpttResult bptt(const LstmModel& model, const SequenceWindow& window, const TrainConfig& cfg,
                       int epoch = 0) {
  detail::require(window.inputs.rows() == model.input_size() && window.targets.rows() == model.points() * model.points(),
                  Errc::shape, "window does not match model dimensions");
  const int steps = window.length();
  const double inv_steps = 1.0 / static_cast<double>(steps);
  const Index h = model.hidden();

  std::vector<StepCache> caches;
  std::vector<Vector> d_raw;
  caches.reserve(static_cast<std::size_t>(steps));
  d_raw.reserve(static_cast<std::size_t>(steps));

  BpttResult out;
  LstmState state = LstmState::zeros(h);
  for (int s = 0; s < steps; ++s) {
    ForwardStep fwd;
    try {
      fwd = lstm_forward(model, window.inputs.col(s), state);
    } catch (const Error& e) {
      if (e.code() == Errc::divergence) throw DivergenceError("non-finite forward output", epoch, s + 1);
      throw;
    }
    const SelfExpression c = pad_diagonal(fwd.raw);
    const LossGrad lg = loss_and_grad(c.matrix(), window.gram(s), cfg.lambda);
    if (!std::isfinite(lg.loss) || lg.loss > cfg.divergence_threshold)
      throw DivergenceError("loss diverged", epoch, s + 1);
    out.loss += lg.loss * inv_steps;
    out.recon += lg.recon * inv_steps;
    d_raw.push_back(unpad_diagonal(lg.grad) * inv_steps);
    caches.push_back(std::move(fwd.cache));
    state = std::move(fwd.state);
  }

  out.grad = model.zeros_like();
  LstmModel& g = out.grad;
  Vector dh_next = Vector::Zero(h);
  Vector dcell_next = Vector::Zero(h);
  for (int s = steps - 1; s >= 0; --s) {
    const StepCache& c = caches[static_cast<std::size_t>(s)];
    const Vector& dr = d_raw[static_cast<std::size_t>(s)];
    g.w_fc().noalias() += dr * c.hidden.transpose();
    g.b_fc() += dr;
    const Vector dh = model.w_fc().transpose() * dr + dh_next;

    const Vector d_out = dh.cwiseProduct(c.tanh_cell).cwiseProduct(c.output.cwiseProduct((1.0 - c.output.array()).matrix()));
    const Vector dcell = dh.cwiseProduct(c.output).cwiseProduct((1.0 - c.tanh_cell.array().square()).matrix()) + dcell_next;
    const Vector d_forget = dcell.cwiseProduct(c.cell_prev).cwiseProduct(c.forget.cwiseProduct((1.0 - c.forget.array()).matrix()));
    const Vector d_input = dcell.cwiseProduct(c.candidate).cwiseProduct(c.input.cwiseProduct((1.0 - c.input.array()).matrix()));
    const Vector d_cand = dcell.cwiseProduct(c.input).cwiseProduct((1.0 - c.candidate.array().square()).matrix());

    const std::array<const Vector*, 4> d_pre{&d_forget, &d_input, &d_cand, &d_out};
    Vector d_concat = Vector::Zero(model.concat_size());
    for (Gate gate : kGates) {
      const Vector& dp = *d_pre[static_cast<std::size_t>(gate)];
      g.w(gate).noalias() += dp * c.concat.transpose();
      g.b(gate) += dp;
      d_concat.noalias() += model.w(gate).transpose() * dp;
    }
    dh_next = d_concat.head(h);
    dcell_next = dcell.cwiseProduct(c.forget);
  }
  out.grad_norm = clip_global_norm(g, cfg.grad_clip);
  return out;
}

/// Mean window loss without gradients.
inline double window_loss(const LstmModel& model, const SequenceWindow& window, double lambda) {
  LstmState state = LstmState::zeros(model.hidden());
  double loss = 0.0;
  for (int s = 0; s < window.length(); ++s) {
    ForwardStep fwd = lstm_forward(model, window.inputs.col(s), state);
    loss += loss_and_grad(pad_diagonal(fwd.raw).matrix(), window.gram(s), lambda).loss;
    state = std::move(fwd.state);
  }
  return loss / static_cast<double>(window.length());
}

// ---------------------------------------------------------------------------
// Optimizers

class ParameterUpdater {
 public:
  ParameterUpdater(const LstmModel& shape, const TrainConfig& cfg)
      : cfg_(cfg), m_(Vector::Zero(shape.size())), v_(Vector::Zero(shape.size())) {}

  void step(LstmModel& model, const LstmModel& grad) {
    const Vector& gv = grad.params();
    if (cfg_.optimizer == Optimizer::sgd) {
      model.params() -= cfg_.lr * gv;
      return;
    }
    ++t_;
    m_ = cfg_.beta1 * m_ + (1.0 - cfg_.beta1) * gv;
    v_ = cfg_.beta2 * v_ + (1.0 - cfg_.beta2) * gv.cwiseAbs2();
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    model.params().array() -= cfg_.lr * (m_.array() / c1) / ((v_.array() / c2).sqrt() + cfg_.epsilon);
  }

 private:
  TrainConfig cfg_;
  Vector m_;
  Vector v_;
  long long t_ = 0;
};

// ---------------------------------------------------------------------------
// Training and inference

struct TrainResult {
  LstmModel model;
  TrainConfig config;                 // with hidden size resolved
  std::vector<double> loss_trace;     // mean window loss per epoch, before that epoch's updates
  std::vector<SelfExpression> coeffs; // final forward pass over the full sequence
  double final_recon_loss = 0.0;      // mean_t 1/2 ||X_t - X_t C_t||^2 over coeffs
};

/// Zero initial state, one forward pass, no parameter updates.
inline std::vector<SelfExpression> infer_coeffs(const LstmModel& model, const EvolvingSequence& seq) {
  std::vector<SelfExpression> out;
  LstmState state = LstmState::zeros(model.hidden());
  for (const Snapshot& snap : seq.snapshots) {
    detail::require(snap.dim() == model.dim() && snap.points() == model.points(), Errc::shape,
                    "snapshot " + detail::shape_str(snap.dim(), snap.points()) + " does not match model " +
                        detail::shape_str(model.dim(), model.points()));
    ForwardStep fwd = lstm_forward(model, detail::vec(snap.data), state);
    out.push_back(pad_diagonal(fwd.raw, snap.t));
    state = std::move(fwd.state);
  }
  return out;
}

inline double mean_reconstruction_loss(const EvolvingSequence& seq, const std::vector<SelfExpression>& coeffs) {
  double total = 0.0;
  for (std::size_t t = 0; t < coeffs.size(); ++t)
    total += reconstruction_loss(seq.snapshots[t].data, coeffs[t].matrix());
  return coeffs.empty() ? 0.0 : total / static_cast<double>(coeffs.size());
}

namespace detail {

inline void check_uniform_windows(std::span<const SequenceWindow> wins) {
  require(!wins.empty(), Errc::parameter, "training needs at least one window");
  const Index in = wins.front().inputs.rows();
  const Index out = wins.front().targets.rows();
  for (const auto& w : wins)
    require(w.inputs.rows() == in && w.targets.rows() == out, Errc::shape,
            "all windows must share D*N (" + std::to_string(in) + ") and N^2 (" + std::to_string(out) + ")");
}

inline std::vector<double> run_epochs(LstmModel& model, std::span<const SequenceWindow> wins, const TrainConfig& cfg,
                                      bool shuffle) {
  ParameterUpdater updater(model, cfg);
  std::vector<std::size_t> order(wins.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 shuffle_rng(splitmix64(cfg.seed ^ 0x5DEECE66DULL));
  std::vector<double> trace;
  trace.reserve(static_cast<std::size_t>(cfg.epochs));
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    if (shuffle) std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_loss = 0.0;
    for (std::size_t idx : order) {
      BpttResult r = bptt(model, wins[idx], cfg, epoch);
      epoch_loss += r.loss;
      updater.step(model, r.grad);
    }
    trace.push_back(epoch_loss / static_cast<double>(wins.size()));
    if (!model.params().allFinite()) throw DivergenceError("parameters became non-finite", epoch, 0);
  }
  return trace;
}

}  // namespace detail

/// Per-sequence training: one optimizer step per window per epoch, windows
/// in order. Coefficients come from a final forward pass over `seq`.
inline TrainResult train_sequence(const EvolvingSequence& seq, std::span<const SequenceWindow> wins,
                                  const TrainConfig& config) {
  detail::check_uniform_windows(wins);
  TrainResult out;
  out.config = resolve(config, seq.points());
  const SequenceWindow& w0 = wins.front();
  detail::require(w0.points() == seq.points() && w0.dim() == seq.snapshots.front().dim(), Errc::shape,
                  "windows were not built from this sequence's dimensions");
  out.model = init_model(w0.dim(), w0.points(), out.config.hidden, out.config.seed);
  out.loss_trace = detail::run_epochs(out.model, wins, out.config, false);
  out.coeffs = infer_coeffs(out.model, seq);
  out.final_recon_loss = mean_reconstruction_loss(seq, out.coeffs);
  return out;
}

inline TrainResult train_sequence(const EvolvingSequence& seq, int window_length, int stride,
                                  const TrainConfig& config) {
  const auto wins = windows(seq, window_length, stride);
  return train_sequence(seq, wins, config);
}

/// One model over the union of windows from several sequences, shuffled
/// each epoch.
inline TrainResult train_pooled(std::span<const SequenceWindow> wins, const TrainConfig& config) {
  detail::check_uniform_windows(wins);
  const SequenceWindow& w0 = wins.front();
  TrainResult out;
  out.config = resolve(config, w0.points());
  out.model = init_model(w0.dim(), w0.points(), out.config.hidden, out.config.seed);
  out.loss_trace = detail::run_epochs(out.model, wins, out.config, true);
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints: "ESCM", u32 version, u32 D, u32 N, u32 h, then tensors
// row-major as little-endian f64.

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
                     static_cast<char>((v >> 16) & 0xFF), static_cast<char>((v >> 24) & 0xFF)};
  out.write(b, 4);
}

inline void put_f64(std::ostream& out, double d) {
  const auto v = std::bit_cast<std::uint64_t>(d);
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(b, 8);
}

inline std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  require(in.gcount() == 4, Errc::format, "truncated checkpoint header");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline double get_f64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  require(in.gcount() == 8, Errc::format, "truncated checkpoint body");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return std::bit_cast<double>(v);
}

}  // namespace detail

inline void write_checkpoint(std::ostream& out, const LstmModel& model) {
  out.write("ESCM", 4);
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(model.dim()));
  detail::put_u32(out, static_cast<std::uint32_t>(model.points()));
  detail::put_u32(out, static_cast<std::uint32_t>(model.hidden()));
  model.for_each_tensor([&](const char*, Index rows, Index cols, const double* data) {
    for (Index i = 0; i < rows; ++i)
      for (Index j = 0; j < cols; ++j) detail::put_f64(out, data[j * rows + i]);
  });
}

inline LstmModel read_checkpoint(std::istream& in) {
  char magic[4] = {};
  in.read(magic, 4);
  detail::require(in.gcount() == 4 && std::memcmp(magic, "ESCM", 4) == 0, Errc::format, "bad checkpoint magic");
  const std::uint32_t version = detail::get_u32(in);
  detail::require(version == kCheckpointVersion, Errc::format,
                  "unsupported checkpoint version " + std::to_string(version));
  const Index dim = detail::get_u32(in);
  const Index points = detail::get_u32(in);
  const Index hidden = detail::get_u32(in);
  LstmModel model(dim, points, hidden);
  Vector& p = model.params();
  Index offset = 0;
  model.for_each_tensor([&](const char*, Index rows, Index cols, const double*) {
    for (Index i = 0; i < rows; ++i)
      for (Index j = 0; j < cols; ++j) p(offset + j * rows + i) = detail::get_f64(in);
    offset += rows * cols;
  });
  detail::require(p.allFinite(), Errc::format, "checkpoint contains non-finite parameters");
  return model;
}

}  // namespace escm
