#include "escm/data_model.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <random>
#include <sstream>

using namespace escm;

namespace {

std::string trajectory_text(int frames, int points, int motions, int body_rows, const std::string& labels = "none") {
  std::ostringstream s;
  s << "frames=" << frames << " points=" << points << " motions=" << motions << "\n";
  s << "labels=" << labels << "\n";
  for (int r = 0; r < body_rows; ++r) {
    for (int c = 0; c < points; ++c) s << (c ? " " : "") << (r * 0.5 + c * 0.25);
    s << "\n";
  }
  return s.str();
}

Errc error_code(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected escm::Error";
  return Errc::io;
}

Trajectories random_trajectories(Index frames, Index points, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Trajectories t;
  t.frames = frames;
  t.motions = 2;
  t.data = oracle::random_matrix(2 * frames, points, rng, 100.0);
  Labels l(static_cast<std::size_t>(points));
  for (Index i = 0; i < points; ++i) l[i] = i < points / 2 ? 1 : 2;
  t.labels = l;
  return t;
}

}  // namespace

TEST(LoadSequence, HeaderFixesDimensions) {
  std::istringstream in(trajectory_text(15, 39, 2, 30));
  const Trajectories t = read_trajectories(in);
  EXPECT_EQ(t.data.rows(), 30);
  EXPECT_EQ(t.data.cols(), 39);
  EXPECT_EQ(t.frames, 15);
  EXPECT_EQ(t.motions, 2);
  EXPECT_FALSE(t.labels.has_value());
}

TEST(LoadSequence, RowCountMismatchIsDimensionError) {
  std::istringstream in(trajectory_text(15, 39, 2, 29));
  EXPECT_EQ(error_code([&] { read_trajectories(in); }), Errc::dimension);
}

TEST(LoadSequence, ColumnCountMismatchIsDimensionError) {
  // Body rows carry 3 columns while the header promises 4.
  std::string text = trajectory_text(1, 3, 1, 2);
  text.replace(text.find("points=3"), 8, "points=4");
  std::istringstream in(text);
  EXPECT_EQ(error_code([&] { read_trajectories(in); }), Errc::dimension);
}

TEST(LoadSequence, MalformedHeaderIsFormatError) {
  std::istringstream a("frames=2 points=3\nlabels=none\n");
  EXPECT_EQ(error_code([&] { read_trajectories(a); }), Errc::format);
  std::istringstream b("frames=x points=3 motions=1\nlabels=none\n");
  EXPECT_EQ(error_code([&] { read_trajectories(b); }), Errc::format);
  std::istringstream c("");
  EXPECT_EQ(error_code([&] { read_trajectories(c); }), Errc::format);
}

TEST(LoadSequence, LabelOutOfRangeIsLabelError) {
  std::istringstream in(trajectory_text(1, 3, 2, 2, "1 2 3"));
  EXPECT_EQ(error_code([&] { read_trajectories(in); }), Errc::label);
  std::istringstream zero(trajectory_text(1, 3, 2, 2, "0 1 2"));
  EXPECT_EQ(error_code([&] { read_trajectories(zero); }), Errc::label);
}

TEST(LoadSequence, RejectsNonFiniteValues) {
  std::istringstream in("frames=1 points=2 motions=1\nlabels=none\n1 nan\n2 3\n");
  EXPECT_EQ(error_code([&] { read_trajectories(in); }), Errc::format);
  std::istringstream inf("frames=1 points=2 motions=1\nlabels=none\n1 inf\n2 3\n");
  EXPECT_EQ(error_code([&] { read_trajectories(inf); }), Errc::format);
}

TEST(LoadSequence, SaveThenLoadIsBitExact) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    Trajectories t = random_trajectories(7, 11, seed);
    t.data(0, 0) = 5e-324;  // subnormal
    t.data(1, 1) = -1.7976931348623157e308;
    std::ostringstream first;
    write_trajectories(first, t);
    std::istringstream in(first.str());
    const Trajectories back = read_trajectories(in);
    ASSERT_EQ(back.data.rows(), t.data.rows());
    EXPECT_EQ(std::memcmp(back.data.data(), t.data.data(), sizeof(double) * t.data.size()), 0);
    EXPECT_EQ(back.labels, t.labels);
    std::ostringstream second;
    write_trajectories(second, back);
    EXPECT_EQ(first.str(), second.str());
  }
}

TEST(Snapshotize, RemainderGoesToLastBlock) {
  EXPECT_EQ(snapshot_frame_counts(30, 2), (std::vector<Index>{4, 4, 4, 4, 4, 4, 6}));
  EXPECT_EQ(snapshot_frame_counts(4, 2), (std::vector<Index>{4}));
  EXPECT_EQ(error_code([] { snapshot_frame_counts(3, 2); }), Errc::insufficient_frames);

  const Trajectories t = random_trajectories(30, 5, 9);
  const EvolvingSequence seq = snapshotize(t, 2);
  ASSERT_EQ(seq.steps(), 7);
  EXPECT_EQ(seq.snapshots.back().dim(), 12);
  for (int i = 0; i < 6; ++i) EXPECT_EQ(seq.snapshots[i].dim(), 8);
  EXPECT_EQ(seq.snapshots[3].t, 4);
}

TEST(Snapshotize, BlocksReassembleTrajectories) {
  const Trajectories t = random_trajectories(23, 6, 4);
  const EvolvingSequence seq = snapshotize(t, 3);
  const Trajectories back = to_trajectories(seq);
  EXPECT_EQ(back.data, t.data);
  EXPECT_EQ(back.frames, t.frames);
}

TEST(NormalizeColumns, ScalesAndFlags) {
  Snapshot s;
  s.data.resize(2, 3);
  s.data << 3, 0, 1, 4, 0, 0;
  const NormalizedSnapshot n = normalize_columns(s);
  EXPECT_DOUBLE_EQ(n.snapshot.data(0, 0), 0.6);
  EXPECT_DOUBLE_EQ(n.snapshot.data(1, 0), 0.8);
  EXPECT_EQ(n.snapshot.data.col(1), Vector::Zero(2));
  EXPECT_EQ(n.zero_columns, (std::vector<Index>{1}));
  const NormalizedSnapshot again = normalize_columns(n.snapshot);
  EXPECT_LT((again.snapshot.data - n.snapshot.data).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(PcaProject, KeepsFourNRows) {
  std::mt19937_64 rng(5);
  Snapshot s;
  s.data = oracle::random_matrix(12, 30, rng);
  const Snapshot p = pca_project(s, 2);
  EXPECT_EQ(p.dim(), 8);
  EXPECT_EQ(p.points(), 30);
  for (Index j = 0; j < p.points(); ++j) EXPECT_NEAR(p.data.col(j).norm(), 1.0, 1e-9);
}

TEST(PcaProject, FewerRowsThanFourNKeepsAllRows) {
  std::mt19937_64 rng(6);
  Snapshot s;
  s.data = oracle::random_matrix(6, 20, rng);
  EXPECT_EQ(pca_project(s, 2).dim(), 6);
}

TEST(PcaProject, RankOneEnergyInFirstRow) {
  std::mt19937_64 rng(7);
  const Vector u = oracle::random_matrix(10, 1, rng);
  const Vector v = oracle::random_matrix(15, 1, rng);
  Snapshot s;
  s.data = u * v.transpose();
  const Snapshot p = pca_project(s, 2);
  EXPECT_NEAR(p.data.row(0).squaredNorm() / p.data.squaredNorm(), 1.0, 1e-12);
  EXPECT_LT(p.data.bottomRows(p.dim() - 1).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(PcaProject, ProjectedEnergyMatchesTopSingularValues) {
  std::mt19937_64 rng(8);
  Snapshot s;
  s.data = oracle::random_matrix(20, 50, rng);
  const Matrix proj = pca_projection(s, 2);
  // Independent route: eigenvalues of X X^T are the squared singular values.
  Eigen::SelfAdjointEigenSolver<Matrix> eig(s.data * s.data.transpose());
  const Vector ev = eig.eigenvalues();
  const double top8 = ev.tail(8).sum();
  EXPECT_NEAR(proj.squaredNorm(), top8, 1e-9 * top8);
}

TEST(PcaProject, PreservesGramWhenRankFits) {
  std::mt19937_64 rng(9);
  Snapshot s;
  s.data = oracle::random_matrix(16, 5, rng) * oracle::random_matrix(5, 30, rng);  // rank 5 <= 8
  const Matrix proj = pca_projection(s, 2);
  const Matrix g = s.data.transpose() * s.data;
  EXPECT_LT((g - proj.transpose() * proj).norm(), 1e-9 * g.norm());
}

TEST(PcaProject, AllZeroIsDegenerate) {
  Snapshot s;
  s.data = Matrix::Zero(8, 5);
  EXPECT_EQ(error_code([&] { pca_project(s, 2); }), Errc::degenerate_data);
}

TEST(Windows, CountAndBoundaries) {
  SynthConfig cfg;
  cfg.steps = 7;
  cfg.ambient_dim = 6;
  cfg.points_per_subspace = {3, 3};
  cfg.subspace_dims = {2, 2};
  const EvolvingSequence seq = synth_evolving(cfg);
  const auto w3 = windows(seq, 3, 1);
  ASSERT_EQ(w3.size(), 5u);
  for (int i = 0; i < 5; ++i) EXPECT_EQ(w3[i].start, i + 1);
  EXPECT_EQ(windows(seq, 7, 1).size(), 1u);
  EXPECT_EQ(windows(seq, 3, 2).size(), static_cast<std::size_t>(window_count(7, 3, 2)));
  EXPECT_EQ(windows(seq, 3, 2).size(), 3u);
  EXPECT_EQ(error_code([&] { windows(seq, 8, 1); }), Errc::window_too_long);
  EXPECT_EQ(error_code([&] { windows(seq, 0, 1); }), Errc::parameter);
}

TEST(Windows, IdentityTargetIsVecIdentity) {
  EvolvingSequence seq;
  seq.n_motions = 1;
  Snapshot s;
  s.data = Matrix::Identity(2, 2);
  seq.snapshots.push_back(s);
  const auto w = windows(seq, 1, 1);
  EXPECT_EQ(w[0].targets.col(0), (Vector(4) << 1, 0, 0, 1).finished());
}

TEST(Windows, TargetsAreGramsOfInputs) {
  SynthConfig cfg;
  cfg.steps = 6;
  cfg.seed = 17;
  const EvolvingSequence seq = preprocess(synth_evolving(cfg));
  for (const auto& w : windows(seq, 4, 1)) {
    for (int s = 0; s < w.length(); ++s) {
      const Matrix x = w.snapshot(s);
      const Matrix g = x.transpose() * x;
      EXPECT_LT((w.gram(s) - g).norm(), 1e-12 * g.norm());
      EXPECT_EQ(x, seq.snapshots[w.start - 1 + s].data);
      Eigen::SelfAdjointEigenSolver<Matrix> eig(w.gram(s));
      EXPECT_GE(eig.eigenvalues().minCoeff(), -1e-10 * g.norm());
      EXPECT_EQ(w.gram(s), w.gram(s).transpose());
    }
  }
}

TEST(SynthEvolving, StaticNoiselessSnapshotsAreIdentical) {
  SynthConfig cfg;
  cfg.rotation_rate = 0.0;
  cfg.noise_sigma = 0.0;
  const EvolvingSequence seq = synth_evolving(cfg);
  for (const auto& s : seq.snapshots) EXPECT_EQ(s.data, seq.snapshots.front().data);
}

TEST(SynthEvolving, NoiselessPointsLieInTheirSubspace) {
  SynthConfig cfg;
  cfg.noise_sigma = 0.0;
  cfg.rotation_rate = 0.2;
  cfg.seed = 3;
  const SynthResult r = synth_evolving_with_truth(cfg);
  for (const auto& s : r.sequence.snapshots) {
    for (Index j = 0; j < s.points(); ++j) {
      const std::size_t label = static_cast<std::size_t>((*s.labels)[j] - 1);
      const Matrix u = r.truth.basis_at(label, s.t);
      EXPECT_NEAR((u.transpose() * u - Matrix::Identity(u.cols(), u.cols())).norm(), 0.0, 1e-12);
      const Vector x = s.data.col(j);
      EXPECT_LT((x - u * (u.transpose() * x)).norm(), 1e-9);
    }
  }
}

TEST(SynthEvolving, DeterministicGivenSeed) {
  SynthConfig cfg;
  cfg.seed = 99;
  const EvolvingSequence a = synth_evolving(cfg);
  const EvolvingSequence b = synth_evolving(cfg);
  ASSERT_EQ(a.steps(), b.steps());
  for (int t = 0; t < a.steps(); ++t) EXPECT_EQ(a.snapshots[t].data, b.snapshots[t].data);
  cfg.seed = 100;
  EXPECT_NE(synth_evolving(cfg).snapshots[0].data, a.snapshots[0].data);
}

TEST(SynthConfigParse, RoundTripsAndNamesBadKeys) {
  SynthConfig cfg;
  cfg.points_per_subspace = {5, 6, 7};
  cfg.subspace_dims = {2, 3, 2};
  cfg.rotation_rate = 0.125;
  cfg.seed = 42;
  const SynthConfig back = parse_synth_config(to_config_text(cfg));
  EXPECT_EQ(back.points_per_subspace, cfg.points_per_subspace);
  EXPECT_EQ(back.subspace_dims, cfg.subspace_dims);
  EXPECT_EQ(back.rotation_rate, cfg.rotation_rate);
  EXPECT_EQ(back.seed, cfg.seed);

  try {
    parse_synth_config(std::string("rotation_rate=abc\n"));
    FAIL() << "expected config error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::config);
    EXPECT_NE(std::string(e.what()).find("rotation_rate"), std::string::npos);
  }
  EXPECT_EQ(error_code([] { parse_synth_config(std::string("ambient_dim=3\nsubspace_dims=3,3\n")); }), Errc::config);
  EXPECT_EQ(error_code([] { parse_synth_config(std::string("noise_sigma=-1\n")); }), Errc::config);
  EXPECT_EQ(error_code([] { parse_synth_config(std::string("bogus=1\n")); }), Errc::config);
}
