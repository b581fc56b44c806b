#include "escm/escm.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace {

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("escm_cli_") + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  int run(const std::string& args) const {
    const std::string cmd = "cd '" + dir_.string() + "' && '" ESCM_CLI_PATH "' " + args + " > out.log 2> err.log";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  std::string read(const std::string& name) const {
    std::ifstream in(dir_ / name, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

  void write(const std::string& name, const std::string& text) const {
    fs::create_directories((dir_ / name).parent_path());
    std::ofstream(dir_ / name) << text;
  }

  void noiseless_config(const std::string& name, int seed = 3) const {
    write(name,
          "ambient_dim = 8\npoints_per_subspace = 8, 8\nsubspace_dims = 2, 2\nsteps = 4\n"
          "rotation_rate = 0\nnoise_sigma = 0\nseed = " +
              std::to_string(seed) + "\n");
  }

  fs::path dir_;
};

std::string strip_runtime(const std::string& csv) {
  std::istringstream in(csv);
  std::string line, out;
  while (std::getline(in, line)) out += line.substr(0, line.rfind(',')) + "\n";
  return out;
}

}  // namespace

TEST_F(Cli, SynthWritesLoadableFile) {
  noiseless_config("cfg.txt");
  ASSERT_EQ(run("synth --config cfg.txt --out seq.txt"), 0) << read("err.log");
  const auto seq = escm::load_sequence((dir_ / "seq.txt").string());
  EXPECT_EQ(seq.points(), 16);
  ASSERT_TRUE(seq.labels.has_value());
  EXPECT_TRUE(fs::exists(dir_ / "seq.txt.manifest.json"));
}

TEST_F(Cli, SynthBadValueNamesKey) {
  write("cfg.txt", "rotation_rate = abc\n");
  EXPECT_EQ(run("synth --config cfg.txt --out seq.txt"), 2);
  EXPECT_NE(read("err.log").find("rotation_rate"), std::string::npos);
  EXPECT_FALSE(fs::exists(dir_ / "seq.txt"));
}

TEST_F(Cli, SynthIsByteIdentical) {
  write("cfg.txt", "steps = 5\nseed = 11\n");
  ASSERT_EQ(run("synth --config cfg.txt --out a.txt"), 0);
  ASSERT_EQ(run("synth --config cfg.txt --out b.txt"), 0);
  EXPECT_EQ(read("a.txt"), read("b.txt"));
  EXPECT_FALSE(read("a.txt").empty());
}

TEST_F(Cli, TrainRejectsZeroEpochs) {
  noiseless_config("cfg.txt");
  ASSERT_EQ(run("synth --config cfg.txt --out seq.txt"), 0);
  EXPECT_EQ(run("train --input seq.txt --out-dir out --epochs 0"), 2);
  EXPECT_EQ(run("train --input missing.txt --out-dir out"), 2);
  EXPECT_EQ(run("train --input seq.txt --out-dir out --optimizer rmsprop"), 2);
}

TEST_F(Cli, TrainDefaultsReachZeroErrorOnNoiselessData) {
  noiseless_config("cfg.txt");
  ASSERT_EQ(run("synth --config cfg.txt --out seq.txt"), 0);
  ASSERT_EQ(run("train --input seq.txt --out-dir out"), 0) << read("err.log");
  EXPECT_NE(read("out.log").find("smoothing error: 0.00%"), std::string::npos) << read("out.log");
  for (const char* f : {"model.escm", "coeffs.txt", "labels.txt", "loss.txt", "errors.txt", "manifest.json"})
    EXPECT_TRUE(fs::exists(dir_ / "out" / f)) << f;

  const std::string manifest = read("out/manifest.json");
  EXPECT_NE(manifest.find("\"lambda\": 0.1"), std::string::npos);
  EXPECT_NE(manifest.find("\"lr\": 0.001"), std::string::npos);
  EXPECT_NE(manifest.find("\"hidden\": 4"), std::string::npos);  // ceil(16 / 5)
  EXPECT_NE(manifest.find("\"epochs\": 300"), std::string::npos);

  // One line of N labels per snapshot.
  std::istringstream labels(read("out/labels.txt"));
  std::string line;
  int lines = 0;
  while (std::getline(labels, line)) {
    std::istringstream row(line);
    int v = 0, count = 0;
    while (row >> v) ++count;
    EXPECT_EQ(count, 16);
    ++lines;
  }
  EXPECT_EQ(lines, escm::load_and_preprocess((dir_ / "seq.txt").string()).steps());
}

TEST_F(Cli, InferReproducesTrainLabels) {
  noiseless_config("cfg.txt");
  ASSERT_EQ(run("synth --config cfg.txt --out seq.txt"), 0);
  ASSERT_EQ(run("train --input seq.txt --out-dir out --epochs 20"), 0);
  ASSERT_EQ(run("infer --checkpoint out/model.escm --input seq.txt --out-dir inf"), 0) << read("err.log");
  EXPECT_EQ(read("out/labels.txt"), read("inf/labels.txt"));
  EXPECT_EQ(read("out/coeffs.txt"), read("inf/coeffs.txt"));
}

TEST_F(Cli, BenchmarkAllMethods) {
  noiseless_config("cfg.txt");
  ASSERT_EQ(run("synth --config cfg.txt --out data/a.txt"), 0);
  ASSERT_EQ(run("benchmark --data data --methods static,affect,cesm,lstm --learners omp --protocol smoothing "
                "--epochs 10 --out rep"),
            0)
      << read("err.log");
  const auto rows = escm::parse_csv_report(read("rep.csv"));
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0].method, "static");
  EXPECT_EQ(rows[1].method, "affect");
  EXPECT_EQ(rows[2].method, "cesm");
  EXPECT_EQ(rows[3].method, "lstm-escm");
  EXPECT_EQ(escm::parse_markdown_report(read("rep.md")).size(), 4u);
  EXPECT_TRUE(fs::exists(dir_ / "rep.manifest.json"));
}

TEST_F(Cli, BenchmarkTestProtocol) {
  noiseless_config("cfg.txt");
  ASSERT_EQ(run("synth --config cfg.txt --out data/a.txt"), 0);
  ASSERT_EQ(run("benchmark --data data --methods lstm --protocol test1 --epochs 10 --out rep"), 0);
  const auto rows = escm::parse_csv_report(read("rep.csv"));
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].protocol, "test_last_1");
}

TEST_F(Cli, BenchmarkEmptyDirectory) {
  fs::create_directories(dir_ / "empty");
  EXPECT_EQ(run("benchmark --data empty --out rep"), 2);
  EXPECT_EQ(run("benchmark --data nowhere --out rep"), 2);
  EXPECT_EQ(run("benchmark --data empty --methods kmeans --out rep"), 2);
}

TEST_F(Cli, BenchmarkSeedGivesIdenticalErrors) {
  write("cfg.txt", "ambient_dim = 8\npoints_per_subspace = 8, 8\nsubspace_dims = 2, 2\nsteps = 4\nseed = 5\n");
  ASSERT_EQ(run("synth --config cfg.txt --out data/a.txt"), 0);
  const std::string args = "benchmark --data data --methods static,cesm,lstm --epochs 15 --seed 7 --out ";
  ASSERT_EQ(run(args + "one"), 0);
  ASSERT_EQ(run(args + "two"), 0);
  EXPECT_EQ(strip_runtime(read("one.csv")), strip_runtime(read("two.csv")));
}

TEST_F(Cli, RerunReproducesOutputs) {
  noiseless_config("cfg.txt", 8);
  ASSERT_EQ(run("synth --config cfg.txt --out seq.txt"), 0);
  ASSERT_EQ(run("train --input seq.txt --out-dir out --epochs 25 --seed 4"), 0);
  const std::string model = read("out/model.escm");
  const std::string labels = read("out/labels.txt");
  fs::remove_all(dir_ / "out" / "model.escm");
  ASSERT_EQ(run("rerun out/manifest.json"), 0) << read("err.log");
  EXPECT_EQ(read("out/model.escm"), model);
  EXPECT_EQ(read("out/labels.txt"), labels);
}

TEST_F(Cli, UnknownSubcommandIsUsageError) {
  EXPECT_EQ(run("frobnicate"), 2);
}
