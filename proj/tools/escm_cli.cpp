// Command-line front end: synthetic data generation, per-sequence training,
// inference from checkpoints, and benchmark reports.

#include "escm/escm.hpp"

#include <CLI11.hpp>
#include <json.hpp>
#include <openssl/evp.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr const char* kToolVersion = "0.1.0";

enum ExitCode { kOk = 0, kUnexpected = 1, kUsage = 2, kDivergence = 3 };

std::string sha256_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return "";
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  char buf[1 << 15];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) EVP_DigestUpdate(ctx, buf, static_cast<std::size_t>(in.gcount()));
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 0xF];
  }
  return out;
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw escm::Error(escm::Errc::io, "cannot open " + path);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw escm::Error(escm::Errc::io, "cannot write " + path);
  out << text;
}

/// Collects what a run read and wrote; written once at the end of a command.
class Manifest {
 public:
  Manifest(std::string command, std::vector<std::string> argv) {
    doc_["tool"] = "escm";
    doc_["version"] = kToolVersion;
    doc_["command"] = std::move(command);
    doc_["argv"] = std::move(argv);
    doc_["inputs"] = json::array();
    doc_["outputs"] = json::array();
  }

  json& config() { return doc_["config"]; }
  void seed(const std::string& name, std::uint64_t v) { doc_["seeds"][name] = v; }
  void input(const std::string& path) { doc_["inputs"].push_back({{"path", path}, {"sha256", sha256_file(path)}}); }
  void output(const std::string& path) { doc_["outputs"].push_back({{"path", path}, {"sha256", sha256_file(path)}}); }

  void write(const std::string& path) const { write_text(path, doc_.dump(2) + "\n"); }

 private:
  json doc_;
};

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag) {
  if (flag) return *flag;
  if (const char* env = std::getenv("ESCM_SEED")) {
    try {
      return std::stoull(env);
    } catch (const std::exception&) {
      throw escm::Error(escm::Errc::config, std::string("ESCM_SEED is not an unsigned integer: '") + env + "'");
    }
  }
  return 0;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

json train_config_json(const escm::TrainConfig& c) {
  return {{"lambda", c.lambda},       {"lr", c.lr},
          {"epochs", c.epochs},       {"hidden", c.hidden},
          {"grad_clip", c.grad_clip}, {"seed", c.seed},
          {"optimizer", escm::to_string(c.optimizer)}, {"beta1", c.beta1},
          {"beta2", c.beta2},         {"epsilon", c.epsilon}};
}

std::string format_coeffs(const std::vector<escm::SelfExpression>& coeffs) {
  std::ostringstream out;
  for (const auto& c : coeffs) {
    out << "t=" << c.t() << '\n';
    const escm::Matrix& m = c.matrix();
    for (escm::Index i = 0; i < m.rows(); ++i) {
      for (escm::Index j = 0; j < m.cols(); ++j) out << (j ? " " : "") << escm::detail::format_double(m(i, j));
      out << '\n';
    }
  }
  return out.str();
}

std::string format_labels(const std::vector<escm::ClusterLabels>& labels) {
  std::ostringstream out;
  for (const auto& l : labels) {
    for (std::size_t i = 0; i < l.labels.size(); ++i) out << (i ? " " : "") << l.labels[i];
    out << '\n';
  }
  return out.str();
}

/// Writes per-t errors and returns the mean over t >= 2 (or t = 1 when T = 1).
double write_errors(const std::string& path, const escm::EvolvingSequence& seq,
                    const std::vector<escm::ClusterLabels>& labels) {
  std::ostringstream out;
  out << "t error_pct\n";
  double sum = 0.0;
  int count = 0;
  for (std::size_t t = 0; t < labels.size(); ++t) {
    const double e = escm::clustering_error(labels[t].labels, *seq.snapshots[t].labels);
    out << (t + 1) << ' ' << escm::format_fixed2(e) << '\n';
    if (t >= 1 || labels.size() == 1) {
      sum += e;
      ++count;
    }
  }
  const double mean = sum / std::max(count, 1);
  out << "smoothing_mean " << escm::format_fixed2(mean) << '\n';
  write_text(path, out.str());
  return mean;
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string config;
  std::string out;
};

int cmd_synth(const SynthArgs& a, const std::vector<std::string>& argv) {
  const escm::SynthConfig cfg = escm::parse_synth_config(read_text(a.config));
  if (cfg.ambient_dim % 2 != 0)
    throw escm::Error(escm::Errc::config, "ambient_dim must be even to store x/y trajectory rows");
  const escm::EvolvingSequence seq = escm::synth_evolving(cfg);
  if (const fs::path out(a.out); out.has_parent_path()) fs::create_directories(out.parent_path());
  escm::save_sequence(a.out, escm::to_trajectories(seq));

  Manifest man("synth", argv);
  man.config() = {{"synth", escm::to_config_text(cfg)}};
  man.seed("synth", cfg.seed);
  man.input(a.config);
  man.output(a.out);
  man.write(a.out + ".manifest.json");
  std::cout << "wrote " << a.out << " (T=" << cfg.steps << ", N=" << seq.points() << ")\n";
  return kOk;
}

struct TrainArgs {
  std::string input;
  std::string out_dir;
  std::optional<int> clusters;
  double lambda = 0.1;
  std::optional<long> hidden;
  double lr = 0.001;
  int epochs = 300;
  std::optional<int> window;
  int stride = 1;
  std::optional<std::uint64_t> seed;
  std::string optimizer = "adam";
  double grad_clip = 5.0;
};

int cmd_train(const TrainArgs& a, const std::vector<std::string>& argv) {
  const std::uint64_t seed = resolve_seed(a.seed);
  escm::TrainConfig tc;
  tc.lambda = a.lambda;
  tc.lr = a.lr;
  tc.epochs = a.epochs;
  tc.hidden = a.hidden.value_or(0);
  tc.grad_clip = a.grad_clip;
  tc.seed = seed;
  tc.optimizer = escm::parse_optimizer(a.optimizer);
  escm::validate(tc);
  if (a.hidden && *a.hidden < 1) throw escm::Error(escm::Errc::parameter, "--hidden must be >= 1");

  const escm::Trajectories traj = escm::load_sequence(a.input);
  const int clusters = a.clusters.value_or(traj.motions);
  if (clusters < 1) throw escm::Error(escm::Errc::parameter, "--clusters must be >= 1");
  const escm::EvolvingSequence seq =
      escm::preprocess(escm::snapshotize(traj, clusters, fs::path(a.input).filename().string()));
  const int window = a.window.value_or(escm::default_window(seq.steps()));
  const auto wins = escm::windows(seq, window, a.stride);
  const escm::TrainResult res = escm::train_sequence(seq, wins, tc);
  const auto labels = escm::cluster_coeffs(res.coeffs, clusters, seed);

  fs::create_directories(a.out_dir);
  const fs::path dir(a.out_dir);
  Manifest man("train", argv);
  man.config() = {{"train", train_config_json(res.config)},
                  {"clusters", clusters},
                  {"window", window},
                  {"stride", a.stride},
                  {"steps", seq.steps()},
                  {"points", seq.points()},
                  {"dim", seq.snapshots.front().dim()},
                  {"final_loss", res.loss_trace.back()},
                  {"final_recon_loss", res.final_recon_loss}};
  man.seed("train", seed);
  man.seed("spectral", seed);
  man.input(a.input);

  const std::string ckpt = (dir / "model.escm").string();
  {
    std::ofstream out(ckpt, std::ios::binary);
    if (!out) throw escm::Error(escm::Errc::io, "cannot write " + ckpt);
    escm::write_checkpoint(out, res.model);
  }
  man.output(ckpt);
  const std::string coeffs = (dir / "coeffs.txt").string();
  write_text(coeffs, format_coeffs(res.coeffs));
  man.output(coeffs);
  const std::string labels_path = (dir / "labels.txt").string();
  write_text(labels_path, format_labels(labels));
  man.output(labels_path);
  std::ostringstream trace;
  for (std::size_t e = 0; e < res.loss_trace.size(); ++e)
    trace << (e + 1) << ' ' << escm::detail::format_double(res.loss_trace[e]) << '\n';
  const std::string trace_path = (dir / "loss.txt").string();
  write_text(trace_path, trace.str());
  man.output(trace_path);
  if (seq.has_labels()) {
    const std::string err_path = (dir / "errors.txt").string();
    const double mean = write_errors(err_path, seq, labels);
    man.output(err_path);
    std::cout << "smoothing error: " << escm::format_fixed2(mean) << "%\n";
  }
  man.write((dir / "manifest.json").string());
  std::cout << "lambda=" << res.config.lambda << " hidden=" << res.config.hidden << " lr=" << res.config.lr
            << " epochs=" << res.config.epochs << " window=" << window << "\n";
  return kOk;
}

struct InferArgs {
  std::string checkpoint;
  std::string input;
  std::string out_dir;
  std::optional<int> clusters;
  std::optional<std::uint64_t> seed;
};

int cmd_infer(const InferArgs& a, const std::vector<std::string>& argv) {
  const std::uint64_t seed = resolve_seed(a.seed);
  std::ifstream ck(a.checkpoint, std::ios::binary);
  if (!ck) throw escm::Error(escm::Errc::io, "cannot open " + a.checkpoint);
  const escm::LstmModel model = escm::read_checkpoint(ck);
  const escm::Trajectories traj = escm::load_sequence(a.input);
  const int clusters = a.clusters.value_or(traj.motions);
  const escm::EvolvingSequence seq =
      escm::preprocess(escm::snapshotize(traj, clusters, fs::path(a.input).filename().string()));
  const auto coeffs = escm::infer_coeffs(model, seq);
  const auto labels = escm::cluster_coeffs(coeffs, clusters, seed);

  fs::create_directories(a.out_dir);
  const fs::path dir(a.out_dir);
  Manifest man("infer", argv);
  man.config() = {{"clusters", clusters}, {"hidden", model.hidden()}, {"points", model.points()}, {"dim", model.dim()}};
  man.seed("spectral", seed);
  man.input(a.checkpoint);
  man.input(a.input);
  const std::string coeffs_path = (dir / "coeffs.txt").string();
  write_text(coeffs_path, format_coeffs(coeffs));
  man.output(coeffs_path);
  const std::string labels_path = (dir / "labels.txt").string();
  write_text(labels_path, format_labels(labels));
  man.output(labels_path);
  if (seq.has_labels()) {
    const std::string err_path = (dir / "errors.txt").string();
    const double mean = write_errors(err_path, seq, labels);
    man.output(err_path);
    std::cout << "error (t >= 2): " << escm::format_fixed2(mean) << "%\n";
  }
  man.write((dir / "manifest.json").string());
  return kOk;
}

struct BenchArgs {
  std::string data;
  std::string methods = "static,affect,cesm,lstm";
  std::string learners = "omp,l1pg";
  std::string protocol = "smoothing";
  std::string out;
  std::optional<std::uint64_t> seed;
  int jobs = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  double alpha = 0.5;
  int cesm_iters = 3;
  int k_max = 0;
  double lambda_bp = 0.05;
  double lambda = 0.1;
  double lr = 0.001;
  int epochs = 300;
  std::optional<long> hidden;
  std::optional<int> window;
  int stride = 1;
};

int cmd_benchmark(const BenchArgs& a, const std::vector<std::string>& argv) {
  const std::uint64_t seed = resolve_seed(a.seed);
  if (!fs::is_directory(a.data)) throw escm::Error(escm::Errc::config, "not a directory: " + a.data);
  std::vector<std::string> files;
  for (const auto& entry : fs::directory_iterator(a.data)) {
    if (!entry.is_regular_file()) continue;
    const std::string name = entry.path().filename().string();
    if (name.size() > 14 && name.substr(name.size() - 14) == ".manifest.json") continue;
    if (!name.empty() && name.front() == '.') continue;
    files.push_back(entry.path().string());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw escm::Error(escm::Errc::config, "no trajectory files in " + a.data);

  std::vector<escm::EvolvingSequence> dataset;
  for (const auto& f : files) dataset.push_back(escm::load_and_preprocess(f));

  escm::TrainConfig tc;
  tc.lambda = a.lambda;
  tc.lr = a.lr;
  tc.epochs = a.epochs;
  tc.hidden = a.hidden.value_or(0);
  tc.seed = seed;
  escm::validate(tc);
  escm::LearnerConfig base;
  base.k_max = a.k_max;
  base.lambda_bp = a.lambda_bp;
  escm::validate(base);

  std::vector<escm::MethodConfig> methods;
  for (const auto& m : split_list(a.methods)) {
    escm::MethodConfig mc;
    mc.method = escm::parse_method(m);
    mc.affect_alpha = a.alpha;
    mc.cesm_outer_iters = a.cesm_iters;
    mc.train = tc;
    mc.window = a.window.value_or(0);
    mc.stride = a.stride;
    if (mc.method == escm::Method::lstm_escm) {
      methods.push_back(mc);
      continue;
    }
    for (const auto& l : split_list(a.learners)) {
      mc.learner = base;
      mc.learner.kind = escm::parse_learner(l);
      methods.push_back(mc);
    }
  }
  if (a.alpha < 0.0 || a.alpha > 1.0) throw escm::Error(escm::Errc::parameter, "--alpha must lie in [0, 1]");

  escm::BenchmarkOptions opts;
  opts.protocol = escm::parse_protocol(a.protocol);
  opts.seed = seed;
  opts.jobs = std::max(a.jobs, 1);
  const escm::BenchmarkReport report = escm::run_benchmark(dataset, methods, opts);

  const fs::path prefix(a.out);
  if (prefix.has_parent_path()) fs::create_directories(prefix.parent_path());
  const std::string csv = a.out + ".csv";
  const std::string md = a.out + ".md";
  write_text(csv, escm::emit_report(report, escm::ReportFormat::csv));
  write_text(md, escm::emit_report(report, escm::ReportFormat::markdown));

  Manifest man("benchmark", argv);
  json rows = json::array();
  for (const auto& r : report.rows) {
    json per = json::array();
    for (const auto& s : r.per_sequence)
      per.push_back({{"sequence", s.name}, {"error_pct", s.error_pct}, {"runtime_s", s.runtime_s},
                     {"repr_runtime_s", s.repr_runtime_s}, {"step_errors", s.step_errors}});
    rows.push_back({{"method", r.method}, {"learner", r.learner}, {"error_pct", r.mean_error_pct},
                    {"runtime_s", r.mean_runtime_s}, {"repr_runtime_s", r.mean_repr_runtime_s},
                    {"per_sequence", per}});
  }
  man.config() = {{"protocol", escm::to_string(opts.protocol)},
                  {"methods", a.methods},
                  {"learners", a.learners},
                  {"alpha", a.alpha},
                  {"cesm_iters", a.cesm_iters},
                  {"k_max", a.k_max},
                  {"lambda_bp", a.lambda_bp},
                  {"train", train_config_json(tc)},
                  {"window", a.window.value_or(0)},
                  {"stride", a.stride},
                  {"jobs", opts.jobs},
                  {"config_hash", report.metadata.config_hash},
                  {"timestamp", report.metadata.timestamp},
                  {"rows", rows}};
  man.seed("benchmark", seed);
  for (const auto& f : files) man.input(f);
  man.output(csv);
  man.output(md);
  man.write(a.out + ".manifest.json");
  std::cout << escm::emit_report(report, escm::ReportFormat::markdown);
  return kOk;
}

int run(std::vector<std::string> args);

int cmd_rerun(const std::string& manifest_path) {
  const json doc = json::parse(read_text(manifest_path));
  if (!doc.contains("argv") || !doc["argv"].is_array())
    throw escm::Error(escm::Errc::format, "manifest has no argv array");
  return run(doc["argv"].get<std::vector<std::string>>());
}

int run(std::vector<std::string> args) {
  CLI::App app{"Evolutionary self-expressive subspace clustering"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic evolving-subspace trajectory file");
  synth->add_option("--config", sa.config, "key=value synthetic config")->required()->check(CLI::ExistingFile);
  synth->add_option("--out", sa.out, "output trajectory file")->required();

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train the recurrent self-expression model on one sequence and cluster it");
  train->add_option("--input", ta.input, "trajectory file")->required()->check(CLI::ExistingFile);
  train->add_option("--out-dir", ta.out_dir, "output directory")->required();
  train->add_option("--clusters", ta.clusters, "number of motions (default: file header)");
  train->add_option("--lambda", ta.lambda, "L1 weight")->capture_default_str();
  train->add_option("--hidden", ta.hidden, "hidden size (default: ceil(N/5))");
  train->add_option("--lr", ta.lr, "learning rate")->capture_default_str();
  train->add_option("--epochs", ta.epochs, "training epochs")->capture_default_str();
  train->add_option("--window", ta.window, "window length S (default: min(T, 8))");
  train->add_option("--stride", ta.stride, "window stride")->capture_default_str()->check(CLI::PositiveNumber);
  train->add_option("--seed", ta.seed, "seed (fallback: ESCM_SEED)");
  train->add_option("--optimizer", ta.optimizer, "adam or sgd")->capture_default_str();
  train->add_option("--grad-clip", ta.grad_clip, "global gradient-norm clip (<= 0 disables)")->capture_default_str();

  InferArgs ia;
  auto* infer = app.add_subcommand("infer", "Run a trained checkpoint over a sequence and cluster it");
  infer->add_option("--checkpoint", ia.checkpoint, "model checkpoint")->required()->check(CLI::ExistingFile);
  infer->add_option("--input", ia.input, "trajectory file")->required()->check(CLI::ExistingFile);
  infer->add_option("--out-dir", ia.out_dir, "output directory")->required();
  infer->add_option("--clusters", ia.clusters, "number of motions (default: file header)");
  infer->add_option("--seed", ia.seed, "seed (fallback: ESCM_SEED)");

  BenchArgs ba;
  auto* bench = app.add_subcommand("benchmark", "Benchmark methods over a directory of trajectory files");
  bench->add_option("--data", ba.data, "directory of trajectory files")->required();
  bench->add_option("--methods", ba.methods, "comma list of static,affect,cesm,lstm")->capture_default_str();
  bench->add_option("--learners", ba.learners, "comma list of omp,l1pg")->capture_default_str();
  bench->add_option("--protocol", ba.protocol, "smoothing, test1 or test2")->capture_default_str();
  bench->add_option("--out", ba.out, "output prefix (writes .csv, .md, .manifest.json)")->required();
  bench->add_option("--seed", ba.seed, "seed (fallback: ESCM_SEED)");
  bench->add_option("--jobs", ba.jobs, "parallel workers")->capture_default_str()->check(CLI::PositiveNumber);
  bench->add_option("--alpha", ba.alpha, "AFFECT smoothing weight")->capture_default_str();
  bench->add_option("--cesm-iters", ba.cesm_iters, "CESM outer iterations")->capture_default_str();
  bench->add_option("--k-max", ba.k_max, "OMP atoms per column (0 = 2 * clusters)")->capture_default_str();
  bench->add_option("--lambda-bp", ba.lambda_bp, "l1pg weight")->capture_default_str();
  bench->add_option("--lambda", ba.lambda, "LSTM L1 weight")->capture_default_str();
  bench->add_option("--lr", ba.lr, "LSTM learning rate")->capture_default_str();
  bench->add_option("--epochs", ba.epochs, "LSTM epochs")->capture_default_str();
  bench->add_option("--hidden", ba.hidden, "LSTM hidden size (default: ceil(N/5))");
  bench->add_option("--window", ba.window, "LSTM window length (default: min(T, 8))");
  bench->add_option("--stride", ba.stride, "LSTM window stride")->capture_default_str()->check(CLI::PositiveNumber);

  std::string manifest_path;
  auto* rerun = app.add_subcommand("rerun", "Re-execute the command recorded in a manifest");
  rerun->add_option("manifest", manifest_path, "manifest.json")->required()->check(CLI::ExistingFile);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*synth) return cmd_synth(sa, args);
    if (*train) return cmd_train(ta, args);
    if (*infer) return cmd_infer(ia, args);
    if (*bench) return cmd_benchmark(ba, args);
    if (*rerun) return cmd_rerun(manifest_path);
  } catch (const escm::DivergenceError& e) {
    std::cerr << "escm: " << e.what() << '\n';
    return kDivergence;
  } catch (const escm::Error& e) {
    std::cerr << "escm: " << e.what() << '\n';
    return e.code() == escm::Errc::divergence ? kDivergence : kUsage;
  } catch (const json::exception& e) {
    std::cerr << "escm: manifest: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "escm: " << e.what() << '\n';
    return kUnexpected;
  }
  return kUsage;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(std::move(args));
}
