// Acceptance run: one PASS/FAIL line per criterion. Exit status is non-zero if any fails.
//
//   acceptance [--workdir DIR] [--only N[,N...]]

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "../gradcheck.hpp"
#include "oampsa/harness/bench.hpp"
#include "oampsa/harness/cli.hpp"
#include "oampsa/harness/eval.hpp"
#include "oampsa/harness/report.hpp"
#include "oampsa/neural/train.hpp"

using namespace oampsa;
using namespace oampsa::harness;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

bool all_finite(const DetectionResult& r) {
  if (!r.x.allFinite()) return false;
  for (const auto& P : r.level_probs)
    if (!P.allFinite()) return false;
  for (const auto& it : r.trace)
    if (!std::isfinite(it.v_sq) || !std::isfinite(it.tau_sq)) return false;
  return true;
}

bool bit_equal(double a, double b) { return std::bit_cast<std::uint64_t>(a) == std::bit_cast<std::uint64_t>(b); }

// ---------------------------------------------------------------- 1

Outcome noiseless_recovery() {
  DatasetConfig cfg;
  cfg.snr = SnrPolicy::fixed(10.0 * std::log10(static_cast<double>(cfg.N) / 1e-16));  // sigma = 1e-8
  cfg.seed = 101;
  const SampleGenerator gen(cfg);
  const auto& c = gen.constellation();
  const auto identity = OampNet2Params::identity(10);
  Rng rng(102);
  const auto model = neural::AttentionModel::initialize(16, c.pam_size, 32, rng);
  std::size_t err_mmse = 0, err_oamp = 0, err_net = 0;
  bool finite = true;
  for (std::size_t i = 0; i < 1000; ++i) {
    const auto s = gen(i);
    const auto sys = s.real_system();
    err_mmse += symbol_errors(hard_decision(mmse_detect(sys), c), s.x_true);
    err_oamp += symbol_errors(hard_decision(oamp_detect(sys, c, {}).x, c), s.x_true);
    err_net += symbol_errors(hard_decision(oampnet2_detect(sys, c, {}, identity).x, c), s.x_true);
    finite = finite && all_finite(oamp_sa_detect(sys, c, {}, model));
  }
  std::ostringstream d;
  d << "symbol errors mmse=" << err_mmse << " oamp=" << err_oamp << " oampnet2=" << err_net
    << " / 8000; oamp_sa outputs finite=" << (finite ? "yes" : "no");
  return {err_mmse == 0 && err_oamp == 0 && err_net == 0 && finite, d.str()};
}

// ---------------------------------------------------------------- 2

Outcome detector_ordering(const fs::path& workdir) {
  DatasetConfig cfg;
  cfg.correlation = {0.1, 0.1};
  EvalOptions opt;
  opt.seed = 202;
  const auto rows =
      evaluate_grid(cfg, {8, 10, 12, 14}, 100000, make_detectors({DetectorKind::mmse, DetectorKind::oamp}, {}), opt);
  write_text(workdir / "ordering.csv", eval_csv(rows));
  const auto mmse = rows_for(rows, "mmse");
  const auto oamp = rows_for(rows, "oamp");
  bool below = true;
  std::ostringstream d;
  for (std::size_t i = 0; i < mmse.size(); ++i) {
    below = below && oamp[i].ser < mmse[i].ser;
    d << mmse[i].snr_db << "dB " << fmt("%.2e", oamp[i].ser) << "<" << fmt("%.2e", mmse[i].ser) << " ";
  }
  const bool mono = non_increasing_within_ci(mmse) && non_increasing_within_ci(oamp);
  d << "monotone=" << (mono ? "yes" : "no");
  return {below && mono, d.str()};
}

// ---------------------------------------------------------------- 3

Outcome ml_agreement() {
  DatasetConfig cfg;
  cfg.M = 4;
  cfg.N = 2;
  cfg.snr = SnrPolicy::fixed(15.0);
  cfg.seed = 303;
  const SampleGenerator gen(cfg);
  const auto& c = gen.constellation();
  const int trials = 2000;
  int agree = 0;
  for (int i = 0; i < trials; ++i) {
    const auto s = gen(static_cast<std::size_t>(i));
    agree += hard_decision(oamp_detect(s.real_system(), c, {}).x, c) == ml_detect_bruteforce(s.H, s.y, c);
  }
  const double frac = static_cast<double>(agree) / trials;
  return {frac >= 0.95, "agreement " + fmt("%.4f", frac) + " over 2000 trials"};
}

// ---------------------------------------------------------------- 4

Outcome oampnet2_identity() {
  DatasetConfig cfg;
  cfg.seed = 404;
  cfg.snr = SnrPolicy::uniform(0.0, 20.0);
  const SampleGenerator gen(cfg);
  const auto& c = gen.constellation();
  const auto params = OampNet2Params::identity(10);
  int identical = 0;
  for (std::size_t i = 0; i < 100; ++i) {
    const auto sys = gen(i).real_system();
    const auto a = oamp_detect(sys, c, {});
    const auto b = oampnet2_detect(sys, c, {}, params);
    bool same = a.x.size() == b.x.size() && a.trace.size() == b.trace.size();
    for (Eigen::Index k = 0; same && k < a.x.size(); ++k) same = bit_equal(a.x(k), b.x(k));
    for (std::size_t t = 0; same && t < a.trace.size(); ++t)
      same = bit_equal(a.trace[t].tau_sq, b.trace[t].tau_sq) && bit_equal(a.trace[t].v_sq, b.trace[t].v_sq);
    identical += same;
  }
  return {identical == 100, std::to_string(identical) + "/100 trajectories bit-identical"};
}

// ---------------------------------------------------------------- 5

Outcome gradient_correctness() {
  using namespace neural;
  DatasetConfig cfg;
  cfg.M = 4;
  cfg.N = 2;
  cfg.seed = 505;
  const SampleGenerator gen(cfg);
  const auto s = gen(0);
  const auto sys = s.real_system();
  const auto& c = gen.constellation();
  const RealMatrix Y = one_hot_levels(level_labels(s.x_true, c), c.pam_size);
  Rng rng(506);
  const auto model = AttentionModel::initialize(4, c.pam_size, 8, rng);
  const OampConfig oc{3};
  DetachedConstants rec;
  {
    Tape tape;
    oamp_sa_unrolled(tape, register_params(tape, model), model, sys, c, oc, &Y, &rec);
  }
  std::vector<RealMatrix> init;
  std::vector<std::string> names;
  model.visit([&](const std::string& n, const RealMatrix& W) {
    names.push_back(n);
    init.push_back(W);
  });
  const auto res = testing::gradient_check(init, [&](Tape& t, const std::vector<Var>& v) {
    const AttentionVars p{v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7]};
    return oamp_sa_unrolled(t, p, model, sys, c, oc, &Y, nullptr, &rec).loss;
  });
  const auto worst = std::max_element(res.rel_error.begin(), res.rel_error.end()) - res.rel_error.begin();
  return {res.worst() < 1e-4, std::to_string(res.rel_error.size()) + " tensors, worst relative error " +
                                  fmt("%.2e", res.worst()) + " (" + names[static_cast<std::size_t>(worst)] + ")"};
}

// ---------------------------------------------------------------- 6

Outcome permutation_equivariance() {
  DatasetConfig cfg;
  cfg.seed = 606;
  cfg.snr = SnrPolicy::uniform(5.0, 15.0);
  const SampleGenerator gen(cfg);
  const auto& c = gen.constellation();
  Rng rng(607);
  const auto model = neural::AttentionModel::initialize(16, c.pam_size, 32, rng);
  const Eigen::Index N = cfg.N;
  double worst = 0.0;
  for (std::size_t i = 0; i < 20; ++i) {
    const auto s = gen(i);
    std::vector<Eigen::Index> perm(static_cast<std::size_t>(N));
    std::iota(perm.begin(), perm.end(), Eigen::Index{0});
    for (std::size_t k = perm.size(); k > 1; --k) std::swap(perm[k - 1], perm[rng.below(k)]);
    ComplexMatrix Hp(s.H.rows(), N);
    for (Eigen::Index j = 0; j < N; ++j) Hp.col(j) = s.H.col(perm[static_cast<std::size_t>(j)]);
    const auto a = oamp_sa_detect(s.real_system(), c, {}, model);
    const auto b = oamp_sa_detect(to_real_equivalent(Hp, s.y, s.sigma), c, {}, model);
    // Token/output row (part, j) of the permuted system is row (part, perm[j]) of the original.
    for (Eigen::Index part = 0; part < 2; ++part) {
      for (Eigen::Index j = 0; j < N; ++j) {
        const Eigen::Index rb = part * N + j, ra = part * N + perm[static_cast<std::size_t>(j)];
        worst = std::max(worst, std::abs(b.x(rb) - a.x(ra)));
        for (std::size_t t = 0; t < a.level_probs.size(); ++t)
          worst = std::max(worst, (b.level_probs[t].row(rb) - a.level_probs[t].row(ra)).cwiseAbs().maxCoeff());
      }
    }
    for (std::size_t t = 0; t < a.trace.size(); ++t) worst = std::max(worst, std::abs(b.trace[t].tau_sq - a.trace[t].tau_sq));
  }
  return {worst < 1e-10, "max abs deviation " + fmt("%.2e", worst) + " over 20 systems"};
}

// ---------------------------------------------------------------- 7 and 8

struct TrainedModels {
  neural::LearnedParams sa;
  neural::LearnedParams net;
};

constexpr std::size_t kTrainSamples = 30000;
constexpr int kSaEpochs = 12;  // the learning rate drops at epoch 10
constexpr int kNetEpochs = 5;

TrainedModels train_models(const fs::path& workdir) {
  DatasetConfig cfg;
  cfg.correlation = {0.1, 0.1};
  cfg.count = kTrainSamples;
  cfg.seed = 707;
  const auto train_set = generate_dataset(cfg);
  const auto c = qam_constellation(cfg.order);
  auto log = [](const char* tag) {
    return [tag](const neural::MetricsRow& r) {
      std::cerr << "  [" << tag << "] epoch " << r.epoch << " " << r.split << " loss " << r.loss << " ser " << r.ser
                << "\n";
    };
  };
  neural::TrainConfig sa_cfg;
  sa_cfg.epochs = kSaEpochs;
  auto sa = neural::initial_state(neural::Variant::oamp_sa, sa_cfg, 16, c.pam_size);
  neural::train(sa, sa_cfg, train_set, nullptr, c, log("oamp_sa"));
  neural::save_checkpoint(workdir / "oamp_sa_10db.ckpt", sa.checkpoint());

  neural::TrainConfig net_cfg;
  net_cfg.epochs = kNetEpochs;
  auto net = neural::initial_state(neural::Variant::oampnet2, net_cfg, 16, c.pam_size);
  neural::train(net, net_cfg, train_set, nullptr, c, log("oampnet2"));
  neural::save_checkpoint(workdir / "oampnet2_10db.ckpt", net.checkpoint());
  return {sa.params, net.params};
}

Outcome training_efficacy(const TrainedModels& m, const fs::path& workdir) {
  DatasetConfig cfg;
  cfg.correlation = {0.1, 0.1};
  EvalOptions opt;
  opt.seed = 708;
  std::vector<neural::LearnedParams> learned{m.sa, m.net};
  const auto rows = evaluate_grid(
      cfg, {10.0}, 20000,
      make_detectors({DetectorKind::mmse, DetectorKind::oamp, DetectorKind::oampnet2, DetectorKind::oamp_sa}, learned),
      opt);
  write_text(workdir / "trained_10db.csv", eval_csv(rows));
  const double oamp = rows[1].ser, net = rows[2].ser, sa = rows[3].ser;
  std::ostringstream d;
  d << std::to_string(kTrainSamples) << " samples; SER mmse " << fmt("%.3e", rows[0].ser) << ", oamp " << fmt("%.3e", oamp)
    << ", oampnet2 " << fmt("%.3e", net) << " (" << kNetEpochs << " ep), oamp_sa " << fmt("%.3e", sa) << " (" << kSaEpochs
    << " ep)";
  return {sa <= oamp && net <= 1.05 * oamp, d.str()};
}

Outcome generalization(const TrainedModels& m, const fs::path& workdir) {
  DatasetConfig cfg;
  cfg.correlation = {0.1, 0.1};
  EvalOptions opt;
  opt.seed = 808;
  std::vector<neural::LearnedParams> learned{m.sa};
  std::vector<double> grid;
  for (int s = 5; s <= 14; ++s) grid.push_back(s);
  const auto rows = evaluate_grid(cfg, grid, 10000, make_detectors({DetectorKind::oamp_sa}, learned), opt);
  write_text(workdir / "generalization.csv", eval_csv(rows));
  std::ostringstream d;
  d << "SER " << fmt("%.2e", rows.front().ser) << " @5dB .. " << fmt("%.2e", rows.back().ser) << " @14dB, "
    << rows.size() << " points";
  return {rows.size() == 10 && non_increasing_within_ci(rows), d.str()};
}

// ---------------------------------------------------------------- 9

Outcome runtime_scaling(const fs::path& workdir) {
  std::vector<BenchRow> rows;
  // At 512x256 one detection takes on the order of a second, so fewer trials are timed there.
  for (auto [size, trials] : {std::pair{BenchSize{64, 32}, std::size_t{1000}}, {BenchSize{512, 256}, std::size_t{20}}}) {
    BenchConfig cfg;
    cfg.sizes = {size};
    cfg.trials = trials;
    cfg.warmup = std::min<std::size_t>(10, trials);
    auto part = run_bench(cfg);
    rows.insert(rows.end(), part.begin(), part.end());
  }
  write_text(workdir / "bench.csv", bench_csv(rows));
  bool pass = true;
  std::ostringstream d;
  for (std::size_t base = 0; base < rows.size(); base += 4) {
    const double ratio = rows[base + 3].ratio_vs_oampnet2;
    const double hi = rows[base].M == 64 ? 6.0 : 4.0;
    bool fastest = true;
    for (std::size_t k = 1; k < 4; ++k) fastest = fastest && rows[base].mean_us < rows[base + k].mean_us;
    pass = pass && ratio >= 1.2 && ratio <= hi && fastest;
    d << rows[base].M << "x" << rows[base].N << ": sa/oampnet2 " << fmt("%.2f", ratio) << " in [1.2, " << hi
      << "], mmse fastest=" << (fastest ? "yes" : "no") << "; ";
  }
  return {pass, d.str()};
}

// ---------------------------------------------------------------- 10

Outcome reproducibility(const fs::path& workdir) {
  const auto root = workdir / "repro";
  fs::remove_all(root);
  for (const char* run : {"a", "b"}) {
    const auto dir = root / run;
    std::ostringstream out, err;
    auto cli = [&](std::vector<std::string> args) {
      if (run_cli(args, out, err) != 0) throw std::runtime_error("pipeline step '" + args[0] + "' failed: " + err.str());
    };
    cli({"gen-data", "--out", (dir / "data").string(), "--count", "300", "--snr", "10", "--cr", "0.1", "--ct", "0.1",
         "--seed", "1010"});
    cli({"train", "--data", (dir / "data" / "train_snr10.mimo").string(), "--val",
         (dir / "data" / "val_snr10.mimo").string(), "--epochs", "1", "--seed", "1011", "--checkpoint",
         (dir / "sa.ckpt").string()});
    cli({"eval", "--data", (dir / "data" / "test_snr10.mimo").string(), "--checkpoint", (dir / "sa.ckpt").string(),
         "--out", (dir / "eval.csv").string(), "--seed", "1012"});
  }
  std::size_t compared = 0, differing = 0;
  for (const auto& e : fs::recursive_directory_iterator(root / "a")) {
    if (!e.is_regular_file()) continue;
    const auto other = root / "b" / fs::relative(e.path(), root / "a");
    ++compared;
    if (!fs::exists(other) || read_text(e.path()) != read_text(other)) ++differing;
  }
  return {compared == 7 && differing == 0,
          std::to_string(compared) + " files compared, " + std::to_string(differing) + " differ"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::string workdir = "acceptance_work";
  std::vector<int> only;
  app.add_option("--workdir", workdir, "directory for intermediate artifacts");
  app.add_option("--only", only, "run only these criteria")->delimiter(',');
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(workdir);
  const fs::path wd(workdir);

  std::optional<TrainedModels> trained;
  auto models = [&]() -> const TrainedModels& {
    if (!trained) trained = train_models(wd);
    return *trained;
  };

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"noiseless recovery", noiseless_recovery},
      {"detector ordering", [&] { return detector_ordering(wd); }},
      {"ML-oracle agreement", ml_agreement},
      {"OAMPNet2 identity", oampnet2_identity},
      {"gradient correctness", gradient_correctness},
      {"permutation equivariance", permutation_equivariance},
      {"training efficacy", [&] { return training_efficacy(models(), wd); }},
      {"generalization across SNR", [&] { return generalization(models(), wd); }},
      {"runtime scaling", [&] { return runtime_scaling(wd); }},
      {"reproducibility", [&] { return reproducibility(wd); }},
  };

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome r;
    try {
      r = criteria[i].second();
    } catch (const std::exception& e) {
      r = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failed += !r.pass;
    std::cout << (r.pass ? "PASS" : "FAIL") << " " << id << " " << criteria[i].first << ": " << r.detail << " ["
              << fmt("%.1f", secs) << " s]" << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
