#pragma once

// Command-line front end: gen-data, train, eval, bench, plot.
// Requires CLI11 and nlohmann/json on the include path.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "oampsa/channel.hpp"
#include "oampsa/harness/bench.hpp"
#include "oampsa/harness/eval.hpp"
#include "oampsa/harness/plot.hpp"
#include "oampsa/harness/report.hpp"
#include "oampsa/neural/checkpoint.hpp"
#include "oampsa/neural/train.hpp"

namespace oampsa::harness {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr const char* kManifestName = "manifest.json";

/// "10", "5,8,10" or "lo:hi[:step]" (inclusive, default step 1).
inline std::vector<double> parse_snr_grid(const std::string& text) {
  auto number = [&](const std::string& s) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size() || !std::isfinite(v)) {
      throw UsageError("invalid SNR value '" + s + "' in '" + text + "'");
    }
    return v;
  };
  std::vector<double> out;
  if (text.find(':') != std::string::npos) {
    std::vector<std::string> parts;
    std::stringstream ss(text);
    for (std::string p; std::getline(ss, p, ':');) parts.push_back(p);
    if (parts.size() < 2 || parts.size() > 3) throw UsageError("SNR range must be lo:hi[:step], got '" + text + "'");
    const double lo = number(parts[0]), hi = number(parts[1]);
    const double step = parts.size() == 3 ? number(parts[2]) : 1.0;
    if (!(step > 0.0) || hi < lo) throw UsageError("SNR range '" + text + "' is empty or has a non-positive step");
    const auto count = static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9)) + 1;
    for (std::size_t i = 0; i < count; ++i) out.push_back(lo + step * static_cast<double>(i));
  } else {
    std::stringstream ss(text);
    for (std::string p; std::getline(ss, p, ',');) out.push_back(number(p));
  }
  if (out.empty()) throw UsageError("SNR grid is empty");
  return out;
}

inline std::vector<BenchSize> parse_sizes(const std::string& text) {
  std::vector<BenchSize> out;
  std::stringstream ss(text);
  for (std::string p; std::getline(ss, p, ',');) {
    const auto x = p.find('x');
    try {
      if (x == std::string::npos) throw std::invalid_argument(p);
      std::size_t used = 0;
      const int m = std::stoi(p.substr(0, x), &used);
      if (used != x) throw std::invalid_argument(p);
      const int n = std::stoi(p.substr(x + 1), &used);
      if (used != p.size() - x - 1 || m < 1 || n < 1) throw std::invalid_argument(p);
      out.push_back({m, n});
    } catch (const std::exception&) {
      throw UsageError("invalid size '" + p + "' (expected MxN)");
    }
  }
  if (out.empty()) throw UsageError("no bench sizes given");
  return out;
}

inline int parse_modulation(const std::string& s) {
  if (s == "qam4") return 4;
  if (s == "qam16") return 16;
  throw UsageError("unknown modulation '" + s + "' (expected qam4 or qam16)");
}

inline std::string modulation_name(int order) { return "qam" + std::to_string(order); }

inline std::string snr_tag(double snr) {
  std::string s = format_double(snr);
  for (auto& ch : s)
    if (ch == '-') ch = 'm';
  return s;
}

/// Modulation for a dataset file: explicit flag, else the manifest beside it, else QAM-4.
inline int dataset_modulation(const std::optional<std::string>& flag, const fs::path& data) {
  if (flag) return parse_modulation(*flag);
  const auto manifest = data.parent_path() / kManifestName;
  if (fs::exists(manifest)) {
    try {
      return parse_modulation(json::parse(read_text(manifest)).at("mod").get<std::string>());
    } catch (const json::exception& e) {
      throw DataError("malformed manifest '" + manifest.string() + "': " + e.what());
    }
  }
  return 4;
}

inline Dataset load_checked(const fs::path& path, const Constellation& c) {
  auto ds = load_dataset(path);
  check_labels(ds, c);
  return ds;
}

struct SystemFlags {
  int M = 16;
  int N = 8;
  std::string mod = "qam4";
  double cr = 0.0;
  double ct = 0.0;
  std::string channels;

  void add(CLI::App* app) {
    app->add_option("--m", M, "receive antennas")->check(CLI::PositiveNumber);
    app->add_option("--n", N, "transmit streams / users")->check(CLI::PositiveNumber);
    app->add_option("--mod", mod, "modulation: qam4 or qam16");
    app->add_option("--cr", cr, "receive correlation coefficient in [0, 1)");
    app->add_option("--ct", ct, "transmit correlation coefficient in [0, 1)");
    app->add_option("--channels", channels, "channel file with ingested M x N matrices (replaces Rayleigh draws)");
  }
  DatasetConfig config() const {
    DatasetConfig cfg;
    cfg.M = M;
    cfg.N = N;
    cfg.order = parse_modulation(mod);
    cfg.correlation = {cr, ct};
    cfg.correlation.validate();
    if (!channels.empty()) {
      cfg.channel_pool = load_channel_file(channels);
      if (cfg.channel_pool.empty()) throw DataError("channel file '" + channels + "' holds no matrices");
    }
    return cfg;
  }
};

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

struct GenDataOptions {
  SystemFlags sys;
  std::string snr = "10";
  std::size_t train_count = 80000;
  std::size_t val_count = 20000;
  std::size_t test_count = 20000;
  std::optional<std::size_t> count;
  std::uint64_t seed = 1;
  std::string out;
};

inline void cmd_gen_data(const GenDataOptions& o, std::ostream& log) {
  DatasetConfig base = o.sys.config();
  const auto grid = parse_snr_grid(o.snr);
  const fs::path dir(o.out);
  fs::create_directories(dir);
  const std::array<std::pair<const char*, std::size_t>, 3> splits{
      {{"train", o.count.value_or(o.train_count)}, {"val", o.count.value_or(o.val_count)}, {"test", o.count.value_or(o.test_count)}}};
  json manifest;
  manifest["format"] = "oampsa-datasets";
  manifest["version"] = 1;
  manifest["m"] = o.sys.M;
  manifest["n"] = o.sys.N;
  manifest["mod"] = modulation_name(base.order);
  manifest["cr"] = o.sys.cr;
  manifest["ct"] = o.sys.ct;
  manifest["channels"] = o.sys.channels.empty() ? json(nullptr) : json(fs::path(o.sys.channels).filename().string());
  manifest["seed"] = o.seed;
  manifest["snr_db"] = grid;
  manifest["files"] = json::array();
  for (std::size_t s = 0; s < splits.size(); ++s) {
    for (std::size_t p = 0; p < grid.size(); ++p) {
      DatasetConfig cfg = base;
      cfg.snr = SnrPolicy::fixed(grid[p]);
      cfg.count = splits[s].second;
      cfg.seed = derive_seed(o.seed, 0xDA7A0000ULL + s * 0x10000ULL + p);
      const std::string name = std::string(splits[s].first) + "_snr" + snr_tag(grid[p]) + ".mimo";
      write_dataset(dir / name, generate_dataset(cfg));
      manifest["files"].push_back(
          {{"split", splits[s].first}, {"snr_db", grid[p]}, {"count", cfg.count}, {"seed", cfg.seed}, {"file", name}});
      log << "wrote " << (dir / name).string() << " (" << cfg.count << " samples)\n";
    }
  }
  write_text(dir / kManifestName, manifest.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainOptions {
  std::string data;
  std::string val;
  std::optional<std::string> mod;
  std::string variant = "oamp_sa";
  neural::TrainConfig cfg;
  std::string checkpoint;
  std::string metrics;
  std::string resume;
};

inline void cmd_train(const TrainOptions& o, std::ostream& log) {
  const auto variant = neural::parse_variant(o.variant);
  const auto c = qam_constellation(dataset_modulation(o.mod, o.data));
  const auto train_set = load_checked(o.data, c);
  std::optional<Dataset> val_set;
  if (!o.val.empty()) {
    val_set = load_checked(o.val, c);
    if (val_set->M != train_set.M || val_set->N != train_set.N) throw DimensionError("validation set dimensions differ");
  }
  neural::TrainState state;
  if (!o.resume.empty()) {
    state = neural::TrainState::from_checkpoint(neural::load_checkpoint(o.resume));
    if (neural::variant_of(state.params) != variant) {
      throw UsageError("checkpoint '" + o.resume + "' holds a " + neural::variant_name(neural::variant_of(state.params)) +
                       " model, --variant is " + o.variant);
    }
  } else {
    state = neural::initial_state(variant, o.cfg, static_cast<int>(train_set.M), c.pam_size);
  }
  const fs::path metrics = o.metrics.empty() ? fs::path(o.checkpoint + ".metrics.csv") : fs::path(o.metrics);
  if (metrics.has_parent_path()) fs::create_directories(metrics.parent_path());
  const bool fresh = o.resume.empty() || !fs::exists(metrics);
  std::ofstream mout(metrics, fresh ? std::ios::trunc : std::ios::app);
  if (!mout) throw DataError("cannot open metrics file '" + metrics.string() + "'");
  if (fresh) mout << "epoch,split,loss,ser,lr\n";
  neural::train(state, o.cfg, train_set, val_set ? &*val_set : nullptr, c, [&](const neural::MetricsRow& r) {
    mout << r.epoch << "," << r.split << "," << format_double(r.loss) << "," << format_double(r.ser) << ","
         << format_double(r.lr) << "\n";
    mout.flush();
    log << "epoch " << r.epoch << " " << r.split << " loss " << r.loss << " ser " << r.ser << "\n";
  });
  if (fs::path(o.checkpoint).has_parent_path()) fs::create_directories(fs::path(o.checkpoint).parent_path());
  neural::save_checkpoint(o.checkpoint, state.checkpoint());
  log << "wrote " << o.checkpoint << "\n";
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalCliOptions {
  SystemFlags sys;
  std::string snr = "10";
  std::size_t trials = 100000;
  std::vector<std::string> data;
  std::vector<std::string> checkpoints;
  std::string detectors;
  int iterations = 10;
  std::uint64_t seed = 1;
  bool timing = false;
  std::string out;
  std::string plot;
  std::optional<std::string> mod_flag;
};

inline std::vector<EvalRow> cmd_eval(const EvalCliOptions& o, std::ostream& log) {
  std::vector<neural::LearnedParams> learned;
  for (const auto& path : o.checkpoints) learned.push_back(neural::load_learned(path));
  std::vector<DetectorKind> kinds;
  if (o.detectors.empty()) {
    kinds = {DetectorKind::mmse, DetectorKind::oamp};
    for (const auto& p : learned)
      kinds.push_back(neural::variant_of(p) == neural::Variant::oampnet2 ? DetectorKind::oampnet2 : DetectorKind::oamp_sa);
  } else {
    std::stringstream ss(o.detectors);
    for (std::string d; std::getline(ss, d, ',');) kinds.push_back(parse_detector(d));
  }
  const auto detectors = make_detectors(kinds, learned);
  EvalOptions opt;
  opt.detector.iterations = o.iterations;
  opt.detector.validate();
  opt.timing = o.timing;
  opt.seed = o.seed;

  std::vector<EvalRow> rows;
  if (!o.data.empty()) {
    for (const auto& path : o.data) {
      const auto c = qam_constellation(o.mod_flag ? parse_modulation(*o.mod_flag) : dataset_modulation(std::nullopt, path));
      const auto ds = load_checked(path, c);
      if (ds.samples.empty()) throw DataError("dataset '" + path + "' is empty");
      double snr = 0.0;
      for (const auto& s : ds.samples) snr += s.snr_db;
      snr /= static_cast<double>(ds.samples.size());
      auto part = evaluate_point(snr, ds.samples.size(), [&ds](std::size_t i) { return ds.samples[i]; }, c, detectors, opt);
      rows.insert(rows.end(), part.begin(), part.end());
      log << "evaluated " << path << "\n";
    }
  } else {
    if (o.trials < 1) throw UsageError("--trials must be at least 1");
    rows = evaluate_grid(o.sys.config(), parse_snr_grid(o.snr), o.trials, detectors, opt);
  }
  write_text(o.out, eval_csv(rows));
  log << "wrote " << o.out << "\n";
  if (!o.plot.empty()) {
    write_text(o.plot, render_ser_svg(rows));
    log << "wrote " << o.plot << "\n";
  }
  return rows;
}

// ---------------------------------------------------------------------------
// entry point
// ---------------------------------------------------------------------------

/// Runs one command line; returns the process exit code.
inline int run_cli(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"OAMP / OAMPNet2 / OAMP-SA MIMO detection toolkit", "oampsa"};
  app.require_subcommand(1);

  GenDataOptions gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "generate train/val/test dataset files and a manifest");
  gen.sys.add(gen_cmd);
  gen_cmd->add_option("--snr", gen.snr, "SNR list (5,10) or range (5:14[:step]) in dB");
  gen_cmd->add_option("--count", gen.count, "samples per split and SNR point (overrides the split defaults)");
  gen_cmd->add_option("--train-count", gen.train_count, "training samples per SNR point");
  gen_cmd->add_option("--val-count", gen.val_count, "validation samples per SNR point");
  gen_cmd->add_option("--test-count", gen.test_count, "test samples per SNR point");
  gen_cmd->add_option("--seed", gen.seed, "base seed");
  gen_cmd->add_option("--out", gen.out, "output directory")->required();

  TrainOptions tr;
  auto* train_cmd = app.add_subcommand("train", "train OAMPNet2 or OAMP-SA on a dataset file");
  train_cmd->add_option("--data", tr.data, "training dataset file")->required();
  train_cmd->add_option("--val", tr.val, "validation dataset file");
  train_cmd->add_option("--mod", tr.mod, "modulation (default: from manifest.json beside --data, else qam4)");
  train_cmd->add_option("--variant", tr.variant, "oampnet2 or oamp_sa");
  train_cmd->add_option("--epochs", tr.cfg.epochs, "epochs");
  train_cmd->add_option("--lr", tr.cfg.lr, "initial learning rate");
  train_cmd->add_option("--batch", tr.cfg.batch_size, "mini-batch size");
  train_cmd->add_option("--iters", tr.cfg.iterations, "unrolled iterations T");
  train_cmd->add_option("--state-dim", tr.cfg.state_dim, "latent state width (OAMP-SA)");
  train_cmd->add_option("--seed", tr.cfg.seed, "seed for initialization and shuffling");
  train_cmd->add_option("--checkpoint", tr.checkpoint, "output checkpoint path")->required();
  train_cmd->add_option("--metrics", tr.metrics, "metrics CSV (default: <checkpoint>.metrics.csv)");
  train_cmd->add_option("--resume", tr.resume, "resume from a checkpoint with optimizer state");

  EvalCliOptions ev;
  auto* eval_cmd = app.add_subcommand("eval", "SER/BER versus SNR");
  ev.sys.add(eval_cmd);
  eval_cmd->add_option("--snr", ev.snr, "SNR list or range for generated test sets");
  eval_cmd->add_option("--trials", ev.trials, "symbol vectors per SNR point (generated test sets)");
  eval_cmd->add_option("--data", ev.data, "test dataset file(s); replaces generated test sets");
  eval_cmd->add_option("--checkpoint", ev.checkpoints, "learned detector checkpoint(s)");
  eval_cmd->add_option("--detectors", ev.detectors, "comma list of mmse,oamp,oampnet2,oamp_sa,ml");
  eval_cmd->add_option("--iters", ev.iterations, "detector iterations T");
  eval_cmd->add_option("--seed", ev.seed, "evaluation seed");
  eval_cmd->add_flag("--timing", ev.timing, "record mean runtime per detection (makes the CSV non-reproducible)");
  eval_cmd->add_option("--out", ev.out, "output CSV")->required();
  eval_cmd->add_option("--plot", ev.plot, "also write an SVG plot");

  BenchConfig bc;
  std::string bench_sizes = "64x32,512x256", bench_mod = "qam4", bench_out;
  std::vector<std::string> bench_ckpts;
  auto* bench_cmd = app.add_subcommand("bench", "runtime per channel of all four detectors");
  bench_cmd->add_option("--sizes", bench_sizes, "comma list of MxN sizes");
  bench_cmd->add_option("--mod", bench_mod, "modulation");
  bench_cmd->add_option("--snr", bc.snr_db, "SNR in dB");
  bench_cmd->add_option("--trials", bc.trials, "timed evaluations per detector and size");
  bench_cmd->add_option("--warmup", bc.warmup, "untimed warm-up evaluations");
  bench_cmd->add_option("--iters", bc.iterations, "detector iterations T");
  bench_cmd->add_option("--state-dim", bc.state_dim, "latent width of the untrained OAMP-SA model");
  bench_cmd->add_option("--seed", bc.seed, "seed");
  bench_cmd->add_option("--checkpoint", bench_ckpts, "learned parameters to time instead of defaults");
  bench_cmd->add_option("--out", bench_out, "output CSV")->required();

  std::string plot_in, plot_out, plot_title = "SER vs SNR";
  auto* plot_cmd = app.add_subcommand("plot", "render an eval CSV as a log-scale SVG");
  plot_cmd->add_option("csv", plot_in, "eval CSV")->required();
  plot_cmd->add_option("--out", plot_out, "output SVG (default: CSV path with .svg)");
  plot_cmd->add_option("--title", plot_title, "plot title");

  std::vector<const char*> argv{"oampsa"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? 0 : static_cast<int>(ExitCode::usage);
  }

  try {
    if (*gen_cmd) {
      cmd_gen_data(gen, out);
    } else if (*train_cmd) {
      cmd_train(tr, out);
    } else if (*eval_cmd) {
      if (!eval_cmd->get_option("--mod")->empty()) ev.mod_flag = ev.sys.mod;
      cmd_eval(ev, out);
    } else if (*bench_cmd) {
      bc.sizes = parse_sizes(bench_sizes);
      bc.order = parse_modulation(bench_mod);
      std::vector<neural::LearnedParams> learned;
      for (const auto& p : bench_ckpts) learned.push_back(neural::load_learned(p));
      const auto rows = run_bench(bc, learned, [&](const BenchRow& r) {
        out << r.M << "x" << r.N << " " << r.detector << " " << r.mean_us << " us\n";
      });
      write_text(bench_out, bench_csv(rows));
      out << "wrote " << bench_out << "\n";
    } else if (*plot_cmd) {
      const fs::path target = plot_out.empty() ? fs::path(plot_in).replace_extension(".svg") : fs::path(plot_out);
      write_text(target, render_ser_svg(parse_eval_csv(read_text(plot_in)), plot_title));
      out << "wrote " << target.string() << "\n";
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return static_cast<int>(e.code());
  } catch (const std::bad_alloc&) {
    err << "error: out of memory\n";
    return static_cast<int>(ExitCode::data);
  }
  return 0;
}

}  // namespace oampsa::harness
