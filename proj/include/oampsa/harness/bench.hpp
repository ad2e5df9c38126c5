#pragma once

#include <chrono>
#include <string>
#include <vector>

#include "oampsa/channel.hpp"
#include "oampsa/detect.hpp"
#include "oampsa/harness/eval.hpp"
#include "oampsa/harness/report.hpp"
#include "oampsa/neural/params.hpp"

namespace oampsa::harness {

struct BenchSize {
  int M = 0;
  int N = 0;
};

struct BenchConfig {
  std::vector<BenchSize> sizes{{64, 32}, {512, 256}};
  int order = 4;
  double snr_db = 10.0;
  std::size_t trials = 1000;  // timed evaluations per detector and size
  std::size_t warmup = 10;
  std::size_t pool = 16;      // distinct channel realizations cycled through
  int iterations = 10;
  int state_dim = 32;
  std::uint64_t seed = 1;
};

struct BenchRow {
  int M = 0;
  int N = 0;
  std::string detector;
  std::size_t trials = 0;
  double mean_us = 0.0;
  double ratio_vs_mmse = 0.0;
  double ratio_vs_oampnet2 = 0.0;
};

inline constexpr const char* kBenchHeader = "m,n,detector,trials,mean_us,ratio_vs_mmse,ratio_vs_oampnet2";

inline std::string bench_csv(const std::vector<BenchRow>& rows) {
  std::string out = std::string(kBenchHeader) + "\n";
  for (const auto& r : rows) {
    out += std::to_string(r.M) + "," + std::to_string(r.N) + "," + r.detector + "," + std::to_string(r.trials) + "," +
           format_double(r.mean_us) + "," + format_double(r.ratio_vs_mmse) + "," + format_double(r.ratio_vs_oampnet2) +
           "\n";
  }
  return out;
}

/// Mean wall time per channel of MMSE, OAMP, OAMPNet2 and OAMP-SA at each size.
/// Learned detectors run with identity scalars / seeded random weights unless
/// parameters are supplied; runtime does not depend on the parameter values.
inline std::vector<BenchRow> run_bench(const BenchConfig& cfg, const std::vector<neural::LearnedParams>& supplied = {},
                                       const std::function<void(const BenchRow&)>& progress = {}) {
  if (cfg.trials == 0 || cfg.pool == 0) throw UsageError("bench needs at least one trial");
  std::vector<BenchRow> rows;
  for (std::size_t si = 0; si < cfg.sizes.size(); ++si) {
    const auto [M, N] = cfg.sizes[si];
    DatasetConfig dc;
    dc.M = M;
    dc.N = N;
    dc.order = cfg.order;
    dc.snr = SnrPolicy::fixed(cfg.snr_db);
    dc.seed = derive_seed(cfg.seed, si);
    const SampleGenerator gen(dc);
    const auto& c = gen.constellation();
    std::vector<ChannelSample> pool;
    std::vector<RealSystem> systems;
    for (std::size_t i = 0; i < cfg.pool; ++i) {
      pool.push_back(gen(i));
      systems.push_back(pool.back().real_system());
    }

    std::vector<neural::LearnedParams> learned;
    for (const auto& p : supplied) {
      if (const auto* m = std::get_if<neural::AttentionModel>(&p); m && (m->rx != M || m->pam_size != c.pam_size)) continue;
      learned.push_back(p);
    }
    auto have = [&](neural::Variant v) {
      for (const auto& p : learned)
        if (neural::variant_of(p) == v) return true;
      return false;
    };
    if (!have(neural::Variant::oampnet2)) learned.push_back(OampNet2Params::identity(cfg.iterations));
    if (!have(neural::Variant::oamp_sa)) {
      Rng rng(derive_seed(cfg.seed, 0xBE9C0000ULL + si));
      learned.push_back(neural::AttentionModel::initialize(M, c.pam_size, cfg.state_dim, rng));
    }
    const auto detectors =
        make_detectors({DetectorKind::mmse, DetectorKind::oamp, DetectorKind::oampnet2, DetectorKind::oamp_sa}, learned);
    const OampConfig oc{cfg.iterations};

    std::vector<BenchRow> size_rows;
    for (const auto& d : detectors) {
      auto run = [&](std::size_t i) {
        const auto& sys = systems[i % systems.size()];
        switch (d.kind) {
          case DetectorKind::mmse: return mmse_detect(sys)(0);
          case DetectorKind::oamp: return oamp_detect(sys, c, oc).x(0);
          default: return neural::detect_learned(sys, c, oc, *d.params).x(0);
        }
      };
      volatile double sink = 0.0;
      for (std::size_t i = 0; i < cfg.warmup; ++i) sink = sink + run(i);
      const auto t0 = std::chrono::steady_clock::now();
      for (std::size_t i = 0; i < cfg.trials; ++i) sink = sink + run(i);
      const double total = std::chrono::duration<double, std::micro>(std::chrono::steady_clock::now() - t0).count();
      BenchRow r{M, N, d.label, cfg.trials, total / static_cast<double>(cfg.trials), 0.0, 0.0};
      size_rows.push_back(r);
      if (progress) progress(r);
    }
    const double mmse_us = size_rows[0].mean_us;
    const double net_us = size_rows[2].mean_us;
    for (auto& r : size_rows) {
      r.ratio_vs_mmse = r.mean_us / mmse_us;
      r.ratio_vs_oampnet2 = r.mean_us / net_us;
    }
    rows.insert(rows.end(), size_rows.begin(), size_rows.end());
  }
  return rows;
}

}  // namespace oampsa::harness
