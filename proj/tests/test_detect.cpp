#include <gtest/gtest.h>

#include <bit>
#include <map>
#include <numeric>

#include "oampsa/channel.hpp"
#include "oampsa/detect.hpp"

using namespace oampsa;

namespace {

RealMatrix random_real(Eigen::Index r, Eigen::Index c, Rng& rng) {
  RealMatrix A(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) A(i, j) = rng.normal();
  return A;
}

RealSystem random_system(Eigen::Index M, Eigen::Index N, double sigma, Rng& rng) {
  const auto H = rayleigh_channel(M, N, rng);
  ComplexVector y(M);
  for (Eigen::Index i = 0; i < M; ++i) y(i) = rng.complex_normal();
  return to_real_equivalent(H, y, sigma);
}

ChannelSample draw(const SampleGenerator& gen, std::size_t i) { return gen(i); }

bool bit_equal(const RealVector& a, const RealVector& b) {
  if (a.size() != b.size()) return false;
  for (Eigen::Index i = 0; i < a.size(); ++i)
    if (std::bit_cast<std::uint64_t>(a(i)) != std::bit_cast<std::uint64_t>(b(i))) return false;
  return true;
}

}  // namespace

// ---------------------------------------------------------------- MMSE / ML

TEST(Mmse, NoiselessIdentityReturnsObservation) {
  RealSystem sys{RealMatrix::Identity(4, 4), (RealVector(4) << 0.3, -1, 2, 0.5).finished(), 1e-9};
  EXPECT_LT((mmse_detect(sys) - sys.y).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Mmse, ScalarShrinkage) {
  RealSystem sys{RealMatrix::Identity(4, 4), (RealVector(4) << 0.3, -1, 2, 0.5).finished(), std::sqrt(2.0)};
  EXPECT_LT((mmse_detect(sys) - sys.y / 2).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Mmse, MatchesExplicitInverse) {
  Rng rng(1);
  const auto sys = random_system(4, 2, 0.4, rng);
  RealMatrix A = sys.H.transpose() * sys.H + 0.08 * RealMatrix::Identity(4, 4);
  const RealVector oracle = A.inverse() * sys.H.transpose() * sys.y;
  EXPECT_LT((mmse_detect(sys) - oracle).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Mmse, SingularNoiselessRankDeficient) {
  RealSystem sys{RealMatrix::Zero(4, 4), RealVector::Zero(4), 0.0};
  EXPECT_THROW(mmse_detect(sys), SingularSystemError);
}

TEST(Ml, NoiselessRecovery) {
  Rng rng(2);
  const auto c = qam_constellation(4);
  for (int trial = 0; trial < 20; ++trial) {
    const auto H = rayleigh_channel(4, 3, rng);
    SymbolIndices x(3);
    for (auto& v : x) v = static_cast<std::uint16_t>(rng.below(4));
    EXPECT_EQ(ml_detect_bruteforce(H, H * modulate(x, c), c), x);
  }
}

TEST(Ml, SingleUserIsScaledNearestPoint) {
  // ||y - h s||^2 = ||h||^2 |z - s|^2 + const with z = h^H y / ||h||^2.
  Rng rng(3);
  const auto c = qam_constellation(16);
  for (int trial = 0; trial < 200; ++trial) {
    const auto H = rayleigh_channel(3, 1, rng);
    ComplexVector y(3);
    for (auto& v : y) v = rng.complex_normal();
    ComplexVector z(1);
    z(0) = (H.col(0).adjoint() * y)(0) / H.col(0).squaredNorm();
    EXPECT_EQ(ml_detect_bruteforce(H, y, c), nearest_symbol(z, c));
  }
}

TEST(Ml, TwoUsersMatchesNestedEnumeration) {
  Rng rng(4);
  const auto c = qam_constellation(4);
  for (int trial = 0; trial < 200; ++trial) {
    const auto H = rayleigh_channel(4, 2, rng);
    ComplexVector y(4);
    for (auto& v : y) v = rng.complex_normal(2.0);
    double best = 1e300;
    SymbolIndices arg;
    for (std::uint16_t a = 0; a < 4; ++a)
      for (std::uint16_t b = 0; b < 4; ++b) {
        ComplexVector x(2);
        x << c.points[a], c.points[b];
        const double d = (y - H * x).squaredNorm();
        if (d < best) {
          best = d;
          arg = {a, b};
        }
      }
    EXPECT_EQ(ml_detect_bruteforce(H, y, c), arg);
  }
}

TEST(Ml, SearchSpaceLimit) {
  const auto c = qam_constellation(16);
  EXPECT_THROW(ml_detect_bruteforce(ComplexMatrix::Zero(6, 6), ComplexVector::Zero(6), c), UsageError);
}

// ---------------------------------------------------------------- OAMP blocks

TEST(OampW, TraceNormalization) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const auto sys = random_system(1 + rng.below(8), 1 + rng.below(6), 0.1 + rng.uniform(), rng);
    const auto W = oamp_w(sys, rng.uniform());
    EXPECT_NEAR(trace_product(W, sys.H), static_cast<double>(sys.H.cols()), 1e-8);
  }
}

TEST(OampW, NoiselessSquareIsInverse) {
  Rng rng(6);
  const auto sys = random_system(3, 3, 0.0, rng);
  const auto W = oamp_w(sys, 0.7);
  EXPECT_LT((W - sys.H.inverse()).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(OampW, ScalarArithmetic) {
  RealSystem sys{RealMatrix::Identity(4, 4), RealVector::Zero(4), std::sqrt(2.0)};
  EXPECT_LT((oamp_w(sys, 1.0) - RealMatrix::Identity(4, 4)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(OampW, BothZeroIsSingular) {
  Rng rng(7);
  const auto sys = random_system(4, 2, 0.0, rng);
  EXPECT_THROW(oamp_w(sys, 0.0), SingularSystemError);
}

TEST(OampW, NoiselessTallUsesEquivalentForm) {
  Rng rng(8);
  const auto sys = random_system(6, 3, 0.0, rng);
  const auto W = oamp_w(sys, 0.5);
  EXPECT_LT((W * sys.H - RealMatrix::Identity(6, 6)).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(LinearStep, Examples) {
  Rng rng(9);
  const auto c = qam_constellation(4);
  const auto H = rayleigh_channel(4, 2, rng);
  const SymbolIndices idx{1, 3};
  const auto x = modulate(idx, c);
  const auto sys = to_real_equivalent(H, H * x, 0.0);
  const auto W = oamp_w(sys, 0.3);
  const RealVector xr = real_equivalent_vector(x);
  EXPECT_LT((oamp_linear_step(xr, sys, W) - xr).cwiseAbs().maxCoeff(), 1e-12);
  const RealVector other = RealVector::Ones(4);
  EXPECT_EQ(oamp_linear_step(other, sys, W, 0.0), other);
  EXPECT_LT((oamp_linear_step(RealVector::Zero(4), sys, W) - W * sys.y).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Denoiser, LimitSymmetryAndTanhOracle) {
  const auto c = qam_constellation(4);
  const double a = c.pam_levels[1];
  RealVector r(1);
  r << 0.9 * a;
  auto out = posterior_mean_denoiser(r, 1e-9, c.pam_levels);
  EXPECT_NEAR(out.mean(0), a, 1e-12);
  EXPECT_NEAR(out.posteriors(0, 1), 1.0, 1e-12);

  r << 0.0;
  out = posterior_mean_denoiser(r, 0.3, c.pam_levels);
  EXPECT_EQ(out.mean(0), 0.0);

  const auto c16 = qam_constellation(16);
  out = posterior_mean_denoiser(r, 0.3, c16.pam_levels);
  EXPECT_NEAR(out.mean(0), 0.0, 1e-16);

  // Binary PAM +-a: E{s | r} = a tanh(a r / tau^2).
  r << 0.3;
  out = posterior_mean_denoiser(r, 0.25, c.pam_levels);
  EXPECT_NEAR(out.mean(0), a * std::tanh(a * 0.3 / 0.25), 1e-14);
  EXPECT_NEAR(out.mean(0), 0.4881, 1e-4);
  EXPECT_NEAR(out.posteriors.row(0).sum(), 1.0, 1e-15);
}

TEST(Denoiser, NoUnderflowFarFromLevels) {
  const auto c = qam_constellation(16);
  RealVector r(2);
  r << 1e3, -1e3;
  const auto out = posterior_mean_denoiser(r, 1e-9, c.pam_levels);
  EXPECT_TRUE(out.mean.allFinite());
  EXPECT_DOUBLE_EQ(out.mean(0), c.pam_levels.back());
  EXPECT_DOUBLE_EQ(out.mean(1), c.pam_levels.front());
}

TEST(ErrorVariance, Examples) {
  Rng rng(10);
  const auto c = qam_constellation(4);
  const auto H = rayleigh_channel(4, 2, rng);
  const auto x = modulate(SymbolIndices{0, 2}, c);
  const auto sys = to_real_equivalent(H, H * x, 0.0);
  EXPECT_EQ(error_variance(sys, real_equivalent_vector(x), 1e-9), 1e-9);
  EXPECT_NEAR(error_variance(sys, RealVector::Zero(4), 1e-9), sys.y.squaredNorm() / (sys.H.transpose() * sys.H).trace(),
              1e-14);
}

TEST(ErrorVariance, MatchesDirectFormula) {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const auto sys = random_system(5, 3, 0.3, rng);
    RealVector x(6);
    for (auto& v : x) v = 3 * rng.normal();
    double res = 0;
    for (Eigen::Index i = 0; i < sys.H.rows(); ++i) {
      double e = sys.y(i);
      for (Eigen::Index j = 0; j < sys.H.cols(); ++j) e -= sys.H(i, j) * x(j);
      res += e * e;
    }
    double tr = 0;
    for (Eigen::Index i = 0; i < sys.H.rows(); ++i)
      for (Eigen::Index j = 0; j < sys.H.cols(); ++j) tr += sys.H(i, j) * sys.H(i, j);
    EXPECT_NEAR(error_variance(sys, x, 1e-9), std::max((res - 5 * 0.09) / tr, 1e-9), 1e-12);
  }
}

TEST(TauUpdate, Examples) {
  Rng rng(12);
  const auto sys = random_system(3, 3, 0.5, rng);
  const RealMatrix Hinv = sys.H.inverse();
  EXPECT_NEAR(tau_update(sys, Hinv, 0.7, 1.0, 1e-9), 0.25 / 12.0 * (Hinv * Hinv.transpose()).trace(), 1e-12);

  const auto sys0 = random_system(4, 2, 0.0, rng);
  EXPECT_NEAR(tau_update(sys0, oamp_w(sys0, 1.0), 0.37, 0.0, 1e-9), 0.37, 1e-15);
}

TEST(TauUpdate, MatchesDirectEvaluation) {
  Rng rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    const auto sys = random_system(5, 3, 0.6, rng);
    const RealMatrix W = random_real(6, 10, rng);
    const double v = rng.uniform(), theta = rng.uniform(0.5, 1.5);
    const RealMatrix B = RealMatrix::Identity(6, 6) - theta * W * sys.H;
    const double expected = (B * B.transpose()).trace() / 6.0 * v + theta * theta / 12.0 * (W * W.transpose()).trace() * 0.36;
    EXPECT_NEAR(tau_update(sys, W, v, theta, 1e-9), expected, 1e-10 * expected);
  }
}

// ---------------------------------------------------------------- detectors

TEST(Oamp, NoiselessRecovery) {
  DatasetConfig cfg;
  cfg.snr = SnrPolicy::fixed(160.0);  // sigma = 2.8e-8
  cfg.seed = 14;
  const SampleGenerator gen(cfg);
  const auto& c = gen.constellation();
  for (std::size_t i = 0; i < 100; ++i) {
    const auto s = draw(gen, i);
    const auto res = oamp_detect(s.real_system(), c, {});
    EXPECT_EQ(hard_decision(res.x, c), s.x_true) << "sample " << i;
  }
}

TEST(Oamp, TraceHasPerIterationRecords) {
  DatasetConfig cfg;
  cfg.seed = 15;
  const SampleGenerator gen(cfg);
  const auto s = draw(gen, 0);
  const auto res = oamp_detect(s.real_system(), gen.constellation(), {10}, &s.x_true);
  ASSERT_EQ(res.trace.size(), 10u);
  for (const auto& r : res.trace) {
    EXPECT_GE(r.v_sq, 1e-9);
    EXPECT_GE(r.tau_sq, 1e-9);
    ASSERT_TRUE(r.ser.has_value());
  }
  EXPECT_EQ(res.level_probs.size(), 10u);
}

TEST(Oamp, BeatsMmseAtTenDb) {
  DatasetConfig cfg;
  cfg.snr = SnrPolicy::fixed(10.0);
  cfg.seed = 16;
  const SampleGenerator gen(cfg);
  const auto& c = gen.constellation();
  std::size_t e_oamp = 0, e_mmse = 0;
  for (std::size_t i = 0; i < 3000; ++i) {
    const auto s = draw(gen, i);
    const auto sys = s.real_system();
    e_oamp += symbol_errors(hard_decision(oamp_detect(sys, c, {}).x, c), s.x_true);
    e_mmse += symbol_errors(hard_decision(mmse_detect(sys), c), s.x_true);
  }
  EXPECT_LT(e_oamp, e_mmse);
}

TEST(Oamp, AgreesWithMlOnSmallSystems) {
  DatasetConfig cfg;
  cfg.M = 4;
  cfg.N = 2;
  cfg.snr = SnrPolicy::fixed(15.0);
  cfg.seed = 17;
  const SampleGenerator gen(cfg);
  const auto& c = gen.constellation();
  int agree = 0;
  const int trials = 500;
  for (int i = 0; i < trials; ++i) {
    const auto s = draw(gen, static_cast<std::size_t>(i));
    agree += hard_decision(oamp_detect(s.real_system(), c, {}).x, c) == ml_detect_bruteforce(s.H, s.y, c);
  }
  EXPECT_GE(agree, 0.95 * trials);
}

TEST(OampNet2, IdentityParametersAreBitIdentical) {
  DatasetConfig cfg;
  cfg.seed = 18;
  cfg.snr = SnrPolicy::uniform(0.0, 20.0);
  const SampleGenerator gen(cfg);
  const auto& c = gen.constellation();
  const auto params = OampNet2Params::identity(10);
  for (std::size_t i = 0; i < 30; ++i) {
    const auto sys = draw(gen, i).real_system();
    const auto a = oamp_detect(sys, c, {});
    const auto b = oampnet2_detect(sys, c, {}, params);
    EXPECT_TRUE(bit_equal(a.x, b.x));
    for (std::size_t t = 0; t < a.trace.size(); ++t) {
      EXPECT_EQ(std::bit_cast<std::uint64_t>(a.trace[t].tau_sq), std::bit_cast<std::uint64_t>(b.trace[t].tau_sq));
      EXPECT_EQ(std::bit_cast<std::uint64_t>(a.trace[t].v_sq), std::bit_cast<std::uint64_t>(b.trace[t].v_sq));
    }
  }
}

TEST(OampNet2, ZeroPhiGivesZeroEstimate) {
  DatasetConfig cfg;
  cfg.seed = 19;
  const SampleGenerator gen(cfg);
  auto params = OampNet2Params::identity(5);
  std::fill(params.phi.begin(), params.phi.end(), 0.0);
  const auto res = oampnet2_detect(draw(gen, 0).real_system(), gen.constellation(), {5}, params);
  EXPECT_TRUE(res.x.isZero(0.0));
}

TEST(OampNet2, ParameterLengthChecked) {
  DatasetConfig cfg;
  const SampleGenerator gen(cfg);
  EXPECT_THROW(oampnet2_detect(draw(gen, 0).real_system(), gen.constellation(), {10}, OampNet2Params::identity(3)),
               DimensionError);
}

namespace {

neural::AttentionModel small_model(int rx, int K, std::uint64_t seed) {
  Rng rng(seed);
  return neural::AttentionModel::initialize(rx, K, 8, rng);
}

}  // namespace

TEST(OampSa, ZeroedHeadsGiveUninformativeOutput) {
  DatasetConfig cfg;
  cfg.seed = 20;
  const SampleGenerator gen(cfg);
  auto model = small_model(16, 2, 1);
  model.head_W2.setZero();
  model.var_W3.setZero();
  const auto res = oamp_sa_detect(draw(gen, 0).real_system(), gen.constellation(), {10}, model);
  EXPECT_TRUE(res.x.allFinite());
  EXPECT_LT(res.x.cwiseAbs().maxCoeff(), 1e-15);
  for (const auto& P : res.level_probs) EXPECT_LT((P.array() - 0.5).abs().maxCoeff(), 1e-15);
  for (const auto& r : res.trace) EXPECT_EQ(r.tau_sq, 0.25);
}

TEST(OampSa, UserPermutationEquivariance) {
  DatasetConfig cfg;
  cfg.seed = 21;
  const SampleGenerator gen(cfg);
  const auto& c = gen.constellation();
  const auto model = small_model(16, 2, 2);
  Rng rng(3);
  for (std::size_t i = 0; i < 10; ++i) {
    const auto s = draw(gen, i);
    std::vector<int> perm(8);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t k = perm.size(); k > 1; --k) std::swap(perm[k - 1], perm[rng.below(k)]);
    ComplexMatrix Hp(s.H.rows(), s.H.cols());
    for (int j = 0; j < 8; ++j) Hp.col(j) = s.H.col(perm[j]);
    const auto a = oamp_sa_detect(s.real_system(), c, {10}, model);
    const auto b = oamp_sa_detect(to_real_equivalent(Hp, s.y, s.sigma), c, {10}, model);
    const auto oa = oamp_detect(s.real_system(), c, {});
    const auto ob = oamp_detect(to_real_equivalent(Hp, s.y, s.sigma), c, {});
    for (int j = 0; j < 8; ++j) {
      for (int part = 0; part < 2; ++part) {
        EXPECT_NEAR(b.x(part * 8 + j), a.x(part * 8 + perm[j]), 1e-10);
        EXPECT_NEAR(ob.x(part * 8 + j), oa.x(part * 8 + perm[j]), 1e-10);
      }
    }
  }
}

TEST(OampSa, DimensionMismatch) {
  DatasetConfig cfg;
  const SampleGenerator gen(cfg);
  EXPECT_THROW(oamp_sa_detect(draw(gen, 0).real_system(), gen.constellation(), {3}, small_model(8, 2, 1)),
               DimensionError);
  EXPECT_THROW(oamp_sa_detect(draw(gen, 0).real_system(), gen.constellation(), {3}, small_model(16, 4, 1)),
               DimensionError);
}

// ---------------------------------------------------------------- invariants

TEST(Invariants, NormalizationHoldsInsideDetectors) {
  DatasetConfig cfg;
  cfg.seed = 22;
  cfg.snr = SnrPolicy::uniform(0.0, 30.0);
  const SampleGenerator gen(cfg);
  for (std::size_t i = 0; i < 20; ++i) {
    const auto sys = draw(gen, i).real_system();
    for (double v : {1.0, 0.3, 1e-3, 1e-9}) EXPECT_NEAR(trace_product(oamp_w(sys, v), sys.H), 16.0, 1e-8);
  }
}

TEST(Invariants, FuzzNoNonFiniteOutputs) {
  Rng rng(23);
  std::map<std::pair<int, int>, neural::AttentionModel> models;
  const Constellation cs[2] = {qam_constellation(4), qam_constellation(16)};
  int singular = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    const int M = 1 + static_cast<int>(rng.below(5));
    const int N = 1 + static_cast<int>(rng.below(4));
    const auto& c = cs[rng.below(2)];
    ComplexMatrix H = rayleigh_channel(M, N, rng);
    const int kind = static_cast<int>(rng.below(4));
    if (kind == 1 && N > 1) H.col(N - 1) = H.col(0) * Complex(0.5, -2.0);  // rank-deficient
    if (kind == 2) H *= std::pow(10.0, rng.uniform(-4.0, 4.0));
    const double sigma = rng.below(3) == 0 ? 0.0 : std::pow(10.0, rng.uniform(-6.0, 1.0));
    ComplexVector y(M);
    for (auto& v : y) v = rng.complex_normal(std::pow(10.0, rng.uniform(-3.0, 3.0)));
    const auto sys = to_real_equivalent(H, y, sigma);
    const OampConfig cfg{3};
    auto key = std::make_pair(M, c.pam_size);
    if (!models.count(key)) models.emplace(key, small_model(M, c.pam_size, 100 + models.size()));
    auto params = OampNet2Params::identity(3);
    params.gamma[1] = 1.3;
    params.zeta[2] = 0.2;
    const auto a = oamp_detect(sys, c, cfg);
    const auto b = oampnet2_detect(sys, c, cfg, params);
    const auto d = oamp_sa_detect(sys, c, cfg, models.at(key));
    ASSERT_TRUE(a.x.allFinite()) << trial;
    ASSERT_TRUE(b.x.allFinite()) << trial;
    ASSERT_TRUE(d.x.allFinite()) << trial;
    for (const auto* res : {&a, &b, &d})
      for (const auto& r : res->trace) {
        ASSERT_GE(r.v_sq, 1e-9);
        ASSERT_TRUE(std::isfinite(r.tau_sq));
      }
    try {
      ASSERT_TRUE(mmse_detect(sys).allFinite());
    } catch (const SingularSystemError&) {
      // Only when the noise loading is below rounding level of a rank-deficient Gram matrix.
      ++singular;
      const double gram = (sys.H.transpose() * sys.H).cwiseAbs().maxCoeff();
      ASSERT_LT(sigma * sigma / 2.0, 1e-12 * gram) << trial;
    }
  }
  RecordProperty("mmse_singular", singular);
}
