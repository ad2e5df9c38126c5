#pragma once

#include <Eigen/QR>

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "oampsa/error.hpp"
#include "oampsa/modem.hpp"
#include "oampsa/neural/model.hpp"
#include "oampsa/numerics.hpp"

namespace oampsa {

struct OampConfig {
  int iterations = 10;
  double v_min = 1e-9;
  double tau_min = 1e-9;

  void validate() const {
    if (iterations < 1) throw UsageError("iteration count must be at least 1");
    if (!(v_min > 0.0) || !(tau_min > 0.0)) throw UsageError("variance floors must be positive");
  }
};

/// Per-iteration learnable scalars of OAMPNet2.
struct OampNet2Params {
  std::vector<double> gamma, theta, phi, zeta;

  static OampNet2Params identity(int iterations) {
    const auto n = static_cast<std::size_t>(iterations);
    return {std::vector<double>(n, 1.0), std::vector<double>(n, 1.0), std::vector<double>(n, 1.0),
            std::vector<double>(n, 0.0)};
  }
  int iterations() const { return static_cast<int>(gamma.size()); }
  void check(int T) const {
    const auto n = static_cast<std::size_t>(T);
    if (gamma.size() != n || theta.size() != n || phi.size() != n || zeta.size() != n) {
      throw DimensionError("OAMPNet2 parameters hold " + std::to_string(gamma.size()) + " iterations, detector runs " +
                           std::to_string(T));
    }
  }
};

struct IterationRecord {
  double v_sq = 0.0;
  double tau_sq = 0.0;  // for OAMP-SA: the refined variance v_hat^2
  std::optional<double> ser;
};

struct DetectionResult {
  RealVector x;  // real-equivalent estimate, 2N
  std::vector<IterationRecord> trace;
  /// Per-iteration level probabilities (2N x K): denoiser posteriors or model likelihoods.
  std::vector<RealMatrix> level_probs;
};

// ---------------------------------------------------------------------------
// Baselines
// ---------------------------------------------------------------------------

/// Linear MMSE without interference cancellation: (H'H + sigma^2/2 I)^-1 H'y.
inline RealVector mmse_detect(const RealSystem& sys) {
  RealMatrix A = sys.H.transpose() * sys.H;
  A.diagonal().array() += sys.sigma * sys.sigma / 2.0;
  return solve_spd(A, sys.H.transpose() * sys.y);
}

inline constexpr double kMaxMlCandidates = 1e6;

/// Exhaustive argmin ||y - Hx||^2 over all order^N candidates, scanned in
/// lexicographic order of the index vector (first user most significant) so
/// ties resolve to the lexicographically smallest candidate.
inline SymbolIndices ml_detect_bruteforce(const ComplexMatrix& H, const ComplexVector& y, const Constellation& c) {
  if (y.size() != H.rows()) throw DimensionError("ml_detect: y length != H rows");
  const auto N = H.cols();
  if (std::pow(static_cast<double>(c.order), static_cast<double>(N)) > kMaxMlCandidates) {
    throw UsageError("ML search space " + std::to_string(c.order) + "^" + std::to_string(N) + " exceeds 1e6 candidates");
  }
  SymbolIndices cand(static_cast<std::size_t>(N), 0);
  SymbolIndices best = cand;
  double best_metric = std::numeric_limits<double>::infinity();
  ComplexVector x(N);
  while (true) {
    for (Eigen::Index j = 0; j < N; ++j) x(j) = c.points[cand[static_cast<std::size_t>(j)]];
    const double metric = (y - H * x).squaredNorm();
    if (metric < best_metric) {
      best_metric = metric;
      best = cand;
    }
    Eigen::Index pos = N - 1;
    while (pos >= 0 && ++cand[static_cast<std::size_t>(pos)] == c.order) cand[static_cast<std::size_t>(pos--)] = 0;
    if (pos < 0) break;
  }
  return best;
}

// ---------------------------------------------------------------------------
// OAMP building blocks (real-equivalent model)
// ---------------------------------------------------------------------------

/// H H' of a system, cached across iterations of one detection.
struct SystemGram {
  RealMatrix HHt;
  explicit SystemGram(const RealSystem& sys) : HHt(sys.H * sys.H.transpose()) {}
};

/// De-correlated linear estimator:
///   W_hat = v^2 H' (v^2 H H' + sigma^2/2 I)^-1,   W = 2N / tr(W_hat H) * W_hat.
/// The 2M x 2M system is solved by Cholesky. When it is numerically singular
/// (sigma = 0 with M > N) the identical N-side form (v^2 H'H + sigma^2/2 I)^-1 v^2 H'
/// is used, and for sigma = 0 with rank-deficient H its limit, the pseudo-inverse.
inline RealMatrix oamp_w(const RealSystem& sys, double v_sq, const SystemGram& gram) {
  const double noise = sys.sigma * sys.sigma / 2.0;
  if (!(v_sq > 0.0) && !(noise > 0.0)) throw SingularSystemError("oamp_w: both v^2 and sigma are zero");
  const auto two_n = static_cast<double>(sys.H.cols());
  RealMatrix W_hat;
  RealMatrix G = v_sq * gram.HHt;
  G.diagonal().array() += noise;
  Eigen::LLT<RealMatrix> llt(G);
  if (llt.info() == Eigen::Success) {
    W_hat = v_sq * llt.solve(sys.H).transpose();
  }
  if (W_hat.size() == 0 || !W_hat.allFinite()) {
    RealMatrix G_n = v_sq * (sys.H.transpose() * sys.H);
    G_n.diagonal().array() += noise;
    Eigen::LLT<RealMatrix> llt_n(G_n);
    if (llt_n.info() == Eigen::Success) W_hat = v_sq * llt_n.solve(sys.H.transpose());
  }
  if (W_hat.size() == 0 || !W_hat.allFinite()) {
    if (noise > 0.0) throw SingularSystemError("oamp_w: inner matrix is not positive definite");
    // Noiseless and rank-deficient: the estimator tends to the pseudo-inverse.
    W_hat = Eigen::CompleteOrthogonalDecomposition<RealMatrix>(sys.H).pseudoInverse();
  }
  const double tr = trace_product(W_hat, sys.H);
  if (!(tr > 0.0) || !std::isfinite(tr)) throw SingularSystemError("oamp_w: tr(W_hat H) is not positive");
  return (two_n / tr) * W_hat;
}

inline RealMatrix oamp_w(const RealSystem& sys, double v_sq) { return oamp_w(sys, v_sq, SystemGram(sys)); }

/// r = x_prev + gamma W (y - H x_prev)
inline RealVector oamp_linear_step(const RealVector& x_prev, const RealSystem& sys, const RealMatrix& W,
                                   double gamma = 1.0) {
  return x_prev + gamma * (W * (sys.y - sys.H * x_prev));
}

struct DenoiserOutput {
  RealVector mean;        // 2N
  RealMatrix posteriors;  // 2N x K
};

/// Posterior mean of a uniform PAM symbol observed as r = s + n, n ~ N(0, tau^2).
inline DenoiserOutput posterior_mean_denoiser(const RealVector& r, double tau_sq, std::span<const double> levels) {
  const auto K = static_cast<Eigen::Index>(levels.size());
  DenoiserOutput out{RealVector(r.size()), RealMatrix(r.size(), K)};
  const double inv = 1.0 / (2.0 * tau_sq);
  for (Eigen::Index i = 0; i < r.size(); ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index k = 0; k < K; ++k) {
      const double d = r(i) - levels[static_cast<std::size_t>(k)];
      out.posteriors(i, k) = -d * d * inv;
      mx = std::max(mx, out.posteriors(i, k));
    }
    double total = 0.0;
    for (Eigen::Index k = 0; k < K; ++k) total += (out.posteriors(i, k) = std::exp(out.posteriors(i, k) - mx));
    double mean = 0.0;
    for (Eigen::Index k = 0; k < K; ++k) {
      out.posteriors(i, k) /= total;
      mean += levels[static_cast<std::size_t>(k)] * out.posteriors(i, k);
    }
    out.mean(i) = mean;
  }
  return out;
}

/// v^2 = max((||y - Hx||^2 - M sigma^2) / tr(H'H), v_min)
inline double error_variance(const RealSystem& sys, const RealVector& x, double v_min) {
  const double residual = (sys.y - sys.H * x).squaredNorm();
  const double noise = static_cast<double>(sys.rx()) * sys.sigma * sys.sigma;
  const double v_sq = (residual - noise) / sys.H.squaredNorm();
  return std::isfinite(v_sq) ? std::max(v_sq, v_min) : v_min;
}

/// B = I - theta W H;  tau^2 = max(tr(BB')/2N v^2 + theta^2/4N tr(WW') sigma^2, tau_min)
inline double tau_update(const RealSystem& sys, const RealMatrix& W, double v_sq, double theta, double tau_min) {
  const auto two_n = sys.H.cols();
  RealMatrix B = -theta * (W * sys.H);
  B.diagonal().array() += 1.0;
  const double n2 = static_cast<double>(two_n);
  const double tau_sq =
      B.squaredNorm() / n2 * v_sq + theta * theta / (2.0 * n2) * W.squaredNorm() * sys.sigma * sys.sigma;
  return std::isfinite(tau_sq) ? std::max(tau_sq, tau_min) : tau_min;
}

namespace detail {

inline std::optional<double> iteration_ser(const RealVector& x, const Constellation& c,
                                           const SymbolIndices* labels) {
  if (labels == nullptr) return std::nullopt;
  return ser(hard_decision(x, c), *labels);
}

inline void check_system(const RealSystem& sys) {
  if (sys.H.rows() % 2 != 0 || sys.H.cols() % 2 != 0 || sys.y.size() != sys.H.rows()) {
    throw DimensionError("malformed real-equivalent system");
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Detectors
// ---------------------------------------------------------------------------

/// Plain OAMP: per iteration W, r, posterior mean, v^2, B, tau^2.
inline DetectionResult oamp_detect(const RealSystem& sys, const Constellation& c, const OampConfig& cfg,
                                   const SymbolIndices* labels = nullptr) {
  cfg.validate();
  detail::check_system(sys);
  const SystemGram gram(sys);
  DetectionResult res;
  RealVector x = RealVector::Zero(sys.H.cols());
  double v_sq = 1.0;
  double tau_sq = 1.0;
  for (int t = 0; t < cfg.iterations; ++t) {
    const RealMatrix W = oamp_w(sys, v_sq, gram);
    const RealVector r = oamp_linear_step(x, sys, W);
    auto den = posterior_mean_denoiser(r, tau_sq, c.pam_levels);
    x = std::move(den.mean);
    v_sq = error_variance(sys, x, cfg.v_min);
    tau_sq = tau_update(sys, W, v_sq, 1.0, cfg.tau_min);
    res.trace.push_back({v_sq, tau_sq, detail::iteration_ser(x, c, labels)});
    res.level_probs.push_back(std::move(den.posteriors));
  }
  res.x = std::move(x);
  return res;
}

/// OAMPNet2: gamma scales the linear update, theta scales W inside B and tau^2,
/// and x_t = phi (E{s | r_t, tau_{t-1}} - zeta r_t).
inline DetectionResult oampnet2_detect(const RealSystem& sys, const Constellation& c, const OampConfig& cfg,
                                       const OampNet2Params& params, const SymbolIndices* labels = nullptr) {
  cfg.validate();
  params.check(cfg.iterations);
  detail::check_system(sys);
  const SystemGram gram(sys);
  DetectionResult res;
  RealVector x = RealVector::Zero(sys.H.cols());
  double v_sq = 1.0;
  double tau_sq = 1.0;
  for (int t = 0; t < cfg.iterations; ++t) {
    const auto k = static_cast<std::size_t>(t);
    const RealMatrix W = oamp_w(sys, v_sq, gram);
    const RealVector r = oamp_linear_step(x, sys, W, params.gamma[k]);
    auto den = posterior_mean_denoiser(r, tau_sq, c.pam_levels);
    x = params.phi[k] * (den.mean - params.zeta[k] * r);
    v_sq = error_variance(sys, x, cfg.v_min);
    tau_sq = tau_update(sys, W, v_sq, params.theta[k], cfg.tau_min);
    res.trace.push_back({v_sq, tau_sq, detail::iteration_ser(x, c, labels)});
    res.level_probs.push_back(std::move(den.posteriors));
  }
  res.x = std::move(x);
  return res;
}

/// OAMP with the denoiser, B and tau^2 updates replaced by the attention block.
///
/// Per iteration: W from the previous refined variance (1 initially), r from
/// the linear step, analytic v^2 for the trace, then tokens -> attention ->
/// likelihoods and refined variance; x_t is the expected level under the
/// normalized likelihoods. The latent state carries across iterations.
inline DetectionResult oamp_sa_detect(const RealSystem& sys, const Constellation& c, const OampConfig& cfg,
                                      const neural::AttentionModel& model, const SymbolIndices* labels = nullptr) {
  cfg.validate();
  detail::check_system(sys);
  model.check_shapes();
  if (model.rx != sys.rx() || model.pam_size != c.pam_size) {
    throw DimensionError("model built for M=" + std::to_string(model.rx) + ", K=" + std::to_string(model.pam_size) +
                         "; system has M=" + std::to_string(sys.rx()) + ", K=" + std::to_string(c.pam_size));
  }
  const SystemGram gram(sys);
  const auto n_tok = sys.H.cols();
  DetectionResult res;
  neural::TokenInputs in;
  in.sys = &sys;
  in.x_prev = RealVector::Zero(n_tok);
  in.prev_probs = RealMatrix::Constant(n_tok, model.pam_size, 0.5);
  in.latent = RealMatrix::Zero(n_tok, model.state_dim);
  in.v_hat_sq = 1.0;
  for (int t = 0; t < cfg.iterations; ++t) {
    const RealMatrix W = oamp_w(sys, std::max(in.v_hat_sq, cfg.v_min), gram);
    in.r = oamp_linear_step(in.x_prev, sys, W);
    const double v_sq = error_variance(sys, in.x_prev, cfg.v_min);
    const RealMatrix Z = neural::build_tokens(in, model.pam_size, model.state_dim);
    const auto att = neural::attention_forward(model, Z);
    RealMatrix P = neural::likelihood_head(model, att.tokens);
    in.v_hat_sq = neural::variance_head(model, att.tokens);
    in.x_prev = neural::expected_symbols(P, c.pam_levels);
    in.latent = att.tokens.leftCols(model.state_dim);
    res.trace.push_back({v_sq, in.v_hat_sq, detail::iteration_ser(in.x_prev, c, labels)});
    res.level_probs.push_back(P);
    in.prev_probs = std::move(P);
  }
  res.x = std::move(in.x_prev);
  return res;
}

}  // namespace oampsa
