#pragma once

#include <array>
#include <vector>

#include "oampsa/detect.hpp"
#include "oampsa/modem.hpp"
#include "oampsa/neural/model.hpp"
#include "oampsa/neural/params.hpp"
#include "oampsa/neural/tape.hpp"

// Differentiable unrolled detectors. The linear-algebra quantities of each
// iteration (W_t and the analytic v^2_t) are computed from current values and
// enter the graph as constants; gradients flow through everything else.

namespace oampsa::neural {

/// Per-iteration constants of one unrolled pass. Recording them and replaying
/// them later reproduces the exact function the tape differentiates.
struct DetachedConstants {
  std::vector<RealMatrix> W;
  std::vector<double> v_sq;
};

struct UnrolledOutput {
  Var loss;
  RealVector x;
  std::vector<RealMatrix> probs;
  std::vector<double> variances;  // tau^2 (OAMPNet2) or v_hat^2 (OAMP-SA)
};

/// 0/1 targets per (token, level).
inline RealMatrix one_hot_levels(std::span<const int> labels, int pam_size) {
  RealMatrix Y = RealMatrix::Zero(static_cast<Eigen::Index>(labels.size()), pam_size);
  for (std::size_t i = 0; i < labels.size(); ++i) Y(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
  return Y;
}

namespace detail {

class ConstantSource {
 public:
  ConstantSource(DetachedConstants* record, const DetachedConstants* replay) : record_(record), replay_(replay) {}

  RealMatrix W(int t, const RealSystem& sys, double v_sq, const SystemGram& gram) const {
    RealMatrix w = replay_ ? replay_->W.at(static_cast<std::size_t>(t)) : oamp_w(sys, v_sq, gram);
    if (record_) record_->W.push_back(w);
    return w;
  }
  double v_sq(int t, const RealSystem& sys, const RealVector& x, double v_min) const {
    const double v = replay_ ? replay_->v_sq.at(static_cast<std::size_t>(t)) : error_variance(sys, x, v_min);
    if (record_) record_->v_sq.push_back(v);
    return v;
  }

 private:
  DetachedConstants* record_;
  const DetachedConstants* replay_;
};

inline Var level_column(Tape& tape, std::span<const double> levels) {
  return tape.constant(Eigen::Map<const RealMatrix>(levels.data(), static_cast<Eigen::Index>(levels.size()), 1));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// OAMPNet2
// ---------------------------------------------------------------------------

struct OampNet2Vars {
  Var gamma, theta, phi, zeta;  // T x 1 each
};

inline OampNet2Vars register_params(Tape& tape, const OampNet2Params& p) {
  const auto list = to_param_list(p);
  return {tape.parameter(list[0].value), tape.parameter(list[1].value), tape.parameter(list[2].value),
          tape.parameter(list[3].value)};
}

inline std::vector<Var> as_list(const OampNet2Vars& v) { return {v.gamma, v.theta, v.phi, v.zeta}; }

/// Unrolled OAMPNet2 with summed per-iteration cross-entropy on the denoiser posteriors.
/// `targets` may be null (forward only; loss is then zero).
inline UnrolledOutput oampnet2_unrolled(Tape& tape, const OampNet2Vars& p, const RealSystem& sys,
                                        const Constellation& c, const OampConfig& cfg, const RealMatrix* targets,
                                        DetachedConstants* record = nullptr, const DetachedConstants* replay = nullptr) {
  using namespace ops;
  const neural::detail::ConstantSource constants(record, replay);
  const SystemGram gram(sys);
  const auto n_tok = sys.H.cols();
  const double two_n = static_cast<double>(n_tok);
  const double noise = sys.sigma * sys.sigma;
  const Var levels = neural::detail::level_column(tape, c.pam_levels);

  UnrolledOutput out;
  Var x = tape.constant(RealMatrix::Zero(n_tok, 1));
  Var tau_sq = tape.constant(1.0);
  double v_sq = 1.0;
  Var loss = tape.constant(0.0);
  for (int t = 0; t < cfg.iterations; ++t) {
    const RealMatrix W = constants.W(t, sys, v_sq, gram);
    const RealMatrix WH = W * sys.H;
    const Var gamma = slice_rows(p.gamma, t, 1);
    const Var theta = slice_rows(p.theta, t, 1);
    const Var phi = slice_rows(p.phi, t, 1);
    const Var zeta = slice_rows(p.zeta, t, 1);

    const Var correction = sub(tape.constant(W * sys.y), matmul(tape.constant(WH), x));
    const Var r = add(x, mul_scalar(correction, gamma));
    const Var post = gaussian_posteriors(r, tau_sq, c.pam_levels);
    const Var mean = matmul(post, levels);
    x = mul_scalar(sub(mean, mul_scalar(r, zeta)), phi);
    if (targets) loss = add(loss, binary_cross_entropy_sum(post, *targets));

    v_sq = constants.v_sq(t, sys, x.value().col(0), cfg.v_min);
    // tr(BB') = 2N - 2 theta tr(WH) + theta^2 ||WH||_F^2 with B = I - theta W H.
    const double lin = -2.0 * WH.trace() * v_sq / two_n;
    const double quad = WH.squaredNorm() * v_sq / two_n + W.squaredNorm() * noise / (2.0 * two_n);
    const Var tau_raw = add_constant(add(scale(theta, lin), scale(mul(theta, theta), quad)), v_sq);
    tau_sq = clamp_min(tau_raw, cfg.tau_min);

    out.probs.push_back(post.value());
    out.variances.push_back(tau_sq.scalar());
  }
  out.loss = loss;
  out.x = x.value().col(0);
  return out;
}

// ---------------------------------------------------------------------------
// OAMP-SA
// ---------------------------------------------------------------------------

struct AttentionVars {
  Var K, Q, V, W1, W2, head1, head2, var3;
};

inline AttentionVars register_params(Tape& tape, const AttentionModel& m) {
  return {tape.parameter(m.proj_K), tape.parameter(m.proj_Q), tape.parameter(m.proj_V),
          tape.parameter(m.mlp_W1), tape.parameter(m.mlp_W2), tape.parameter(m.head_W1),
          tape.parameter(m.head_W2), tape.parameter(m.var_W3)};
}

/// Same order as AttentionModel::visit.
inline std::vector<Var> as_list(const AttentionVars& v) {
  return {v.K, v.Q, v.V, v.W1, v.W2, v.head1, v.head2, v.var3};
}

struct AttentionTapeOutput {
  Var tokens;
  Var attention;
};

inline AttentionTapeOutput attention_forward(const AttentionVars& p, Var Z, double beta) {
  using namespace ops;
  const Var keys = matmul(Z, p.K);
  const Var queries = matmul(Z, p.Q);
  const Var values = matmul(Z, p.V);
  const Var scores = abs(matmul(keys, transpose(queries)));
  const Var att = softmax_rows(scores, beta);
  const Var a = layer_norm_rows(add(Z, matmul(att, values)), kLayerNormEps);
  const Var b = matmul(relu(matmul(a, p.W1)), p.W2);
  return {layer_norm_rows(add(b, a), kLayerNormEps), att};
}

inline Var likelihood_head(const AttentionVars& p, Var B) {
  using namespace ops;
  return sigmoid(matmul(layer_norm_rows(relu(matmul(B, p.head1)), kLayerNormEps), p.head2));
}

inline Var variance_head(const AttentionVars& p, Var B) {
  using namespace ops;
  const Var s = sigmoid(matmul(mean_rows(B), p.var3));
  return mul(s, s);
}

/// Constant token columns of one system: y part and channel column part.
struct TokenConstants {
  RealMatrix y_part;  // 2N x M
  RealMatrix h_part;  // 2N x M

  explicit TokenConstants(const RealSystem& sys) {
    const auto M = sys.rx();
    const auto N = sys.tx();
    y_part.resize(2 * N, M);
    h_part.resize(2 * N, M);
    for (Eigen::Index i = 0; i < 2 * N; ++i) {
      const Eigen::Index part = i / N;
      y_part.row(i) = sys.y.segment(part * M, M).transpose();
      h_part.row(i) = sys.H.block(part * M, i % N, M, 1).transpose();
    }
  }
};

/// Unrolled OAMP-SA with summed per-iteration cross-entropy on the likelihoods.
inline UnrolledOutput oamp_sa_unrolled(Tape& tape, const AttentionVars& p, const AttentionModel& shape,
                                       const RealSystem& sys, const Constellation& c, const OampConfig& cfg,
                                       const RealMatrix* targets, DetachedConstants* record = nullptr,
                                       const DetachedConstants* replay = nullptr) {
  using namespace ops;
  if (shape.rx != sys.rx() || shape.pam_size != c.pam_size) throw DimensionError("model does not match system");
  const neural::detail::ConstantSource constants(record, replay);
  const SystemGram gram(sys);
  const TokenConstants tc(sys);
  const auto n_tok = sys.H.cols();
  const int d = shape.state_dim;
  const double beta = shape.beta();
  const Var levels = neural::detail::level_column(tape, c.pam_levels);
  const Var y_part = tape.constant(tc.y_part);
  const Var h_part = tape.constant(tc.h_part);

  UnrolledOutput out;
  Var x = tape.constant(RealMatrix::Zero(n_tok, 1));
  Var probs = tape.constant(RealMatrix::Constant(n_tok, shape.pam_size, 0.5));
  Var latent = tape.constant(RealMatrix::Zero(n_tok, d));
  Var v_hat = tape.constant(1.0);
  Var loss = tape.constant(0.0);
  for (int t = 0; t < cfg.iterations; ++t) {
    const RealMatrix W = constants.W(t, sys, std::max(v_hat.scalar(), cfg.v_min), gram);
    constants.v_sq(t, sys, x.value().col(0), cfg.v_min);
    const Var correction = sub(tape.constant(W * sys.y), matmul(tape.constant(W * sys.H), x));
    const Var r = add(x, correction);
    const std::array<Var, 7> parts{latent, y_part, h_part, probs, x, r, broadcast(v_hat, n_tok, 1)};
    const Var Z = layer_norm_rows(concat_cols(parts), kLayerNormEps);
    const auto att = attention_forward(p, Z, beta);
    probs = likelihood_head(p, att.tokens);
    v_hat = variance_head(p, att.tokens);
    x = matmul(normalize_rows(probs), levels);
    latent = slice_cols(att.tokens, 0, d);
    if (targets) loss = add(loss, binary_cross_entropy_sum(probs, *targets));
    out.probs.push_back(probs.value());
    out.variances.push_back(v_hat.scalar());
  }
  out.loss = loss;
  out.x = x.value().col(0);
  return out;
}

}  // namespace oampsa::neural
