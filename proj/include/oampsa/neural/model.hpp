#pragma once

#include <cmath>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "oampsa/error.hpp"
#include "oampsa/numerics.hpp"

namespace oampsa::neural {

inline constexpr double kLayerNormEps = 1e-5;

/// Learned tensors of the self-attention refinement block.
///
/// Row-vector convention throughout: a token is a row, and a dense layer with
/// weight W (in x out) maps z to z W. The token width is C = 2M + K + d + 3.
struct AttentionModel {
  int rx = 0;         // M
  int pam_size = 0;   // K
  int state_dim = 0;  // d
  RealMatrix proj_K, proj_Q, proj_V;  // C x C
  RealMatrix mlp_W1, mlp_W2;          // C x C
  RealMatrix head_W1;                 // C x d
  RealMatrix head_W2;                 // d x K
  RealMatrix var_W3;                  // C x 1

  static int token_width(int rx, int pam_size, int state_dim) { return 2 * rx + pam_size + state_dim + 3; }
  int width() const { return token_width(rx, pam_size, state_dim); }
  double beta() const { return 1.0 / std::sqrt(static_cast<double>(width())); }

  /// Gaussian init with standard deviation 1/sqrt(fan_in).
  static AttentionModel initialize(int rx, int pam_size, int state_dim, Rng& rng) {
    if (rx < 1 || pam_size < 2 || state_dim < 1) throw UsageError("invalid attention model dimensions");
    AttentionModel m;
    m.rx = rx;
    m.pam_size = pam_size;
    m.state_dim = state_dim;
    const int C = m.width();
    auto draw = [&rng](Eigen::Index rows, Eigen::Index cols) {
      RealMatrix W(rows, cols);
      const double s = 1.0 / std::sqrt(static_cast<double>(rows));
      for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) W(i, j) = s * rng.normal();
      return W;
    };
    m.proj_K = draw(C, C);
    m.proj_Q = draw(C, C);
    m.proj_V = draw(C, C);
    m.mlp_W1 = draw(C, C);
    m.mlp_W2 = draw(C, C);
    m.head_W1 = draw(C, state_dim);
    m.head_W2 = draw(state_dim, pam_size);
    m.var_W3 = draw(C, 1);
    return m;
  }

  template <typename Self, typename Fn>
  static void visit_impl(Self& self, Fn&& fn) {
    fn("attn/K", self.proj_K);
    fn("attn/Q", self.proj_Q);
    fn("attn/V", self.proj_V);
    fn("attn/mlp_W1", self.mlp_W1);
    fn("attn/mlp_W2", self.mlp_W2);
    fn("head/lik_W1", self.head_W1);
    fn("head/lik_W2", self.head_W2);
    fn("head/var_W3", self.var_W3);
  }
  /// Calls fn(name, tensor) for every learned tensor in a fixed order.
  template <typename Fn>
  void visit(Fn&& fn) { visit_impl(*this, std::forward<Fn>(fn)); }
  template <typename Fn>
  void visit(Fn&& fn) const { visit_impl(*this, std::forward<Fn>(fn)); }

  void check_shapes() const {
    const int C = width();
    auto expect = [](const std::string& name, const RealMatrix& W, Eigen::Index r, Eigen::Index c) {
      if (W.rows() != r || W.cols() != c) {
        throw DimensionError(name + " is " + std::to_string(W.rows()) + "x" + std::to_string(W.cols()) + ", expected " +
                             std::to_string(r) + "x" + std::to_string(c));
      }
    };
    expect("attn/K", proj_K, C, C);
    expect("attn/Q", proj_Q, C, C);
    expect("attn/V", proj_V, C, C);
    expect("attn/mlp_W1", mlp_W1, C, C);
    expect("attn/mlp_W2", mlp_W2, C, C);
    expect("head/lik_W1", head_W1, C, state_dim);
    expect("head/lik_W2", head_W2, state_dim, pam_size);
    expect("head/var_W3", var_W3, C, 1);
  }
};

// ---------------------------------------------------------------------------
// Inference-only forward pass (no tape)
// ---------------------------------------------------------------------------

/// (z - mean) / sqrt(var + eps) over the entries of z.
inline RealVector layer_norm(const RealVector& z, double eps = kLayerNormEps) {
  const double mu = z.mean();
  const double var = (z.array() - mu).square().mean();
  return (z.array() - mu) / std::sqrt(var + eps);
}

/// Layer norm applied to each row independently.
inline RealMatrix layer_norm_rows(const RealMatrix& Z, double eps = kLayerNormEps) {
  RealMatrix out(Z.rows(), Z.cols());
  const double inv_c = 1.0 / static_cast<double>(Z.cols());
  for (Eigen::Index i = 0; i < Z.rows(); ++i) {
    const double mu = Z.row(i).sum() * inv_c;
    const double var = (Z.row(i).array() - mu).square().sum() * inv_c;
    out.row(i) = (Z.row(i).array() - mu) / std::sqrt(var + eps);
  }
  return out;
}

inline RealMatrix softmax_rows(const RealMatrix& S) {
  RealMatrix out(S.rows(), S.cols());
  for (Eigen::Index i = 0; i < S.rows(); ++i) {
    const double mx = S.row(i).maxCoeff();
    out.row(i) = (S.row(i).array() - mx).exp();
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// Inputs to one token batch. Token i < N is the in-phase part of user i,
/// token N + i its quadrature part, matching the real-equivalent ordering.
struct TokenInputs {
  const RealSystem* sys = nullptr;
  RealVector x_prev;      // 2N
  RealVector r;           // 2N
  RealMatrix prev_probs;  // 2N x K
  RealMatrix latent;      // 2N x d
  double v_hat_sq = 1.0;
};

/// Un-normalized token rows: [latent | y part | H column part | prev probs | x | r | v_hat^2].
inline RealMatrix raw_tokens(const TokenInputs& in, int pam_size, int state_dim) {
  const RealSystem& sys = *in.sys;
  const auto M = sys.rx();
  const auto N = sys.tx();
  const auto n_tok = 2 * N;
  if (in.x_prev.size() != n_tok || in.r.size() != n_tok || in.prev_probs.rows() != n_tok ||
      in.prev_probs.cols() != pam_size || in.latent.rows() != n_tok || in.latent.cols() != state_dim) {
    throw DimensionError("token inputs inconsistent with system of " + std::to_string(N) + " users");
  }
  const int C = AttentionModel::token_width(static_cast<int>(M), pam_size, state_dim);
  RealMatrix Z(n_tok, C);
  for (Eigen::Index i = 0; i < n_tok; ++i) {
    const Eigen::Index part = i / N;  // 0 = real, 1 = imaginary
    const Eigen::Index user = i % N;
    Eigen::Index c = 0;
    Z.row(i).segment(c, state_dim) = in.latent.row(i);
    c += state_dim;
    Z.row(i).segment(c, M) = sys.y.segment(part * M, M).transpose();
    c += M;
    Z.row(i).segment(c, M) = sys.H.block(part * M, user, M, 1).transpose();
    c += M;
    Z.row(i).segment(c, pam_size) = in.prev_probs.row(i);
    c += pam_size;
    Z(i, c++) = in.x_prev(i);
    Z(i, c++) = in.r(i);
    Z(i, c++) = in.v_hat_sq;
  }
  return Z;
}

inline RealMatrix build_tokens(const TokenInputs& in, int pam_size, int state_dim) {
  return layer_norm_rows(raw_tokens(in, pam_size, state_dim));
}

struct AttentionOutput {
  RealMatrix tokens;     // z_bar, 2N x C
  RealMatrix attention;  // A_bar, 2N x 2N
};

inline AttentionOutput attention_forward(const AttentionModel& m, const RealMatrix& Z) {
  if (Z.cols() != m.width()) throw DimensionError("token width " + std::to_string(Z.cols()) + " != model width " +
                                                  std::to_string(m.width()));
  const RealMatrix keys = Z * m.proj_K;
  const RealMatrix queries = Z * m.proj_Q;
  const RealMatrix values = Z * m.proj_V;
  const RealMatrix scores = (keys * queries.transpose()).cwiseAbs() * m.beta();
  AttentionOutput out;
  out.attention = softmax_rows(scores);
  const RealMatrix a = layer_norm_rows(Z + out.attention * values);
  const RealMatrix b = (a * m.mlp_W1).cwiseMax(0.0) * m.mlp_W2;
  out.tokens = layer_norm_rows(b + a);
  return out;
}

/// Independent per-level sigmoids, 2N x K.
inline RealMatrix likelihood_head(const AttentionModel& m, const RealMatrix& B) {
  const RealMatrix hidden = layer_norm_rows((B * m.head_W1).cwiseMax(0.0));
  return (hidden * m.head_W2).unaryExpr([](double v) { return sigmoid(v); });
}

inline double variance_head(const AttentionModel& m, const RealMatrix& B) {
  const RealVector pooled = B.colwise().mean().transpose();
  const double s = sigmoid(pooled.dot(m.var_W3.col(0)));
  return s * s;
}

/// Normalizes each row of P to a distribution over levels and returns its mean level.
inline RealVector expected_symbols(const RealMatrix& P, std::span<const double> levels) {
  if (P.cols() != static_cast<Eigen::Index>(levels.size())) throw DimensionError("likelihood width != PAM size");
  const Eigen::Map<const RealVector> lv(levels.data(), static_cast<Eigen::Index>(levels.size()));
  RealVector x(P.rows());
  for (Eigen::Index i = 0; i < P.rows(); ++i) {
    const double total = P.row(i).sum();
    if (!(total > 0.0)) throw NumericError("likelihood row " + std::to_string(i) + " sums to zero");
    x(i) = (P.row(i) * lv)(0) / total;
  }
  return x;
}

}  // namespace oampsa::neural
