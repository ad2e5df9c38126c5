#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "oampsa/channel.hpp"
#include "oampsa/detect.hpp"
#include "oampsa/error.hpp"
#include "oampsa/neural/adam.hpp"
#include "oampsa/neural/checkpoint.hpp"
#include "oampsa/neural/params.hpp"
#include "oampsa/neural/unrolled.hpp"

namespace oampsa::neural {

struct TrainConfig {
  int epochs = 25;
  double lr = 1e-3;
  std::vector<int> decay_epochs{10, 20};
  double decay_factor = 10.0;
  std::size_t batch_size = 32;
  std::uint64_t seed = 1;
  int iterations = 10;
  int state_dim = 32;

  void validate() const {
    if (epochs < 0) throw UsageError("epochs must be non-negative");
    if (!(lr >= 0.0)) throw UsageError("learning rate must be non-negative");
    if (!(decay_factor > 0.0)) throw UsageError("decay factor must be positive");
    if (batch_size < 1) throw UsageError("batch size must be positive");
    if (iterations < 1 || state_dim < 1) throw UsageError("iterations and state width must be positive");
  }
};

/// Learning rate in (0-based) epoch e: lr / factor^(number of decay epochs <= e).
inline double learning_rate_at(const TrainConfig& cfg, int epoch) {
  double lr = cfg.lr;
  for (int d : cfg.decay_epochs)
    if (epoch >= d) lr /= cfg.decay_factor;
  return lr;
}

struct MetricsRow {
  int epoch = 0;
  std::string split;
  double loss = 0.0;
  double ser = 0.0;
  double lr = 0.0;
};

struct TrainState {
  LearnedParams params;
  AdamState adam;
  int epochs_done = 0;

  Checkpoint checkpoint() const {
    return {to_param_list(params), OptimizerSnapshot{adam, epochs_done}};
  }
  static TrainState from_checkpoint(const Checkpoint& ckpt) {
    TrainState s{learned_from_list(ckpt.params), {}, 0};
    if (ckpt.optimizer) {
      s.adam = ckpt.optimizer->adam;
      s.epochs_done = static_cast<int>(ckpt.optimizer->epochs_done);
    }
    return s;
  }
};

/// Fresh parameters: identity scalars for OAMPNet2 (plain OAMP at epoch 0),
/// seeded Gaussian init for the attention model.
inline TrainState initial_state(Variant variant, const TrainConfig& cfg, int rx, int pam_size) {
  if (variant == Variant::oampnet2) return {OampNet2Params::identity(cfg.iterations), {}, 0};
  Rng rng(derive_seed(cfg.seed, 0x1417));
  return {AttentionModel::initialize(rx, pam_size, cfg.state_dim, rng), {}, 0};
}

/// Summed per-iteration binary cross-entropy, evaluated directly on probabilities.
inline double cross_entropy_loss(const std::vector<RealMatrix>& probs, const RealMatrix& targets) {
  double loss = 0.0;
  for (const auto& P : probs) {
    if (P.rows() != targets.rows() || P.cols() != targets.cols()) throw DimensionError("cross-entropy shapes");
    const auto Pc = P.array().cwiseMax(ops::kProbClampLo).cwiseMin(ops::kProbClampHi);
    if (!P.allFinite()) return std::numeric_limits<double>::quiet_NaN();
    loss -= (targets.array() * Pc.log() + (1.0 - targets.array()) * (1.0 - Pc).log()).sum();
  }
  return loss;
}

inline DetectionResult detect_learned(const RealSystem& sys, const Constellation& c, const OampConfig& cfg,
                                      const LearnedParams& params, const SymbolIndices* labels = nullptr) {
  if (const auto* net = std::get_if<OampNet2Params>(&params)) return oampnet2_detect(sys, c, cfg, *net, labels);
  return oamp_sa_detect(sys, c, cfg, std::get<AttentionModel>(params), labels);
}

struct SampleGradient {
  double loss = 0.0;
  RealVector x;
  std::vector<RealMatrix> grads;
};

/// Loss and parameter gradients of one sample through the unrolled detector.
inline SampleGradient sample_gradient(const LearnedParams& params, const RealSystem& sys, const Constellation& c,
                                      const OampConfig& cfg, const RealMatrix& targets) {
  Tape tape;
  SampleGradient out;
  std::vector<Var> vars;
  UnrolledOutput fwd;
  if (const auto* net = std::get_if<OampNet2Params>(&params)) {
    const auto p = register_params(tape, *net);
    vars = as_list(p);
    fwd = oampnet2_unrolled(tape, p, sys, c, cfg, &targets);
  } else {
    const auto& model = std::get<AttentionModel>(params);
    const auto p = register_params(tape, model);
    vars = as_list(p);
    fwd = oamp_sa_unrolled(tape, p, model, sys, c, cfg, &targets);
  }
  out.loss = fwd.loss.scalar();
  out.x = std::move(fwd.x);
  tape.backward(fwd.loss);
  for (const auto& v : vars) out.grads.push_back(v.grad());
  return out;
}

struct EvalSummary {
  double loss = 0.0;  // mean per sample
  double ser = 0.0;
};

inline EvalSummary evaluate_learned(const LearnedParams& params, const Dataset& ds, const Constellation& c,
                                    const OampConfig& cfg) {
  EvalSummary s;
  std::size_t errors = 0, symbols = 0;
  for (const auto& sample : ds.samples) {
    const RealSystem sys = sample.real_system();
    const auto res = detect_learned(sys, c, cfg, params);
    s.loss += cross_entropy_loss(res.level_probs, one_hot_levels(level_labels(sample.x_true, c), c.pam_size));
    errors += symbol_errors(hard_decision(res.x, c), sample.x_true);
    symbols += sample.x_true.size();
  }
  if (!ds.samples.empty()) s.loss /= static_cast<double>(ds.samples.size());
  s.ser = symbols ? static_cast<double>(errors) / static_cast<double>(symbols) : 0.0;
  return s;
}

using MetricsSink = std::function<void(const MetricsRow&)>;

/// Runs epochs [state.epochs_done, cfg.epochs). The sample order of epoch e
/// depends only on (seed, e), so a resumed run matches an uninterrupted one.
/// Gradients are averaged over each mini-batch in sample order.
inline void train(TrainState& state, const TrainConfig& cfg, const Dataset& train_set, const Dataset* val_set,
                  const Constellation& c, const MetricsSink& sink = {}) {
  cfg.validate();
  if (train_set.samples.empty()) throw DataError("training set is empty");
  const OampConfig det{cfg.iterations};
  if (const auto* net = std::get_if<OampNet2Params>(&state.params)) net->check(cfg.iterations);
  if (const auto* m = std::get_if<AttentionModel>(&state.params)) {
    if (m->rx != train_set.M || m->pam_size != c.pam_size) {
      throw DimensionError("model expects M=" + std::to_string(m->rx) + ", dataset has M=" +
                           std::to_string(train_set.M));
    }
  }
  check_labels(train_set, c);
  if (val_set) check_labels(*val_set, c);

  std::vector<RealSystem> systems;
  std::vector<RealMatrix> targets;
  systems.reserve(train_set.samples.size());
  for (const auto& s : train_set.samples) {
    systems.push_back(s.real_system());
    targets.push_back(one_hot_levels(level_labels(s.x_true, c), c.pam_size));
  }

  for (int epoch = state.epochs_done; epoch < cfg.epochs; ++epoch) {
    const double lr = learning_rate_at(cfg, epoch);
    std::vector<std::size_t> order(systems.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle(derive_seed(cfg.seed, 0x5EED0000ULL + static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);

    double loss_sum = 0.0;
    std::size_t errors = 0, symbols = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      ParamList params = to_param_list(state.params);
      std::vector<RealMatrix> batch_grad;
      for (std::size_t k = start; k < stop; ++k) {
        const std::size_t idx = order[k];
        auto g = sample_gradient(state.params, systems[idx], c, det, targets[idx]);
        if (!std::isfinite(g.loss)) {
          throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", sample " + std::to_string(idx));
        }
        loss_sum += g.loss;
        errors += symbol_errors(hard_decision(g.x, c), train_set.samples[idx].x_true);
        symbols += static_cast<std::size_t>(train_set.N);
        if (batch_grad.empty()) {
          batch_grad = std::move(g.grads);
        } else {
          for (std::size_t i = 0; i < batch_grad.size(); ++i) batch_grad[i] += g.grads[i];
        }
      }
      const double inv = 1.0 / static_cast<double>(stop - start);
      for (auto& g : batch_grad) g *= inv;
      adam_step(state.adam, params, batch_grad, lr);
      state.params = learned_from_list(params);
    }
    state.epochs_done = epoch + 1;
    if (sink) {
      sink({epoch, "train", loss_sum / static_cast<double>(order.size()),
            static_cast<double>(errors) / static_cast<double>(symbols), lr});
      if (val_set && !val_set->samples.empty()) {
        const auto v = evaluate_learned(state.params, *val_set, c, det);
        sink({epoch, "val", v.loss, v.ser, lr});
      }
    }
  }
}

}  // namespace oampsa::neural
