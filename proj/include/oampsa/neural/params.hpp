#pragma once

#include <algorithm>
#include <string>
#include <variant>
#include <vector>

#include "oampsa/detect.hpp"
#include "oampsa/error.hpp"
#include "oampsa/neural/model.hpp"

namespace oampsa::neural {

struct NamedTensor {
  std::string name;
  RealMatrix value;
};
using ParamList = std::vector<NamedTensor>;

enum class Variant { oampnet2, oamp_sa };

inline std::string variant_name(Variant v) { return v == Variant::oampnet2 ? "oampnet2" : "oamp_sa"; }

inline Variant parse_variant(const std::string& s) {
  if (s == "oampnet2") return Variant::oampnet2;
  if (s == "oamp_sa") return Variant::oamp_sa;
  throw UsageError("unknown variant '" + s + "' (expected oampnet2 or oamp_sa)");
}

/// A trained detector: OAMPNet2 scalars or the attention model.
using LearnedParams = std::variant<OampNet2Params, AttentionModel>;

inline Variant variant_of(const LearnedParams& p) {
  return std::holds_alternative<OampNet2Params>(p) ? Variant::oampnet2 : Variant::oamp_sa;
}

inline const RealMatrix* find_tensor(const ParamList& list, const std::string& name) {
  const auto it = std::find_if(list.begin(), list.end(), [&](const NamedTensor& t) { return t.name == name; });
  return it == list.end() ? nullptr : &it->value;
}

inline const RealMatrix& require_tensor(const ParamList& list, const std::string& name) {
  const auto* t = find_tensor(list, name);
  if (t == nullptr) throw DataError("missing tensor '" + name + "'");
  return *t;
}

inline ParamList to_param_list(const OampNet2Params& p) {
  auto column = [](const std::vector<double>& v) {
    return RealMatrix(Eigen::Map<const RealMatrix>(v.data(), static_cast<Eigen::Index>(v.size()), 1));
  };
  return {{"oampnet2/gamma", column(p.gamma)},
          {"oampnet2/theta", column(p.theta)},
          {"oampnet2/phi", column(p.phi)},
          {"oampnet2/zeta", column(p.zeta)}};
}

inline ParamList to_param_list(const AttentionModel& m) {
  ParamList out;
  m.visit([&out](const std::string& name, const RealMatrix& W) { out.push_back({name, W}); });
  return out;
}

inline ParamList to_param_list(const LearnedParams& p) {
  return std::visit([](const auto& v) { return to_param_list(v); }, p);
}

inline OampNet2Params oampnet2_from_list(const ParamList& list) {
  auto vec = [&](const std::string& name) {
    const RealMatrix& m = require_tensor(list, name);
    if (m.cols() != 1) throw DimensionError("tensor '" + name + "' must be a column");
    return std::vector<double>(m.data(), m.data() + m.size());
  };
  OampNet2Params p{vec("oampnet2/gamma"), vec("oampnet2/theta"), vec("oampnet2/phi"), vec("oampnet2/zeta")};
  p.check(p.iterations());
  return p;
}

/// Recovers dimensions from tensor shapes: C from K, d from the likelihood
/// head, K from its output width, and M = (C - K - d - 3) / 2.
inline AttentionModel attention_from_list(const ParamList& list) {
  AttentionModel m;
  const RealMatrix& kproj = require_tensor(list, "attn/K");
  const RealMatrix& head1 = require_tensor(list, "head/lik_W1");
  const RealMatrix& head2 = require_tensor(list, "head/lik_W2");
  const auto C = kproj.rows();
  m.state_dim = static_cast<int>(head1.cols());
  m.pam_size = static_cast<int>(head2.cols());
  const auto twice_m = C - m.pam_size - m.state_dim - 3;
  if (twice_m <= 0 || twice_m % 2 != 0) throw DimensionError("attention tensor shapes do not form a valid token width");
  m.rx = static_cast<int>(twice_m / 2);
  m.visit([&list](const std::string& name, RealMatrix& W) { W = require_tensor(list, name); });
  m.check_shapes();
  return m;
}

inline LearnedParams learned_from_list(const ParamList& list) {
  if (find_tensor(list, "attn/K") != nullptr) return attention_from_list(list);
  if (find_tensor(list, "oampnet2/gamma") != nullptr) return oampnet2_from_list(list);
  throw DataError("parameter set is neither an OAMPNet2 nor an attention model");
}

}  // namespace oampsa::neural
