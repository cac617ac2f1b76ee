#pragma once

#include <optional>

#include "cfm/autodiff.hpp"
#include "cfm/predictor.hpp"
#include "cfm/tensor.hpp"

namespace cfm {

struct TimePair {
  double s = 0.0;
  double t = 0.0;
  bool valid() const { return 0.0 <= s && s <= t && t <= 1.0; }
};

struct FlowMapEval {
  Tensor x_out;
  std::optional<Tensor> dt_out;
};

// x_s + (t-s)(pi - x_s)/(1-s) with the clamped denominator. s == t returns
// x_s bit-exactly.
Tensor flow_map_apply(const Tensor& x_s, const Tensor& pi, TimePair tp);

// Graph-level pieces shared by the self-distillation losses: the endpoint
// prediction with its time tangent, the transported state, and the plain
// per-item coefficients.
struct FlowMapGraph {
  ad::Dual pi_st;           // endpoint prediction (probs), tangent along t
  ad::Dual logits_st;       // pre-softmax student logits
  ad::Dual x_out;           // transported state with time tangent
  std::vector<double> gamma;     // (t-s)/(1-s) per item
  std::vector<double> inv_oms;   // 1/(1-s) per item
  std::vector<double> one_mt;    // (1-t) per item
};

// exact_denoms disables the 0.05 clamp; used only by the bound checker,
// which pins the unclamped conventions.
FlowMapGraph build_flow_map_graph(ad::Tape& tape, const BoundPredictor& bp,
                                  const Tensor& x_s, const std::vector<double>& s,
                                  const std::vector<double>& t, bool exact_denoms = false);

// One forward-mode pass through t' -> x_s + ((t'-s)/(1-s))(pi_{s,t'}(x_s) - x_s).
FlowMapEval flow_map_with_dt(const PredictorConfig& cfg, const PredictorParams& params,
                             const Tensor& x_s, TimePair tp);

// R = (1-t) dt_out - (pi_{t,t}(x_out) - x_out), teacher detached.
Tensor lagrangian_residual(const PredictorConfig& cfg, const PredictorParams& params,
                           const Tensor& x_s, TimePair tp);

// Teacher prediction at the detached transported state; shared by the
// distillation losses.
ad::Var teacher_probs_at(ad::Tape& tape, const BoundPredictor& bp, ad::Var x_out,
                         const std::vector<double>& t);

// True iff x_out is a convex combination of x_s and a point on the simplex:
// (x_out - (1-gamma) x_s)/gamma lies on each K-simplex within tol. gamma
// defaults to the clamped coefficient of the time pair; pass the coefficient
// actually used by the producer when it differs.
bool confinement_check(const Tensor& x_s, const Tensor& x_out, TimePair tp, int64_t K,
                       double tol = 1e-9,
                       std::optional<double> gamma_override = std::nullopt);

}  // namespace cfm
