#pragma once

#include "cfm/autodiff.hpp"
#include "cfm/flowmap.hpp"
#include "cfm/predictor.hpp"

namespace cfm {

enum class LossKind { csd, ecld, naive };
enum class WeightMode { one, inv1mt, inv1mt_sq };
enum class TdPower { gamma, gamma_sq };

struct LossConfig {
  LossKind kind = LossKind::ecld;
  WeightMode wt = WeightMode::one;
  double label_smoothing = 0.1;
  double diag_fraction = 0.75;  // share of the batch trained at s = t
  TdPower td_power = TdPower::gamma_sq;
  bool uncertainty_weight = false;

  bool valid() const {
    return diag_fraction > 0.0 && diag_fraction <= 1.0 && label_smoothing >= 0.0 &&
           label_smoothing < 1.0;
  }
};

struct TimeBatch {
  std::vector<double> s, t;
};

struct LossReport {
  double total = 0.0;
  std::vector<std::pair<std::string, double>> components;
  int64_t batch_diag = 0, batch_off = 0;
  double component(const std::string& name) const;
};

// ---- graph-level builders (per-item losses on a caller-owned tape) ------

// Endpoint cross-entropy per item (summed over positions), label-smoothed
// target. x1: one-hot [B, D*K]; x_t: interpolated states at the given times.
ad::Var loss_inf_items(ad::Tape& tape, const BoundPredictor& bp, const Tensor& x1,
                       const Tensor& x_t, const std::vector<double>& t,
                       double label_smoothing);

// Shared distillation quantities per item: squared Lagrangian residual,
// teacher cross-entropy and KL against the student, and the squared time
// derivative of the endpoint prediction.
struct DistillItems {
  ad::Var csd;  // [B]  ||(1-t) dX - (teacher - X)||^2
  ad::Var ce;   // [B]  sum_d CE(teacher_d, student_d)
  ad::Var kl;   // [B]  sum_d KL(teacher_d || student_d)
  ad::Var td;   // [B]  ||d_t pi||^2
  std::vector<double> gamma;
  std::vector<double> one_mt;
};
DistillItems build_distill_items(ad::Tape& tape, const BoundPredictor& bp,
                                 const Tensor& x0, const Tensor& x1,
                                 const TimeBatch& tb, bool exact_denoms = false);

// Unconstrained-velocity baseline: Lagrangian term (at the given pairs) and
// the velocity regression term (at the diagonal of the same times).
struct NaiveItems {
  ad::Var lsd;  // [B]
  ad::Var fm;   // [B]
};
NaiveItems build_naive_items(ad::Tape& tape, const BoundPredictor& bp, const Tensor& x0,
                             const Tensor& x1, const TimeBatch& tb);

std::vector<double> time_weights(WeightMode mode, const std::vector<double>& t,
                                 bool exact = false);
std::vector<double> gamma_weights(TdPower p, const std::vector<double>& gamma);

// sum_i w_i v_i / B
ad::Var weighted_mean(ad::Tape& tape, ad::Var items, const std::vector<double>& w);
// mean_i (e^{-w_i} v_i + w_i), per-item learned weights
ad::Var uncertainty_mean(ad::Tape& tape, ad::Var items, ad::Dual w_items);

// ---- value-level ops -----------------------------------------------------

double loss_inf(const PredictorConfig& cfg, const PredictorParams& params,
                const Tensor& x1, const Tensor& x_t, double t, double label_smoothing);
double loss_csd(const PredictorConfig& cfg, const PredictorParams& params,
                const Tensor& x0, const Tensor& x1, TimePair tp,
                WeightMode wt = WeightMode::one);
double loss_ec(const PredictorConfig& cfg, const PredictorParams& params, const Tensor& x0,
               const Tensor& x1, TimePair tp, WeightMode wt = WeightMode::inv1mt_sq);
double loss_td(const PredictorConfig& cfg, const PredictorParams& params, const Tensor& x0,
               const Tensor& x1, TimePair tp, TdPower p = TdPower::gamma_sq);
double loss_ecld(const PredictorConfig& cfg, const PredictorParams& params,
                 const Tensor& x0, const Tensor& x1, TimePair tp,
                 WeightMode wt = WeightMode::one, TdPower p = TdPower::gamma_sq);
double loss_naive_lsd(const PredictorConfig& cfg_velocity, const PredictorParams& params,
                      const Tensor& x0, const Tensor& x1, TimePair tp);

// e^{-w} loss + w
double apply_uncertainty_weight(double loss, double w);

// Bound diagnostics under the unclamped conventions: L_CSD with weight
// (1-t)^{-2} on the scaled residual, L_EC with the same weight, L_TD with
// gamma^2. slack = 4 lec + 2 ltd - lcsd. decomp_err is the largest per-item
// norm of (scaled residual - endpoint-difference term - drift term).
struct BoundReport {
  double lcsd = 0.0, lec = 0.0, ltd = 0.0, slack = 0.0, decomp_err = 0.0;
};
BoundReport check_ecld_bound(const PredictorConfig& cfg, const PredictorParams& params,
                             const Tensor& x0, const Tensor& x1, const TimeBatch& tb,
                             TdPower td_power = TdPower::gamma_sq);

}  // namespace cfm
