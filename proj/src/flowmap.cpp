#include "cfm/flowmap.hpp"

#include <cmath>

#include "cfm/errors.hpp"
#include "cfm/interpolant.hpp"

namespace cfm {

using ad::Dual;
using ad::Tape;
using ad::Var;

Tensor flow_map_apply(const Tensor& x_s, const Tensor& pi, TimePair tp) {
  if (x_s.size() != pi.size()) throw ShapeMismatch("flow_map_apply: operand sizes differ");
  if (!tp.valid()) throw Error("flow_map_apply: invalid time pair");
  if (tp.s == tp.t) return x_s;
  double gamma = (tp.t - tp.s) / one_minus_clamped(tp.s);
  Tensor out = x_s;
  for (size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = x_s.data[i] + gamma * (pi.data[i] - x_s.data[i]);
  return out;
}

FlowMapGraph build_flow_map_graph(Tape& tape, const BoundPredictor& bp, const Tensor& x_s,
                                  const std::vector<double>& s,
                                  const std::vector<double>& t, bool exact_denoms) {
  const PredictorConfig& cfg = *bp.cfg;
  int64_t B = x_s.rows();
  if (s.size() != t.size() || static_cast<int64_t>(s.size()) != B)
    throw ShapeMismatch("build_flow_map_graph: time vectors do not match batch");

  FlowMapGraph g;
  g.gamma.resize(s.size());
  g.inv_oms.resize(s.size());
  g.one_mt.resize(s.size());
  Tensor sv = Tensor::zeros({B}), tv = Tensor::zeros({B}), inv_oms = Tensor::zeros({B});
  for (size_t i = 0; i < s.size(); ++i) {
    double denom = exact_denoms ? (1.0 - s[i]) : one_minus_clamped(s[i]);
    g.inv_oms[i] = 1.0 / denom;
    g.gamma[i] = (t[i] - s[i]) * g.inv_oms[i];
    g.one_mt[i] = 1.0 - t[i];
    sv.data[i] = s[i];
    tv.data[i] = t[i];
    inv_oms.data[i] = g.inv_oms[i];
  }

  Dual x(tape.constant(x_s));
  Dual sd(tape.constant(std::move(sv)));
  Dual td(tape.constant(std::move(tv)), tape.constant(Tensor::full({B}, 1.0)));
  Dual inv(tape.constant(std::move(inv_oms)));

  g.logits_st = predict_logits(tape, bp, x, sd, td);
  g.pi_st = cfg.head == Head::simplex ? softmax_rows(g.logits_st, cfg.K) : g.logits_st;

  // x_out = x + gamma (pi - x); gamma carries tangent 1/(1-s)
  Dual gamma = mul(sub(td, sd), inv);
  g.x_out = add(x, mul(tile_cols(gamma, cfg.dk()), sub(g.pi_st, x)));
  return g;
}

FlowMapEval flow_map_with_dt(const PredictorConfig& cfg, const PredictorParams& params,
                             const Tensor& x_s, TimePair tp) {
  if (!tp.valid()) throw Error("flow_map_with_dt: invalid time pair");
  Tape tape;
  BoundPredictor bp = bind_predictor(tape, cfg, params, false);
  int64_t B = x_s.rows();
  std::vector<double> s(static_cast<size_t>(B), tp.s), t(static_cast<size_t>(B), tp.t);
  FlowMapGraph g = build_flow_map_graph(tape, bp, x_s, s, t);
  FlowMapEval eval;
  eval.x_out = g.x_out.p.val();
  eval.dt_out = g.x_out.t.val();
  return eval;
}

Var teacher_probs_at(Tape& tape, const BoundPredictor& bp, Var x_out,
                     const std::vector<double>& t) {
  Tensor tv = Tensor::zeros({static_cast<int64_t>(t.size())});
  for (size_t i = 0; i < t.size(); ++i) tv.data[i] = t[i];
  Dual x(ad::stop_gradient(x_out));
  Dual td(tape.constant(std::move(tv)));
  Dual probs = predict_probs(tape, bp, x, td, td);
  return ad::stop_gradient(probs.p);
}

Tensor lagrangian_residual(const PredictorConfig& cfg, const PredictorParams& params,
                           const Tensor& x_s, TimePair tp) {
  if (!tp.valid()) throw Error("lagrangian_residual: invalid time pair");
  Tape tape;
  BoundPredictor bp = bind_predictor(tape, cfg, params, false);
  int64_t B = x_s.rows();
  std::vector<double> s(static_cast<size_t>(B), tp.s), t(static_cast<size_t>(B), tp.t);
  FlowMapGraph g = build_flow_map_graph(tape, bp, x_s, s, t);
  Var teacher = teacher_probs_at(tape, bp, g.x_out.p, t);

  Tensor omt = Tensor::zeros({B});
  for (int64_t i = 0; i < B; ++i)
    omt.data[static_cast<size_t>(i)] = g.one_mt[static_cast<size_t>(i)];
  Var omt_t = ad::tile_cols(tape.constant(std::move(omt)), cfg.dk());
  Var r = ad::sub(ad::mul(omt_t, g.x_out.t), ad::sub(teacher, g.x_out.p));
  return r.val();
}

bool confinement_check(const Tensor& x_s, const Tensor& x_out, TimePair tp, int64_t K,
                       double tol, std::optional<double> gamma_override) {
  if (x_s.size() != x_out.size()) throw ShapeMismatch("confinement_check: sizes differ");
  double gamma =
      gamma_override ? *gamma_override : (tp.t - tp.s) / one_minus_clamped(tp.s);
  if (gamma == 0.0) {
    for (size_t i = 0; i < x_s.data.size(); ++i)
      if (x_s.data[i] != x_out.data[i]) return false;
    return true;
  }
  int64_t n = x_s.size();
  if (n % K != 0) throw ShapeMismatch("confinement_check: K does not divide size");
  for (int64_t start = 0; start < n; start += K) {
    double sum = 0.0;
    for (int64_t j = 0; j < K; ++j) {
      size_t i = static_cast<size_t>(start + j);
      double y = (x_out.data[i] - (1.0 - gamma) * x_s.data[i]) / gamma;
      if (y < -tol) return false;
      sum += y;
    }
    if (std::abs(sum - 1.0) > tol) return false;
  }
  return true;
}

}  // namespace cfm
