#include "cfm/losses.hpp"

#include <cmath>

#include "cfm/errors.hpp"
#include "cfm/interpolant.hpp"

namespace cfm {

using ad::Dual;
using ad::Tape;
using ad::Var;

namespace {

constexpr double kProbClamp = 1e-12;

Tensor vec_tensor(const std::vector<double>& v) {
  Tensor t = Tensor::zeros({static_cast<int64_t>(v.size())});
  std::copy(v.begin(), v.end(), t.data.begin());
  return t;
}

}  // namespace

double LossReport::component(const std::string& name) const {
  for (const auto& [n, v] : components)
    if (n == name) return v;
  return 0.0;
}

Var loss_inf_items(Tape& tape, const BoundPredictor& bp, const Tensor& x1,
                   const Tensor& x_t, const std::vector<double>& t,
                   double label_smoothing) {
  const PredictorConfig& cfg = *bp.cfg;
  int64_t B = x_t.rows();
  if (static_cast<int64_t>(t.size()) != B)
    throw ShapeMismatch("loss_inf_items: time vector does not match batch");
  // smoothed target (1-ls) x1 + ls/K
  Tensor target = x1;
  double off = label_smoothing / static_cast<double>(cfg.K);
  for (double& v : target.data) v = (1.0 - label_smoothing) * v + off;

  Dual td(tape.constant(vec_tensor(t)));
  Dual x(tape.constant(x_t));
  Dual logits = predict_logits(tape, bp, x, td, td);
  if (cfg.head != Head::simplex)
    throw Error("loss_inf_items: endpoint loss needs a simplex head");
  Var logq = ad::log_softmax_rows(logits.p, cfg.K);
  return ad::neg(ad::rowsum(ad::mul(tape.constant(std::move(target)), logq), cfg.dk()));
}

DistillItems build_distill_items(Tape& tape, const BoundPredictor& bp, const Tensor& x0,
                                 const Tensor& x1, const TimeBatch& tb,
                                 bool exact_denoms) {
  const PredictorConfig& cfg = *bp.cfg;
  if (cfg.head != Head::simplex)
    throw Error("build_distill_items: categorical distillation needs a simplex head");
  Tensor x_s = interpolate_rows(Schedule::linear(), x0, x1, tb.s);
  FlowMapGraph fm = build_flow_map_graph(tape, bp, x_s, tb.s, tb.t, exact_denoms);
  Var teacher = teacher_probs_at(tape, bp, fm.x_out.p, tb.t);

  int64_t B = x_s.rows();
  DistillItems items;
  items.gamma = fm.gamma;
  items.one_mt = fm.one_mt;

  // scaled residual R = (1-t) dX - (teacher - X)
  Var omt = ad::tile_cols(tape.constant(vec_tensor(fm.one_mt)), cfg.dk());
  Var r = ad::sub(ad::mul(omt, fm.x_out.t), ad::sub(teacher, fm.x_out.p));
  items.csd = ad::rowsum(ad::square(r), cfg.dk());

  // CE and KL of the detached teacher against the student
  Var logq = ad::log_softmax_rows(fm.logits_st.p, cfg.K);
  items.ce = ad::neg(ad::rowsum(ad::mul(teacher, logq), cfg.dk()));
  const Tensor& tv = teacher.val();
  std::vector<double> neg_entropy(static_cast<size_t>(B), 0.0);
  for (int64_t i = 0; i < B; ++i) {
    double s = 0.0;
    for (int64_t j = 0; j < cfg.dk(); ++j) {
      double p = tv.data[static_cast<size_t>(i * cfg.dk() + j)];
      s += p * std::log(std::max(p, kProbClamp));
    }
    neg_entropy[static_cast<size_t>(i)] = s;
  }
  items.kl = ad::add(items.ce, tape.constant(vec_tensor(neg_entropy)));

  items.td = ad::rowsum(ad::square(fm.pi_st.t), cfg.dk());
  return items;
}

NaiveItems build_naive_items(Tape& tape, const BoundPredictor& bp, const Tensor& x0,
                             const Tensor& x1, const TimeBatch& tb) {
  const PredictorConfig& cfg = *bp.cfg;
  if (cfg.head != Head::velocity)
    throw Error("build_naive_items: baseline needs a velocity head");
  int64_t B = x0.rows();
  Tensor x_s = interpolate_rows(Schedule::linear(), x0, x1, tb.s);

  Dual x(tape.constant(x_s));
  Dual sd(tape.constant(vec_tensor(tb.s)));
  Dual td(tape.constant(vec_tensor(tb.t)), tape.constant(Tensor::full({B}, 1.0)));
  Dual v_st = predict_logits(tape, bp, x, sd, td);
  Dual delta = sub(td, sd);
  Dual x_out = add(x, mul(tile_cols(delta, cfg.dk()), v_st));

  Dual x_det(ad::stop_gradient(x_out.p));
  Dual t_const(tape.constant(vec_tensor(tb.t)));
  Dual v_teacher = predict_logits(tape, bp, x_det, t_const, t_const);
  Var teacher = ad::stop_gradient(v_teacher.p);

  NaiveItems items;
  items.lsd = ad::rowsum(ad::square(ad::sub(x_out.t, teacher)), cfg.dk());

  // velocity regression at the diagonal: v_{t,t}(x_t) vs x1 - x0
  Tensor x_t = interpolate_rows(Schedule::linear(), x0, x1, tb.t);
  Dual xt(tape.constant(x_t));
  Dual v_tt = predict_logits(tape, bp, xt, t_const, t_const);
  Tensor u = x1;
  for (size_t i = 0; i < u.data.size(); ++i) u.data[i] = x1.data[i] - x0.data[i];
  items.fm = ad::rowsum(ad::square(ad::sub(v_tt.p, tape.constant(std::move(u)))), cfg.dk());
  return items;
}

std::vector<double> time_weights(WeightMode mode, const std::vector<double>& t,
                                 bool exact) {
  std::vector<double> w(t.size(), 1.0);
  if (mode == WeightMode::one) return w;
  for (size_t i = 0; i < t.size(); ++i) {
    double d = exact ? (1.0 - t[i]) : one_minus_clamped(t[i]);
    w[i] = mode == WeightMode::inv1mt ? 1.0 / d : 1.0 / (d * d);
  }
  return w;
}

std::vector<double> gamma_weights(TdPower p, const std::vector<double>& gamma) {
  std::vector<double> w(gamma.size());
  for (size_t i = 0; i < gamma.size(); ++i)
    w[i] = p == TdPower::gamma ? gamma[i] : gamma[i] * gamma[i];
  return w;
}

Var weighted_mean(Tape& tape, Var items, const std::vector<double>& w) {
  int64_t B = items.val().size();
  if (static_cast<int64_t>(w.size()) != B)
    throw ShapeMismatch("weighted_mean: weight count does not match items");
  Var ww = tape.constant(vec_tensor(w));
  return ad::scale(ad::sum_all(ad::mul(items, ww)), 1.0 / static_cast<double>(B));
}

Var uncertainty_mean(Tape& tape, Var items, Dual w_items) {
  (void)tape;
  Var weighted = ad::mul(ad::exp_(ad::neg(w_items.p)), items);
  return ad::mean_all(ad::add(weighted, w_items.p));
}

// ---- value-level wrappers -------------------------------------------------

namespace {

TimeBatch uniform_times(int64_t B, TimePair tp) {
  TimeBatch tb;
  tb.s.assign(static_cast<size_t>(B), tp.s);
  tb.t.assign(static_cast<size_t>(B), tp.t);
  return tb;
}

double finite_or_throw(double v, const char* what) {
  if (!std::isfinite(v)) throw NonFiniteLoss(std::string(what) + ": non-finite value");
  return v;
}

}  // namespace

double loss_inf(const PredictorConfig& cfg, const PredictorParams& params,
                const Tensor& x1, const Tensor& x_t, double t, double label_smoothing) {
  Tape tape;
  BoundPredictor bp = bind_predictor(tape, cfg, params, false);
  std::vector<double> tv(static_cast<size_t>(x_t.rows()), t);
  Var items = loss_inf_items(tape, bp, x1, x_t, tv, label_smoothing);
  double v = ad::mean_all(items).val().data[0] / static_cast<double>(cfg.D);
  return finite_or_throw(v, "loss_inf");
}

double loss_csd(const PredictorConfig& cfg, const PredictorParams& params,
                const Tensor& x0, const Tensor& x1, TimePair tp, WeightMode wt) {
  Tape tape;
  BoundPredictor bp = bind_predictor(tape, cfg, params, false);
  TimeBatch tb = uniform_times(x0.rows(), tp);
  DistillItems items = build_distill_items(tape, bp, x0, x1, tb);
  Var v = weighted_mean(tape, items.csd, time_weights(wt, tb.t));
  return finite_or_throw(v.val().data[0], "loss_csd");
}

double loss_ec(const PredictorConfig& cfg, const PredictorParams& params, const Tensor& x0,
               const Tensor& x1, TimePair tp, WeightMode wt) {
  Tape tape;
  BoundPredictor bp = bind_predictor(tape, cfg, params, false);
  TimeBatch tb = uniform_times(x0.rows(), tp);
  DistillItems items = build_distill_items(tape, bp, x0, x1, tb);
  Var v = weighted_mean(tape, items.kl, time_weights(wt, tb.t));
  return finite_or_throw(v.val().data[0], "loss_ec");
}

double loss_td(const PredictorConfig& cfg, const PredictorParams& params, const Tensor& x0,
               const Tensor& x1, TimePair tp, TdPower p) {
  Tape tape;
  BoundPredictor bp = bind_predictor(tape, cfg, params, false);
  TimeBatch tb = uniform_times(x0.rows(), tp);
  DistillItems items = build_distill_items(tape, bp, x0, x1, tb);
  Var v = weighted_mean(tape, items.td, gamma_weights(p, items.gamma));
  return finite_or_throw(v.val().data[0], "loss_td");
}

double loss_ecld(const PredictorConfig& cfg, const PredictorParams& params,
                 const Tensor& x0, const Tensor& x1, TimePair tp, WeightMode wt,
                 TdPower p) {
  Tape tape;
  BoundPredictor bp = bind_predictor(tape, cfg, params, false);
  TimeBatch tb = uniform_times(x0.rows(), tp);
  DistillItems items = build_distill_items(tape, bp, x0, x1, tb);
  Var ce = weighted_mean(tape, items.ce, time_weights(wt, tb.t));
  Var td = weighted_mean(tape, items.td, gamma_weights(p, items.gamma));
  Var v = ad::add(ad::scale(ce, 4.0), ad::scale(td, 2.0));
  return finite_or_throw(v.val().data[0], "loss_ecld");
}

double loss_naive_lsd(const PredictorConfig& cfg_velocity, const PredictorParams& params,
                      const Tensor& x0, const Tensor& x1, TimePair tp) {
  Tape tape;
  BoundPredictor bp = bind_predictor(tape, cfg_velocity, params, false);
  TimeBatch tb = uniform_times(x0.rows(), tp);
  NaiveItems items = build_naive_items(tape, bp, x0, x1, tb);
  Var v = ad::add(ad::mean_all(items.lsd), ad::mean_all(items.fm));
  return finite_or_throw(v.val().data[0], "loss_naive_lsd");
}

double apply_uncertainty_weight(double loss, double w) {
  return std::exp(-w) * loss + w;
}

BoundReport check_ecld_bound(const PredictorConfig& cfg, const PredictorParams& params,
                             const Tensor& x0, const Tensor& x1, const TimeBatch& tb,
                             TdPower td_power) {
  Tape tape;
  BoundPredictor bp = bind_predictor(tape, cfg, params, false);
  Tensor x_s = interpolate_rows(Schedule::linear(), x0, x1, tb.s);
  FlowMapGraph fm = build_flow_map_graph(tape, bp, x_s, tb.s, tb.t, /*exact=*/true);
  Var teacher_v = teacher_probs_at(tape, bp, fm.x_out.p, tb.t);

  const Tensor& pi = fm.pi_st.p.val();
  const Tensor& dpi = fm.pi_st.t.val();
  const Tensor& X = fm.x_out.p.val();
  const Tensor& dX = fm.x_out.t.val();
  const Tensor& teacher = teacher_v.val();

  int64_t B = x_s.rows(), n = cfg.dk();
  BoundReport rep;
  for (int64_t i = 0; i < B; ++i) {
    double omt = fm.one_mt[static_cast<size_t>(i)];
    double gamma = fm.gamma[static_cast<size_t>(i)];
    double w = 1.0 / (omt * omt);
    double r2 = 0.0, decomp2 = 0.0, td2 = 0.0;
    for (int64_t j = 0; j < n; ++j) {
      size_t k = static_cast<size_t>(i * n + j);
      double r = omt * dX.data[k] - (teacher.data[k] - X.data[k]);
      double a = pi.data[k] - teacher.data[k];
      double b = omt * gamma * dpi.data[k];
      r2 += r * r;
      double d = r - a - b;
      decomp2 += d * d;
      td2 += dpi.data[k] * dpi.data[k];
    }
    double kl = 0.0;
    for (int64_t d = 0; d < cfg.D; ++d) {
      for (int64_t c = 0; c < cfg.K; ++c) {
        size_t k = static_cast<size_t>(i * n + d * cfg.K + c);
        double p = teacher.data[k], q = pi.data[k];
        if (p > 0.0) kl += p * (std::log(p) - std::log(std::max(q, kProbClamp)));
      }
    }
    rep.lcsd += w * r2;
    rep.lec += w * kl;
    rep.ltd += (td_power == TdPower::gamma ? gamma : gamma * gamma) * td2;
    rep.decomp_err = std::max(rep.decomp_err, std::sqrt(decomp2));
  }
  double invB = 1.0 / static_cast<double>(B);
  rep.lcsd *= invB;
  rep.lec *= invB;
  rep.ltd *= invB;
  rep.slack = 4.0 * rep.lec + 2.0 * rep.ltd - rep.lcsd;
  return rep;
}

}  // namespace cfm
