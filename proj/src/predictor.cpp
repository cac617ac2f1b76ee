#include "cfm/predictor.hpp"

#include <cmath>

#include "cfm/errors.hpp"
#include "cfm/interpolant.hpp"

namespace cfm {

using ad::Dual;
using ad::Tape;
using ad::Var;

namespace {

constexpr double kTwoPi = 6.28318530717958647692;
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kFreqMin = 1.0;
constexpr double kFreqMax = 16.0;

std::vector<double> log_spaced_freqs(int64_t n) {
  std::vector<double> f(static_cast<size_t>(n));
  if (n == 1) {
    f[0] = kFreqMin;
    return f;
  }
  double r = std::log(kFreqMax / kFreqMin) / static_cast<double>(n - 1);
  for (int64_t j = 0; j < n; ++j)
    f[static_cast<size_t>(j)] = kFreqMin * std::exp(r * static_cast<double>(j));
  return f;
}

// phi(u) = sqrt(2) [sin(2 pi f_j u), cos(2 pi f_j u)], u: [B] -> [B, 2F]
Dual mp_sinusoid(Tape& tape, Dual u, int64_t d_tau) {
  int64_t F = d_tau / 2;
  int64_t B = u.p.val().size();
  std::vector<double> freqs = log_spaced_freqs(F);
  Tensor fw = Tensor::zeros({F});
  for (int64_t j = 0; j < F; ++j) fw.data[static_cast<size_t>(j)] = kTwoPi * freqs[static_cast<size_t>(j)];
  Dual frow(tape.constant(std::move(fw)));
  Dual angles = mul(tile_cols(u, F), tile_rows(frow, B));
  Dual s = sin_(angles);
  Dual c = cos_(angles);
  return scale(concat_cols(s, c), std::sqrt(2.0));
}

// x [B, din] through a weight whose columns are normalized to unit length.
Dual mp_linear(Tape& tape, Dual x, Var w_raw) {
  int64_t din = w_raw.val().rows();
  Tensor ones = Tensor::full({1, din}, 1.0);
  Var colsq = ad::matmul(tape.constant(std::move(ones)), ad::square(w_raw));  // [1, dout]
  Var inv_norm = ad::reciprocal(ad::sqrt_(colsq));
  Var w_hat = ad::mul(w_raw, ad::tile_rows(inv_norm, din));
  return matmul(x, Dual(w_hat));
}

Dual activate(Dual h, Activation act) {
  return act == Activation::tanh ? tanh_(h) : relu_(h);
}

}  // namespace

Tensor& PredictorParams::at(const std::string& name) {
  for (auto& [n, t] : tensors)
    if (n == name) return t;
  throw Error("unknown parameter tensor: " + name);
}

const Tensor& PredictorParams::at(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return t;
  throw Error("unknown parameter tensor: " + name);
}

bool PredictorParams::has(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return true;
  return false;
}

int64_t PredictorParams::total_size() const {
  int64_t n = 0;
  for (const auto& [name, t] : tensors) n += t.size();
  return n;
}

std::vector<std::pair<std::string, std::vector<int64_t>>> param_shapes(
    const PredictorConfig& cfg) {
  std::vector<std::pair<std::string, std::vector<int64_t>>> shapes;
  int64_t dk = cfg.dk(), w = cfg.width, dt = cfg.d_tau;
  shapes.push_back({"in.w", {dk, w}});
  shapes.push_back({"in.b", {w}});
  shapes.push_back({"time_s.w", {dt, w}});
  shapes.push_back({"time_d.w", {dt, w}});
  for (int64_t l = 1; l < cfg.depth; ++l) {
    shapes.push_back({"hid" + std::to_string(l) + ".w", {w, w}});
    shapes.push_back({"hid" + std::to_string(l) + ".b", {w}});
  }
  shapes.push_back({"out.w", {w, dk}});
  shapes.push_back({"out.b", {dk}});
  shapes.push_back({"wn.mid.w", {dt, dt}});
  shapes.push_back({"wn.out.w", {dt, 1}});
  shapes.push_back({"wn.out.b", {1}});
  return shapes;
}

PredictorParams init_predictor_params(const PredictorConfig& cfg, Rng& rng) {
  if (!cfg.valid()) throw ConfigError("invalid predictor config");
  PredictorParams params;
  for (const auto& [name, shape] : param_shapes(cfg)) {
    Tensor t = Tensor::zeros(shape);
    bool zero_init = name.rfind("out.", 0) == 0 || name.rfind("wn.out.", 0) == 0 ||
                     name.ends_with(".b");
    if (!zero_init) {
      double std = 1.0;
      if (name == "in.w" || name.rfind("hid", 0) == 0)
        std = 1.0 / std::sqrt(static_cast<double>(shape[0]));
      for (double& v : t.data) v = std * rng.normal();
    }
    params.tensors.push_back({name, std::move(t)});
  }
  return params;
}

ad::Var BoundPredictor::at(const std::string& name) const {
  auto it = vars.find(name);
  if (it == vars.end()) throw Error("unbound parameter tensor: " + name);
  return it->second;
}

BoundPredictor bind_predictor(Tape& tape, const PredictorConfig& cfg,
                              const PredictorParams& params, bool requires_grad) {
  BoundPredictor bp;
  bp.cfg = &cfg;
  for (const auto& [name, t] : params.tensors)
    bp.vars.emplace(name, tape.leaf(t, requires_grad));
  return bp;
}

Tensor mp_sinusoid_values(double u, int64_t d_tau) {
  Tape tape;
  Dual uv(tape.constant(Tensor::from_vector({u})));
  return mp_sinusoid(tape, uv, d_tau).p.val();
}

Tensor time_embed(const PredictorConfig& cfg, const PredictorParams& params, double u,
                  const std::string& which) {
  Tape tape;
  BoundPredictor bp = bind_predictor(tape, cfg, params, false);
  Dual uv(tape.constant(Tensor::from_vector({u})));
  Dual phi = mp_sinusoid(tape, uv, cfg.d_tau);
  std::string key = which == "s" ? "time_s.w" : "time_d.w";
  return mp_linear(tape, phi, bp.at(key)).p.val();
}

Dual input_normalize(Tape& tape, const PredictorConfig& cfg, Dual x, Dual s) {
  if (!cfg.input_norm) return x;
  double d_eff = static_cast<double>(cfg.norm_mode == NormMode::per_position ? cfg.K
                                                                             : cfg.dk());
  // 1 / sqrt(d (1-s)^2 + s^2)
  Dual oms = add_scalar(neg(s), 1.0);
  Dual q = add(scale(square(oms), d_eff), square(s));
  Dual factor = reciprocal(sqrt_(q));
  return mul(x, tile_cols(factor, cfg.dk()));
}

Dual predict_logits(Tape& tape, const BoundPredictor& bp, Dual x, Dual s, Dual t) {
  const PredictorConfig& cfg = *bp.cfg;
  if (!x.p.val().all_finite())
    throw NonFiniteInput("predict: non-finite entries in input state");
  int64_t B = x.p.val().rows();

  Dual xn = input_normalize(tape, cfg, x, s);
  Dual delta = sub(t, s);
  Dual h_s = mp_linear(tape, mp_sinusoid(tape, s, cfg.d_tau), bp.at("time_s.w"));
  Dual h_d = mp_linear(tape, mp_sinusoid(tape, delta, cfg.d_tau), bp.at("time_d.w"));
  Dual h_time = scale(add(h_s, h_d), kInvSqrt2);

  Dual h = matmul(xn, Dual(bp.at("in.w")));
  h = add(h, tile_rows(Dual(bp.at("in.b")), B));
  h = activate(add(h, h_time), cfg.act);
  for (int64_t l = 1; l < cfg.depth; ++l) {
    std::string base = "hid" + std::to_string(l);
    h = matmul(h, Dual(bp.at(base + ".w")));
    h = add(h, tile_rows(Dual(bp.at(base + ".b")), B));
    h = activate(h, cfg.act);
  }
  Dual logits = matmul(h, Dual(bp.at("out.w")));
  logits = add(logits, tile_rows(Dual(bp.at("out.b")), B));
  return logits;
}

Dual predict_probs(Tape& tape, const BoundPredictor& bp, Dual x, Dual s, Dual t) {
  Dual logits = predict_logits(tape, bp, x, s, t);
  if (bp.cfg->head == Head::velocity) return logits;
  return softmax_rows(logits, bp.cfg->K);
}

Dual weight_net(Tape& tape, const BoundPredictor& bp, Dual s, Dual t) {
  const PredictorConfig& cfg = *bp.cfg;
  int64_t B = s.p.val().size();
  Dual phi_s = mp_sinusoid(tape, s, cfg.d_tau);
  Dual phi_t = mp_sinusoid(tape, t, cfg.d_tau);
  Dual comb = scale(add(phi_s, phi_t), kInvSqrt2);
  Dual mid = mp_linear(tape, comb, bp.at("wn.mid.w"));
  Dual out = matmul(mid, Dual(bp.at("wn.out.w")));
  out = add(out, tile_rows(Dual(bp.at("wn.out.b")), B));
  return out;  // [B, 1], same layout as [B]
}

namespace {

constexpr int64_t kEvalChunk = 4096;

}  // namespace

Tensor predict_probs_values(const PredictorConfig& cfg, const PredictorParams& params,
                            const Tensor& x, const std::vector<double>& s,
                            const std::vector<double>& t) {
  int64_t B = x.rows();
  if (static_cast<int64_t>(s.size()) != B || static_cast<int64_t>(t.size()) != B)
    throw ShapeMismatch("predict_probs_values: time vectors do not match batch");
  Tensor out = Tensor::zeros(x.shape);
  int64_t dk = cfg.dk();
  for (int64_t start = 0; start < B; start += kEvalChunk) {
    int64_t n = std::min(kEvalChunk, B - start);
    Tensor xc = Tensor::zeros({n, dk});
    std::copy(x.data.begin() + start * dk, x.data.begin() + (start + n) * dk,
              xc.data.begin());
    Tensor sc = Tensor::zeros({n}), tc = Tensor::zeros({n});
    for (int64_t i = 0; i < n; ++i) {
      sc.data[static_cast<size_t>(i)] = s[static_cast<size_t>(start + i)];
      tc.data[static_cast<size_t>(i)] = t[static_cast<size_t>(start + i)];
    }
    Tape tape;
    BoundPredictor bp = bind_predictor(tape, cfg, params, false);
    Dual probs = predict_probs(tape, bp, Dual(tape.constant(std::move(xc))),
                               Dual(tape.constant(std::move(sc))),
                               Dual(tape.constant(std::move(tc))));
    const Tensor& pv = probs.p.val();
    std::copy(pv.data.begin(), pv.data.end(), out.data.begin() + start * dk);
  }
  return out;
}

Tensor predict_probs_values(const PredictorConfig& cfg, const PredictorParams& params,
                            const Tensor& x, double s, double t) {
  std::vector<double> sv(static_cast<size_t>(x.rows()), s);
  std::vector<double> tv(static_cast<size_t>(x.rows()), t);
  return predict_probs_values(cfg, params, x, sv, tv);
}

double weight_net_value(const PredictorConfig& cfg, const PredictorParams& params,
                        double s, double t) {
  Tape tape;
  BoundPredictor bp = bind_predictor(tape, cfg, params, false);
  Dual sv(tape.constant(Tensor::from_vector({s})));
  Dual tv(tape.constant(Tensor::from_vector({t})));
  return weight_net(tape, bp, sv, tv).p.val().data[0];
}

}  // namespace cfm
