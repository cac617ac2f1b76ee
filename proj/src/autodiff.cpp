#include "cfm/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "cfm/errors.hpp"

namespace cfm::ad {

const Tensor& Var::val() const { return tape->value(id); }

Var Tape::leaf(Tensor v, bool requires_grad) {
  recs_.push_back(Rec{std::move(v), nullptr, requires_grad});
  return Var{this, static_cast<int>(recs_.size()) - 1};
}

Var Tape::record(Tensor value, const std::vector<int>& parents, BackwardFn back) {
  bool needs = false;
  for (int p : parents) needs = needs || recs_[static_cast<size_t>(p)].needs;
  recs_.push_back(Rec{std::move(value), needs ? std::move(back) : nullptr, needs});
  return Var{this, static_cast<int>(recs_.size()) - 1};
}

void AdjointMap::add(int id, const Tensor& contrib) {
  if (!tape_.recs_[static_cast<size_t>(id)].needs) return;
  Tensor& slot = adj_[static_cast<size_t>(id)];
  if (slot.data.empty()) {
    slot = contrib;
    slot.shape = tape_.recs_[static_cast<size_t>(id)].value.shape;
  } else {
    if (slot.size() != contrib.size())
      throw ShapeMismatch("adjoint accumulation: size mismatch");
    for (size_t i = 0; i < slot.data.size(); ++i) slot.data[i] += contrib.data[i];
  }
}

std::vector<Tensor> Tape::backward(Var root, const Tensor& seed) {
  if (root.tape != this) throw Error("backward: var from another tape");
  if (seed.size() != value(root.id).size())
    throw ShapeMismatch("backward: seed size differs from root value");
  std::vector<Tensor> adjoints(recs_.size());
  AdjointMap adj(*this, adjoints);
  adj.add(root.id, seed);
  for (int id = root.id; id >= 0; --id) {
    Rec& r = recs_[static_cast<size_t>(id)];
    if (!r.needs || !r.back) continue;
    Tensor& g = adjoints[static_cast<size_t>(id)];
    if (g.data.empty()) continue;
    r.back(g, r.value, adj);
  }
  return adjoints;
}

std::vector<Tensor> Tape::backward_scalar(Var root) {
  if (value(root.id).size() != 1)
    throw ShapeMismatch("backward_scalar: root is not a scalar");
  return backward(root, Tensor::scalar(1.0));
}

// ---- elementwise registry -------------------------------------------------

namespace {

struct ElementwiseRule {
  double (*f)(double);
  double (*df)(double x, double fx);
};

const std::map<std::string, ElementwiseRule>& registry() {
  static const std::map<std::string, ElementwiseRule> reg = {
      {"exp", {[](double x) { return std::exp(x); },
               [](double, double fx) { return fx; }}},
      {"log", {[](double x) { return std::log(x); },
               [](double x, double) { return 1.0 / x; }}},
      {"tanh", {[](double x) { return std::tanh(x); },
                [](double, double fx) { return 1.0 - fx * fx; }}},
      {"relu", {[](double x) { return x > 0.0 ? x : 0.0; },
                [](double x, double) { return x > 0.0 ? 1.0 : 0.0; }}},
      {"sin", {[](double x) { return std::sin(x); },
               [](double x, double) { return std::cos(x); }}},
      {"cos", {[](double x) { return std::cos(x); },
               [](double x, double) { return -std::sin(x); }}},
      {"sqrt", {[](double x) { return std::sqrt(x); },
                [](double, double fx) { return 0.5 / fx; }}},
      {"reciprocal", {[](double x) { return 1.0 / x; },
                      [](double, double fx) { return -fx * fx; }}},
      {"square", {[](double x) { return x * x; },
                  [](double x, double) { return 2.0 * x; }}},
  };
  return reg;
}

const ElementwiseRule& lookup(const std::string& name) {
  auto it = registry().find(name);
  if (it == registry().end())
    throw UnsupportedPrimitive("unregistered primitive: " + name);
  return it->second;
}

void check_group(const Tensor& t, int64_t k, const char* where) {
  if (k < 1 || t.size() % k != 0)
    throw ShapeMismatch(std::string(where) + ": group size does not divide tensor size");
}

}  // namespace

Var elementwise(const std::string& name, Var x) {
  const ElementwiseRule& rule = lookup(name);
  Tape& tape = *x.tape;
  Tensor out = x.val();
  for (double& v : out.data) v = rule.f(v);
  int xid = x.id;
  auto df = rule.df;
  return tape.record(std::move(out), {xid},
                     [&tape, xid, df](const Tensor& g, const Tensor& out_v, AdjointMap& adj) {
                       const Tensor& xin = tape.value(xid);
                       Tensor gx = g;
                       for (size_t i = 0; i < gx.data.size(); ++i)
                         gx.data[i] = g.data[i] * df(xin.data[i], out_v.data[i]);
                       adj.add(xid, gx);
                     });
}

// ---- structured primitives ----------------------------------------------

Var add(Var a, Var b) {
  Tape& tape = *a.tape;
  const Tensor &av = a.val(), &bv = b.val();
  if (av.size() != bv.size()) throw ShapeMismatch("add: operand sizes differ");
  Tensor out = av;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += bv.data[i];
  int aid = a.id, bid = b.id;
  return tape.record(std::move(out), {aid, bid},
                     [aid, bid](const Tensor& g, const Tensor&, AdjointMap& adj) {
                       adj.add(aid, g);
                       adj.add(bid, g);
                     });
}

Var sub(Var a, Var b) {
  Tape& tape = *a.tape;
  const Tensor &av = a.val(), &bv = b.val();
  if (av.size() != bv.size()) throw ShapeMismatch("sub: operand sizes differ");
  Tensor out = av;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] -= bv.data[i];
  int aid = a.id, bid = b.id;
  return tape.record(std::move(out), {aid, bid},
                     [aid, bid](const Tensor& g, const Tensor&, AdjointMap& adj) {
                       adj.add(aid, g);
                       Tensor gn = g;
                       for (double& v : gn.data) v = -v;
                       adj.add(bid, gn);
                     });
}

Var mul(Var a, Var b) {
  Tape& tape = *a.tape;
  const Tensor &av = a.val(), &bv = b.val();
  if (av.size() != bv.size()) throw ShapeMismatch("mul: operand sizes differ");
  Tensor out = av;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= bv.data[i];
  int aid = a.id, bid = b.id;
  return tape.record(std::move(out), {aid, bid},
                     [&tape, aid, bid](const Tensor& g, const Tensor&, AdjointMap& adj) {
                       const Tensor &ain = tape.value(aid), &bin = tape.value(bid);
                       Tensor ga = g, gb = g;
                       for (size_t i = 0; i < g.data.size(); ++i) {
                         ga.data[i] = g.data[i] * bin.data[i];
                         gb.data[i] = g.data[i] * ain.data[i];
                       }
                       adj.add(aid, ga);
                       adj.add(bid, gb);
                     });
}

Var neg(Var a) { return scale(a, -1.0); }

Var scale(Var a, double c) {
  Tape& tape = *a.tape;
  Tensor out = a.val();
  for (double& v : out.data) v *= c;
  int aid = a.id;
  return tape.record(std::move(out), {aid},
                     [aid, c](const Tensor& g, const Tensor&, AdjointMap& adj) {
                       Tensor ga = g;
                       for (double& v : ga.data) v *= c;
                       adj.add(aid, ga);
                     });
}

Var add_scalar(Var a, double c) {
  Tape& tape = *a.tape;
  Tensor out = a.val();
  for (double& v : out.data) v += c;
  int aid = a.id;
  return tape.record(std::move(out), {aid},
                     [aid](const Tensor& g, const Tensor&, AdjointMap& adj) {
                       adj.add(aid, g);
                     });
}

Var matmul(Var a, Var b) {
  Tape& tape = *a.tape;
  Tensor out = matmul_nn(a.val(), b.val());
  int aid = a.id, bid = b.id;
  return tape.record(std::move(out), {aid, bid},
                     [&tape, aid, bid](const Tensor& g, const Tensor&, AdjointMap& adj) {
                       const Tensor &ain = tape.value(aid), &bin = tape.value(bid);
                       Tensor g2 = g;
                       g2.shape = {ain.rows(), bin.cols()};
                       adj.add(aid, matmul_nt(g2, bin));
                       adj.add(bid, matmul_tn(ain, g2));
                     });
}

Var softmax_rows(Var x, int64_t k) {
  Tape& tape = *x.tape;
  const Tensor& xv = x.val();
  check_group(xv, k, "softmax_rows");
  Tensor out = xv;
  int64_t rows = xv.size() / k;
  for (int64_t r = 0; r < rows; ++r) {
    double* o = out.data.data() + r * k;
    double mx = o[0];
    for (int64_t j = 1; j < k; ++j) mx = std::max(mx, o[j]);
    double s = 0.0;
    for (int64_t j = 0; j < k; ++j) {
      o[j] = std::exp(o[j] - mx);
      s += o[j];
    }
    for (int64_t j = 0; j < k; ++j) o[j] /= s;
  }
  int xid = x.id;
  return tape.record(std::move(out), {xid},
                     [xid, k, rows](const Tensor& g, const Tensor& p, AdjointMap& adj) {
                       Tensor gx = g;
                       for (int64_t r = 0; r < rows; ++r) {
                         const double* pr = p.data.data() + r * k;
                         const double* gr = g.data.data() + r * k;
                         double dotv = 0.0;
                         for (int64_t j = 0; j < k; ++j) dotv += pr[j] * gr[j];
                         double* gxr = gx.data.data() + r * k;
                         for (int64_t j = 0; j < k; ++j) gxr[j] = pr[j] * (gr[j] - dotv);
                       }
                       adj.add(xid, gx);
                     });
}

Var log_softmax_rows(Var x, int64_t k) {
  Tape& tape = *x.tape;
  const Tensor& xv = x.val();
  check_group(xv, k, "log_softmax_rows");
  Tensor out = xv;
  int64_t rows = xv.size() / k;
  for (int64_t r = 0; r < rows; ++r) {
    double* o = out.data.data() + r * k;
    double mx = o[0];
    for (int64_t j = 1; j < k; ++j) mx = std::max(mx, o[j]);
    double s = 0.0;
    for (int64_t j = 0; j < k; ++j) s += std::exp(o[j] - mx);
    double lse = mx + std::log(s);
    for (int64_t j = 0; j < k; ++j) o[j] -= lse;
  }
  int xid = x.id;
  return tape.record(std::move(out), {xid},
                     [xid, k, rows](const Tensor& g, const Tensor& ls, AdjointMap& adj) {
                       // gx = g - softmax * rowsum(g)
                       Tensor gx = g;
                       for (int64_t r = 0; r < rows; ++r) {
                         const double* lr = ls.data.data() + r * k;
                         const double* gr = g.data.data() + r * k;
                         double gs = 0.0;
                         for (int64_t j = 0; j < k; ++j) gs += gr[j];
                         double* gxr = gx.data.data() + r * k;
                         for (int64_t j = 0; j < k; ++j) gxr[j] = gr[j] - std::exp(lr[j]) * gs;
                       }
                       adj.add(xid, gx);
                     });
}

Var sum_all(Var x) {
  Tape& tape = *x.tape;
  double s = 0.0;
  for (double v : x.val().data) s += v;
  int xid = x.id;
  return tape.record(Tensor::scalar(s), {xid},
                     [&tape, xid](const Tensor& g, const Tensor&, AdjointMap& adj) {
                       adj.add(xid, Tensor::full(tape.value(xid).shape, g.data[0]));
                     });
}

Var mean_all(Var x) {
  int64_t n = x.val().size();
  return scale(sum_all(x), 1.0 / static_cast<double>(n));
}

Var rowsum(Var x, int64_t k) {
  Tape& tape = *x.tape;
  const Tensor& xv = x.val();
  check_group(xv, k, "rowsum");
  int64_t rows = xv.size() / k;
  Tensor out = Tensor::zeros({rows});
  for (int64_t r = 0; r < rows; ++r) {
    double s = 0.0;
    const double* p = xv.data.data() + r * k;
    for (int64_t j = 0; j < k; ++j) s += p[j];
    out.data[static_cast<size_t>(r)] = s;
  }
  int xid = x.id;
  return tape.record(std::move(out), {xid},
                     [&tape, xid, k, rows](const Tensor& g, const Tensor&, AdjointMap& adj) {
                       Tensor gx = Tensor::zeros(tape.value(xid).shape);
                       for (int64_t r = 0; r < rows; ++r) {
                         double gv = g.data[static_cast<size_t>(r)];
                         double* p = gx.data.data() + r * k;
                         for (int64_t j = 0; j < k; ++j) p[j] = gv;
                       }
                       adj.add(xid, gx);
                     });
}

Var tile_cols(Var v, int64_t n) {
  Tape& tape = *v.tape;
  const Tensor& vv = v.val();
  int64_t m = vv.size();
  Tensor out = Tensor::zeros({m, n});
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j)
      out.data[static_cast<size_t>(i * n + j)] = vv.data[static_cast<size_t>(i)];
  int vid = v.id;
  return tape.record(std::move(out), {vid},
                     [vid, m, n](const Tensor& g, const Tensor&, AdjointMap& adj) {
                       Tensor gv = Tensor::zeros({m});
                       for (int64_t i = 0; i < m; ++i) {
                         double s = 0.0;
                         for (int64_t j = 0; j < n; ++j) s += g.data[static_cast<size_t>(i * n + j)];
                         gv.data[static_cast<size_t>(i)] = s;
                       }
                       adj.add(vid, gv);
                     });
}

Var tile_rows(Var v, int64_t m) {
  Tape& tape = *v.tape;
  const Tensor& vv = v.val();
  int64_t n = vv.size();
  Tensor out = Tensor::zeros({m, n});
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j)
      out.data[static_cast<size_t>(i * n + j)] = vv.data[static_cast<size_t>(j)];
  int vid = v.id;
  return tape.record(std::move(out), {vid},
                     [vid, m, n](const Tensor& g, const Tensor&, AdjointMap& adj) {
                       Tensor gv = Tensor::zeros({n});
                       for (int64_t i = 0; i < m; ++i)
                         for (int64_t j = 0; j < n; ++j)
                           gv.data[static_cast<size_t>(j)] += g.data[static_cast<size_t>(i * n + j)];
                       adj.add(vid, gv);
                     });
}

Var concat_cols(Var a, Var b) {
  Tape& tape = *a.tape;
  const Tensor &av = a.val(), &bv = b.val();
  int64_t m = av.rows(), p = av.cols(), m2 = bv.rows(), q = bv.cols();
  if (m != m2) throw ShapeMismatch("concat_cols: row counts differ");
  Tensor out = Tensor::zeros({m, p + q});
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t j = 0; j < p; ++j)
      out.data[static_cast<size_t>(i * (p + q) + j)] = av.data[static_cast<size_t>(i * p + j)];
    for (int64_t j = 0; j < q; ++j)
      out.data[static_cast<size_t>(i * (p + q) + p + j)] = bv.data[static_cast<size_t>(i * q + j)];
  }
  int aid = a.id, bid = b.id;
  return tape.record(std::move(out), {aid, bid},
                     [aid, bid, m, p, q](const Tensor& g, const Tensor&, AdjointMap& adj) {
                       Tensor ga = Tensor::zeros({m, p}), gb = Tensor::zeros({m, q});
                       for (int64_t i = 0; i < m; ++i) {
                         for (int64_t j = 0; j < p; ++j)
                           ga.data[static_cast<size_t>(i * p + j)] = g.data[static_cast<size_t>(i * (p + q) + j)];
                         for (int64_t j = 0; j < q; ++j)
                           gb.data[static_cast<size_t>(i * q + j)] = g.data[static_cast<size_t>(i * (p + q) + p + j)];
                       }
                       adj.add(aid, ga);
                       adj.add(bid, gb);
                     });
}

Var stop_gradient(Var x) {
  // value-transparent leaf: identical bits, no parents, no gradient flow
  return x.tape->leaf(x.val(), false);
}

// ---- forward-mode layer ---------------------------------------------------

namespace {

// lift a structurally-zero tangent when an op has to mix present and
// absent tangents
Var zero_tangent_like(Var primal) {
  return primal.tape->constant(Tensor::zeros(primal.val().shape));
}

}  // namespace

Dual add(Dual a, Dual b) {
  Var p = add(a.p, b.p);
  if (!a.has_t() && !b.has_t()) return Dual(p);
  if (a.has_t() && b.has_t()) return Dual(p, add(a.t, b.t));
  return Dual(p, a.has_t() ? a.t : b.t);
}

Dual sub(Dual a, Dual b) {
  Var p = sub(a.p, b.p);
  if (!a.has_t() && !b.has_t()) return Dual(p);
  if (a.has_t() && b.has_t()) return Dual(p, sub(a.t, b.t));
  if (a.has_t()) return Dual(p, a.t);
  return Dual(p, neg(b.t));
}

Dual mul(Dual a, Dual b) {
  Var p = mul(a.p, b.p);
  if (!a.has_t() && !b.has_t()) return Dual(p);
  Var t;
  if (a.has_t()) t = mul(a.t, b.p);
  if (b.has_t()) {
    Var t2 = mul(a.p, b.t);
    t = t.valid() ? add(t, t2) : t2;
  }
  return Dual(p, t);
}

Dual neg(Dual a) { return scale(a, -1.0); }

Dual scale(Dual a, double c) {
  Var p = scale(a.p, c);
  if (!a.has_t()) return Dual(p);
  return Dual(p, scale(a.t, c));
}

Dual add_scalar(Dual a, double c) {
  Var p = add_scalar(a.p, c);
  if (!a.has_t()) return Dual(p);
  return Dual(p, a.t);
}

Dual matmul(Dual a, Dual b) {
  Var p = matmul(a.p, b.p);
  if (!a.has_t() && !b.has_t()) return Dual(p);
  Var t;
  if (a.has_t()) t = matmul(a.t, b.p);
  if (b.has_t()) {
    Var t2 = matmul(a.p, b.t);
    t = t.valid() ? add(t, t2) : t2;
  }
  return Dual(p, t);
}

Dual softmax_rows(Dual x, int64_t k) {
  Var p = softmax_rows(x.p, k);
  if (!x.has_t()) return Dual(p);
  // dp = p * (dx - rowsum(p * dx))
  Var pt = mul(p, x.t);
  Var inner = sub(x.t, tile_cols(rowsum(pt, k), k));
  return Dual(p, mul(p, inner));
}

Dual log_softmax_rows(Dual x, int64_t k) {
  Var p = log_softmax_rows(x.p, k);
  if (!x.has_t()) return Dual(p);
  // dls = dx - rowsum(softmax * dx)
  Var sm = exp_(p);
  Var smt = mul(sm, x.t);
  return Dual(p, sub(x.t, tile_cols(rowsum(smt, k), k)));
}

Dual sum_all(Dual x) {
  Var p = sum_all(x.p);
  if (!x.has_t()) return Dual(p);
  return Dual(p, sum_all(x.t));
}

Dual mean_all(Dual x) {
  Var p = mean_all(x.p);
  if (!x.has_t()) return Dual(p);
  return Dual(p, mean_all(x.t));
}

Dual rowsum(Dual x, int64_t k) {
  Var p = rowsum(x.p, k);
  if (!x.has_t()) return Dual(p);
  return Dual(p, rowsum(x.t, k));
}

Dual tile_cols(Dual v, int64_t n) {
  Var p = tile_cols(v.p, n);
  if (!v.has_t()) return Dual(p);
  return Dual(p, tile_cols(v.t, n));
}

Dual tile_rows(Dual v, int64_t m) {
  Var p = tile_rows(v.p, m);
  if (!v.has_t()) return Dual(p);
  return Dual(p, tile_rows(v.t, m));
}

Dual concat_cols(Dual a, Dual b) {
  Var p = concat_cols(a.p, b.p);
  if (!a.has_t() && !b.has_t()) return Dual(p);
  Var at = a.has_t() ? a.t : zero_tangent_like(a.p);
  Var bt = b.has_t() ? b.t : zero_tangent_like(b.p);
  return Dual(p, concat_cols(at, bt));
}

Dual stop_gradient(Dual x) { return Dual(stop_gradient(x.p)); }

Dual elementwise(const std::string& name, Dual x) {
  Var p = elementwise(name, x.p);
  if (!x.has_t()) return Dual(p);
  Var d;
  if (name == "exp") {
    d = p;
  } else if (name == "log") {
    d = reciprocal(x.p);
  } else if (name == "tanh") {
    d = add_scalar(neg(square(p)), 1.0);
  } else if (name == "relu") {
    Tensor step = x.p.val();
    for (double& v : step.data) v = v > 0.0 ? 1.0 : 0.0;
    d = x.p.tape->constant(std::move(step));
  } else if (name == "sin") {
    d = cos_(x.p);
  } else if (name == "cos") {
    d = neg(sin_(x.p));
  } else if (name == "sqrt") {
    d = scale(reciprocal(p), 0.5);
  } else if (name == "reciprocal") {
    d = neg(square(p));
  } else if (name == "square") {
    d = scale(x.p, 2.0);
  } else {
    throw UnsupportedPrimitive("no tangent rule for primitive: " + name);
  }
  return Dual(p, mul(d, x.t));
}

// ---- entry points ---------------------------------------------------------

DualBatch forward_jvp(const ScalarProgram& f, double t, double direction) {
  Tape tape;
  Var tv = tape.constant(Tensor::scalar(t));
  Var dv = tape.constant(Tensor::scalar(direction));
  Dual out = f(tape, Dual(tv, dv));
  DualBatch result;
  result.primal = out.p.val();
  result.tangent = out.has_t() ? out.t.val() : Tensor::zeros(result.primal.shape);
  return result;
}

std::vector<Tensor> grad_all(Tape& tape, Var loss) {
  const Tensor& lv = loss.val();
  if (lv.size() != 1) throw ShapeMismatch("grad_all: loss is not a scalar");
  if (!std::isfinite(lv.data[0]))
    throw NonFiniteLoss("grad_all: loss value is not finite");
  std::vector<Tensor> adjoints = tape.backward_scalar(loss);
  for (const Tensor& a : adjoints)
    if (!a.data.empty() && !a.all_finite())
      throw NonFiniteLoss("grad_all: non-finite gradient");
  return adjoints;
}

Tensor grad_or_zero(const std::vector<Tensor>& adjoints, Var v) {
  const Tensor& a = adjoints[static_cast<size_t>(v.id)];
  if (!a.data.empty()) return a;
  return Tensor::zeros(v.val().shape);
}

}  // namespace cfm::ad
