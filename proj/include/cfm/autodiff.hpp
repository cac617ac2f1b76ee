#pragma once

#include <functional>
#include <string>
#include <vector>

#include "cfm/tensor.hpp"

namespace cfm::ad {

class Tape;
class AdjointMap;

// Handle to a slot on a tape. Invalid handles double as "structural zero"
// tangents in the forward-mode layer.
struct Var {
  Tape* tape = nullptr;
  int id = -1;
  bool valid() const { return tape != nullptr && id >= 0; }
  const Tensor& val() const;
};

// Append-only record of primitive ops. Appending order is a topological
// order of the computation DAG, so the reverse pass is a single backwards
// sweep that visits each record exactly once.
class Tape {
 public:
  // grad_out: adjoint of this record; out: this record's forward value.
  using BackwardFn =
      std::function<void(const Tensor& grad_out, const Tensor& out, AdjointMap& adj)>;

  Var constant(Tensor v) { return leaf(std::move(v), false); }
  Var param(Tensor v) { return leaf(std::move(v), true); }
  Var leaf(Tensor v, bool requires_grad);
  Var record(Tensor value, const std::vector<int>& parents, BackwardFn back);

  const Tensor& value(int id) const { return recs_[static_cast<size_t>(id)].value; }
  bool needs_grad(int id) const { return recs_[static_cast<size_t>(id)].needs; }
  int size() const { return static_cast<int>(recs_.size()); }
  void reset() { recs_.clear(); }

  // Reverse sweep from `root` with initial adjoint `seed` (same size as the
  // root value). Returns adjoints indexed by record id; empty = zero.
  std::vector<Tensor> backward(Var root, const Tensor& seed);
  std::vector<Tensor> backward_scalar(Var root);

 private:
  friend class AdjointMap;
  struct Rec {
    Tensor value;
    BackwardFn back;
    bool needs;
  };
  std::vector<Rec> recs_;
};

class AdjointMap {
 public:
  AdjointMap(Tape& t, std::vector<Tensor>& a) : tape_(t), adj_(a) {}
  void add(int id, const Tensor& contrib);

 private:
  Tape& tape_;
  std::vector<Tensor>& adj_;
};

// ---- primitive ops (fixed registry) ------------------------------------

// Elementwise unary primitives are dispatched by name through a fixed
// registry; unknown names raise UnsupportedPrimitive.
Var elementwise(const std::string& name, Var x);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var neg(Var a);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);
Var matmul(Var a, Var b);
Var softmax_rows(Var x, int64_t k);
Var log_softmax_rows(Var x, int64_t k);
Var sum_all(Var x);
Var mean_all(Var x);
Var rowsum(Var x, int64_t k);       // groups of k -> [size/k]
Var tile_cols(Var v, int64_t n);    // [m] -> [m,n]
Var tile_rows(Var v, int64_t m);    // [n] -> [m,n]
Var concat_cols(Var a, Var b);      // [m,p],[m,q] -> [m,p+q]
Var stop_gradient(Var x);

inline Var exp_(Var x) { return elementwise("exp", x); }
inline Var log_(Var x) { return elementwise("log", x); }
inline Var tanh_(Var x) { return elementwise("tanh", x); }
inline Var relu_(Var x) { return elementwise("relu", x); }
inline Var sin_(Var x) { return elementwise("sin", x); }
inline Var cos_(Var x) { return elementwise("cos", x); }
inline Var sqrt_(Var x) { return elementwise("sqrt", x); }
inline Var reciprocal(Var x) { return elementwise("reciprocal", x); }
inline Var square(Var x) { return elementwise("square", x); }

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator-(Var a) { return neg(a); }

// ---- forward mode -------------------------------------------------------

// Value plus directional derivative. Tangent rules are themselves built
// from the primitives above, so reverse mode differentiates through any
// forward-mode pass without special cases.
struct Dual {
  Var p;
  Var t;
  Dual() = default;
  Dual(Var primal) : p(primal) {}
  Dual(Var primal, Var tangent) : p(primal), t(tangent) {}
  bool has_t() const { return t.valid(); }
};

Dual add(Dual a, Dual b);
Dual sub(Dual a, Dual b);
Dual mul(Dual a, Dual b);
Dual neg(Dual a);
Dual scale(Dual a, double c);
Dual add_scalar(Dual a, double c);
Dual matmul(Dual a, Dual b);
Dual softmax_rows(Dual x, int64_t k);
Dual log_softmax_rows(Dual x, int64_t k);
Dual sum_all(Dual x);
Dual mean_all(Dual x);
Dual rowsum(Dual x, int64_t k);
Dual tile_cols(Dual v, int64_t n);
Dual tile_rows(Dual v, int64_t m);
Dual concat_cols(Dual a, Dual b);
Dual stop_gradient(Dual x);
Dual elementwise(const std::string& name, Dual x);

inline Dual exp_(Dual x) { return elementwise("exp", x); }
inline Dual log_(Dual x) { return elementwise("log", x); }
inline Dual tanh_(Dual x) { return elementwise("tanh", x); }
inline Dual relu_(Dual x) { return elementwise("relu", x); }
inline Dual sin_(Dual x) { return elementwise("sin", x); }
inline Dual cos_(Dual x) { return elementwise("cos", x); }
inline Dual sqrt_(Dual x) { return elementwise("sqrt", x); }
inline Dual reciprocal(Dual x) { return elementwise("reciprocal", x); }
inline Dual square(Dual x) { return elementwise("square", x); }

inline Dual operator+(Dual a, Dual b) { return add(a, b); }
inline Dual operator-(Dual a, Dual b) { return sub(a, b); }
inline Dual operator*(Dual a, Dual b) { return mul(a, b); }
inline Dual operator-(Dual a) { return neg(a); }

// Materialized (value, tangent) pair of a forward-mode pass.
struct DualBatch {
  Tensor primal;
  Tensor tangent;
};

// Forward-mode pass through a program of one scalar variable: evaluates f
// at t with the given tangent direction. The tangent of a program that never
// touches t is identically zero.
using ScalarProgram = std::function<Dual(Tape&, Dual)>;
DualBatch forward_jvp(const ScalarProgram& f, double t, double direction);

// Adjoints of a scalar loss; raises NonFiniteLoss on a NaN/Inf forward value.
std::vector<Tensor> grad_all(Tape& tape, Var loss);

// Adjoint lookup with zero-fill for parameters the loss never touched.
Tensor grad_or_zero(const std::vector<Tensor>& adjoints, Var v);

}  // namespace cfm::ad
