#pragma once

#include <functional>

#include "cfm/rng.hpp"
#include "cfm/tensor.hpp"

namespace cfm {

// Every (1-t) or (1-s) appearing in a denominator is clamped below by this
// value; the clamp lives here so all callers share identical semantics.
constexpr double kDenomClamp = 0.05;

inline double one_minus_clamped(double t) {
  double u = 1.0 - t;
  return u < kDenomClamp ? kDenomClamp : u;
}

// Affine interpolation schedule: alpha(0)=1, alpha(1)=0, beta(0)=0, beta(1)=1.
struct Schedule {
  enum class Kind { linear, general_affine };
  Kind kind = Kind::linear;
  std::function<double(double)> alpha_fn, beta_fn, alpha_dot_fn, beta_dot_fn;

  static Schedule linear();
  // alpha = cos(pi t / 2), beta = sin(pi t / 2)
  static Schedule trig();
  static Schedule affine(std::function<double(double)> alpha,
                         std::function<double(double)> beta,
                         std::function<double(double)> alpha_dot,
                         std::function<double(double)> beta_dot);

  double alpha(double t) const;
  double beta(double t) const;
  double alpha_dot(double t) const;
  double beta_dot(double t) const;
};

// Batch of per-dimension category vectors, flattened to [B, D*K] row-major.
struct SimplexBatch {
  Tensor values;  // [B, D*K]
  int64_t B = 0, D = 0, K = 0;
  bool hard = false;  // one-hot content per (b, d) slice
};

// i.i.d. standard normal entries, shape [B, D*K].
Tensor sample_prior(Rng& rng, int64_t B, int64_t D, int64_t K);

// alpha(t) x0 + beta(t) x1
Tensor interpolate(const Schedule& sched, const Tensor& x0, const Tensor& x1, double t);
// per-row times
Tensor interpolate_rows(const Schedule& sched, const Tensor& x0, const Tensor& x1,
                        const std::vector<double>& t);

// Conditional-mean prediction to drift. Linear schedule: (pi - x) / (1 - t);
// general affine: (alpha_dot/alpha) x + (beta_dot - beta alpha_dot/alpha) pi.
Tensor velocity_from_endpoint(const Tensor& pi, const Tensor& x, double t,
                              const Schedule& sched);

// s_t(x) = (t v - x) / (1 - t), with the clamped denominator.
Tensor score_from_velocity(const Tensor& v, const Tensor& x, double t);

// Second moment of the linear interpolant between a standard normal block
// and a one-hot block of dimension d: d (1-t)^2 + t^2.
double expected_interpolant_norm(int64_t d, double t);

}  // namespace cfm
