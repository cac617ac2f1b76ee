#include "cfm/interpolant.hpp"

#include <cmath>

#include "cfm/errors.hpp"

namespace cfm {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

Schedule Schedule::linear() {
  Schedule s;
  s.kind = Kind::linear;
  return s;
}

Schedule Schedule::trig() {
  return affine([](double t) { return std::cos(kPi * t / 2.0); },
                [](double t) { return std::sin(kPi * t / 2.0); },
                [](double t) { return -kPi / 2.0 * std::sin(kPi * t / 2.0); },
                [](double t) { return kPi / 2.0 * std::cos(kPi * t / 2.0); });
}

Schedule Schedule::affine(std::function<double(double)> alpha,
                          std::function<double(double)> beta,
                          std::function<double(double)> alpha_dot,
                          std::function<double(double)> beta_dot) {
  Schedule s;
  s.kind = Kind::general_affine;
  s.alpha_fn = std::move(alpha);
  s.beta_fn = std::move(beta);
  s.alpha_dot_fn = std::move(alpha_dot);
  s.beta_dot_fn = std::move(beta_dot);
  return s;
}

double Schedule::alpha(double t) const {
  return kind == Kind::linear ? 1.0 - t : alpha_fn(t);
}
double Schedule::beta(double t) const { return kind == Kind::linear ? t : beta_fn(t); }
double Schedule::alpha_dot(double t) const {
  return kind == Kind::linear ? -1.0 : alpha_dot_fn(t);
}
double Schedule::beta_dot(double t) const {
  return kind == Kind::linear ? 1.0 : beta_dot_fn(t);
}

Tensor sample_prior(Rng& rng, int64_t B, int64_t D, int64_t K) {
  Tensor out = Tensor::zeros({B, D * K});
  for (double& v : out.data) v = rng.normal();
  return out;
}

Tensor interpolate(const Schedule& sched, const Tensor& x0, const Tensor& x1, double t) {
  if (x0.size() != x1.size()) throw ShapeMismatch("interpolate: endpoint sizes differ");
  double a = sched.alpha(t), b = sched.beta(t);
  Tensor out = x0;
  for (size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = a * x0.data[i] + b * x1.data[i];
  return out;
}

Tensor interpolate_rows(const Schedule& sched, const Tensor& x0, const Tensor& x1,
                        const std::vector<double>& t) {
  if (x0.size() != x1.size()) throw ShapeMismatch("interpolate_rows: endpoint sizes differ");
  int64_t rows = static_cast<int64_t>(t.size());
  if (rows == 0 || x0.size() % rows != 0)
    throw ShapeMismatch("interpolate_rows: row count does not divide batch");
  int64_t cols = x0.size() / rows;
  Tensor out = x0;
  for (int64_t r = 0; r < rows; ++r) {
    double a = sched.alpha(t[static_cast<size_t>(r)]);
    double b = sched.beta(t[static_cast<size_t>(r)]);
    for (int64_t j = 0; j < cols; ++j) {
      size_t i = static_cast<size_t>(r * cols + j);
      out.data[i] = a * x0.data[i] + b * x1.data[i];
    }
  }
  return out;
}

Tensor velocity_from_endpoint(const Tensor& pi, const Tensor& x, double t,
                              const Schedule& sched) {
  if (pi.size() != x.size())
    throw ShapeMismatch("velocity_from_endpoint: operand sizes differ");
  Tensor out = pi;
  if (sched.kind == Schedule::Kind::linear) {
    double inv = 1.0 / one_minus_clamped(t);
    for (size_t i = 0; i < out.data.size(); ++i)
      out.data[i] = (pi.data[i] - x.data[i]) * inv;
    return out;
  }
  double a = sched.alpha(t);
  if (a == 0.0 && t < 1.0)
    throw ScheduleSingularity("velocity_from_endpoint: alpha(t) = 0 at t < 1");
  // clamp |alpha| like the linear-case denominator to keep t -> 1 finite
  double am = std::abs(a) < kDenomClamp ? (a < 0 ? -kDenomClamp : kDenomClamp) : a;
  double ratio = sched.alpha_dot(t) / am;
  double c = sched.beta_dot(t) - sched.beta(t) * ratio;
  for (size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = ratio * x.data[i] + c * pi.data[i];
  return out;
}

Tensor score_from_velocity(const Tensor& v, const Tensor& x, double t) {
  if (v.size() != x.size())
    throw ShapeMismatch("score_from_velocity: operand sizes differ");
  double inv = 1.0 / one_minus_clamped(t);
  Tensor out = v;
  for (size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = (t * v.data[i] - x.data[i]) * inv;
  return out;
}

double expected_interpolant_norm(int64_t d, double t) {
  return static_cast<double>(d) * (1.0 - t) * (1.0 - t) + t * t;
}

}  // namespace cfm
