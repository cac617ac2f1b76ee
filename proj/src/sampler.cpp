#include "cfm/sampler.hpp"

#include <cmath>

#include "cfm/errors.hpp"
#include "cfm/interpolant.hpp"

namespace cfm {

TimeGrid TimeGrid::uniform(int64_t nfe) {
  TimeGrid g;
  if (nfe < 1) {
    g.knots = {0.0};
    return g;
  }
  g.knots.resize(static_cast<size_t>(nfe) + 1);
  for (int64_t i = 0; i <= nfe; ++i)
    g.knots[static_cast<size_t>(i)] = static_cast<double>(i) / static_cast<double>(nfe);
  g.knots.back() = 1.0;
  return g;
}

bool TimeGrid::valid() const {
  if (knots.empty() || knots.front() != 0.0) return false;
  for (size_t i = 1; i < knots.size(); ++i)
    if (knots[i] <= knots[i - 1]) return false;
  if (knots.size() >= 2 && knots.back() != 1.0) return false;
  return true;
}

void euler_step_inplace(Tensor& x, const Tensor& pi, double t, double dt) {
  double inv = 1.0 / one_minus_clamped(t);
  for (size_t i = 0; i < x.data.size(); ++i)
    x.data[i] += dt * ((pi.data[i] - x.data[i]) * inv);
}

namespace {

std::vector<double> fill_times(int64_t B, double t) {
  return std::vector<double>(static_cast<size_t>(B), t);
}

void check_grid(const TimeGrid& grid, const char* where) {
  if (!grid.valid()) throw Error(std::string(where) + ": invalid time grid");
}

}  // namespace

SampleOutput sample_flowmap(const PredictorConfig& cfg, const PredictorParams& params,
                            Rng rng, const TimeGrid& grid, int64_t B, DiscretizeMode mode,
                            const StepObserver* observer) {
  check_grid(grid, "sample_flowmap");
  Rng prior_rng = rng.fork(1);
  Rng disc_rng = rng.fork(3);
  Tensor x = sample_prior(prior_rng, B, cfg.D, cfg.K);
  for (int64_t i = 0; i + 1 < static_cast<int64_t>(grid.knots.size()); ++i) {
    double ti = grid.knots[static_cast<size_t>(i)];
    double tn = grid.knots[static_cast<size_t>(i) + 1];
    // the jump onto t = 1 keeps the exact coefficient 1 so the final state
    // lands on the prediction itself
    double denom = tn == 1.0 ? (1.0 - ti) : one_minus_clamped(ti);
    double gamma = (tn - ti) / denom;
    Tensor pi = predict_probs_values(cfg, params, x, fill_times(B, ti), fill_times(B, tn));
    Tensor x_before = observer ? x : Tensor();
    for (size_t j = 0; j < x.data.size(); ++j)
      x.data[j] += gamma * (pi.data[j] - x.data[j]);
    if (observer) (*observer)(i, x_before, pi, gamma, x);
  }
  SampleOutput out;
  out.soft = x;
  out.mode = mode;
  out.hard = discretize(out.soft, mode, disc_rng, cfg.K);
  return out;
}

SampleOutput sample_euler(const PredictorConfig& cfg, const PredictorParams& params,
                          Rng rng, const TimeGrid& grid, int64_t B, DiscretizeMode mode) {
  if (grid.knots.size() > 1) check_grid(grid, "sample_euler");
  Rng prior_rng = rng.fork(1);
  Rng disc_rng = rng.fork(3);
  Tensor x = sample_prior(prior_rng, B, cfg.D, cfg.K);
  for (int64_t i = 0; i + 1 < static_cast<int64_t>(grid.knots.size()); ++i) {
    double ti = grid.knots[static_cast<size_t>(i)];
    double dt = grid.knots[static_cast<size_t>(i) + 1] - ti;
    Tensor pi = predict_probs_values(cfg, params, x, fill_times(B, ti), fill_times(B, ti));
    euler_step_inplace(x, pi, ti, dt);
  }
  SampleOutput out;
  out.soft = x;
  out.mode = mode;
  out.hard = discretize(out.soft, mode, disc_rng, cfg.K);
  return out;
}

SampleOutput sample_sde(const PredictorConfig& cfg, const PredictorParams& params, Rng rng,
                        const TimeGrid& grid, const std::function<double(double)>& sigma,
                        int64_t B, DiscretizeMode mode) {
  check_grid(grid, "sample_sde");
  Rng prior_rng = rng.fork(1);
  Rng noise_rng = rng.fork(2);
  Rng disc_rng = rng.fork(3);
  Tensor x = sample_prior(prior_rng, B, cfg.D, cfg.K);
  int64_t n_steps = grid.steps();
  for (int64_t i = 0; i < n_steps; ++i) {
    double ti = grid.knots[static_cast<size_t>(i)];
    double tn = grid.knots[static_cast<size_t>(i) + 1];
    double dt = tn - ti;
    bool last = tn == 1.0;
    double sg = last ? 0.0 : sigma(ti);
    Tensor pi = predict_probs_values(cfg, params, x, fill_times(B, ti), fill_times(B, ti));
    double inv = 1.0 / one_minus_clamped(ti);
    double noise_scale = sg * std::sqrt(dt);
    for (size_t j = 0; j < x.data.size(); ++j) {
      double v = (pi.data[j] - x.data[j]) * inv;
      double score = (ti * v - x.data[j]) * inv;
      double drift = v + 0.5 * sg * sg * score;
      double xi = sg > 0.0 ? noise_rng.normal() : 0.0;
      x.data[j] += dt * drift + noise_scale * xi;
    }
  }
  SampleOutput out;
  out.soft = x;
  out.mode = mode;
  out.hard = discretize(out.soft, mode, disc_rng, cfg.K);
  return out;
}

SampleOutput sample_sde(const PredictorConfig& cfg, const PredictorParams& params, Rng rng,
                        const TimeGrid& grid, double sigma0, int64_t B,
                        DiscretizeMode mode) {
  return sample_sde(cfg, params, rng, grid,
                    [sigma0](double t) { return sigma0 * (1.0 - t); }, B, mode);
}

Tensor discretize(const Tensor& soft, DiscretizeMode mode, Rng& rng, int64_t K) {
  int64_t n = soft.size();
  if (K < 1 || n % K != 0) throw ShapeMismatch("discretize: K does not divide size");
  Tensor hard = Tensor::zeros(soft.shape);
  for (int64_t start = 0; start < n; start += K) {
    const double* s = soft.data.data() + start;
    double* h = hard.data.data() + start;
    if (mode == DiscretizeMode::argmax) {
      int64_t best = 0;
      for (int64_t j = 1; j < K; ++j)
        if (s[j] > s[best]) best = j;
      h[best] = 1.0;
    } else {
      double sum = 0.0;
      for (int64_t j = 0; j < K; ++j) sum += s[j] > 0.0 ? s[j] : 0.0;
      if (sum <= 0.0) throw DegenerateSlice("discretize: slice sums to <= 0");
      double u = rng.uniform() * sum;
      double acc = 0.0;
      int64_t pick = K - 1;
      for (int64_t j = 0; j < K; ++j) {
        acc += s[j] > 0.0 ? s[j] : 0.0;
        if (u < acc) {
          pick = j;
          break;
        }
      }
      h[pick] = 1.0;
    }
  }
  return hard;
}

}  // namespace cfm
