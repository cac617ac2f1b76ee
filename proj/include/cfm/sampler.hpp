#pragma once

#include <functional>

#include "cfm/predictor.hpp"
#include "cfm/rng.hpp"
#include "cfm/tensor.hpp"

namespace cfm {

struct TimeGrid {
  std::vector<double> knots;  // 0 = t0 < t1 < ... < tN = 1
  static TimeGrid uniform(int64_t nfe);
  int64_t steps() const { return static_cast<int64_t>(knots.size()) - 1; }
  bool valid() const;
};

enum class DiscretizeMode { argmax, categorical };
enum class SamplerKind { flowmap, euler, sde };

struct SampleOutput {
  Tensor hard;  // one-hot [B, D*K]
  Tensor soft;  // final continuous state
  DiscretizeMode mode = DiscretizeMode::argmax;
};

// Observes every transport step of the flow-map sampler; gamma is the
// coefficient actually applied.
using StepObserver = std::function<void(int64_t step, const Tensor& x_before,
                                        const Tensor& pi, double gamma,
                                        const Tensor& x_after)>;

// Seed-isolated streams are forked from the passed rng: tag 1 drives the
// prior draw, tag 2 the diffusion noise, tag 3 the final discretization.
SampleOutput sample_flowmap(const PredictorConfig& cfg, const PredictorParams& params,
                            Rng rng, const TimeGrid& grid, int64_t B,
                            DiscretizeMode mode = DiscretizeMode::argmax,
                            const StepObserver* observer = nullptr);

SampleOutput sample_euler(const PredictorConfig& cfg, const PredictorParams& params,
                          Rng rng, const TimeGrid& grid, int64_t B,
                          DiscretizeMode mode = DiscretizeMode::argmax);

SampleOutput sample_sde(const PredictorConfig& cfg, const PredictorParams& params, Rng rng,
                        const TimeGrid& grid, const std::function<double(double)>& sigma,
                        int64_t B, DiscretizeMode mode = DiscretizeMode::argmax);
// sigma(t) = sigma0 (1 - t)
SampleOutput sample_sde(const PredictorConfig& cfg, const PredictorParams& params, Rng rng,
                        const TimeGrid& grid, double sigma0, int64_t B,
                        DiscretizeMode mode = DiscretizeMode::argmax);

// Per-slice argmax (lowest-index tie break) or categorical draw.
Tensor discretize(const Tensor& soft, DiscretizeMode mode, Rng& rng, int64_t K);

// One deterministic velocity step x += dt (pi - x)/(1 - t); shared by the
// Euler sampler and the SDE/SMC propagators so degenerate settings coincide
// exactly.
void euler_step_inplace(Tensor& x, const Tensor& pi, double t, double dt);

}  // namespace cfm
