#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "cfm/autodiff.hpp"
#include "cfm/rng.hpp"
#include "cfm/tensor.hpp"

namespace cfm {

enum class Activation { tanh, relu };
enum class NormMode { per_position, per_sequence };
enum class Head { simplex, velocity };

struct PredictorConfig {
  int64_t D = 1;       // categorical positions
  int64_t K = 2;       // categories per position
  int64_t width = 64;  // hidden width
  int64_t depth = 2;   // number of hidden layers
  int64_t d_tau = 32;  // sinusoidal embedding dim (even)
  Activation act = Activation::tanh;
  bool input_norm = true;
  NormMode norm_mode = NormMode::per_position;
  Head head = Head::simplex;

  int64_t dk() const { return D * K; }
  bool valid() const {
    return D >= 1 && K >= 1 && width >= 1 && depth >= 1 && d_tau >= 2 && d_tau % 2 == 0;
  }
};

// All learnable tensors, keyed by name in a fixed order. The order is a
// deterministic function of the config and doubles as the serialization
// order.
struct PredictorParams {
  std::vector<std::pair<std::string, Tensor>> tensors;

  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool has(const std::string& name) const;
  int64_t total_size() const;
};

std::vector<std::pair<std::string, std::vector<int64_t>>> param_shapes(
    const PredictorConfig& cfg);
PredictorParams init_predictor_params(const PredictorConfig& cfg, Rng& rng);

// Parameters registered on a tape, optionally as gradient roots.
struct BoundPredictor {
  const PredictorConfig* cfg = nullptr;
  std::unordered_map<std::string, ad::Var> vars;
  ad::Var at(const std::string& name) const;
};

BoundPredictor bind_predictor(ad::Tape& tape, const PredictorConfig& cfg,
                              const PredictorParams& params, bool requires_grad);

// Sinusoidal embedding with squared norm d_tau for every u.
Tensor mp_sinusoid_values(double u, int64_t d_tau);
// Projected embedding of a time input through one of the predictor's
// magnitude-preserving projections ("time_s" or "time_d").
Tensor time_embed(const PredictorConfig& cfg, const PredictorParams& params, double u,
                  const std::string& which);

// Forward pass over a batch. x: [B, D*K]; s, t: per-item times [B].
// Differentiable in x, s, t and parameters; tangents propagate.
ad::Dual predict_logits(ad::Tape& tape, const BoundPredictor& bp, ad::Dual x, ad::Dual s,
                        ad::Dual t);
ad::Dual predict_probs(ad::Tape& tape, const BoundPredictor& bp, ad::Dual x, ad::Dual s,
                       ad::Dual t);

// Scalar uncertainty weight w(s, t) per batch item, shape [B].
ad::Dual weight_net(ad::Tape& tape, const BoundPredictor& bp, ad::Dual s, ad::Dual t);

// Input scaling by the inverse root of the expected interpolant norm at the
// segment start.
ad::Dual input_normalize(ad::Tape& tape, const PredictorConfig& cfg, ad::Dual x,
                         ad::Dual s);

// Value-only evaluation helpers (chunked internally; no gradients).
Tensor predict_probs_values(const PredictorConfig& cfg, const PredictorParams& params,
                            const Tensor& x, const std::vector<double>& s,
                            const std::vector<double>& t);
Tensor predict_probs_values(const PredictorConfig& cfg, const PredictorParams& params,
                            const Tensor& x, double s, double t);
double weight_net_value(const PredictorConfig& cfg, const PredictorParams& params,
                        double s, double t);

}  // namespace cfm
