#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cfm/rng.hpp"
#include "cfm/sampler.hpp"
#include "cfm/tensor.hpp"

namespace cfm {

// Synthetic categorical distribution over K^D states with exact ground
// truth. The truth table is stored sparsely over its support (mixed-radix
// state index -> probability), sorted by index.
struct CategoricalDataset {
  std::string name;
  int64_t D = 0, K = 0;
  bool enumerable = false;
  std::function<void(Rng&, double*)> sample_onehot;  // writes one D*K row
  std::vector<std::pair<uint64_t, double>> truth;
  std::function<bool(const std::vector<int>&)> valid;
  std::function<int(const std::vector<int>&)> label;  // class id, or empty

  Tensor sample_batch(Rng& rng, int64_t B) const;
};

uint64_t state_index(const std::vector<int>& state, int64_t K);
std::vector<int> state_of_row(const double* row, int64_t D, int64_t K);

// Uniform over states whose category indices sum to 0 mod K.
CategoricalDataset make_parity_dataset(int64_t D, int64_t K);
// G x G binary images that are exactly one full horizontal or vertical bar.
CategoricalDataset make_bars_dataset(int64_t G);
// Uniform over all K^D states; class 0 iff the first position is category 0.
CategoricalDataset make_twoclass_dataset(int64_t D, int64_t K);

struct EvalReport {
  double tv = 0.0;
  double validity_rate = 0.0;
  double validity_lo = 0.0, validity_hi = 0.0;  // 95% Wilson interval
  double empirical_entropy = 0.0;               // nats
  int64_t n_samples = 0;
};

EvalReport eval_model(const PredictorConfig& cfg, const PredictorParams& params,
                      const CategoricalDataset& ds, SamplerKind kind,
                      const TimeGrid& grid, int64_t n_samples, Rng rng,
                      DiscretizeMode mode = DiscretizeMode::argmax, double sigma0 = 1.0);

// Metrics of draws from the ground-truth sampler itself.
EvalReport eval_truth_sampler(const CategoricalDataset& ds, int64_t n_samples, Rng rng);

// Metrics of an externally produced batch of hard one-hot samples.
EvalReport eval_hard_samples(const CategoricalDataset& ds, const Tensor& hard);

struct SweepRow {
  SamplerKind kind;
  int64_t nfe = 0;
  EvalReport report;
};
std::vector<SweepRow> nfe_sweep(const PredictorConfig& cfg, const PredictorParams& params,
                                const CategoricalDataset& ds,
                                const std::vector<SamplerKind>& kinds,
                                const std::vector<int64_t>& nfe_list, int64_t n_samples,
                                Rng rng, DiscretizeMode mode = DiscretizeMode::argmax,
                                double sigma0 = 1.0);

const char* sampler_kind_name(SamplerKind k);

}  // namespace cfm
