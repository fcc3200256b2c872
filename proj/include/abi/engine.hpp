#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "abi/gmm.hpp"
#include "abi/models.hpp"
#include "abi/msw.hpp"
#include "abi/quantile_net.hpp"

namespace abisim {

struct AbiConfig {
  int iterations = 5;            // T
  int proposals_per_iter = 5000;  // N
  int train_pairs_per_iter = 5000;  // N_train
  int ars_budget = 10;           // R simulation attempts per parameter draw
  double quantile_fraction = 0.1;  // alpha
  MswConfig msw;
  QuantileNetConfig net;
  GmmConfig density;

  void validate() const;
};

struct IterationReport {
  int t = 0;
  double epsilon = 0.0;
  double ars_acceptance_rate = 0.0;  // accepted draws / simulator calls
  long retained_count = 0;           // |S_t| after pruning
  long discarded_budget_exhausted = 0;
  double quantile_train_loss = 0.0;  // NaN when no net is trained
  long simulator_calls = 0;
  long accepted_pairs = 0;  // proposal pairs surviving ARS, before pruning
};

struct AbiResult {
  GaussianMixture posterior_model;  // fitted in the unconstrained support space
  std::vector<IterationReport> reports;
  std::optional<QuantileNet> final_net;
};

struct ArsResult {
  Mat theta_rows;
  Mat data_rows;
  long simulator_calls = 0;
  long dropped = 0;
};

// Algorithm: for each of num_draws parameter draws, simulate up to
// budget_per_draw datasets and keep the first accepted pair; the parameter is
// dropped once the budget is exhausted. Per-draw child streams make the
// result independent of evaluation order.
ArsResult ars_sample(const std::function<Vec(RandomStream&)>& theta_source,
                     const std::function<SimResult(const Vec&, RandomStream&)>& simulator,
                     const std::function<bool(const Vec&)>& accept, long num_draws,
                     long budget_per_draw, RandomStream& rng);

// Left-continuous empirical alpha-quantile of the statistics.
double adaptive_threshold(const std::vector<double>& statistics, double alpha);

// Full adaptive loop: tolerances picked as the alpha-quantile of the kernel
// statistics retained under the previous tolerance.
AbiResult run_abi(const SimulatorBundle& model, const Vec& x_star,
                  const AbiConfig& cfg, uint64_t seed);

// Adaptive loop with the quantile-net statistic replaced by a direct
// data-space distance to x*.
AbiResult run_abi(const SimulatorBundle& model, const Vec& x_star,
                  const std::function<double(const Vec&)>& data_distance,
                  const AbiConfig& cfg, uint64_t seed);

// Same loop under an explicit tolerance schedule (its length overrides
// cfg.iterations). data_distance, when given, replaces the quantile-net MSW
// statistic with a direct data-space distance to x*.
AbiResult run_abi_fixed_schedule(const SimulatorBundle& model, const Vec& x_star,
                                 const std::vector<double>& thresholds,
                                 const std::function<double(const Vec&)>& data_distance,
                                 const AbiConfig& cfg, uint64_t seed);

// Draw n posterior samples in the original parameter space.
Mat sample_posterior_rows(const AbiResult& result, const SimulatorBundle& model,
                          int n, RandomStream& rng);

}  // namespace abisim
