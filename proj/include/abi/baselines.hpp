#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "abi/mlp.hpp"
#include "abi/models.hpp"
#include "abi/quantile_net.hpp"

namespace abisim {

// Empirical 1-Wasserstein distance between equal-size point sets via an
// exact O(n^3) assignment solve on the Euclidean cost matrix.
double exact_w1(const Mat& a, const Mat& b);

double median_heuristic_bandwidth(const Mat& a, const Mat& b);

// Unbiased two-sample MMD^2 with kernel exp(-||u-v||^2 / (2 h^2)).
double mmd_squared_gaussian(const Mat& a, const Mat& b,
                            std::optional<double> bandwidth = std::nullopt);

// max(MMD^2, 0)^{1/2}.
double mmd_gaussian(const Mat& a, const Mat& b,
                    std::optional<double> bandwidth = std::nullopt);

struct PriorPredictive {
  Mat theta_rows;
  Mat data_rows;
  std::vector<char> valid;
  long simulator_calls = 0;
};

PriorPredictive draw_prior_predictive(const SimulatorBundle& model, long budget,
                                      RandomStream& rng);

struct RejectionResult {
  Mat retained_theta;
  std::vector<double> distances;  // of the retained draws, ranked ascending
  long simulator_calls = 0;
};

// Shared single-round harness: rank the batch by distance, keep the best
// keep_fraction (invalid draws rank last at +inf).
RejectionResult select_best(const PriorPredictive& batch,
                            const std::function<double(const Vec&)>& distance,
                            double keep_fraction);

// Plain rejection ABC with Euclidean distance on the raw data vector.
RejectionResult rejection_abc(const SimulatorBundle& model, const Vec& x_star,
                              long budget, double keep_fraction, RandomStream& rng);

// Rejection ABC under the 2-Wasserstein data distance: sorted 1-d coupling
// for exchangeable scalar datasets, flattened-vector distance otherwise.
RejectionResult wasserstein_abc(const SimulatorBundle& model, const Vec& x_star,
                                long budget, double keep_fraction, RandomStream& rng);

// Summary network for ABC-SS: MLP regression x -> E[theta|x] under squared
// loss, reusing the quantile net's architecture/optimizer settings.
struct RegressionNet {
  Mlp net;
  Standardizer input_std;
  Vec target_mean;
  Vec target_scale;

  Vec predict(const Vec& x) const;
  Mat predict_rows(const Mat& x_rows) const;
};

RegressionNet train_regression_net(const Mat& x_rows, const Mat& y_rows,
                                   const QuantileNetConfig& cfg, RandomStream& rng);

RejectionResult abc_ss(const SimulatorBundle& model, const Vec& x_star, long budget,
                       double keep_fraction, const QuantileNetConfig& net_cfg,
                       RandomStream& rng);

struct EvalReport {
  double mmd = 0.0;
  double w1 = 0.0;
  std::vector<double> mean_bias;
  double corr_bias = 0.0;

  std::string to_json() const;
};

EvalReport evaluate(const Mat& posterior_draws, const Mat& reference_draws,
                    int w1_cap = 2000);

}  // namespace abisim
