#pragma once

#include <string>
#include <vector>

#include "abi/mlp.hpp"

namespace abisim {

struct GmmConfig {
  int min_components = 1;
  int max_components = 8;
  int kmeans_iters = 10;
  int em_max_iters = 200;
  double em_rel_tol = 1e-6;       // relative log-likelihood change
  double cov_regularization = 1e-6;  // times median marginal variance

  void validate() const;
};

struct GaussianMixture {
  std::vector<double> weights;
  std::vector<Vec> means;
  std::vector<Mat> covariances;

  int components() const { return static_cast<int>(weights.size()); }
  int dim() const { return means.empty() ? 0 : static_cast<int>(means.front().size()); }

  Vec sample(RandomStream& rng) const;
  Mat sample_rows(int n, RandomStream& rng) const;
  double log_density(const Vec& x) const;

  std::string serialize() const;
  static GaussianMixture deserialize(const std::string& text);
};

// EM fit with k-means++ initialization and BIC model selection over the
// configured component range. draws: one sample per row.
GaussianMixture fit_gmm(const Mat& draws, const GmmConfig& cfg, RandomStream& rng);

// Mean log-likelihood path of a single EM run (exposed for diagnostics).
struct EmTrace {
  std::vector<double> mean_log_likelihood;
};
GaussianMixture fit_gmm_fixed(const Mat& draws, int components, const GmmConfig& cfg,
                              RandomStream& rng, EmTrace* trace = nullptr);

}  // namespace abisim
