#pragma once

#include <Eigen/Dense>
#include <vector>

#include "abi/rng.hpp"

namespace abisim {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;  // sample sets: one draw per row

// Parameters of the marginally-augmented sliced Wasserstein distance.
struct MswConfig {
  double p = 1.0;        // order of the underlying 1-d distances
  double delta = 0.02;   // symmetric trimming level, in [0, 1/2)
  double lambda = 0.5;   // weight on the marginal term, in [0, 1]
  int num_slices = 5;    // K, random directions per evaluation
  int num_bins = 10;     // H, trapezoid panels over [delta, 1-delta]

  void validate() const;
};

// Evaluation grid tau_h = delta + h * (1 - 2 delta) / H, h = 0..H.
struct QuantileGrid {
  double delta = 0.02;
  int bins = 10;

  std::vector<double> levels() const;
  void validate() const;
};

// K random unit directions followed by the d coordinate axes (rows).
struct ProjectionSet {
  Mat directions;  // (K + d) x d
  int dim = 0;
  int num_random = 0;

  int num_rows() const { return num_random + dim; }
};

ProjectionSet sample_projections(int dim, int num_random, RandomStream& rng);

// Left-continuous empirical quantile inf{y : F(y) >= tau} of the given draws.
double empirical_quantile(const std::vector<double>& values, double tau);

// Trimmed 1-d p-Wasserstein distance between empirical samples a and b
// (sizes may differ), computed by exact piecewise integration of the
// quantile difference over [delta, 1-delta].
double trimmed_w1d(const std::vector<double>& a, const std::vector<double>& b,
                   double p, double delta);

// Trapezoid approximation of the normalized trimmed integral
// (1 / (1-2 delta)) * int_delta^{1-delta} |q1 - q2|^p dtau
// from tabulated quantile values on the grid (size H + 1). Returns the
// integral itself, not its p-th root.
double i_h_trapezoid(const std::vector<double>& q1, const std::vector<double>& q2,
                     double p, double delta);

// Empirical MSW distance between sample sets a and b under a fixed
// projection set: lambda * mean_j W_{p,delta}(axis margins) +
// (1-lambda) * (mean_k W_{p,delta}^p(slices))^{1/p}.
double msw_empirical(const Mat& a, const Mat& b, const MswConfig& cfg,
                     const ProjectionSet& proj);

// Same combination evaluated from precomputed quantile tables with rows
// ordered as in ProjectionSet (K random slices first, then d axes) and
// H + 1 columns; each 1-d distance is approximated by i_h_trapezoid.
double msw_from_quantile_tables(const Mat& qa, const Mat& qb,
                                const MswConfig& cfg, int dim);

}  // namespace abisim
