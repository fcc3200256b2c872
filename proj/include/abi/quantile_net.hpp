#pragma once

#include <string>
#include <vector>

#include "abi/mlp.hpp"
#include "abi/msw.hpp"

namespace abisim {

struct QuantileNetConfig {
  std::vector<int> hidden{128, 128, 128};
  double kappa = 0.03;        // Huber width on standardized targets
  double weight_decay = 1e-4;  // L2 on weight matrices (not biases)
  AdamConfig adam;
  int epochs = 200;
  int batch_size = 256;
  double holdout_fraction = 0.1;
  int patience = 20;  // epochs without holdout improvement before stopping

  void validate() const;
};

struct TrainStats {
  double final_train_loss = 0.0;
  double first_train_loss = 0.0;
  int epochs_run = 0;
};

// Monotone (per row) conditional quantile table x -> K' x (H+1), trained on
// projected parameter targets. Rows follow the projection set: K random
// slices first, then the d coordinate axes.
class QuantileNet {
 public:
  Mlp net;
  Standardizer input_std;
  Vec target_mean;   // per slice, length K' = K + d
  Vec target_scale;  // per slice, > 0
  ProjectionSet projections;
  QuantileGrid grid;

  int num_rows() const { return projections.num_rows(); }
  int theta_dim() const { return projections.dim; }
  int data_dim() const { return net.input_dim(); }

  // Quantile table with each row sorted ascending.
  Mat predict_quantiles(const Vec& x) const;
  std::vector<Mat> predict_quantiles(const Mat& x_rows) const;

  void save(const std::string& path) const;
  static QuantileNet load(const std::string& path);
};

// Asymmetric Huber check loss of a residual u = target - prediction.
double huber_quantile_loss(double u, double tau, double kappa);

// Mean Huber quantile loss and parameter gradients over the given batch
// (columns of x_std / targets_std are samples; targets are per-slice rows).
double quantile_loss_and_grads(const Mlp& net, const Mat& x_std,
                               const Mat& targets_std,
                               const std::vector<double>& levels, double kappa,
                               std::vector<Mat>& grad_w, std::vector<Vec>& grad_b);

// Train from scratch on pairs (theta_rows[i], x_rows[i]).
QuantileNet train_quantile_net(const Mat& theta_rows, const Mat& x_rows,
                               const ProjectionSet& projections,
                               const QuantileGrid& grid,
                               const QuantileNetConfig& cfg, RandomStream& rng,
                               TrainStats* stats = nullptr);

// Warm start from an existing net: reuse weights under a freshly sampled
// projection set of the same shape, refit standardization, fresh optimizer
// state, half the epoch budget.
QuantileNet fine_tune_quantile_net(const QuantileNet& warm, const Mat& theta_rows,
                                   const Mat& x_rows, const ProjectionSet& projections,
                                   const QuantileGrid& grid, const QuantileNetConfig& cfg,
                                   RandomStream& rng, TrainStats* stats = nullptr);

// Full-dataset objective under the net's stored standardization, summed in
// index order and divided by the sample count.
double full_objective(const QuantileNet& qnet, const Mat& theta_rows,
                      const Mat& x_rows, double kappa);

// Plug the two predicted tables into the trapezoid MSW evaluation.
double estimated_msw(const QuantileNet& qnet, const Vec& x, const Vec& x_star,
                     const MswConfig& cfg);

}  // namespace abisim
