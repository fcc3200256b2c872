#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "abi/mlp.hpp"

namespace abisim {

struct SimResult {
  Vec data;
  bool valid = true;  // false marks guard breaches; rejected automatically
};

// Coordinate-wise map between a box-constrained parameter space and an
// unconstrained fitting space (logit on bounded coordinates, identity
// elsewhere). Density models are fitted in the unconstrained space.
struct IntervalTransform {
  std::vector<std::optional<std::pair<double, double>>> bounds;

  int dim() const { return static_cast<int>(bounds.size()); }
  Vec forward(const Vec& theta) const;
  Vec inverse(const Vec& z) const;

  static IntervalTransform identity(int dim);
};

struct GaussianRef {
  double mean = 0.0;
  double variance = 1.0;
};

struct SimulatorBundle {
  std::string name;
  int theta_dim = 0;
  int data_dim = 0;
  std::vector<std::string> param_names;
  std::function<Vec(RandomStream&)> prior_sampler;
  std::function<SimResult(const Vec&, RandomStream&)> simulator;
  IntervalTransform support;
  std::optional<Vec> truth;
  std::optional<GaussianRef> reference_posterior;  // exact posterior when known
  bool scalar_iid_data = false;  // dataset is exchangeable scalar observations
  Vec observed_xstar;
  uint64_t xstar_seed = 0;
};

SimulatorBundle make_model(const std::string& name);
std::vector<std::string> model_names();

// Acceptance-rate decay of vanilla rejection ABC as the data dimension
// grows: theta ~ U(-1, 1) embedded in the first coordinate of an
// n-dimensional Gaussian observation, target x* = 0.
struct CurseRow {
  int dim = 0;
  double rate = 0.0;
};
std::vector<CurseRow> curse_of_dim_demo(const std::vector<int>& dims, double epsilon,
                                        long trials, RandomStream& rng);

// Least-squares slope of log(rate) against dim over the positive-rate rows.
double curse_log_slope(const std::vector<CurseRow>& rows);

void write_xstar_csv(const std::string& path, const SimulatorBundle& model);
Vec read_xstar_csv(const std::string& path);

}  // namespace abisim
