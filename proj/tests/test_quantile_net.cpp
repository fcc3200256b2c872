#include <algorithm>
#include <cmath>
#include <cstdio>
#include <vector>

#include "abi/quantile_net.hpp"
#include "abi/rng.hpp"
#include "doctest.h"

using namespace abisim;

namespace {

double normal_quantile(double tau) {
  // bisection on Phi over a wide bracket; plenty for test tolerances
  double lo = -10.0, hi = 10.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    const double cdf = 0.5 * std::erfc(-mid / std::sqrt(2.0));
    (cdf < tau ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

// theta | x ~ N(2x, 1) in 1-d; shared across the fidelity-style cases.
struct SyntheticFit {
  QuantileNet net;
  TrainStats stats;
};

const SyntheticFit& synthetic_fit() {
  static const SyntheticFit fit = [] {
    RandomStream rng(101);
    const int n = 4000;
    Mat theta(n, 1), x(n, 1);
    for (int i = 0; i < n; ++i) {
      x(i, 0) = rng.uniform(-1.5, 1.5);
      theta(i, 0) = rng.normal(2.0 * x(i, 0), 1.0);
    }
    const ProjectionSet proj = sample_projections(1, 2, rng);
    const QuantileGrid grid{0.02, 10};
    QuantileNetConfig cfg;
    cfg.hidden = {64, 64};
    cfg.epochs = 80;
    cfg.patience = 15;
    SyntheticFit out;
    out.net = train_quantile_net(theta, x, proj, grid, cfg, rng, &out.stats);
    return out;
  }();
  return fit;
}

}  // namespace

TEST_CASE("huber quantile loss worked values") {
  for (double tau : {0.0, 0.3, 0.5, 1.0}) CHECK(huber_quantile_loss(0.0, tau, 1.0) == 0.0);
  CHECK(huber_quantile_loss(-0.5, 0.9, 1.0) == doctest::Approx(0.0125).epsilon(1e-12));
  CHECK(huber_quantile_loss(2.0, 0.5, 1.0) == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("huber quantile loss is nonnegative and continuous at the knee") {
  RandomStream rng(1);
  for (int i = 0; i < 2000; ++i) {
    const double u = rng.normal(0.0, 2.0);
    const double tau = rng.uniform();
    const double kappa = rng.uniform(0.01, 2.0);
    CHECK(huber_quantile_loss(u, tau, kappa) >= 0.0);
  }
  for (double tau : {0.1, 0.5, 0.93}) {
    const double kappa = 0.4;
    for (double sign : {1.0, -1.0}) {
      const double at = huber_quantile_loss(sign * kappa, tau, kappa);
      const double weight = std::abs(tau - (sign < 0.0 ? 1.0 : 0.0));
      CHECK(at == doctest::Approx(weight * kappa / 2.0).epsilon(1e-12));
      const double just_out = huber_quantile_loss(sign * (kappa + 1e-9), tau, kappa);
      CHECK(std::abs(just_out - at) < 1e-8);
    }
  }
  CHECK_THROWS_AS(huber_quantile_loss(1.0, 0.5, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(huber_quantile_loss(1.0, -0.1, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(huber_quantile_loss(1.0, 1.1, 1.0), std::invalid_argument);
}

TEST_CASE("loss gradients match central finite differences") {
  RandomStream rng(7);
  const int input = 2, rows = 2, bins = 2;
  Mlp net = Mlp::he_init(input, {4, 3}, rows * (bins + 1), rng);
  // Zero-init biases leave ReLU-dead samples sitting exactly on the kink,
  // where central differences straddle the subgradient; jitter off it.
  for (auto& b : net.biases)
    for (Eigen::Index i = 0; i < b.size(); ++i) b[i] = 0.1 * rng.normal();
  const QuantileGrid grid{0.1, bins};
  const auto levels = grid.levels();
  const double kappa = 0.5;

  const int batch = 16;
  Mat x(input, batch), targets(rows, batch);
  for (int c = 0; c < batch; ++c) {
    for (int r = 0; r < input; ++r) x(r, c) = rng.normal();
    for (int r = 0; r < rows; ++r) targets(r, c) = rng.normal();
  }

  std::vector<Mat> grad_w;
  std::vector<Vec> grad_b;
  quantile_loss_and_grads(net, x, targets, levels, kappa, grad_w, grad_b);

  auto loss_at = [&]() {
    std::vector<Mat> gw;
    std::vector<Vec> gb;
    return quantile_loss_and_grads(net, x, targets, levels, kappa, gw, gb);
  };
  const double step = 1e-4;
  double worst = 0.0;
  for (size_t l = 0; l < net.weights.size(); ++l) {
    for (Eigen::Index i = 0; i < net.weights[l].size(); ++i) {
      double& w = net.weights[l].data()[i];
      const double saved = w;
      w = saved + step;
      const double up = loss_at();
      w = saved - step;
      const double down = loss_at();
      w = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double analytic = grad_w[l].data()[i];
      const double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-6});
      worst = std::max(worst, std::abs(numeric - analytic) / denom);
    }
    for (Eigen::Index i = 0; i < net.biases[l].size(); ++i) {
      double& b = net.biases[l][i];
      const double saved = b;
      b = saved + step;
      const double up = loss_at();
      b = saved - step;
      const double down = loss_at();
      b = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double analytic = grad_b[l][i];
      const double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-6});
      worst = std::max(worst, std::abs(numeric - analytic) / denom);
    }
  }
  CHECK(worst <= 1e-3);
}

TEST_CASE("constant targets collapse every predicted quantile") {
  RandomStream rng(31);
  const int n = 2000;
  Vec theta0(2);
  theta0 << 1.2, -0.7;
  Mat theta(n, 2), x(n, 3);
  for (int i = 0; i < n; ++i) {
    theta.row(i) = theta0.transpose();
    for (int j = 0; j < 3; ++j) x(i, j) = rng.normal();
  }
  const ProjectionSet proj = sample_projections(2, 3, rng);
  const QuantileGrid grid{0.02, 10};
  QuantileNetConfig cfg;
  cfg.hidden = {32, 32};
  cfg.epochs = 60;
  cfg.patience = 10;
  const QuantileNet qnet = train_quantile_net(theta, x, proj, grid, cfg, rng);
  for (int probe = 0; probe < 5; ++probe) {
    Vec xq(3);
    for (int j = 0; j < 3; ++j) xq[j] = rng.normal();
    const Mat table = qnet.predict_quantiles(xq);
    for (int k = 0; k < qnet.num_rows(); ++k) {
      const double target = proj.directions.row(k).dot(theta0);
      for (Eigen::Index h = 0; h < table.cols(); ++h)
        CHECK(std::abs(table(k, h) - target) <= 0.05);
    }
  }
}

TEST_CASE("learned quantiles track the analytic Gaussian curves") {
  const QuantileNet& qnet = synthetic_fit().net;
  const auto levels = qnet.grid.levels();
  const int axis_row = qnet.projections.num_random;  // d = 1 axis comes last
  double worst = 0.0;
  for (double xval : {-1.0, -0.6, -0.2, 0.2, 0.6, 1.0}) {
    Vec x(1);
    x[0] = xval;
    const Mat table = qnet.predict_quantiles(x);
    for (size_t h = 0; h < levels.size(); ++h) {
      const double analytic = 2.0 * xval + normal_quantile(levels[h]);
      worst = std::max(worst,
                       std::abs(table(axis_row, static_cast<Eigen::Index>(h)) - analytic));
    }
  }
  CHECK(worst <= 0.3);  // acceptance gate runs the tight 0.15 version
}

TEST_CASE("training reduces the epoch loss") {
  const TrainStats& stats = synthetic_fit().stats;
  CHECK(stats.epochs_run >= 1);
  CHECK(stats.first_train_loss > 0.0);
  CHECK(stats.final_train_loss <= stats.first_train_loss);
}

TEST_CASE("predicted rows are nondecreasing for arbitrary inputs") {
  const QuantileNet& qnet = synthetic_fit().net;
  RandomStream rng(47);
  for (int i = 0; i < 1000; ++i) {
    Vec x(1);
    x[0] = rng.uniform(-50.0, 50.0);
    const Mat table = qnet.predict_quantiles(x);
    for (Eigen::Index r = 0; r < table.rows(); ++r)
      for (Eigen::Index h = 0; h + 1 < table.cols(); ++h)
        REQUIRE(table(r, h) <= table(r, h + 1));
  }
}

TEST_CASE("full objective ignores the order of training pairs") {
  const QuantileNet& qnet = synthetic_fit().net;
  RandomStream rng(53);
  const int n = 300;
  Mat theta(n, 1), x(n, 1);
  for (int i = 0; i < n; ++i) {
    x(i, 0) = rng.uniform(-1.0, 1.0);
    theta(i, 0) = rng.normal(2.0 * x(i, 0), 1.0);
  }
  const double base = full_objective(qnet, theta, x, 0.05);
  std::vector<int> perm(n);
  for (int i = 0; i < n; ++i) perm[i] = i;
  rng.shuffle(perm);
  Mat theta_p(n, 1), x_p(n, 1);
  for (int i = 0; i < n; ++i) {
    theta_p.row(i) = theta.row(perm[static_cast<size_t>(i)]);
    x_p.row(i) = x.row(perm[static_cast<size_t>(i)]);
  }
  CHECK(full_objective(qnet, theta_p, x_p, 0.05) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("checkpoint round-trip reproduces predictions exactly") {
  const QuantileNet& qnet = synthetic_fit().net;
  const std::string path = "qnet_roundtrip.bin";
  qnet.save(path);
  const QuantileNet back = QuantileNet::load(path);
  std::remove(path.c_str());

  CHECK(back.grid.bins == qnet.grid.bins);
  CHECK(back.grid.delta == qnet.grid.delta);
  CHECK((back.projections.directions.array() == qnet.projections.directions.array()).all());
  CHECK((back.target_mean.array() == qnet.target_mean.array()).all());
  CHECK((back.target_scale.array() == qnet.target_scale.array()).all());
  RandomStream rng(61);
  for (int i = 0; i < 20; ++i) {
    Vec x(1);
    x[0] = rng.normal();
    CHECK((back.predict_quantiles(x).array() == qnet.predict_quantiles(x).array()).all());
  }
  CHECK_THROWS_AS(QuantileNet::load("no_such_checkpoint.bin"), std::runtime_error);
}

TEST_CASE("zero-weight network predicts an all-zero table") {
  RandomStream rng(67);
  QuantileNet qnet;
  qnet.projections = sample_projections(2, 3, rng);
  qnet.grid = QuantileGrid{0.02, 4};
  qnet.net = Mlp::he_init(3, {8}, qnet.num_rows() * (qnet.grid.bins + 1), rng);
  for (auto& w : qnet.net.weights) w.setZero();
  for (auto& b : qnet.net.biases) b.setZero();
  qnet.input_std = Standardizer::identity(3);
  qnet.target_mean = Vec::Zero(qnet.num_rows());
  qnet.target_scale = Vec::Ones(qnet.num_rows());
  for (int i = 0; i < 10; ++i) {
    Vec x(3);
    for (int j = 0; j < 3; ++j) x[j] = rng.normal(0.0, 10.0);
    const Mat table = qnet.predict_quantiles(x);
    CHECK(table.cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("fine-tuning keeps the architecture and halves the budget") {
  RandomStream rng(71);
  const int n = 600;
  Mat theta(n, 1), x(n, 1);
  for (int i = 0; i < n; ++i) {
    x(i, 0) = rng.uniform(-1.0, 1.0);
    theta(i, 0) = rng.normal(x(i, 0), 0.5);
  }
  const QuantileGrid grid{0.02, 5};
  QuantileNetConfig cfg;
  cfg.hidden = {16};
  cfg.epochs = 20;
  cfg.patience = 0;  // run the full budget so epoch counts are exact
  cfg.holdout_fraction = 0.0;
  const ProjectionSet proj = sample_projections(1, 2, rng);
  TrainStats stats;
  const QuantileNet warm = train_quantile_net(theta, x, proj, grid, cfg, rng, &stats);
  CHECK(stats.epochs_run == 20);

  const ProjectionSet fresh = sample_projections(1, 2, rng);
  TrainStats tuned_stats;
  const QuantileNet tuned =
      fine_tune_quantile_net(warm, theta, x, fresh, grid, cfg, rng, &tuned_stats);
  CHECK(tuned_stats.epochs_run == 10);
  CHECK((tuned.projections.directions.array() == fresh.directions.array()).all());

  const ProjectionSet wrong_shape = sample_projections(1, 3, rng);
  CHECK_THROWS_AS(
      fine_tune_quantile_net(warm, theta, x, wrong_shape, grid, cfg, rng),
      std::invalid_argument);
}

TEST_CASE("training input validation") {
  RandomStream rng(73);
  const ProjectionSet proj = sample_projections(2, 2, rng);
  const QuantileGrid grid{0.02, 4};
  QuantileNetConfig cfg;
  cfg.hidden = {8};
  cfg.epochs = 1;
  Mat theta = Mat::Zero(5, 2), x = Mat::Zero(4, 3);
  CHECK_THROWS_AS(train_quantile_net(theta, x, proj, grid, cfg, rng), std::invalid_argument);
  Mat theta1 = Mat::Zero(1, 2), x1 = Mat::Zero(1, 3);
  CHECK_THROWS_AS(train_quantile_net(theta1, x1, proj, grid, cfg, rng), std::invalid_argument);
  Mat theta_bad = Mat::Zero(4, 3);
  CHECK_THROWS_AS(train_quantile_net(theta_bad, x, proj, grid, cfg, rng), std::invalid_argument);

  QuantileNetConfig bad = cfg;
  bad.kappa = 0.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.holdout_fraction = 0.7;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("kernel statistic vanishes at the observation and is symmetric") {
  const QuantileNet& qnet = synthetic_fit().net;
  MswConfig cfg;
  Vec x_star(1), x(1);
  x_star[0] = 0.4;
  CHECK(estimated_msw(qnet, x_star, x_star, cfg) == 0.0);
  RandomStream rng(79);
  for (int i = 0; i < 25; ++i) {
    x[0] = rng.uniform(-1.0, 1.0);
    CHECK(estimated_msw(qnet, x, x_star, cfg) ==
          estimated_msw(qnet, x_star, x, cfg));
  }
}

TEST_CASE("kernel statistic grows with distance from the observation") {
  // posterior mean is affine in x, so the statistic should order by |x - x*|
  const QuantileNet& qnet = synthetic_fit().net;
  MswConfig cfg;
  Vec x_star(1);
  x_star[0] = 0.0;
  double prev = 0.0;
  for (double gap : {0.25, 0.5, 1.0}) {
    Vec hi(1), lo(1);
    hi[0] = gap;
    lo[0] = -gap;
    const double stat =
        0.5 * (estimated_msw(qnet, hi, x_star, cfg) + estimated_msw(qnet, lo, x_star, cfg));
    CHECK(stat > prev);
    prev = stat;
  }
}
