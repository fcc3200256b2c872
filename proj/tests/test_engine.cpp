#include <cmath>
#include <vector>

#include "abi/engine.hpp"
#include "abi/models.hpp"
#include "doctest.h"

using namespace abisim;

namespace {

SimulatorBundle toy_shift_model() {
  SimulatorBundle m;
  m.name = "toy_shift";
  m.theta_dim = 2;
  m.data_dim = 2;
  m.param_names = {"a", "b"};
  m.prior_sampler = [](RandomStream& rng) {
    Vec t(2);
    t << rng.normal(), rng.normal();
    return t;
  };
  m.simulator = [](const Vec& theta, RandomStream& rng) {
    SimResult r;
    r.data = Vec(2);
    r.data << theta[0] + 0.1 * rng.normal(), theta[1] + 0.1 * rng.normal();
    return r;
  };
  m.support = IntervalTransform::identity(2);
  m.observed_xstar = Vec::Zero(2);
  return m;
}

AbiConfig small_config() {
  AbiConfig cfg;
  cfg.iterations = 2;
  cfg.proposals_per_iter = 400;
  cfg.train_pairs_per_iter = 400;
  cfg.ars_budget = 5;
  cfg.quantile_fraction = 0.3;
  cfg.net.hidden = {16, 16};
  cfg.net.epochs = 10;
  cfg.net.patience = 0;
  cfg.net.holdout_fraction = 0.0;
  cfg.density.min_components = 1;
  cfg.density.max_components = 2;
  return cfg;
}

}  // namespace

TEST_CASE("accept-everything sampling uses one call per draw") {
  RandomStream rng(3);
  long calls = 0;
  const ArsResult res = ars_sample(
      [](RandomStream& r) {
        Vec t(1);
        t << r.normal();
        return t;
      },
      [&calls](const Vec& theta, RandomStream& r) {
        ++calls;
        SimResult s;
        s.data = Vec(1);
        s.data << theta[0] + r.normal();
        return s;
      },
      [](const Vec&) { return true; }, 100, 5, rng);
  CHECK(res.theta_rows.rows() == 100);
  CHECK(res.data_rows.rows() == 100);
  CHECK(res.simulator_calls == 100);
  CHECK(calls == 100);
  CHECK(res.dropped == 0);
}

TEST_CASE("accept-nothing sampling exhausts the budget then reports it") {
  RandomStream rng(5);
  long calls = 0;
  CHECK_THROWS_WITH_AS(
      ars_sample(
          [](RandomStream&) { return Vec::Zero(1); },
          [&calls](const Vec&, RandomStream& r) {
            ++calls;
            SimResult s;
            s.data = Vec(1);
            s.data << r.normal();
            return s;
          },
          [](const Vec&) { return false; }, 100, 5, rng),
      doctest::Contains("ARS retained nothing"), std::runtime_error);
  CHECK(calls == 500);
}

TEST_CASE("per-draw acceptance follows the capped-retry law") {
  const double eps = 0.01;
  const auto sim = [](const Vec& theta, RandomStream& r) {
    SimResult s;
    s.data = Vec(1);
    s.data << theta[0] + r.normal(0.0, 0.1);
    return s;
  };

  // Marginal per-simulation acceptance probability, brute force.
  RandomStream brute(777);
  const long brute_n = 1000000;
  long hits = 0;
  for (long i = 0; i < brute_n; ++i)
    if (std::abs(brute.normal(0.0, 0.1)) <= eps) ++hits;
  const double q_hat = static_cast<double>(hits) / static_cast<double>(brute_n);

  const long num_draws = 100000;
  const long budget = 10;
  RandomStream rng(11);
  const ArsResult res = ars_sample(
      [](RandomStream&) { return Vec::Zero(1); }, sim,
      [eps](const Vec& x) { return std::abs(x[0]) <= eps; }, num_draws, budget, rng);
  const double rate = static_cast<double>(res.theta_rows.rows()) /
                      static_cast<double>(num_draws);
  const double oracle = 1.0 - std::pow(1.0 - q_hat, static_cast<double>(budget));

  const double se_rate = std::sqrt(oracle * (1.0 - oracle) / num_draws);
  const double dq = budget * std::pow(1.0 - q_hat, static_cast<double>(budget - 1));
  const double se_q = std::sqrt(q_hat * (1.0 - q_hat) / brute_n);
  const double se = std::sqrt(se_rate * se_rate + dq * dq * se_q * se_q);
  CHECK(std::abs(rate - oracle) <= 3.0 * se);
  CHECK(res.dropped == num_draws - res.theta_rows.rows());
  CHECK(res.simulator_calls <= num_draws * budget);
}

TEST_CASE("threshold picks the alpha quantile of the statistics") {
  CHECK(adaptive_threshold({1, 2, 3, 4, 5, 6, 7, 8, 9, 10}, 0.3) == 3.0);
  CHECK(adaptive_threshold({5.0}, 1.0) == 5.0);

  RandomStream rng(13);
  std::vector<double> stats(200);
  for (double& s : stats) s = rng.uniform(0.0, 1.0);
  for (double alpha : {0.1, 0.25, 0.5, 1.0}) {
    const double eps = adaptive_threshold(stats, alpha);
    long at_or_below = 0;
    for (double s : stats)
      if (s <= eps) ++at_or_below;
    CHECK(at_or_below == static_cast<long>(std::ceil(alpha * 200)));
  }

  CHECK_THROWS_WITH_AS(adaptive_threshold({}, 0.5), doctest::Contains("empty"),
                       std::invalid_argument);
  CHECK_THROWS_AS(adaptive_threshold({1.0}, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(adaptive_threshold({1.0}, 1.5), std::invalid_argument);
}

TEST_CASE("single pass with full retention reproduces the prior") {
  const SimulatorBundle model = toy_shift_model();
  AbiConfig cfg;
  cfg.iterations = 1;
  cfg.proposals_per_iter = 10000;
  cfg.train_pairs_per_iter = 10;  // unused in the data-distance mode
  cfg.ars_budget = 1;
  cfg.quantile_fraction = 1.0;
  cfg.density.min_components = 1;
  cfg.density.max_components = 2;
  const Vec x_star = Vec::Zero(2);
  const AbiResult res = run_abi(
      model, x_star, [&x_star](const Vec& x) { return (x - x_star).norm(); }, cfg, 5);

  REQUIRE(res.reports.size() == 1);
  const IterationReport& rep = res.reports.front();
  CHECK(rep.t == 1);
  CHECK(rep.ars_acceptance_rate == 1.0);
  CHECK(rep.accepted_pairs == 10000);
  CHECK(rep.retained_count == 10000);
  CHECK(rep.discarded_budget_exhausted == 0);
  CHECK(rep.simulator_calls == 10000);
  CHECK(std::isnan(rep.quantile_train_loss));
  CHECK_FALSE(res.final_net.has_value());

  RandomStream rng(17);
  const Mat posterior = sample_posterior_rows(res, model, 10000, rng);
  Mat prior(10000, 2);
  for (int i = 0; i < 10000; ++i) prior.row(i) = model.prior_sampler(rng).transpose();
  const ProjectionSet proj = sample_projections(2, 5, rng);
  CHECK(msw_empirical(posterior, prior, MswConfig{}, proj) <= 0.1);
}

TEST_CASE("fixed schedule drives the conjugate model to its posterior") {
  const SimulatorBundle model = make_model("gaussian_gaussian");
  const Vec x_star = model.observed_xstar;
  const std::vector<double> schedule = {2.0,   0.7,   0.3,   0.01, 0.005,
                                        0.003, 0.001, 0.001, 0.001};
  AbiConfig cfg;
  cfg.proposals_per_iter = 4000;
  cfg.train_pairs_per_iter = 10;  // unused in the data-distance mode
  // The retry budget must track the tolerance (R ~ 1/eps) or the budget cap
  // trims the proposal tails and the retained variance collapses.
  cfg.ars_budget = 100000;
  cfg.density.min_components = 1;
  cfg.density.max_components = 2;
  const AbiResult res = run_abi_fixed_schedule(
      model, x_star, schedule, [&x_star](const Vec& x) { return (x - x_star).norm(); },
      cfg, 19);

  REQUIRE(res.reports.size() == schedule.size());
  for (size_t i = 0; i < schedule.size(); ++i) {
    const IterationReport& rep = res.reports[i];
    CHECK(rep.t == static_cast<int>(i) + 1);
    CHECK(rep.epsilon == schedule[i]);
    CHECK(rep.accepted_pairs + rep.discarded_budget_exhausted == 4000);
    CHECK(rep.simulator_calls <= 4000L * 100000L);
    CHECK(rep.retained_count >= 1);
    CHECK(rep.retained_count <= rep.accepted_pairs);
    CHECK(rep.ars_acceptance_rate ==
          doctest::Approx(static_cast<double>(rep.accepted_pairs) /
                          static_cast<double>(rep.simulator_calls))
              .epsilon(1e-12));
    CHECK(std::isnan(rep.quantile_train_loss));
    if (i > 0 && schedule[i] == schedule[i - 1])
      CHECK(rep.retained_count == rep.accepted_pairs);
  }

  const GaussianRef ref = *model.reference_posterior;
  RandomStream rng(23);
  const Mat posterior = sample_posterior_rows(res, model, 4000, rng);
  const double mean = posterior.col(0).mean();
  const double var = (posterior.col(0).array() - mean).square().mean();
  CHECK(std::abs(mean - ref.mean) <= 0.2);
  CHECK(var / ref.variance >= 0.6);
  CHECK(var / ref.variance <= 1.4);
}

TEST_CASE("kernel-mode runs are reproducible and tighten the tolerance") {
  const SimulatorBundle model = make_model("gaussian_gaussian");
  const AbiConfig cfg = small_config();
  const AbiResult a = run_abi(model, model.observed_xstar, cfg, 31);
  const AbiResult b = run_abi(model, model.observed_xstar, cfg, 31);

  CHECK(a.posterior_model.serialize() == b.posterior_model.serialize());
  REQUIRE(a.reports.size() == 2);
  REQUIRE(b.reports.size() == 2);
  for (size_t i = 0; i < 2; ++i) {
    CHECK(a.reports[i].epsilon == b.reports[i].epsilon);
    CHECK(a.reports[i].ars_acceptance_rate == b.reports[i].ars_acceptance_rate);
    CHECK(a.reports[i].retained_count == b.reports[i].retained_count);
    CHECK(a.reports[i].simulator_calls == b.reports[i].simulator_calls);
    CHECK(a.reports[i].accepted_pairs == b.reports[i].accepted_pairs);
    CHECK(a.reports[i].quantile_train_loss == b.reports[i].quantile_train_loss);
    CHECK(std::isfinite(a.reports[i].quantile_train_loss));
    // train-ars and proposal-ars batches both draw 400 parameters
    CHECK(a.reports[i].accepted_pairs + a.reports[i].discarded_budget_exhausted == 800);
  }
  CHECK(a.reports[1].epsilon < a.reports[0].epsilon);

  REQUIRE(a.final_net.has_value());
  REQUIRE(b.final_net.has_value());
  RandomStream rng(37);
  for (int i = 0; i < 5; ++i) {
    Vec x(1);
    x << rng.normal(0.0, 5.0);
    const Mat ta = a.final_net->predict_quantiles(x);
    const Mat tb = b.final_net->predict_quantiles(x);
    CHECK((ta.array() == tb.array()).all());
    CHECK(ta.allFinite());
  }

  const AbiResult c = run_abi(model, model.observed_xstar, cfg, 32);
  CHECK(a.posterior_model.serialize() != c.posterior_model.serialize());
}

TEST_CASE("iteration failures carry the iteration index") {
  const SimulatorBundle model = make_model("gaussian_gaussian");
  const Vec x_star = model.observed_xstar;
  AbiConfig cfg = small_config();
  CHECK_THROWS_WITH_AS(
      run_abi_fixed_schedule(
          model, x_star, {10.0, 1e-12},
          [&x_star](const Vec& x) { return (x - x_star).norm(); }, cfg, 41),
      doctest::Contains("iteration 2"), std::runtime_error);
}

TEST_CASE("loop input validation") {
  const SimulatorBundle model = make_model("gaussian_gaussian");
  const Vec x_star = model.observed_xstar;
  const auto euclid = [&x_star](const Vec& x) { return (x - x_star).norm(); };
  const AbiConfig cfg = small_config();

  CHECK_THROWS_WITH_AS(run_abi_fixed_schedule(model, x_star, {0.5, 0.7}, euclid, cfg, 1),
                       doctest::Contains("non-increasing"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(run_abi_fixed_schedule(model, x_star, {}, euclid, cfg, 1),
                       doctest::Contains("empty threshold schedule"),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(run_abi(model, Vec::Zero(3), euclid, cfg, 1),
                       doctest::Contains("x_star dimension"), std::invalid_argument);

  AbiConfig bad = cfg;
  bad.iterations = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.proposals_per_iter = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.train_pairs_per_iter = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.ars_budget = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.quantile_fraction = 0.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.quantile_fraction = 1.2;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.quantile_fraction = 1.0;
  CHECK_NOTHROW(bad.validate());
}

TEST_CASE("posterior draws come back in the constrained space") {
  AbiResult res;
  res.posterior_model.weights = {1.0};
  res.posterior_model.means.push_back(Vec::Zero(1));
  res.posterior_model.covariances.push_back(Mat::Identity(1, 1));

  SimulatorBundle bounded;
  bounded.theta_dim = 1;
  bounded.support.bounds = {std::make_pair(0.0, 1.0)};

  RandomStream rng(43);
  const Mat rows = sample_posterior_rows(res, bounded, 2000, rng);
  REQUIRE(rows.rows() == 2000);
  CHECK(rows.minCoeff() > 0.0);
  CHECK(rows.maxCoeff() < 1.0);
  CHECK(std::abs(rows.col(0).mean() - 0.5) <= 0.05);

  CHECK_THROWS_AS(sample_posterior_rows(res, bounded, 0, rng), std::invalid_argument);
}
