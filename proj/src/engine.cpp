#include "abi/engine.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace abisim {

void AbiConfig::validate() const {
  if (iterations < 1) throw std::invalid_argument("AbiConfig: iterations must be >= 1");
  if (proposals_per_iter < 1)
    throw std::invalid_argument("AbiConfig: proposals_per_iter must be >= 1");
  if (train_pairs_per_iter < 1)
    throw std::invalid_argument("AbiConfig: train_pairs_per_iter must be >= 1");
  if (ars_budget < 1) throw std::invalid_argument("AbiConfig: ars_budget must be >= 1");
  if (!(quantile_fraction > 0.0 && quantile_fraction <= 1.0))
    throw std::invalid_argument("AbiConfig: quantile_fraction must lie in (0, 1]");
  msw.validate();
  net.validate();
  density.validate();
}

ArsResult ars_sample(const std::function<Vec(RandomStream&)>& theta_source,
                     const std::function<SimResult(const Vec&, RandomStream&)>& simulator,
                     const std::function<bool(const Vec&)>& accept, long num_draws,
                     long budget_per_draw, RandomStream& rng) {
  if (num_draws < 1) throw std::invalid_argument("ars_sample: num_draws must be >= 1");
  if (budget_per_draw < 1) throw std::invalid_argument("ars_sample: budget_per_draw must be >= 1");

  const uint64_t batch_key = rng.next_u64();
  std::vector<Vec> thetas;
  std::vector<Vec> datas;
  ArsResult out;
  for (long i = 0; i < num_draws; ++i) {
    RandomStream draw_rng(derive_seed(batch_key, "draw", static_cast<uint64_t>(i)));
    const Vec theta = theta_source(draw_rng);
    bool kept = false;
    for (long attempt = 0; attempt < budget_per_draw; ++attempt) {
      const SimResult sim = simulator(theta, draw_rng);
      ++out.simulator_calls;
      if (sim.valid && accept(sim.data)) {
        thetas.push_back(theta);
        datas.push_back(sim.data);
        kept = true;
        break;
      }
    }
    if (!kept) ++out.dropped;
  }
  if (thetas.empty())
    throw std::runtime_error("ARS retained nothing: relax epsilon or raise R");
  out.theta_rows = Mat(static_cast<Eigen::Index>(thetas.size()), thetas.front().size());
  out.data_rows = Mat(static_cast<Eigen::Index>(datas.size()), datas.front().size());
  for (size_t i = 0; i < thetas.size(); ++i) {
    out.theta_rows.row(static_cast<Eigen::Index>(i)) = thetas[i].transpose();
    out.data_rows.row(static_cast<Eigen::Index>(i)) = datas[i].transpose();
  }
  return out;
}

double adaptive_threshold(const std::vector<double>& statistics, double alpha) {
  if (statistics.empty()) throw std::invalid_argument("adaptive_threshold: empty input");
  if (!(alpha > 0.0 && alpha <= 1.0))
    throw std::invalid_argument("adaptive_threshold: alpha must lie in (0, 1]");
  return empirical_quantile(statistics, alpha);
}

namespace {

struct LoopSettings {
  std::vector<double> schedule;  // empty means adaptive thresholds
  std::function<double(const Vec&)> data_distance;  // null means kernel statistic
};

AbiResult run_loop(const SimulatorBundle& model, const Vec& x_star,
                   const AbiConfig& cfg, uint64_t seed, const LoopSettings& settings) {
  cfg.validate();
  if (x_star.size() != model.data_dim)
    throw std::invalid_argument("run_abi: x_star dimension does not match simulator output");
  if (!settings.schedule.empty()) {
    for (size_t i = 1; i < settings.schedule.size(); ++i)
      if (!(settings.schedule[i] <= settings.schedule[i - 1]))
        throw std::invalid_argument("run_abi_fixed_schedule: thresholds must be non-increasing");
  }
  const int T = settings.schedule.empty() ? cfg.iterations
                                          : static_cast<int>(settings.schedule.size());
  const bool kernel_mode = !settings.data_distance;
  const int d = model.theta_dim;
  const QuantileGrid grid{cfg.msw.delta, cfg.msw.num_bins};

  AbiResult result;
  std::function<Vec(RandomStream&)> proposal = model.prior_sampler;
  std::function<bool(const Vec&)> predicate = [](const Vec&) { return true; };
  double eps_prev = std::numeric_limits<double>::infinity();
  std::optional<QuantileNet> net;

  for (int t = 1; t <= T; ++t) {
    try {
      RandomStream proj_rng(derive_seed(seed, "projections", static_cast<uint64_t>(t)));
      RandomStream train_rng(derive_seed(seed, "train-ars", static_cast<uint64_t>(t)));
      RandomStream net_rng(derive_seed(seed, "net", static_cast<uint64_t>(t)));
      RandomStream prop_rng(derive_seed(seed, "proposal-ars", static_cast<uint64_t>(t)));
      RandomStream gmm_rng(derive_seed(seed, "density", static_cast<uint64_t>(t)));

      IterationReport report;
      report.t = t;
      report.quantile_train_loss = std::numeric_limits<double>::quiet_NaN();

      std::function<double(const Vec&)> statistic;
      if (kernel_mode) {
        const ProjectionSet proj = sample_projections(d, cfg.msw.num_slices, proj_rng);
        const ArsResult train_batch =
            ars_sample(proposal, model.simulator, predicate, cfg.train_pairs_per_iter,
                       cfg.ars_budget, train_rng);
        report.simulator_calls += train_batch.simulator_calls;
        report.accepted_pairs += train_batch.theta_rows.rows();
        report.discarded_budget_exhausted += train_batch.dropped;

        TrainStats stats;
        QuantileNet next =
            net ? fine_tune_quantile_net(*net, train_batch.theta_rows,
                                         train_batch.data_rows, proj, grid, cfg.net,
                                         net_rng, &stats)
                : train_quantile_net(train_batch.theta_rows, train_batch.data_rows,
                                     proj, grid, cfg.net, net_rng, &stats);
        net = std::move(next);
        report.quantile_train_loss = stats.final_train_loss;

        // The net snapshot and target table are fixed for the whole
        // iteration; the predicate built from them must survive into the
        // next iteration's ARS stage, so capture by value.
        const auto qstar = net->predict_quantiles(x_star);
        const MswConfig msw_cfg = cfg.msw;
        statistic = [net_copy = *net, qstar, msw_cfg, d](const Vec& x) {
          return msw_from_quantile_tables(net_copy.predict_quantiles(x), qstar,
                                          msw_cfg, d);
        };
      } else {
        statistic = settings.data_distance;
      }

      // Draw the proposal batch against the current statistic so every
      // accepted value sits at or below eps_prev; thresholding retrained
      // kernel values against a tolerance set on the old kernel's scale can
      // leave nothing eligible.
      const std::function<bool(const Vec&)> accept_now = [&statistic, eps_prev](const Vec& x) {
        return statistic(x) <= eps_prev;
      };
      const ArsResult batch = ars_sample(proposal, model.simulator, accept_now,
                                         cfg.proposals_per_iter, cfg.ars_budget, prop_rng);
      report.simulator_calls += batch.simulator_calls;
      report.accepted_pairs += batch.theta_rows.rows();
      report.discarded_budget_exhausted += batch.dropped;

      std::vector<double> stats_all(static_cast<size_t>(batch.data_rows.rows()));
      for (Eigen::Index i = 0; i < batch.data_rows.rows(); ++i)
        stats_all[static_cast<size_t>(i)] = statistic(batch.data_rows.row(i).transpose());

      std::vector<double> eligible;
      eligible.reserve(stats_all.size());
      for (double s : stats_all)
        if (s <= eps_prev) eligible.push_back(s);

      double eps_t;
      if (settings.schedule.empty()) {
        if (eligible.empty())
          throw std::runtime_error(
              "no kernel statistic fell at or below the previous tolerance");
        eps_t = adaptive_threshold(eligible, cfg.quantile_fraction);
      } else {
        eps_t = settings.schedule[static_cast<size_t>(t - 1)];
      }

      std::vector<Eigen::Index> keep;
      for (Eigen::Index i = 0; i < batch.theta_rows.rows(); ++i)
        if (stats_all[static_cast<size_t>(i)] <= eps_t) keep.push_back(i);
      if (keep.empty())
        throw std::runtime_error("pruning retained nothing: relax epsilon or raise R");

      Mat retained(static_cast<Eigen::Index>(keep.size()), d);
      for (size_t i = 0; i < keep.size(); ++i)
        retained.row(static_cast<Eigen::Index>(i)) =
            model.support.forward(batch.theta_rows.row(keep[i]).transpose()).transpose();

      result.posterior_model = fit_gmm(retained, cfg.density, gmm_rng);

      report.epsilon = eps_t;
      report.retained_count = static_cast<long>(keep.size());
      report.ars_acceptance_rate =
          static_cast<double>(report.accepted_pairs) /
          static_cast<double>(std::max<long>(1, report.simulator_calls));
      result.reports.push_back(report);

      const GaussianMixture mixture = result.posterior_model;
      const IntervalTransform support = model.support;
      proposal = [mixture, support](RandomStream& r) {
        return support.inverse(mixture.sample(r));
      };
      const auto stat_copy = statistic;
      predicate = [stat_copy, eps_t](const Vec& x) { return stat_copy(x) <= eps_t; };
      eps_prev = eps_t;
    } catch (const std::exception& e) {
      std::ostringstream os;
      os << "iteration " << t << ": " << e.what();
      throw std::runtime_error(os.str());
    }
  }
  result.final_net = net;
  return result;
}

}  // namespace

AbiResult run_abi(const SimulatorBundle& model, const Vec& x_star,
                  const AbiConfig& cfg, uint64_t seed) {
  return run_loop(model, x_star, cfg, seed, LoopSettings{});
}

AbiResult run_abi(const SimulatorBundle& model, const Vec& x_star,
                  const std::function<double(const Vec&)>& data_distance,
                  const AbiConfig& cfg, uint64_t seed) {
  LoopSettings settings;
  settings.data_distance = data_distance;
  return run_loop(model, x_star, cfg, seed, settings);
}

AbiResult run_abi_fixed_schedule(const SimulatorBundle& model, const Vec& x_star,
                                 const std::vector<double>& thresholds,
                                 const std::function<double(const Vec&)>& data_distance,
                                 const AbiConfig& cfg, uint64_t seed) {
  if (thresholds.empty())
    throw std::invalid_argument("run_abi_fixed_schedule: empty threshold schedule");
  LoopSettings settings;
  settings.schedule = thresholds;
  settings.data_distance = data_distance;
  return run_loop(model, x_star, cfg, seed, settings);
}

Mat sample_posterior_rows(const AbiResult& result, const SimulatorBundle& model,
                          int n, RandomStream& rng) {
  if (n < 1) throw std::invalid_argument("sample_posterior_rows: n must be >= 1");
  const Mat z = result.posterior_model.sample_rows(n, rng);
  Mat out(z.rows(), z.cols());
  for (Eigen::Index i = 0; i < z.rows(); ++i)
    out.row(i) = model.support.inverse(z.row(i).transpose()).transpose();
  return out;
}

}  // namespace abisim
