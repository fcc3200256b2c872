#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>

#include "abi/baselines.hpp"
#include "abi/engine.hpp"
#include "abi/models.hpp"
#include "abi/msw.hpp"

namespace py = pybind11;

namespace {

abisim::MswConfig make_msw_config(double p, double delta, double lambda, int num_slices,
                               int num_bins) {
  abisim::MswConfig cfg;
  cfg.p = p;
  cfg.delta = delta;
  cfg.lambda = lambda;
  cfg.num_slices = num_slices;
  cfg.num_bins = num_bins;
  cfg.validate();
  return cfg;
}

py::dict report_to_dict(const abisim::IterationReport& r) {
  py::dict d;
  d["t"] = r.t;
  d["epsilon"] = r.epsilon;
  d["ars_acceptance_rate"] = r.ars_acceptance_rate;
  d["retained_count"] = r.retained_count;
  d["discarded_budget_exhausted"] = r.discarded_budget_exhausted;
  d["quantile_train_loss"] = r.quantile_train_loss;
  d["simulator_calls"] = r.simulator_calls;
  d["accepted_pairs"] = r.accepted_pairs;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Likelihood-free inference core: trimmed sliced-Wasserstein metrics, "
            "adaptive posterior matching, and ABC baselines";

  m.def(
      "msw_distance",
      [](const abisim::Mat& a, const abisim::Mat& b, double p, double delta, double lambda,
         int num_slices, int num_bins, std::uint64_t seed) {
        const auto cfg = make_msw_config(p, delta, lambda, num_slices, num_bins);
        abisim::RandomStream rng(seed);
        const auto proj = abisim::sample_projections(static_cast<int>(a.cols()),
                                                  cfg.num_slices, rng);
        return abisim::msw_empirical(a, b, cfg, proj);
      },
      py::arg("a"), py::arg("b"), py::arg("p") = 1.0, py::arg("delta") = 0.02,
      py::arg("lambda_") = 0.5, py::arg("num_slices") = 5, py::arg("num_bins") = 10,
      py::arg("seed") = 0,
      "Empirical trimmed MSW distance between two row-major sample sets");

  m.def(
      "trimmed_w1d",
      [](const std::vector<double>& a, const std::vector<double>& b, double p,
         double delta) { return abisim::trimmed_w1d(a, b, p, delta); },
      py::arg("a"), py::arg("b"), py::arg("p") = 1.0, py::arg("delta") = 0.02,
      "Trimmed one-dimensional p-Wasserstein distance between empirical samples");

  m.def("empirical_quantile", &abisim::empirical_quantile, py::arg("values"), py::arg("tau"),
        "Left-continuous empirical quantile");

  m.def("exact_w1", &abisim::exact_w1, py::arg("a"), py::arg("b"),
        "Exact empirical 1-Wasserstein distance via assignment (n <= 2000)");

  m.def(
      "mmd_gaussian",
      [](const abisim::Mat& a, const abisim::Mat& b, std::optional<double> bandwidth) {
        return abisim::mmd_gaussian(a, b, bandwidth);
      },
      py::arg("a"), py::arg("b"), py::arg("bandwidth") = std::nullopt,
      "Gaussian-kernel MMD (unbiased estimator, median-heuristic bandwidth)");

  m.def("list_models", &abisim::model_names, "Names of the registered benchmark models");

  m.def(
      "observed_xstar",
      [](const std::string& name) { return abisim::make_model(name).observed_xstar; },
      py::arg("model"), "The pinned observed dataset x* of a benchmark model");

  m.def(
      "simulate",
      [](const std::string& name, const abisim::Vec& theta, std::uint64_t seed) {
        const auto model = abisim::make_model(name);
        abisim::RandomStream rng(seed);
        const auto sim = model.simulator(theta, rng);
        return py::make_tuple(sim.data, sim.valid);
      },
      py::arg("model"), py::arg("theta"), py::arg("seed") = 0,
      "One forward simulation; returns (data, valid)");

  m.def(
      "prior_sample",
      [](const std::string& name, int n, std::uint64_t seed) {
        const auto model = abisim::make_model(name);
        abisim::RandomStream rng(seed);
        abisim::Mat out(n, model.theta_dim);
        for (int i = 0; i < n; ++i) out.row(i) = model.prior_sampler(rng).transpose();
        return out;
      },
      py::arg("model"), py::arg("n"), py::arg("seed") = 0,
      "Draw n parameters from a model's prior");

  m.def(
      "run_abi",
      [](const std::string& name, std::uint64_t seed, int iterations,
         int proposals_per_iter, int train_pairs_per_iter, int ars_budget,
         double quantile_fraction, int epochs, int posterior_draws) {
        const auto model = abisim::make_model(name);
        abisim::AbiConfig cfg;
        cfg.iterations = iterations;
        cfg.proposals_per_iter = proposals_per_iter;
        cfg.train_pairs_per_iter = train_pairs_per_iter;
        cfg.ars_budget = ars_budget;
        cfg.quantile_fraction = quantile_fraction;
        cfg.net.epochs = epochs;
        const auto result = abisim::run_abi(model, model.observed_xstar, cfg, seed);
        abisim::RandomStream rng(abisim::derive_seed(seed, "posterior-draws", 0));
        const abisim::Mat samples = abisim::sample_posterior_rows(result, model, posterior_draws, rng);
        py::list reports;
        for (const auto& r : result.reports) reports.append(report_to_dict(r));
        py::dict out;
        out["samples"] = samples;
        out["reports"] = reports;
        return out;
      },
      py::arg("model"), py::arg("seed") = 1, py::arg("iterations") = 3,
      py::arg("proposals_per_iter") = 2000, py::arg("train_pairs_per_iter") = 2000,
      py::arg("ars_budget") = 10, py::arg("quantile_fraction") = 0.1,
      py::arg("epochs") = 50, py::arg("posterior_draws") = 5000,
      "Adaptive posterior matching on a named benchmark model");

  m.def(
      "rejection_abc",
      [](const std::string& name, long budget, double keep_fraction, std::uint64_t seed) {
        const auto model = abisim::make_model(name);
        abisim::RandomStream rng(abisim::derive_seed(seed, "baseline", 0));
        return abisim::rejection_abc(model, model.observed_xstar, budget, keep_fraction, rng)
            .retained_theta;
      },
      py::arg("model"), py::arg("budget") = 10000, py::arg("keep_fraction") = 0.01,
      py::arg("seed") = 1, "Plain rejection ABC; returns the retained parameters");

  m.def(
      "wasserstein_abc",
      [](const std::string& name, long budget, double keep_fraction, std::uint64_t seed) {
        const auto model = abisim::make_model(name);
        abisim::RandomStream rng(abisim::derive_seed(seed, "baseline", 0));
        return abisim::wasserstein_abc(model, model.observed_xstar, budget, keep_fraction, rng)
            .retained_theta;
      },
      py::arg("model"), py::arg("budget") = 10000, py::arg("keep_fraction") = 0.01,
      py::arg("seed") = 1, "Wasserstein-distance rejection ABC");

  m.def(
      "evaluate",
      [](const abisim::Mat& a, const abisim::Mat& b) {
        const auto rep = abisim::evaluate(a, b);
        py::dict d;
        d["mmd"] = rep.mmd;
        d["w1"] = rep.w1;
        d["mean_bias"] = rep.mean_bias;
        d["corr_bias"] = rep.corr_bias;
        return d;
      },
      py::arg("posterior_draws"), py::arg("reference_draws"),
      "Posterior-vs-reference evaluation metrics");
}
