#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <vector>

#include "abi/models.hpp"
#include "abi/rng.hpp"
#include "doctest.h"

using namespace abisim;

TEST_CASE("registry lists five models and rejects unknown names") {
  const auto names = model_names();
  REQUIRE(names.size() == 5);
  const std::set<std::string> expected{"gaussian_gaussian", "multimodal_gaussian",
                                       "mg1_queue", "cosine", "lotka_volterra"};
  CHECK(std::set<std::string>(names.begin(), names.end()) == expected);
  for (const auto& name : names) {
    const SimulatorBundle m = make_model(name);
    CHECK(m.name == name);
    CHECK(m.theta_dim >= 1);
    CHECK(m.data_dim >= 1);
    CHECK(static_cast<int>(m.param_names.size()) == m.theta_dim);
    CHECK(m.support.dim() == m.theta_dim);
    CHECK(m.observed_xstar.size() == m.data_dim);
  }
  CHECK_THROWS_WITH_AS(make_model("bogus"), doctest::Contains("available models:"),
                       std::invalid_argument);
}

TEST_CASE("simulators emit fixed-length finite data on prior draws") {
  for (const auto& name : model_names()) {
    const SimulatorBundle m = make_model(name);
    RandomStream rng(7);
    for (int i = 0; i < 100; ++i) {
      const Vec theta = m.prior_sampler(rng);
      REQUIRE(theta.size() == m.theta_dim);
      const SimResult r = m.simulator(theta, rng);
      REQUIRE(r.data.size() == m.data_dim);
      CHECK(r.data.allFinite());
    }
  }
}

TEST_CASE("support transforms round-trip prior draws") {
  for (const auto& name : model_names()) {
    const SimulatorBundle m = make_model(name);
    RandomStream rng(11);
    for (int i = 0; i < 200; ++i) {
      const Vec theta = m.prior_sampler(rng);
      const Vec z = m.support.forward(theta);
      CHECK(z.allFinite());
      const Vec back = m.support.inverse(z);
      for (int j = 0; j < m.theta_dim; ++j) CHECK(std::abs(back[j] - theta[j]) <= 1e-10);
    }
  }
}

TEST_CASE("prior samplers honor their declared supports") {
  struct Range {
    std::string model;
    std::vector<double> lo;
    std::vector<double> hi;
  };
  const std::vector<Range> ranges{
      {"multimodal_gaussian", {-3, -3, -3, -3, -3}, {3, 3, 3, 3, 3}},
      {"mg1_queue", {0, 0, 0}, {10, 10, 1.0 / 3.0}},
      {"lotka_volterra", {0, 0, 0, 0}, {1, 0.1, 2, 0.1}},
  };
  for (const auto& range : ranges) {
    const SimulatorBundle m = make_model(range.model);
    RandomStream rng(13);
    bool ok = true;
    for (int i = 0; i < 100000 && ok; ++i) {
      const Vec theta = m.prior_sampler(rng);
      for (int j = 0; j < m.theta_dim; ++j)
        ok = ok && theta[j] >= range.lo[static_cast<size_t>(j)] &&
             theta[j] < range.hi[static_cast<size_t>(j)];
    }
    CHECK(ok);
  }
  // cosine mixes bounded and Gaussian coordinates
  const SimulatorBundle cos_m = make_model("cosine");
  RandomStream rng(13);
  bool ok = true;
  for (int i = 0; i < 100000 && ok; ++i) {
    const Vec theta = cos_m.prior_sampler(rng);
    ok = ok && theta[0] >= 0.0 && theta[0] < 0.1 && theta[1] >= 0.0 &&
         theta[1] < 2.0 * M_PI && std::isfinite(theta[2]) && std::isfinite(theta[3]);
  }
  CHECK(ok);
}

TEST_CASE("conjugate reference posterior") {
  const SimulatorBundle m = make_model("gaussian_gaussian");
  REQUIRE(m.reference_posterior.has_value());
  CHECK(m.observed_xstar[0] == 6.24);
  CHECK(m.xstar_seed == 0);  // fixed observation, not regenerated
  CHECK(m.reference_posterior->mean == doctest::Approx(6.24 * 20.0 / 21.0).epsilon(1e-14));
  CHECK(m.reference_posterior->variance == doctest::Approx(20.0 / 21.0).epsilon(1e-14));
  CHECK(m.reference_posterior->mean == doctest::Approx(5.9429).epsilon(1e-4));
  CHECK(m.reference_posterior->variance == doctest::Approx(0.9524).epsilon(1e-4));
  CHECK(m.scalar_iid_data);
}

TEST_CASE("pinned observations are reproducible") {
  for (const auto& name : model_names()) {
    const SimulatorBundle a = make_model(name);
    const SimulatorBundle b = make_model(name);
    CHECK((a.observed_xstar.array() == b.observed_xstar.array()).all());
    if (name != "gaussian_gaussian") {
      CHECK(a.xstar_seed != 0);
      REQUIRE(a.truth.has_value());
    }
  }
}

TEST_CASE("multimodal law is invariant to scale-sign flips") {
  const SimulatorBundle m = make_model("multimodal_gaussian");
  Vec theta(5), flipped(5);
  theta << 0.8, -0.4, 1.2, 0.9, 0.3;
  flipped << 0.8, -0.4, -1.2, -0.9, 0.3;
  RandomStream r1(17), r2(17);
  const SimResult a = m.simulator(theta, r1);
  const SimResult b = m.simulator(flipped, r2);
  CHECK((a.data.array() == b.data.array()).all());  // s1, s2 depend on the squares only
}

TEST_CASE("multimodal sample moments match the stated covariance") {
  const SimulatorBundle m = make_model("multimodal_gaussian");
  Vec theta(5);
  theta << 0.0, 0.0, 1.0, 1.0, 0.55;
  const double rho = std::tanh(0.55);
  RandomStream rng(19);
  const int runs = 25000;
  double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  long n = 0;
  for (int i = 0; i < runs; ++i) {
    const SimResult r = m.simulator(theta, rng);
    for (int pair = 0; pair < 4; ++pair) {
      const double x = r.data[2 * pair];
      const double y = r.data[2 * pair + 1];
      sx += x;
      sy += y;
      sxx += x * x;
      syy += y * y;
      sxy += x * y;
      ++n;
    }
  }
  const double mx = sx / n, my = sy / n;
  CHECK(std::abs(mx) <= 0.02);
  CHECK(std::abs(my) <= 0.02);
  CHECK(std::abs(sxx / n - mx * mx - 1.0) <= 0.02);
  CHECK(std::abs(syy / n - my * my - 1.0) <= 0.02);
  CHECK(std::abs(sxy / n - mx * my - rho) <= 0.02);
}

TEST_CASE("interdeparture times sit above the service floor") {
  const SimulatorBundle m = make_model("mg1_queue");
  RandomStream rng(23);
  for (int i = 0; i < 200; ++i) {
    const Vec theta = m.prior_sampler(rng);
    const SimResult r = m.simulator(theta, rng);
    for (int t = 0; t < 50; ++t) CHECK(r.data[t] >= theta[0]);
  }
}

TEST_CASE("queue output mean grows as the arrival rate shrinks") {
  const SimulatorBundle m = make_model("mg1_queue");
  RandomStream rng(29);
  auto mean_y = [&](double rate) {
    Vec theta(3);
    theta << 1.0, 1.0, rate;
    double acc = 0.0;
    const int runs = 10000;
    for (int i = 0; i < runs; ++i) acc += m.simulator(theta, rng).data.mean();
    return acc / runs;
  };
  const double slow = mean_y(0.05);
  const double mid = mean_y(0.1);
  const double fast = mean_y(0.2);
  CHECK(slow > mid);
  CHECK(mid > fast);
}

TEST_CASE("saturated queue departs at the mean service time") {
  const SimulatorBundle m = make_model("mg1_queue");
  Vec theta(3);
  theta << 8.0, 0.4, 1.0 / 3.0;  // service in [8, 8.4], arrivals every ~3
  RandomStream rng(31);
  double acc = 0.0;
  const int runs = 2000;
  for (int i = 0; i < runs; ++i) acc += m.simulator(theta, rng).data.mean();
  const double mean = acc / runs;
  CHECK(mean == doctest::Approx(8.2).epsilon(0.05));
}

TEST_CASE("cosine collapses to its deterministic part without noise") {
  const SimulatorBundle m = make_model("cosine");
  Vec theta(4);
  theta << 0.03, 1.1, -20.0, std::log(2.0);
  RandomStream rng(37);
  const SimResult r = m.simulator(theta, rng);
  for (int t = 1; t <= 100; ++t) {
    const double expected = 2.0 * std::cos(2.0 * M_PI * 0.03 * t + 1.1);
    CHECK(std::abs(r.data[t - 1] - expected) <= 1e-6);
  }
}

TEST_CASE("cosine residual variance tracks sigma") {
  const SimulatorBundle m = make_model("cosine");
  Vec theta(4);
  theta << 0.02, 0.4, 0.0, std::log(1.5);  // sigma = 1
  RandomStream rng(41);
  double acc = 0.0;
  const int runs = 5;
  for (int run = 0; run < runs; ++run) {
    const SimResult r = m.simulator(theta, rng);
    double ss = 0.0;
    for (int t = 1; t <= 100; ++t) {
      const double det = 1.5 * std::cos(2.0 * M_PI * 0.02 * t + 0.4);
      ss += (r.data[t - 1] - det) * (r.data[t - 1] - det);
    }
    acc += ss / 100.0;
  }
  CHECK(acc / runs == doctest::Approx(1.0).epsilon(0.2));
}

TEST_CASE("cosine phase is periodic mod two pi") {
  const SimulatorBundle m = make_model("cosine");
  Vec theta(4), wrapped(4);
  theta << 0.05, 0.7, 0.0, 0.0;
  wrapped << 0.05, 0.7 + 2.0 * M_PI, 0.0, 0.0;
  RandomStream r1(43), r2(43);
  const SimResult a = m.simulator(theta, r1);
  const SimResult b = m.simulator(wrapped, r2);
  CHECK((a.data - b.data).cwiseAbs().maxCoeff() <= 1e-9);
}

TEST_CASE("pure prey birth matches the Yule-process mean") {
  const SimulatorBundle m = make_model("lotka_volterra");
  Vec theta(4);
  theta << 0.5, 0.0, 0.0, 0.0;
  RandomStream rng(47);
  double acc = 0.0;
  const int runs = 3000;
  for (int i = 0; i < runs; ++i) {
    const SimResult r = m.simulator(theta, rng);
    REQUIRE(r.valid);
    acc += r.data[2 * 10];  // prey count on the t = 1.0 grid slot
  }
  CHECK(acc / runs == doctest::Approx(50.0 * std::exp(0.5)).epsilon(0.05));
}

TEST_CASE("extinct populations stay absorbed on the grid") {
  const SimulatorBundle m = make_model("lotka_volterra");
  Vec theta(4);
  theta << 0.0, 0.1, 0.8, 0.0;  // prey culled by predation, predators then starve
  bool saw_absorbed = false;
  for (uint64_t seed = 0; seed < 10; ++seed) {
    RandomStream rng(seed);
    const SimResult r = m.simulator(theta, rng);
    REQUIRE(r.valid);
    for (int g = 0; g <= 100; ++g) {
      if (r.data[2 * g] == 0.0 && r.data[2 * g + 1] == 0.0) {
        saw_absorbed = true;
        for (int later = g; later <= 100; ++later) {
          REQUIRE(r.data[2 * later] == 0.0);
          REQUIRE(r.data[2 * later + 1] == 0.0);
        }
        break;
      }
    }
  }
  CHECK(saw_absorbed);
}

TEST_CASE("populations stay nonnegative integers on the grid") {
  const SimulatorBundle m = make_model("lotka_volterra");
  RandomStream rng(53);
  for (int i = 0; i < 30; ++i) {
    const Vec theta = m.prior_sampler(rng);
    const SimResult r = m.simulator(theta, rng);
    if (!r.valid) continue;
    for (int j = 0; j < 202; ++j) {
      CHECK(r.data[j] >= 0.0);
      CHECK(r.data[j] == std::floor(r.data[j]));
    }
  }
}

TEST_CASE("explosive dynamics trip the validity guard") {
  const SimulatorBundle m = make_model("lotka_volterra");
  Vec theta(4);
  theta << 1.0, 0.0, 0.0, 0.1;  // unchecked prey growth feeds predators
  RandomStream rng(59);
  const SimResult r = m.simulator(theta, rng);
  CHECK_FALSE(r.valid);
}

TEST_CASE("curse demo rates and slope") {
  RandomStream rng(61);
  const auto huge = curse_of_dim_demo({1}, 100.0, 2000, rng);
  REQUIRE(huge.size() == 1);
  CHECK(huge[0].rate == 1.0);

  const auto rows = curse_of_dim_demo({1, 2, 4, 8}, 0.5, 20000, rng);
  REQUIRE(rows.size() == 4);
  for (size_t i = 1; i < rows.size(); ++i) CHECK(rows[i].rate <= rows[i - 1].rate + 0.01);
  CHECK(curse_log_slope(rows) < 0.0);

  CHECK_THROWS_AS(curse_of_dim_demo({}, 0.5, 100, rng), std::invalid_argument);
  CHECK_THROWS_AS(curse_of_dim_demo({1}, 0.0, 100, rng), std::invalid_argument);
  CHECK_THROWS_AS(curse_of_dim_demo({1}, 0.5, 0, rng), std::invalid_argument);
  CHECK_THROWS_AS(curse_of_dim_demo({0}, 0.5, 100, rng), std::invalid_argument);
  CHECK_THROWS_AS(curse_log_slope({CurseRow{1, 0.5}, CurseRow{2, 0.0}}), std::runtime_error);
}

TEST_CASE("x* files round-trip") {
  const SimulatorBundle m = make_model("mg1_queue");
  const std::string path = "xstar_roundtrip.csv";
  write_xstar_csv(path, m);
  const Vec back = read_xstar_csv(path);
  std::remove(path.c_str());
  REQUIRE(back.size() == m.observed_xstar.size());
  CHECK((back.array() == m.observed_xstar.array()).all());
}
