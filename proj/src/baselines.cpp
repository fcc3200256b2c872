#include "abi/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace abisim {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Shortest-augmenting-path solve of the square assignment problem.
// Returns the minimum total cost; O(n^3).
double assignment_cost(const Mat& cost) {
  const int n = static_cast<int>(cost.rows());
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1, 0.0);
  std::vector<int> match(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    match[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), kInf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const int i0 = match[j0];
      int j1 = 0;
      double delta = kInf;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const int j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  double total = 0.0;
  for (int j = 1; j <= n; ++j) total += cost(match[j] - 1, j - 1);
  return total;
}

Mat subsample_rows(const Mat& m, int target, std::uint64_t seed) {
  if (m.rows() <= target) return m;
  RandomStream rng(seed);
  std::vector<std::size_t> idx(static_cast<std::size_t>(m.rows()));
  std::iota(idx.begin(), idx.end(), 0);
  rng.shuffle(idx);
  Mat out(target, m.cols());
  std::vector<std::size_t> pick(idx.begin(), idx.begin() + target);
  std::sort(pick.begin(), pick.end());
  for (int i = 0; i < target; ++i) out.row(i) = m.row(static_cast<Eigen::Index>(pick[static_cast<std::size_t>(i)]));
  return out;
}

Vec column_means(const Mat& m) { return m.colwise().mean(); }

Mat correlation_matrix(const Mat& m) {
  const Eigen::Index n = m.rows();
  const Eigen::Index d = m.cols();
  const Vec mu = column_means(m);
  Mat centered = m.rowwise() - mu.transpose();
  Mat cov = (centered.transpose() * centered) / static_cast<double>(n);
  Vec sd = cov.diagonal().cwiseMax(0.0).cwiseSqrt();
  Mat corr = Mat::Zero(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) {
      const double denom = sd[i] * sd[j];
      corr(i, j) = denom > 0.0 ? cov(i, j) / denom : (i == j ? 1.0 : 0.0);
    }
  }
  return corr;
}

}  // namespace

double exact_w1(const Mat& a, const Mat& b) {
  if (a.rows() != b.rows())
    throw std::invalid_argument("exact_w1: sample sizes differ");
  if (a.cols() != b.cols())
    throw std::invalid_argument("exact_w1: dimensions differ");
  if (a.rows() == 0) throw std::invalid_argument("exact_w1: empty sample");
  if (a.rows() > 2000)
    throw std::invalid_argument("exact_w1: sample exceeds the 2000-point cap");
  if (a.cols() > 16)
    throw std::invalid_argument("exact_w1: dimension exceeds 16");
  const Eigen::Index n = a.rows();
  Mat cost(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    cost.row(i) = (b.rowwise() - a.row(i)).rowwise().norm().transpose();
  return assignment_cost(cost) / static_cast<double>(n);
}

double median_heuristic_bandwidth(const Mat& a, const Mat& b) {
  if (a.cols() != b.cols())
    throw std::invalid_argument("mmd: dimensions differ");
  Mat pooled(a.rows() + b.rows(), a.cols());
  pooled << a, b;
  constexpr int kCap = 2048;
  pooled = subsample_rows(pooled, kCap, derive_seed(0x6d6d64, "mmd-bandwidth", 0));
  const Eigen::Index n = pooled.rows();
  if (n < 2) throw std::invalid_argument("mmd: need at least two pooled points");
  std::vector<double> dists;
  dists.reserve(static_cast<std::size_t>(n) * (static_cast<std::size_t>(n) - 1) / 2);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j)
      dists.push_back((pooled.row(i) - pooled.row(j)).norm());
  std::nth_element(dists.begin(), dists.begin() + dists.size() / 2, dists.end());
  double med = dists[dists.size() / 2];
  if (dists.size() % 2 == 0) {
    auto lower = std::max_element(dists.begin(), dists.begin() + dists.size() / 2);
    med = 0.5 * (med + *lower);
  }
  return std::max(med, 1e-12);
}

double mmd_squared_gaussian(const Mat& a, const Mat& b, std::optional<double> bandwidth) {
  if (a.cols() != b.cols())
    throw std::invalid_argument("mmd: dimensions differ");
  const Eigen::Index n = a.rows();
  const Eigen::Index m = b.rows();
  if (n < 2 || m < 2)
    throw std::invalid_argument("mmd: unbiased estimate needs at least two points per sample");
  const double h = bandwidth ? *bandwidth : median_heuristic_bandwidth(a, b);
  if (!(h > 0.0)) throw std::invalid_argument("mmd: bandwidth must be positive");
  const double gamma = 1.0 / (2.0 * h * h);
  auto kernel_offdiag_sum = [gamma](const Mat& u) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < u.rows(); ++i)
      for (Eigen::Index j = i + 1; j < u.rows(); ++j)
        s += std::exp(-gamma * (u.row(i) - u.row(j)).squaredNorm());
    return 2.0 * s;
  };
  double cross = 0.0;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < m; ++j)
      cross += std::exp(-gamma * (a.row(i) - b.row(j)).squaredNorm());
  const double nn = static_cast<double>(n);
  const double mm = static_cast<double>(m);
  return kernel_offdiag_sum(a) / (nn * (nn - 1.0)) +
         kernel_offdiag_sum(b) / (mm * (mm - 1.0)) - 2.0 * cross / (nn * mm);
}

double mmd_gaussian(const Mat& a, const Mat& b, std::optional<double> bandwidth) {
  return std::sqrt(std::max(mmd_squared_gaussian(a, b, bandwidth), 0.0));
}

PriorPredictive draw_prior_predictive(const SimulatorBundle& model, long budget,
                                      RandomStream& rng) {
  if (budget < 1) throw std::invalid_argument("rejection: budget must be positive");
  PriorPredictive out;
  out.theta_rows.resize(budget, model.theta_dim);
  out.data_rows.resize(budget, model.data_dim);
  out.valid.assign(static_cast<std::size_t>(budget), 1);
  for (long i = 0; i < budget; ++i) {
    const Vec theta = model.prior_sampler(rng);
    const SimResult sim = model.simulator(theta, rng);
    out.theta_rows.row(i) = theta.transpose();
    out.data_rows.row(i) = sim.data.transpose();
    out.valid[static_cast<std::size_t>(i)] = sim.valid ? 1 : 0;
    ++out.simulator_calls;
  }
  return out;
}

RejectionResult select_best(const PriorPredictive& batch,
                            const std::function<double(const Vec&)>& distance,
                            double keep_fraction) {
  if (!(keep_fraction > 0.0) || keep_fraction > 1.0)
    throw std::invalid_argument("rejection: keep fraction must lie in (0, 1]");
  const long budget = batch.theta_rows.rows();
  std::vector<double> dist(static_cast<std::size_t>(budget), kInf);
  for (long i = 0; i < budget; ++i) {
    if (!batch.valid[static_cast<std::size_t>(i)]) continue;
    dist[static_cast<std::size_t>(i)] = distance(batch.data_rows.row(i).transpose());
  }
  std::vector<long> order(static_cast<std::size_t>(budget));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](long i, long j) {
    return dist[static_cast<std::size_t>(i)] < dist[static_cast<std::size_t>(j)];
  });
  long keep = std::max<long>(1, std::lround(keep_fraction * static_cast<double>(budget)));
  keep = std::min(keep, budget);
  RejectionResult out;
  out.simulator_calls = batch.simulator_calls;
  out.retained_theta.resize(keep, batch.theta_rows.cols());
  out.distances.resize(static_cast<std::size_t>(keep));
  for (long k = 0; k < keep; ++k) {
    out.retained_theta.row(k) = batch.theta_rows.row(order[static_cast<std::size_t>(k)]);
    out.distances[static_cast<std::size_t>(k)] = dist[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])];
  }
  return out;
}

RejectionResult rejection_abc(const SimulatorBundle& model, const Vec& x_star,
                              long budget, double keep_fraction, RandomStream& rng) {
  const PriorPredictive batch = draw_prior_predictive(model, budget, rng);
  auto distance = [&x_star](const Vec& x) { return (x - x_star).norm(); };
  return select_best(batch, distance, keep_fraction);
}

RejectionResult wasserstein_abc(const SimulatorBundle& model, const Vec& x_star,
                                long budget, double keep_fraction, RandomStream& rng) {
  const PriorPredictive batch = draw_prior_predictive(model, budget, rng);
  std::function<double(const Vec&)> distance;
  if (model.scalar_iid_data) {
    std::vector<double> ref(x_star.data(), x_star.data() + x_star.size());
    std::sort(ref.begin(), ref.end());
    distance = [ref](const Vec& x) {
      std::vector<double> cur(x.data(), x.data() + x.size());
      std::sort(cur.begin(), cur.end());
      double acc = 0.0;
      for (std::size_t i = 0; i < cur.size(); ++i) {
        const double diff = cur[i] - ref[i];
        acc += diff * diff;
      }
      return std::sqrt(acc / static_cast<double>(cur.size()));
    };
  } else {
    distance = [&x_star](const Vec& x) { return (x - x_star).norm(); };
  }
  return select_best(batch, distance, keep_fraction);
}

Vec RegressionNet::predict(const Vec& x) const {
  const Vec raw = net.forward(input_std.apply(x));
  return (raw.array() * target_scale.array() + target_mean.array()).matrix();
}

Mat RegressionNet::predict_rows(const Mat& x_rows) const {
  Mat cols = net.forward(input_std.apply(Mat(x_rows.transpose())));
  cols.array().colwise() *= target_scale.array();
  cols.colwise() += target_mean;
  return cols.transpose();
}

namespace {

// Mean squared-error loss over a column batch plus input gradient.
double squared_loss_and_grad(const Mat& pred, const Mat& target, Mat& grad_out) {
  const double norm = static_cast<double>(pred.rows()) * static_cast<double>(pred.cols());
  Mat diff = pred - target;
  grad_out = diff / norm;
  return 0.5 * diff.array().square().sum() / norm;
}

}  // namespace

RegressionNet train_regression_net(const Mat& x_rows, const Mat& y_rows,
                                   const QuantileNetConfig& cfg, RandomStream& rng) {
  cfg.validate();
  if (x_rows.rows() != y_rows.rows())
    throw std::invalid_argument("regression net: input/target row counts differ");
  if (x_rows.rows() < 2)
    throw std::invalid_argument("regression net: need at least two training pairs");
  const Eigen::Index n = x_rows.rows();
  const Eigen::Index in_dim = x_rows.cols();
  const Eigen::Index out_dim = y_rows.cols();

  RegressionNet model;
  const Mat x_cols_raw = x_rows.transpose();
  const Mat y_cols_raw = y_rows.transpose();
  model.input_std = Standardizer::fit(x_cols_raw);
  Standardizer target_std = Standardizer::fit(y_cols_raw);
  model.target_mean = target_std.mean;
  model.target_scale = target_std.scale;
  model.net = Mlp::he_init(static_cast<int>(in_dim), cfg.hidden, static_cast<int>(out_dim), rng);

  Mat x_cols = model.input_std.apply(x_cols_raw);
  Mat y_cols = target_std.apply(y_cols_raw);

  std::vector<std::size_t> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(perm);
  Eigen::Index holdout = 0;
  if (cfg.patience > 0)
    holdout = std::min<Eigen::Index>(n / 2, std::max<Eigen::Index>(1, static_cast<Eigen::Index>(
        std::llround(cfg.holdout_fraction * static_cast<double>(n)))));
  const Eigen::Index train_n = n - holdout;
  if (train_n < 1) throw std::invalid_argument("regression net: holdout leaves no training data");

  Mat xt(in_dim, train_n), yt(out_dim, train_n), xh(in_dim, holdout), yh(out_dim, holdout);
  for (Eigen::Index i = 0; i < train_n; ++i) {
    xt.col(i) = x_cols.col(static_cast<Eigen::Index>(perm[static_cast<std::size_t>(i)]));
    yt.col(i) = y_cols.col(static_cast<Eigen::Index>(perm[static_cast<std::size_t>(i)]));
  }
  for (Eigen::Index i = 0; i < holdout; ++i) {
    xh.col(i) = x_cols.col(static_cast<Eigen::Index>(perm[static_cast<std::size_t>(train_n + i)]));
    yh.col(i) = y_cols.col(static_cast<Eigen::Index>(perm[static_cast<std::size_t>(train_n + i)]));
  }

  AdamState adam(model.net);
  Mlp best = model.net;
  double best_holdout = kInf;
  int since_best = 0;
  std::vector<std::size_t> idx(static_cast<std::size_t>(train_n));
  std::iota(idx.begin(), idx.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(idx);
    for (Eigen::Index start = 0; start < train_n; start += cfg.batch_size) {
      const Eigen::Index bsz = std::min<Eigen::Index>(cfg.batch_size, train_n - start);
      Mat xb(in_dim, bsz), yb(out_dim, bsz);
      for (Eigen::Index i = 0; i < bsz; ++i) {
        xb.col(i) = xt.col(static_cast<Eigen::Index>(idx[static_cast<std::size_t>(start + i)]));
        yb.col(i) = yt.col(static_cast<Eigen::Index>(idx[static_cast<std::size_t>(start + i)]));
      }
      Mlp::Trace trace;
      Mat pred = model.net.forward_trace(xb, trace);
      Mat grad_out;
      squared_loss_and_grad(pred, yb, grad_out);
      std::vector<Mat> gw;
      std::vector<Vec> gb;
      model.net.backward(trace, grad_out, gw, gb);
      adam.step(model.net, gw, gb, cfg.adam);
    }
    if (holdout > 0) {
      Mat pred = model.net.forward(xh);
      Mat unused;
      const double hl = squared_loss_and_grad(pred, yh, unused);
      if (hl < best_holdout) {
        best_holdout = hl;
        best = model.net;
        since_best = 0;
      } else if (++since_best >= cfg.patience) {
        break;
      }
    }
  }
  if (holdout > 0 && best_holdout < kInf) model.net = best;
  return model;
}

RejectionResult abc_ss(const SimulatorBundle& model, const Vec& x_star, long budget,
                       double keep_fraction, const QuantileNetConfig& net_cfg,
                       RandomStream& rng) {
  const PriorPredictive batch = draw_prior_predictive(model, budget, rng);
  std::vector<long> ok;
  for (long i = 0; i < budget; ++i)
    if (batch.valid[static_cast<std::size_t>(i)]) ok.push_back(i);
  if (ok.size() < 2)
    throw std::runtime_error("abc_ss: not enough valid simulations to train summaries");
  Mat x_train(static_cast<Eigen::Index>(ok.size()), model.data_dim);
  Mat y_train(static_cast<Eigen::Index>(ok.size()), model.theta_dim);
  for (std::size_t i = 0; i < ok.size(); ++i) {
    x_train.row(static_cast<Eigen::Index>(i)) = batch.data_rows.row(ok[i]);
    y_train.row(static_cast<Eigen::Index>(i)) = batch.theta_rows.row(ok[i]);
  }
  const RegressionNet summary = train_regression_net(x_train, y_train, net_cfg, rng);
  const Vec s_star = summary.predict(x_star);
  auto distance = [&summary, &s_star](const Vec& x) {
    return (summary.predict(x) - s_star).norm();
  };
  return select_best(batch, distance, keep_fraction);
}

std::string EvalReport::to_json() const {
  auto num = [](double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  std::string s = "{\"mmd\": " + num(mmd) + ", \"w1\": " + num(w1) + ", \"mean_bias\": [";
  for (std::size_t i = 0; i < mean_bias.size(); ++i) {
    if (i > 0) s += ", ";
    s += num(mean_bias[i]);
  }
  s += "], \"corr_bias\": " + num(corr_bias) + "}";
  return s;
}

EvalReport evaluate(const Mat& posterior_draws, const Mat& reference_draws, int w1_cap) {
  if (posterior_draws.cols() != reference_draws.cols())
    throw std::invalid_argument("evaluate: dimensions differ");
  if (posterior_draws.rows() < 2 || reference_draws.rows() < 2)
    throw std::invalid_argument("evaluate: need at least two draws per sample");
  EvalReport rep;
  rep.mmd = mmd_gaussian(posterior_draws, reference_draws);

  const int m = static_cast<int>(std::min<Eigen::Index>(
      {posterior_draws.rows(), reference_draws.rows(), static_cast<Eigen::Index>(w1_cap)}));
  Mat a = subsample_rows(posterior_draws, m, derive_seed(0x773131, "w1-subsample", 0));
  Mat b = subsample_rows(reference_draws, m, derive_seed(0x773131, "w1-subsample", 1));
  rep.w1 = exact_w1(a, b);

  const Vec mu_a = column_means(posterior_draws);
  const Vec mu_b = column_means(reference_draws);
  rep.mean_bias.resize(static_cast<std::size_t>(posterior_draws.cols()));
  for (Eigen::Index j = 0; j < posterior_draws.cols(); ++j)
    rep.mean_bias[static_cast<std::size_t>(j)] = std::abs(mu_a[j] - mu_b[j]);

  const Mat ca = correlation_matrix(posterior_draws);
  const Mat cb = correlation_matrix(reference_draws);
  double acc = 0.0;
  for (Eigen::Index i = 0; i < ca.rows(); ++i)
    for (Eigen::Index j = 0; j < ca.cols(); ++j)
      if (i != j) acc += std::abs(ca(i, j) - cb(i, j));
  rep.corr_bias = acc;
  return rep;
}

}  // namespace abisim
