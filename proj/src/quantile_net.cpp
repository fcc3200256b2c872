#include "abi/quantile_net.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace abisim {

void QuantileNetConfig::validate() const {
  for (int h : hidden)
    if (h < 1) throw std::invalid_argument("QuantileNetConfig: bad hidden width");
  if (!(kappa > 0.0)) throw std::invalid_argument("QuantileNetConfig: kappa must be positive");
  if (epochs < 1) throw std::invalid_argument("QuantileNetConfig: epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("QuantileNetConfig: batch_size must be >= 1");
  if (!(holdout_fraction >= 0.0 && holdout_fraction <= 0.5))
    throw std::invalid_argument("QuantileNetConfig: holdout_fraction must lie in [0, 0.5]");
  if (!(weight_decay >= 0.0))
    throw std::invalid_argument("QuantileNetConfig: weight_decay must be >= 0");
  if (patience < 0) throw std::invalid_argument("QuantileNetConfig: patience must be >= 0");
  if (!(adam.learning_rate > 0.0))
    throw std::invalid_argument("QuantileNetConfig: learning rate must be positive");
}

double huber_quantile_loss(double u, double tau, double kappa) {
  if (!(kappa > 0.0)) throw std::invalid_argument("huber_quantile_loss: kappa must be positive");
  if (!(tau >= 0.0 && tau <= 1.0))
    throw std::invalid_argument("huber_quantile_loss: tau must lie in [0, 1]");
  const double w = std::abs(tau - (u < 0.0 ? 1.0 : 0.0));
  const double au = std::abs(u);
  if (au <= kappa) return w * u * u / (2.0 * kappa);
  return w * (au - 0.5 * kappa);
}

namespace {

// d(rho)/du, continuous everywhere.
inline double huber_quantile_psi(double u, double tau, double kappa) {
  const double w = std::abs(tau - (u < 0.0 ? 1.0 : 0.0));
  if (std::abs(u) <= kappa) return w * u / kappa;
  return w * (u > 0.0 ? 1.0 : -1.0);
}

struct Dataset {
  Mat x_std;        // d_x x n
  Mat targets_std;  // K' x n
};

Mat slice_targets(const Mat& theta_rows, const ProjectionSet& proj) {
  // One row per slice, one column per sample.
  return proj.directions * theta_rows.transpose();
}

double eval_mean_loss(const Mlp& net, const Mat& x_std, const Mat& targets_std,
                      const std::vector<double>& levels, double kappa) {
  const Mat out = net.forward(x_std);
  const auto H1 = static_cast<Eigen::Index>(levels.size());
  const Eigen::Index kprime = targets_std.rows();
  double total = 0.0;
  for (Eigen::Index c = 0; c < out.cols(); ++c) {
    for (Eigen::Index k = 0; k < kprime; ++k) {
      const double y = targets_std(k, c);
      for (Eigen::Index h = 0; h < H1; ++h) {
        const double u = y - out(k * H1 + h, c);
        total += huber_quantile_loss(u, levels[static_cast<size_t>(h)], kappa);
      }
    }
  }
  return total / (static_cast<double>(out.cols()) * static_cast<double>(kprime) *
                  static_cast<double>(H1));
}

}  // namespace

double quantile_loss_and_grads(const Mlp& net, const Mat& x_std,
                               const Mat& targets_std,
                               const std::vector<double>& levels, double kappa,
                               std::vector<Mat>& grad_w, std::vector<Vec>& grad_b) {
  const auto H1 = static_cast<Eigen::Index>(levels.size());
  const Eigen::Index kprime = targets_std.rows();
  const Eigen::Index batch = x_std.cols();
  Mlp::Trace trace;
  const Mat& out = net.forward_trace(x_std, trace);
  const double norm = static_cast<double>(batch) * static_cast<double>(kprime) *
                      static_cast<double>(H1);
  Mat grad_out(out.rows(), out.cols());
  double total = 0.0;
  for (Eigen::Index c = 0; c < batch; ++c) {
    for (Eigen::Index k = 0; k < kprime; ++k) {
      const double y = targets_std(k, c);
      for (Eigen::Index h = 0; h < H1; ++h) {
        const double tau = levels[static_cast<size_t>(h)];
        const double u = y - out(k * H1 + h, c);
        total += huber_quantile_loss(u, tau, kappa);
        grad_out(k * H1 + h, c) = -huber_quantile_psi(u, tau, kappa) / norm;
      }
    }
  }
  net.backward(trace, grad_out, grad_w, grad_b);
  return total / norm;
}

namespace {

QuantileNet train_impl(const Mat& theta_rows, const Mat& x_rows,
                       const ProjectionSet& proj, const QuantileGrid& grid,
                       const QuantileNetConfig& cfg, RandomStream& rng,
                       const Mlp* warm_start, TrainStats* stats) {
  cfg.validate();
  grid.validate();
  if (theta_rows.rows() != x_rows.rows())
    throw std::invalid_argument("train_quantile_net: pair count mismatch");
  if (theta_rows.rows() < 2)
    throw std::invalid_argument("train_quantile_net: need at least two pairs");
  if (theta_rows.cols() != proj.dim)
    throw std::invalid_argument("train_quantile_net: projection dimension mismatch");

  const auto n = theta_rows.rows();
  const int kprime = proj.num_rows();
  const std::vector<double> levels = grid.levels();
  const auto H1 = static_cast<int>(levels.size());
  const int out_dim = kprime * H1;
  const auto d_x = static_cast<int>(x_rows.cols());

  QuantileNet qnet;
  qnet.projections = proj;
  qnet.grid = grid;

  Mat x_cols = x_rows.transpose();
  qnet.input_std = Standardizer::fit(x_cols);
  Mat x_std = qnet.input_std.apply(x_cols);

  Mat targets = slice_targets(theta_rows, proj);  // K' x n
  Standardizer tstd = Standardizer::fit(targets);
  qnet.target_mean = tstd.mean;
  qnet.target_scale = tstd.scale;
  Mat targets_std = tstd.apply(targets);

  if (warm_start) {
    if (warm_start->input_dim() != d_x || warm_start->output_dim() != out_dim)
      throw std::invalid_argument("fine_tune_quantile_net: architecture mismatch");
    qnet.net = *warm_start;
  } else {
    qnet.net = Mlp::he_init(d_x, cfg.hidden, out_dim, rng);
  }

  // Seeded permutation; the tail is the holdout split.
  std::vector<int> order(static_cast<size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) order[static_cast<size_t>(i)] = static_cast<int>(i);
  rng.shuffle(order);
  auto n_hold = static_cast<Eigen::Index>(cfg.holdout_fraction * static_cast<double>(n));
  if (cfg.patience == 0) n_hold = 0;
  const Eigen::Index n_train = n - n_hold;
  if (n_train < 1) throw std::invalid_argument("train_quantile_net: empty training split");

  auto gather = [&](Eigen::Index first, Eigen::Index count, const Mat& src) {
    Mat out(src.rows(), count);
    for (Eigen::Index i = 0; i < count; ++i)
      out.col(i) = src.col(order[static_cast<size_t>(first + i)]);
    return out;
  };
  Mat xt = gather(0, n_train, x_std);
  Mat yt = gather(0, n_train, targets_std);
  Mat xh = gather(n_train, n_hold, x_std);
  Mat yh = gather(n_train, n_hold, targets_std);

  AdamState adam(qnet.net);
  std::vector<Mat> grad_w;
  std::vector<Vec> grad_b;
  std::vector<int> idx(static_cast<size_t>(n_train));
  for (Eigen::Index i = 0; i < n_train; ++i) idx[static_cast<size_t>(i)] = static_cast<int>(i);

  // Polyak tail averaging: constant-lr Adam wanders around the optimum, so the
  // returned weights are a debiased EMA of the trajectory (window ~5 epochs).
  const double steps_per_epoch =
      std::ceil(static_cast<double>(n_train) / static_cast<double>(cfg.batch_size));
  const double ema_decay =
      std::clamp(1.0 - 1.0 / (5.0 * steps_per_epoch), 0.9, 0.9999);
  Mlp ema = qnet.net;
  for (auto& w : ema.weights) w.setZero();
  for (auto& b : ema.biases) b.setZero();
  double ema_weight = 0.0;  // 1 - decay^t
  long ema_steps = 0;
  auto ema_view = [&]() {
    Mlp avg = ema;
    const double inv = 1.0 / ema_weight;
    for (auto& w : avg.weights) w *= inv;
    for (auto& b : avg.biases) b *= inv;
    return avg;
  };

  double best_holdout = std::numeric_limits<double>::infinity();
  int since_best = 0;
  TrainStats local;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(idx);
    double epoch_loss = 0.0;
    Eigen::Index seen = 0;
    for (Eigen::Index start = 0; start < n_train; start += cfg.batch_size) {
      const Eigen::Index b = std::min<Eigen::Index>(cfg.batch_size, n_train - start);
      Mat xb(xt.rows(), b);
      Mat yb(yt.rows(), b);
      for (Eigen::Index i = 0; i < b; ++i) {
        xb.col(i) = xt.col(idx[static_cast<size_t>(start + i)]);
        yb.col(i) = yt.col(idx[static_cast<size_t>(start + i)]);
      }
      const double loss =
          quantile_loss_and_grads(qnet.net, xb, yb, levels, cfg.kappa, grad_w, grad_b);
      if (cfg.weight_decay > 0.0)
        for (size_t l = 0; l < grad_w.size(); ++l)
          grad_w[l] += cfg.weight_decay * qnet.net.weights[l];
      adam.step(qnet.net, grad_w, grad_b, cfg.adam);
      ++ema_steps;
      ema_weight = 1.0 - std::pow(ema_decay, static_cast<double>(ema_steps));
      for (size_t l = 0; l < ema.weights.size(); ++l) {
        ema.weights[l] = ema_decay * ema.weights[l] + (1.0 - ema_decay) * qnet.net.weights[l];
        ema.biases[l] = ema_decay * ema.biases[l] + (1.0 - ema_decay) * qnet.net.biases[l];
      }
      epoch_loss += loss * static_cast<double>(b);
      seen += b;
    }
    epoch_loss /= static_cast<double>(seen);
    if (epoch == 0) local.first_train_loss = epoch_loss;
    local.final_train_loss = epoch_loss;
    local.epochs_run = epoch + 1;

    if (n_hold > 0) {
      // Plateau detector only decides when to stop; the tail-averaged net at
      // stop time is returned (holdout noise makes "best epoch" unreliable).
      const double hold = eval_mean_loss(ema_view(), xh, yh, levels, cfg.kappa);
      if (hold < best_holdout) {
        best_holdout = hold;
        since_best = 0;
      } else if (++since_best >= cfg.patience) {
        break;
      }
    }
  }
  qnet.net = ema_view();
  if (stats) *stats = local;
  return qnet;
}

}  // namespace

QuantileNet train_quantile_net(const Mat& theta_rows, const Mat& x_rows,
                               const ProjectionSet& projections,
                               const QuantileGrid& grid,
                               const QuantileNetConfig& cfg, RandomStream& rng,
                               TrainStats* stats) {
  return train_impl(theta_rows, x_rows, projections, grid, cfg, rng, nullptr, stats);
}

QuantileNet fine_tune_quantile_net(const QuantileNet& warm, const Mat& theta_rows,
                                   const Mat& x_rows, const ProjectionSet& projections,
                                   const QuantileGrid& grid, const QuantileNetConfig& cfg,
                                   RandomStream& rng, TrainStats* stats) {
  if (projections.num_rows() != warm.projections.num_rows() ||
      projections.dim != warm.projections.dim || grid.bins != warm.grid.bins)
    throw std::invalid_argument("fine_tune_quantile_net: projection shape mismatch");
  QuantileNetConfig half = cfg;
  half.epochs = std::max(1, cfg.epochs / 2);
  return train_impl(theta_rows, x_rows, projections, grid, half, rng, &warm.net, stats);
}

Mat QuantileNet::predict_quantiles(const Vec& x) const {
  if (x.size() != net.input_dim())
    throw std::invalid_argument("predict_quantiles: input dimension mismatch");
  const Vec out = net.forward(input_std.apply(x));
  const int H1 = grid.bins + 1;
  const int kprime = num_rows();
  Mat table(kprime, H1);
  std::vector<double> row(static_cast<size_t>(H1));
  for (int k = 0; k < kprime; ++k) {
    for (int h = 0; h < H1; ++h) row[static_cast<size_t>(h)] = out[k * H1 + h];
    std::sort(row.begin(), row.end());
    for (int h = 0; h < H1; ++h)
      table(k, h) = target_mean[k] + target_scale[k] * row[static_cast<size_t>(h)];
  }
  return table;
}

std::vector<Mat> QuantileNet::predict_quantiles(const Mat& x_rows) const {
  if (x_rows.cols() != net.input_dim())
    throw std::invalid_argument("predict_quantiles: input dimension mismatch");
  const Mat out = net.forward(input_std.apply(Mat(x_rows.transpose())));
  const int H1 = grid.bins + 1;
  const int kprime = num_rows();
  std::vector<Mat> tables;
  tables.reserve(static_cast<size_t>(x_rows.rows()));
  std::vector<double> row(static_cast<size_t>(H1));
  for (Eigen::Index c = 0; c < out.cols(); ++c) {
    Mat table(kprime, H1);
    for (int k = 0; k < kprime; ++k) {
      for (int h = 0; h < H1; ++h) row[static_cast<size_t>(h)] = out(k * H1 + h, c);
      std::sort(row.begin(), row.end());
      for (int h = 0; h < H1; ++h)
        table(k, h) = target_mean[k] + target_scale[k] * row[static_cast<size_t>(h)];
    }
    tables.push_back(std::move(table));
  }
  return tables;
}

double full_objective(const QuantileNet& qnet, const Mat& theta_rows,
                      const Mat& x_rows, double kappa) {
  const Mat x_std = qnet.input_std.apply(Mat(x_rows.transpose()));
  Mat targets = qnet.projections.directions * theta_rows.transpose();
  targets = (targets.colwise() - qnet.target_mean).array().colwise() /
            qnet.target_scale.array();
  return eval_mean_loss(qnet.net, x_std, targets, qnet.grid.levels(), kappa);
}

double estimated_msw(const QuantileNet& qnet, const Vec& x, const Vec& x_star,
                     const MswConfig& cfg) {
  return msw_from_quantile_tables(qnet.predict_quantiles(x),
                                  qnet.predict_quantiles(x_star), cfg,
                                  qnet.theta_dim());
}

namespace {

void put_u64(std::ostream& os, uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

uint64_t get_u64(std::istream& is) {
  uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

void put_doubles(std::ostream& os, const double* p, size_t count) {
  os.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(count * sizeof(double)));
}

void get_doubles(std::istream& is, double* p, size_t count) {
  is.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(count * sizeof(double)));
}

void put_mat(std::ostream& os, const Mat& m) {
  put_u64(os, static_cast<uint64_t>(m.rows()));
  put_u64(os, static_cast<uint64_t>(m.cols()));
  // Row-major scan for a layout-independent file format.
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      const double v = m(i, j);
      put_doubles(os, &v, 1);
    }
}

Mat get_mat(std::istream& is) {
  const auto rows = static_cast<Eigen::Index>(get_u64(is));
  const auto cols = static_cast<Eigen::Index>(get_u64(is));
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) {
      double v = 0;
      get_doubles(is, &v, 1);
      m(i, j) = v;
    }
  return m;
}

void put_vec(std::ostream& os, const Vec& v) {
  put_u64(os, static_cast<uint64_t>(v.size()));
  put_doubles(os, v.data(), static_cast<size_t>(v.size()));
}

Vec get_vec(std::istream& is) {
  const auto n = static_cast<Eigen::Index>(get_u64(is));
  Vec v(n);
  get_doubles(is, v.data(), static_cast<size_t>(n));
  return v;
}

constexpr char kMagic[8] = {'A', 'B', 'Q', 'N', 'E', 'T', '0', '1'};

}  // namespace

void QuantileNet::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("QuantileNet::save: cannot open " + path);
  os.write(kMagic, sizeof(kMagic));
  put_u64(os, static_cast<uint64_t>(projections.dim));
  put_u64(os, static_cast<uint64_t>(projections.num_random));
  put_doubles(os, &grid.delta, 1);
  put_u64(os, static_cast<uint64_t>(grid.bins));
  put_mat(os, projections.directions);
  put_vec(os, input_std.mean);
  put_vec(os, input_std.scale);
  put_vec(os, target_mean);
  put_vec(os, target_scale);
  put_u64(os, static_cast<uint64_t>(net.weights.size()));
  for (size_t l = 0; l < net.weights.size(); ++l) {
    put_mat(os, net.weights[l]);
    put_vec(os, net.biases[l]);
  }
  if (!os) throw std::runtime_error("QuantileNet::save: write failed for " + path);
}

QuantileNet QuantileNet::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("QuantileNet::load: cannot open " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || !std::equal(magic, magic + 8, kMagic))
    throw std::runtime_error("QuantileNet::load: bad checkpoint header in " + path);
  QuantileNet q;
  q.projections.dim = static_cast<int>(get_u64(is));
  q.projections.num_random = static_cast<int>(get_u64(is));
  get_doubles(is, &q.grid.delta, 1);
  q.grid.bins = static_cast<int>(get_u64(is));
  q.projections.directions = get_mat(is);
  q.input_std.mean = get_vec(is);
  q.input_std.scale = get_vec(is);
  q.target_mean = get_vec(is);
  q.target_scale = get_vec(is);
  const auto layers = get_u64(is);
  for (uint64_t l = 0; l < layers; ++l) {
    q.net.weights.push_back(get_mat(is));
    q.net.biases.push_back(get_vec(is));
  }
  if (!is) throw std::runtime_error("QuantileNet::load: truncated checkpoint " + path);
  return q;
}

}  // namespace abisim
