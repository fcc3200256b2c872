#include "abi/msw.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace abisim {

void MswConfig::validate() const {
  if (!(p >= 1.0)) throw std::invalid_argument("MswConfig: p must be >= 1");
  if (!(delta >= 0.0 && delta < 0.5))
    throw std::invalid_argument("MswConfig: delta must lie in [0, 1/2)");
  if (!(lambda >= 0.0 && lambda <= 1.0))
    throw std::invalid_argument("MswConfig: lambda must lie in [0, 1]");
  if (num_slices < 1) throw std::invalid_argument("MswConfig: num_slices must be >= 1");
  if (num_bins < 1) throw std::invalid_argument("MswConfig: num_bins must be >= 1");
}

void QuantileGrid::validate() const {
  if (!(delta >= 0.0 && delta < 0.5))
    throw std::invalid_argument("QuantileGrid: delta must lie in [0, 1/2)");
  if (bins < 1) throw std::invalid_argument("QuantileGrid: bins must be >= 1");
}

std::vector<double> QuantileGrid::levels() const {
  validate();
  std::vector<double> out(static_cast<size_t>(bins) + 1);
  const double width = (1.0 - 2.0 * delta) / bins;
  for (int h = 0; h <= bins; ++h) out[static_cast<size_t>(h)] = delta + h * width;
  out.back() = 1.0 - delta;
  return out;
}

ProjectionSet sample_projections(int dim, int num_random, RandomStream& rng) {
  if (dim < 1) throw std::invalid_argument("sample_projections: dim must be >= 1");
  if (num_random < 1) throw std::invalid_argument("sample_projections: num_random must be >= 1");
  ProjectionSet out;
  out.dim = dim;
  out.num_random = num_random;
  out.directions = Mat::Zero(num_random + dim, dim);
  for (int k = 0; k < num_random; ++k) {
    Vec g(dim);
    double norm = 0.0;
    do {
      for (int j = 0; j < dim; ++j) g[j] = rng.normal();
      norm = g.norm();
    } while (!(norm > 0.0));
    out.directions.row(k) = g.transpose() / norm;
  }
  for (int j = 0; j < dim; ++j) out.directions(num_random + j, j) = 1.0;
  return out;
}

double empirical_quantile(const std::vector<double>& values, double tau) {
  if (values.empty()) throw std::invalid_argument("empirical_quantile: empty sample");
  if (!(tau >= 0.0 && tau <= 1.0))
    throw std::invalid_argument("empirical_quantile: tau must lie in [0, 1]");
  std::vector<double> sorted(values);
  std::sort(sorted.begin(), sorted.end());
  const auto m = static_cast<double>(sorted.size());
  auto rank = static_cast<long>(std::ceil(tau * m));
  rank = std::max<long>(1, std::min<long>(rank, static_cast<long>(sorted.size())));
  return sorted[static_cast<size_t>(rank - 1)];
}

namespace {

// Exact integral of |Fa^{-1} - Fb^{-1}|^p over [delta, 1-delta] for sorted
// empirical samples. Both inverse cdfs are step functions taking the value
// a[i-1] on ((i-1)/m, i/m]; merging the breakpoints i/m and j/n gives
// subintervals on which the integrand is constant, and evaluating at each
// subinterval midpoint sidesteps boundary ties.
double trimmed_power_integral(const std::vector<double>& a, const std::vector<double>& b,
                              double p, double delta) {
  const auto m = static_cast<double>(a.size());
  const auto n = static_cast<double>(b.size());
  const double lo = delta;
  const double hi = 1.0 - delta;

  std::vector<double> cuts;
  cuts.reserve(a.size() + b.size() + 2);
  cuts.push_back(lo);
  for (size_t i = 1; i < a.size(); ++i) {
    const double t = static_cast<double>(i) / m;
    if (t > lo && t < hi) cuts.push_back(t);
  }
  for (size_t j = 1; j < b.size(); ++j) {
    const double t = static_cast<double>(j) / n;
    if (t > lo && t < hi) cuts.push_back(t);
  }
  cuts.push_back(hi);
  std::sort(cuts.begin(), cuts.end());

  double integral = 0.0;
  for (size_t s = 0; s + 1 < cuts.size(); ++s) {
    const double width = cuts[s + 1] - cuts[s];
    if (!(width > 0.0)) continue;
    const double mid = 0.5 * (cuts[s] + cuts[s + 1]);
    const auto ia = std::min(a.size() - 1, static_cast<size_t>(mid * m));
    const auto ib = std::min(b.size() - 1, static_cast<size_t>(mid * n));
    const double diff = std::abs(a[ia] - b[ib]);
    integral += width * (p == 1.0 ? diff : std::pow(diff, p));
  }
  return integral;
}

}  // namespace

double trimmed_w1d(const std::vector<double>& a, const std::vector<double>& b,
                   double p, double delta) {
  if (a.empty() || b.empty()) throw std::invalid_argument("trimmed_w1d: empty sample");
  if (!(p >= 1.0)) throw std::invalid_argument("trimmed_w1d: p must be >= 1");
  if (!(delta >= 0.0 && delta < 0.5))
    throw std::invalid_argument("trimmed_w1d: delta must lie in [0, 1/2)");
  std::vector<double> sa(a), sb(b);
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  const double integral = trimmed_power_integral(sa, sb, p, delta) / (1.0 - 2.0 * delta);
  return p == 1.0 ? integral : std::pow(integral, 1.0 / p);
}

double i_h_trapezoid(const std::vector<double>& q1, const std::vector<double>& q2,
                     double p, double delta) {
  if (q1.size() != q2.size()) throw std::invalid_argument("i_h_trapezoid: table size mismatch");
  if (q1.size() < 2) throw std::invalid_argument("i_h_trapezoid: need at least two grid values");
  if (!(p >= 1.0)) throw std::invalid_argument("i_h_trapezoid: p must be >= 1");
  if (!(delta >= 0.0 && delta < 0.5))
    throw std::invalid_argument("i_h_trapezoid: delta must lie in [0, 1/2)");
  const size_t H = q1.size() - 1;
  const double width = (1.0 - 2.0 * delta) / static_cast<double>(H);
  auto term = [&](size_t h) {
    const double diff = std::abs(q1[h] - q2[h]);
    return p == 1.0 ? diff : std::pow(diff, p);
  };
  double sum = term(0) + term(H);
  for (size_t h = 1; h < H; ++h) sum += 2.0 * term(h);
  return width / (2.0 * (1.0 - 2.0 * delta)) * sum;
}

namespace {

std::vector<double> project_rows(const Mat& samples, const Eigen::RowVectorXd& direction) {
  std::vector<double> out(static_cast<size_t>(samples.rows()));
  Eigen::Map<Eigen::VectorXd>(out.data(), samples.rows()) =
      samples * direction.transpose();
  return out;
}

}  // namespace

double msw_empirical(const Mat& a, const Mat& b, const MswConfig& cfg,
                     const ProjectionSet& proj) {
  cfg.validate();
  if (a.rows() < 1 || b.rows() < 1) throw std::invalid_argument("msw_empirical: empty sample");
  if (a.cols() != b.cols()) throw std::invalid_argument("msw_empirical: dimension mismatch");
  if (proj.dim != a.cols()) throw std::invalid_argument("msw_empirical: projection dimension mismatch");
  if (proj.num_random < 1) throw std::invalid_argument("msw_empirical: projection set has no slices");
  const int d = proj.dim;
  const int K = proj.num_random;

  double marginal = 0.0;
  for (int j = 0; j < d; ++j) {
    const auto av = project_rows(a, proj.directions.row(K + j));
    const auto bv = project_rows(b, proj.directions.row(K + j));
    marginal += trimmed_w1d(av, bv, cfg.p, cfg.delta);
  }
  marginal /= d;

  double slice_pow = 0.0;
  for (int k = 0; k < K; ++k) {
    const auto av = project_rows(a, proj.directions.row(k));
    const auto bv = project_rows(b, proj.directions.row(k));
    const double w = trimmed_w1d(av, bv, cfg.p, cfg.delta);
    slice_pow += cfg.p == 1.0 ? w : std::pow(w, cfg.p);
  }
  slice_pow /= K;
  const double sliced = cfg.p == 1.0 ? slice_pow : std::pow(slice_pow, 1.0 / cfg.p);

  return cfg.lambda * marginal + (1.0 - cfg.lambda) * sliced;
}

double msw_from_quantile_tables(const Mat& qa, const Mat& qb,
                                const MswConfig& cfg, int dim) {
  cfg.validate();
  if (qa.rows() != qb.rows() || qa.cols() != qb.cols())
    throw std::invalid_argument("msw_from_quantile_tables: table shape mismatch");
  const int K = static_cast<int>(qa.rows()) - dim;
  if (dim < 1 || K < 1)
    throw std::invalid_argument("msw_from_quantile_tables: rows must cover K slices plus d axes");
  const auto cols = static_cast<size_t>(qa.cols());

  std::vector<double> r1(cols), r2(cols);
  auto row_integral = [&](int r) {
    for (size_t h = 0; h < cols; ++h) {
      r1[h] = qa(r, static_cast<Eigen::Index>(h));
      r2[h] = qb(r, static_cast<Eigen::Index>(h));
    }
    return i_h_trapezoid(r1, r2, cfg.p, cfg.delta);
  };

  double marginal = 0.0;
  for (int j = 0; j < dim; ++j) {
    const double integral = row_integral(K + j);
    marginal += cfg.p == 1.0 ? integral : std::pow(integral, 1.0 / cfg.p);
  }
  marginal /= dim;

  double slice_pow = 0.0;
  for (int k = 0; k < K; ++k) slice_pow += row_integral(k);
  slice_pow /= K;
  const double sliced = cfg.p == 1.0 ? slice_pow : std::pow(slice_pow, 1.0 / cfg.p);

  return cfg.lambda * marginal + (1.0 - cfg.lambda) * sliced;
}

}  // namespace abisim
