#include "abi/gmm.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace abisim {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

void GmmConfigCheck(const GmmConfig& cfg) { cfg.validate(); }

struct ComponentCache {
  Eigen::LLT<Mat> llt;
  double log_det = 0.0;
};

ComponentCache factor(const Mat& cov) {
  ComponentCache c;
  c.llt.compute(cov);
  if (c.llt.info() != Eigen::Success)
    throw std::runtime_error("GaussianMixture: covariance factorization failed");
  const Mat& L = c.llt.matrixLLT();
  c.log_det = 0.0;
  for (Eigen::Index i = 0; i < L.rows(); ++i) c.log_det += 2.0 * std::log(L(i, i));
  return c;
}

double log_normal_pdf(const Vec& x, const Vec& mean, const ComponentCache& cache) {
  const Vec diff = x - mean;
  const Vec solved = cache.llt.matrixL().solve(diff);
  return -0.5 * (static_cast<double>(x.size()) * kLog2Pi + cache.log_det +
                 solved.squaredNorm());
}

double logsumexp(const std::vector<double>& v) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : v) mx = std::max(mx, x);
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s);
}

// k-means++ seeding followed by a few Lloyd iterations.
std::vector<int> kmeans_assign(const Mat& draws, int k, int iters, RandomStream& rng) {
  const Eigen::Index n = draws.rows();
  std::vector<Vec> centers;
  centers.reserve(static_cast<size_t>(k));
  centers.push_back(draws.row(static_cast<Eigen::Index>(rng.next_u64() % static_cast<uint64_t>(n))).transpose());
  std::vector<double> dist2(static_cast<size_t>(n), 0.0);
  while (static_cast<int>(centers.size()) < k) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& c : centers)
        best = std::min(best, (draws.row(i).transpose() - c).squaredNorm());
      dist2[static_cast<size_t>(i)] = best;
      total += best;
    }
    Eigen::Index pick = 0;
    if (total > 0.0) {
      double u = rng.uniform() * total;
      double acc = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        acc += dist2[static_cast<size_t>(i)];
        if (u < acc) {
          pick = i;
          break;
        }
        pick = i;
      }
    } else {
      pick = static_cast<Eigen::Index>(rng.next_u64() % static_cast<uint64_t>(n));
    }
    centers.push_back(draws.row(pick).transpose());
  }

  std::vector<int> assign(static_cast<size_t>(n), 0);
  for (int it = 0; it < iters; ++it) {
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      int arg = 0;
      for (int c = 0; c < k; ++c) {
        const double d = (draws.row(i).transpose() - centers[static_cast<size_t>(c)]).squaredNorm();
        if (d < best) {
          best = d;
          arg = c;
        }
      }
      if (assign[static_cast<size_t>(i)] != arg) changed = true;
      assign[static_cast<size_t>(i)] = arg;
    }
    for (int c = 0; c < k; ++c) {
      Vec sum = Vec::Zero(draws.cols());
      long count = 0;
      for (Eigen::Index i = 0; i < n; ++i)
        if (assign[static_cast<size_t>(i)] == c) {
          sum += draws.row(i).transpose();
          ++count;
        }
      if (count > 0) centers[static_cast<size_t>(c)] = sum / static_cast<double>(count);
    }
    if (!changed) break;
  }
  return assign;
}

double median_marginal_variance(const Mat& draws) {
  const Vec mean = draws.colwise().mean();
  std::vector<double> vars(static_cast<size_t>(draws.cols()));
  for (Eigen::Index j = 0; j < draws.cols(); ++j) {
    const double c = (draws.col(j).array() - mean[j]).square().sum() /
                     static_cast<double>(draws.rows());
    vars[static_cast<size_t>(j)] = c;
  }
  std::sort(vars.begin(), vars.end());
  const size_t m = vars.size();
  return m % 2 == 1 ? vars[m / 2] : 0.5 * (vars[m / 2 - 1] + vars[m / 2]);
}

GaussianMixture em_run(const Mat& draws, int k, const GmmConfig& cfg, double ridge,
                       RandomStream& rng, EmTrace* trace, double* out_loglik) {
  const Eigen::Index n = draws.rows();
  const Eigen::Index d = draws.cols();

  const std::vector<int> assign = kmeans_assign(draws, k, cfg.kmeans_iters, rng);
  GaussianMixture g;
  g.weights.assign(static_cast<size_t>(k), 0.0);
  g.means.assign(static_cast<size_t>(k), Vec::Zero(d));
  g.covariances.assign(static_cast<size_t>(k), Mat::Zero(d, d));
  for (int c = 0; c < k; ++c) {
    long count = 0;
    Vec sum = Vec::Zero(d);
    for (Eigen::Index i = 0; i < n; ++i)
      if (assign[static_cast<size_t>(i)] == c) {
        sum += draws.row(i).transpose();
        ++count;
      }
    if (count == 0) {
      // Empty cluster: reseed on a random draw with a diffuse covariance.
      g.weights[static_cast<size_t>(c)] = 1.0 / static_cast<double>(n);
      g.means[static_cast<size_t>(c)] =
          draws.row(static_cast<Eigen::Index>(rng.next_u64() % static_cast<uint64_t>(n))).transpose();
      g.covariances[static_cast<size_t>(c)] = Mat::Identity(d, d);
      continue;
    }
    g.weights[static_cast<size_t>(c)] = static_cast<double>(count) / static_cast<double>(n);
    g.means[static_cast<size_t>(c)] = sum / static_cast<double>(count);
    Mat cov = Mat::Zero(d, d);
    for (Eigen::Index i = 0; i < n; ++i)
      if (assign[static_cast<size_t>(i)] == c) {
        const Vec diff = draws.row(i).transpose() - g.means[static_cast<size_t>(c)];
        cov += diff * diff.transpose();
      }
    g.covariances[static_cast<size_t>(c)] = cov / static_cast<double>(count);
  }
  for (int c = 0; c < k; ++c)
    g.covariances[static_cast<size_t>(c)] += ridge * Mat::Identity(d, d);

  Mat log_resp(n, k);
  double prev_ll = -std::numeric_limits<double>::infinity();
  double ll = prev_ll;
  if (trace) trace->mean_log_likelihood.clear();

  for (int it = 0; it < cfg.em_max_iters; ++it) {
    // E step.
    std::vector<ComponentCache> caches;
    caches.reserve(static_cast<size_t>(k));
    for (int c = 0; c < k; ++c) caches.push_back(factor(g.covariances[static_cast<size_t>(c)]));
    double total = 0.0;
    std::vector<double> terms(static_cast<size_t>(k));
    for (Eigen::Index i = 0; i < n; ++i) {
      for (int c = 0; c < k; ++c)
        terms[static_cast<size_t>(c)] = std::log(g.weights[static_cast<size_t>(c)]) +
                                        log_normal_pdf(draws.row(i).transpose(),
                                                       g.means[static_cast<size_t>(c)],
                                                       caches[static_cast<size_t>(c)]);
      const double lse = logsumexp(terms);
      total += lse;
      for (int c = 0; c < k; ++c) log_resp(i, c) = terms[static_cast<size_t>(c)] - lse;
    }
    ll = total / static_cast<double>(n);
    if (!std::isfinite(ll)) throw std::runtime_error("GaussianMixture: EM diverged");
    if (trace) trace->mean_log_likelihood.push_back(ll);

    // M step.
    for (int c = 0; c < k; ++c) {
      double nk = 0.0;
      Vec mean = Vec::Zero(d);
      for (Eigen::Index i = 0; i < n; ++i) {
        const double r = std::exp(log_resp(i, c));
        nk += r;
        mean += r * draws.row(i).transpose();
      }
      nk = std::max(nk, 1e-300);
      mean /= nk;
      Mat cov = Mat::Zero(d, d);
      for (Eigen::Index i = 0; i < n; ++i) {
        const double r = std::exp(log_resp(i, c));
        const Vec diff = draws.row(i).transpose() - mean;
        cov += r * diff * diff.transpose();
      }
      cov /= nk;
      g.weights[static_cast<size_t>(c)] = nk / static_cast<double>(n);
      g.means[static_cast<size_t>(c)] = mean;
      g.covariances[static_cast<size_t>(c)] = cov + ridge * Mat::Identity(d, d);
    }

    if (it > 0 && std::abs(ll - prev_ll) <= cfg.em_rel_tol * std::max(1.0, std::abs(prev_ll)))
      break;
    prev_ll = ll;
  }
  if (out_loglik) *out_loglik = ll * static_cast<double>(n);
  return g;
}

}  // namespace

void GmmConfig::validate() const {
  if (min_components < 1) throw std::invalid_argument("GmmConfig: min_components must be >= 1");
  if (max_components < min_components)
    throw std::invalid_argument("GmmConfig: max_components must be >= min_components");
  if (em_max_iters < 1) throw std::invalid_argument("GmmConfig: em_max_iters must be >= 1");
  if (kmeans_iters < 0) throw std::invalid_argument("GmmConfig: kmeans_iters must be >= 0");
  if (!(em_rel_tol >= 0.0)) throw std::invalid_argument("GmmConfig: em_rel_tol must be >= 0");
  if (!(cov_regularization > 0.0))
    throw std::invalid_argument("GmmConfig: cov_regularization must be positive");
}

GaussianMixture fit_gmm_fixed(const Mat& draws, int components, const GmmConfig& cfg,
                              RandomStream& rng, EmTrace* trace) {
  GmmConfigCheck(cfg);
  if (draws.rows() < 2 * draws.cols())
    throw std::invalid_argument("fit_gmm: insufficient retained draws");
  const double med_var = median_marginal_variance(draws);
  double ridge = cfg.cov_regularization * std::max(med_var, 1e-12);
  for (int attempt = 0;; ++attempt) {
    try {
      return em_run(draws, components, cfg, ridge, rng, trace, nullptr);
    } catch (const std::runtime_error&) {
      if (attempt >= 3) throw;
      ridge *= 2.0;
    }
  }
}

GaussianMixture fit_gmm(const Mat& draws, const GmmConfig& cfg, RandomStream& rng) {
  GmmConfigCheck(cfg);
  if (draws.rows() < 2 * draws.cols())
    throw std::invalid_argument("fit_gmm: insufficient retained draws");
  const Eigen::Index n = draws.rows();
  const Eigen::Index d = draws.cols();
  const double med_var = median_marginal_variance(draws);
  const double base_ridge = cfg.cov_regularization * std::max(med_var, 1e-12);

  GaussianMixture best;
  double best_bic = std::numeric_limits<double>::infinity();
  for (int k = cfg.min_components; k <= cfg.max_components; ++k) {
    // Components must leave enough samples to estimate their moments.
    if (static_cast<Eigen::Index>(k) * (d + 1) > n) break;
    double ridge = base_ridge;
    GaussianMixture g;
    double loglik = 0.0;
    bool ok = false;
    for (int attempt = 0; attempt < 4 && !ok; ++attempt) {
      try {
        g = em_run(draws, k, cfg, ridge, rng, nullptr, &loglik);
        ok = true;
      } catch (const std::runtime_error&) {
        ridge *= 2.0;
      }
    }
    if (!ok) continue;
    const double params = static_cast<double>(k - 1) +
                          static_cast<double>(k) * static_cast<double>(d) +
                          static_cast<double>(k) * static_cast<double>(d) *
                              static_cast<double>(d + 1) / 2.0;
    const double bic = -2.0 * loglik + params * std::log(static_cast<double>(n));
    if (bic < best_bic) {
      best_bic = bic;
      best = g;
    }
  }
  if (best.components() == 0) throw std::runtime_error("fit_gmm: no EM run succeeded");
  return best;
}

Vec GaussianMixture::sample(RandomStream& rng) const {
  if (components() == 0) throw std::runtime_error("GaussianMixture: empty model");
  const int c = rng.categorical(weights);
  const ComponentCache cache = factor(covariances[static_cast<size_t>(c)]);
  Vec z(dim());
  for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = rng.normal();
  return means[static_cast<size_t>(c)] + cache.llt.matrixL() * z;
}

Mat GaussianMixture::sample_rows(int n, RandomStream& rng) const {
  if (components() == 0) throw std::runtime_error("GaussianMixture: empty model");
  std::vector<ComponentCache> caches;
  caches.reserve(static_cast<size_t>(components()));
  for (const auto& cov : covariances) caches.push_back(factor(cov));
  Mat out(n, dim());
  Vec z(dim());
  for (int i = 0; i < n; ++i) {
    const int c = rng.categorical(weights);
    for (Eigen::Index j = 0; j < z.size(); ++j) z[j] = rng.normal();
    out.row(i) = (means[static_cast<size_t>(c)] +
                  caches[static_cast<size_t>(c)].llt.matrixL() * z)
                     .transpose();
  }
  return out;
}

double GaussianMixture::log_density(const Vec& x) const {
  if (components() == 0) throw std::runtime_error("GaussianMixture: empty model");
  if (x.size() != dim()) throw std::invalid_argument("GaussianMixture: dimension mismatch");
  std::vector<double> terms(static_cast<size_t>(components()));
  for (int c = 0; c < components(); ++c) {
    const ComponentCache cache = factor(covariances[static_cast<size_t>(c)]);
    terms[static_cast<size_t>(c)] =
        std::log(weights[static_cast<size_t>(c)]) +
        log_normal_pdf(x, means[static_cast<size_t>(c)], cache);
  }
  return logsumexp(terms);
}

namespace {

void put_double(std::ostringstream& os, double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  os << buf;
}

}  // namespace

std::string GaussianMixture::serialize() const {
  std::ostringstream os;
  os << "gmm " << components() << " " << dim() << "\n";
  for (int c = 0; c < components(); ++c) {
    os << "weight ";
    put_double(os, weights[static_cast<size_t>(c)]);
    os << "\nmean";
    for (Eigen::Index j = 0; j < dim(); ++j) {
      os << " ";
      put_double(os, means[static_cast<size_t>(c)][j]);
    }
    os << "\n";
    for (Eigen::Index i = 0; i < dim(); ++i) {
      os << "cov";
      for (Eigen::Index j = 0; j < dim(); ++j) {
        os << " ";
        put_double(os, covariances[static_cast<size_t>(c)](i, j));
      }
      os << "\n";
    }
  }
  return os.str();
}

GaussianMixture GaussianMixture::deserialize(const std::string& text) {
  std::istringstream is(text);
  std::string tag;
  int k = 0, d = 0;
  if (!(is >> tag >> k >> d) || tag != "gmm" || k < 1 || d < 1)
    throw std::runtime_error("GaussianMixture::deserialize: bad header");
  GaussianMixture g;
  for (int c = 0; c < k; ++c) {
    double w = 0.0;
    if (!(is >> tag >> w) || tag != "weight")
      throw std::runtime_error("GaussianMixture::deserialize: bad weight record");
    g.weights.push_back(w);
    Vec mean(d);
    if (!(is >> tag) || tag != "mean")
      throw std::runtime_error("GaussianMixture::deserialize: bad mean record");
    for (int j = 0; j < d; ++j)
      if (!(is >> mean[j])) throw std::runtime_error("GaussianMixture::deserialize: bad mean value");
    g.means.push_back(mean);
    Mat cov(d, d);
    for (int i = 0; i < d; ++i) {
      if (!(is >> tag) || tag != "cov")
        throw std::runtime_error("GaussianMixture::deserialize: bad covariance record");
      for (int j = 0; j < d; ++j)
        if (!(is >> cov(i, j)))
          throw std::runtime_error("GaussianMixture::deserialize: bad covariance value");
    }
    g.covariances.push_back(cov);
  }
  return g;
}

}  // namespace abisim
