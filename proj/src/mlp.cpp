#include "abi/mlp.hpp"

#include <cmath>
#include <stdexcept>

namespace abisim {

Mlp Mlp::he_init(int input, const std::vector<int>& hidden, int output,
                 RandomStream& rng) {
  if (input < 1 || output < 1) throw std::invalid_argument("Mlp: bad layer sizes");
  for (int h : hidden)
    if (h < 1) throw std::invalid_argument("Mlp: bad hidden width");
  std::vector<int> dims;
  dims.push_back(input);
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(output);

  Mlp net;
  for (size_t l = 0; l + 1 < dims.size(); ++l) {
    const int fan_in = dims[l];
    const int fan_out = dims[l + 1];
    const double sd = std::sqrt(2.0 / fan_in);
    Mat w(fan_out, fan_in);
    for (int i = 0; i < fan_out; ++i)
      for (int j = 0; j < fan_in; ++j) w(i, j) = sd * rng.normal();
    net.weights.push_back(std::move(w));
    // Spread ReLU kinks instead of stacking them at the origin.
    const double bspan = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Vec b(fan_out);
    for (int i = 0; i < fan_out; ++i) b[i] = rng.uniform(-bspan, bspan);
    net.biases.push_back(std::move(b));
  }
  return net;
}

size_t Mlp::num_params() const {
  size_t n = 0;
  for (size_t l = 0; l < weights.size(); ++l)
    n += static_cast<size_t>(weights[l].size()) + static_cast<size_t>(biases[l].size());
  return n;
}

Mat Mlp::forward(const Mat& x) const {
  Mat a = x;
  for (size_t l = 0; l < weights.size(); ++l) {
    Mat z = (weights[l] * a).colwise() + biases[l];
    if (l + 1 < weights.size()) z = z.cwiseMax(0.0);
    a = std::move(z);
  }
  return a;
}

const Mat& Mlp::forward_trace(const Mat& x, Trace& trace) const {
  trace.activations.assign(1, x);
  trace.activations.reserve(weights.size() + 1);
  for (size_t l = 0; l < weights.size(); ++l) {
    Mat z = (weights[l] * trace.activations.back()).colwise() + biases[l];
    if (l + 1 < weights.size()) z = z.cwiseMax(0.0);
    trace.activations.push_back(std::move(z));
  }
  return trace.activations.back();
}

void Mlp::backward(const Trace& trace, const Mat& grad_output,
                   std::vector<Mat>& grad_w, std::vector<Vec>& grad_b) const {
  const size_t L = weights.size();
  grad_w.resize(L);
  grad_b.resize(L);
  Mat delta = grad_output;
  for (size_t l = L; l-- > 0;) {
    if (l + 1 < L) {
      // ReLU mask: activations[l+1] kept post-activation values.
      delta = delta.cwiseProduct(
          (trace.activations[l + 1].array() > 0.0).cast<double>().matrix());
    }
    grad_w[l] = delta * trace.activations[l].transpose();
    grad_b[l] = delta.rowwise().sum();
    if (l > 0) delta = weights[l].transpose() * delta;
  }
}

AdamState::AdamState(const Mlp& net) {
  for (size_t l = 0; l < net.weights.size(); ++l) {
    mw_.push_back(Mat::Zero(net.weights[l].rows(), net.weights[l].cols()));
    vw_.push_back(Mat::Zero(net.weights[l].rows(), net.weights[l].cols()));
    mb_.push_back(Vec::Zero(net.biases[l].size()));
    vb_.push_back(Vec::Zero(net.biases[l].size()));
  }
}

void AdamState::step(Mlp& net, const std::vector<Mat>& grad_w,
                     const std::vector<Vec>& grad_b, const AdamConfig& cfg) {
  ++t_;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t_));
  for (size_t l = 0; l < net.weights.size(); ++l) {
    mw_[l] = cfg.beta1 * mw_[l] + (1.0 - cfg.beta1) * grad_w[l];
    vw_[l] = cfg.beta2 * vw_[l].array().matrix() +
             (1.0 - cfg.beta2) * grad_w[l].cwiseProduct(grad_w[l]);
    net.weights[l].array() -= cfg.learning_rate * (mw_[l].array() / c1) /
                              ((vw_[l].array() / c2).sqrt() + cfg.epsilon);
    mb_[l] = cfg.beta1 * mb_[l] + (1.0 - cfg.beta1) * grad_b[l];
    vb_[l] = cfg.beta2 * vb_[l] + (1.0 - cfg.beta2) * grad_b[l].cwiseProduct(grad_b[l]);
    net.biases[l].array() -= cfg.learning_rate * (mb_[l].array() / c1) /
                             ((vb_[l].array() / c2).sqrt() + cfg.epsilon);
  }
}

Standardizer Standardizer::fit(const Mat& x, double floor) {
  if (x.cols() < 1) throw std::invalid_argument("Standardizer: empty sample");
  Standardizer s;
  s.mean = x.rowwise().mean();
  Mat centered = x.colwise() - s.mean;
  s.scale = (centered.cwiseProduct(centered).rowwise().sum() /
             static_cast<double>(x.cols()))
                .cwiseSqrt()
                .cwiseMax(floor);
  return s;
}

Standardizer Standardizer::identity(int dim) {
  Standardizer s;
  s.mean = Vec::Zero(dim);
  s.scale = Vec::Ones(dim);
  return s;
}

Mat Standardizer::apply(const Mat& x) const {
  return (x.colwise() - mean).array().colwise() / scale.array();
}

Vec Standardizer::apply(const Vec& x) const {
  return (x - mean).cwiseQuotient(scale);
}

}  // namespace abisim
