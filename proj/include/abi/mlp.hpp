#pragma once

#include <Eigen/Dense>
#include <vector>

#include "abi/rng.hpp"

namespace abisim {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Plain fully-connected ReLU network, linear output layer. Batches are
// stored column-wise (one sample per column).
class Mlp {
 public:
  std::vector<Mat> weights;  // weights[l]: dims[l+1] x dims[l]
  std::vector<Vec> biases;

  static Mlp he_init(int input, const std::vector<int>& hidden, int output,
                     RandomStream& rng);

  int input_dim() const { return weights.empty() ? 0 : static_cast<int>(weights.front().cols()); }
  int output_dim() const { return weights.empty() ? 0 : static_cast<int>(weights.back().rows()); }
  size_t num_layers() const { return weights.size(); }
  size_t num_params() const;

  Mat forward(const Mat& x) const;

  // Forward pass retaining post-activation values for backprop;
  // activations[0] is the input, activations[L] the linear output.
  struct Trace {
    std::vector<Mat> activations;
  };
  const Mat& forward_trace(const Mat& x, Trace& trace) const;

  // Backprop of dLoss/dOutput through the trace; accumulates nothing,
  // overwrites grad_w / grad_b.
  void backward(const Trace& trace, const Mat& grad_output,
                std::vector<Mat>& grad_w, std::vector<Vec>& grad_b) const;
};

// Adam state over the MLP parameter list.
class AdamState {
 public:
  explicit AdamState(const Mlp& net);
  void step(Mlp& net, const std::vector<Mat>& grad_w, const std::vector<Vec>& grad_b,
            const AdamConfig& cfg);

 private:
  std::vector<Mat> mw_, vw_;
  std::vector<Vec> mb_, vb_;
  long t_ = 0;
};

// Per-feature affine standardizer with a floored scale.
struct Standardizer {
  Vec mean;
  Vec scale;

  static Standardizer fit(const Mat& columns_are_samples, double floor = 1e-8);
  static Standardizer identity(int dim);
  Mat apply(const Mat& columns_are_samples) const;
  Vec apply(const Vec& x) const;
};

}  // namespace abisim
