#pragma once

#include <random>
#include <string>
#include <vector>

#include "catreg/kernels.hpp"
#include "catreg/tensor.hpp"

namespace catreg {

using Rng = std::mt19937_64;

// 2-D convolution. Callers keep the forward input around for backward.
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(std::string name, int in_channels, int out_channels, kernels::ConvGeometry geometry);

  void init(Rng& rng, double stddev = -1.0);  // default: He-normal
  Tensor forward(const Tensor& x) const;
  // Accumulates parameter gradients; writes dL/dx when grad_x is non-null.
  void backward(const Tensor& x, const Tensor& grad_y, Tensor* grad_x);

  std::vector<Param*> params() { return {&weight_, &bias_}; }
  const Param& weight() const { return weight_; }
  const Param& bias() const { return bias_; }
  Param& weight() { return weight_; }
  Param& bias() { return bias_; }
  int out_channels() const { return weight_.value.dim(0); }
  const kernels::ConvGeometry& geometry() const { return geometry_; }

 private:
  Param weight_, bias_;
  kernels::ConvGeometry geometry_;
};

// Fully connected layer over (N, I) row batches.
class Linear {
 public:
  Linear() = default;
  Linear(std::string name, int in_features, int out_features);

  void init(Rng& rng, double stddev = -1.0);
  Tensor forward(const Tensor& x) const;
  void backward(const Tensor& x, const Tensor& grad_y, Tensor* grad_x);

  std::vector<Param*> params() { return {&weight_, &bias_}; }
  Param& weight() { return weight_; }
  Param& bias() { return bias_; }
  const Param& weight() const { return weight_; }
  const Param& bias() const { return bias_; }
  int in_features() const { return weight_.value.dim(1); }
  int out_features() const { return weight_.value.dim(0); }

 private:
  Param weight_, bias_;
};

void relu_inplace(Tensor& x);
// grad *= (activation > 0), where activation is the ReLU output.
void relu_backward_inplace(const Tensor& activation, Tensor& grad);

double sigmoid(double z);

// Probability clamp shared by every log-loss.
inline constexpr double kProbEpsilon = 1e-7;
double clamp_prob(double p);

}  // namespace catreg
