#include "catreg/layers.hpp"

#include <algorithm>
#include <cmath>

namespace catreg {

namespace {

void normal_fill(Tensor& t, Rng& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : t.values()) v = dist(rng);
}

}  // namespace

Conv2d::Conv2d(std::string name, int in_channels, int out_channels, kernels::ConvGeometry geometry)
    : weight_(name + ".weight", {out_channels, in_channels, geometry.kernel, geometry.kernel}),
      bias_(name + ".bias", {out_channels}, false),
      geometry_(geometry) {}

void Conv2d::init(Rng& rng, double stddev) {
  const int fan_in = weight_.value.dim(1) * geometry_.kernel * geometry_.kernel;
  normal_fill(weight_.value, rng, stddev > 0 ? stddev : std::sqrt(2.0 / fan_in));
  bias_.value.fill(0.0);
}

Tensor Conv2d::forward(const Tensor& x) const {
  Tensor y;
  kernels::conv2d_forward(x, weight_.value, bias_.value, geometry_, y);
  return y;
}

void Conv2d::backward(const Tensor& x, const Tensor& grad_y, Tensor* grad_x) {
  kernels::conv2d_backward(x, weight_.value, grad_y, geometry_, grad_x, weight_.grad, bias_.grad);
}

Linear::Linear(std::string name, int in_features, int out_features)
    : weight_(name + ".weight", {out_features, in_features}), bias_(name + ".bias", {out_features}, false) {}

void Linear::init(Rng& rng, double stddev) {
  normal_fill(weight_.value, rng, stddev > 0 ? stddev : std::sqrt(2.0 / weight_.value.dim(1)));
  bias_.value.fill(0.0);
}

Tensor Linear::forward(const Tensor& x) const {
  Tensor y;
  kernels::linear_forward(x, weight_.value, bias_.value, y);
  return y;
}

void Linear::backward(const Tensor& x, const Tensor& grad_y, Tensor* grad_x) {
  kernels::linear_backward(x, weight_.value, grad_y, grad_x, weight_.grad, bias_.grad);
}

void relu_inplace(Tensor& x) {
  for (double& v : x.values()) v = v > 0.0 ? v : 0.0;
}

void relu_backward_inplace(const Tensor& activation, Tensor& grad) {
  for (std::size_t i = 0; i < grad.size(); ++i)
    if (!(activation[i] > 0.0)) grad[i] = 0.0;
}

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double clamp_prob(double p) { return std::clamp(p, kProbEpsilon, 1.0 - kProbEpsilon); }

}  // namespace catreg
