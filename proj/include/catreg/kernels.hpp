#pragma once

// Numeric kernels shared by every layer. The functions in `catreg::kernels`
// are OpenMP-parallel; `catreg::kernels::reference` holds serial versions with
// the same per-output summation order, so both produce bit-identical results.
// Parallel loops only split over independent outputs (no cross-thread
// reductions), which keeps training deterministic for any thread count.

#include <span>

#include "catreg/tensor.hpp"

namespace catreg::kernels {

struct ConvGeometry {
  int kernel = 3;
  int stride = 1;
  int pad = 1;

  int out_extent(int in_extent) const { return (in_extent + 2 * pad - kernel) / stride + 1; }
};

// input (C,H,W), weight (O,C,k,k), bias (O) -> output (O,H',W'); output is resized.
void conv2d_forward(const Tensor& input, const Tensor& weight, const Tensor& bias,
                    ConvGeometry g, Tensor& output);

// Accumulates into grad_weight / grad_bias. grad_input is overwritten when non-null.
void conv2d_backward(const Tensor& input, const Tensor& weight, const Tensor& grad_output,
                     ConvGeometry g, Tensor* grad_input, Tensor& grad_weight, Tensor& grad_bias);

// input (N,I), weight (O,I), bias (O) -> output (N,O).
void linear_forward(const Tensor& input, const Tensor& weight, const Tensor& bias, Tensor& output);
void linear_backward(const Tensor& input, const Tensor& weight, const Tensor& grad_output,
                     Tensor* grad_input, Tensor& grad_weight, Tensor& grad_bias);

// Boxes are given in feature-map coordinates (image coordinates / stride),
// already clamped to a positive extent. Half-pixel aligned sampling.
struct RoiAlignParams {
  int pooled = 7;
  int sampling_ratio = 2;
};

// features (C,H,W), boxes (R,4) -> output (R,C,P,P).
void roi_align_forward(const Tensor& features, const Tensor& boxes, RoiAlignParams p, Tensor& output);
// Accumulates into grad_features.
void roi_align_backward(const Tensor& boxes, const Tensor& grad_output, RoiAlignParams p,
                        Tensor& grad_features);

namespace reference {

void conv2d_forward(const Tensor& input, const Tensor& weight, const Tensor& bias,
                    ConvGeometry g, Tensor& output);
void conv2d_backward(const Tensor& input, const Tensor& weight, const Tensor& grad_output,
                     ConvGeometry g, Tensor* grad_input, Tensor& grad_weight, Tensor& grad_bias);
void linear_forward(const Tensor& input, const Tensor& weight, const Tensor& bias, Tensor& output);
void linear_backward(const Tensor& input, const Tensor& weight, const Tensor& grad_output,
                     Tensor* grad_input, Tensor& grad_weight, Tensor& grad_bias);
void roi_align_forward(const Tensor& features, const Tensor& boxes, RoiAlignParams p, Tensor& output);

}  // namespace reference

}  // namespace catreg::kernels
