// Straightforward serial loops, one output element at a time. Kept as the
// oracle for the parallel kernels; accumulation order per output matches.

#include <cstddef>

#include "catreg/kernels.hpp"
#include "kernels_detail.hpp"

namespace catreg::kernels::reference {

void conv2d_forward(const Tensor& input, const Tensor& weight, const Tensor& bias, ConvGeometry g,
                    Tensor& output) {
  const int C = input.dim(0), H = input.dim(1), W = input.dim(2);
  const int O = weight.dim(0), K = g.kernel;
  const int OH = g.out_extent(H), OW = g.out_extent(W);
  output = Tensor({O, OH, OW});
  for (int o = 0; o < O; ++o)
    for (int oy = 0; oy < OH; ++oy)
      for (int ox = 0; ox < OW; ++ox) {
        double acc = bias[o];
        for (int c = 0; c < C; ++c)
          for (int ky = 0; ky < K; ++ky)
            for (int kx = 0; kx < K; ++kx) {
              const int iy = oy * g.stride - g.pad + ky, ix = ox * g.stride - g.pad + kx;
              if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
              acc += weight[((static_cast<std::size_t>(o) * C + c) * K + ky) * K + kx] * input.at(c, iy, ix);
            }
        output.at(o, oy, ox) = acc;
      }
}

void conv2d_backward(const Tensor& input, const Tensor& weight, const Tensor& grad_output,
                     ConvGeometry g, Tensor* grad_input, Tensor& grad_weight, Tensor& grad_bias) {
  const int C = input.dim(0), H = input.dim(1), W = input.dim(2);
  const int O = weight.dim(0), K = g.kernel;
  const int OH = grad_output.dim(1), OW = grad_output.dim(2);

  for (int o = 0; o < O; ++o) {
    double b = 0.0;
    for (int oy = 0; oy < OH; ++oy)
      for (int ox = 0; ox < OW; ++ox) b += grad_output.at(o, oy, ox);
    grad_bias[o] += b;
    for (int c = 0; c < C; ++c)
      for (int ky = 0; ky < K; ++ky)
        for (int kx = 0; kx < K; ++kx) {
          double acc = 0.0;
          for (int oy = 0; oy < OH; ++oy)
            for (int ox = 0; ox < OW; ++ox) {
              const int iy = oy * g.stride - g.pad + ky, ix = ox * g.stride - g.pad + kx;
              if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
              acc += grad_output.at(o, oy, ox) * input.at(c, iy, ix);
            }
          grad_weight[((static_cast<std::size_t>(o) * C + c) * K + ky) * K + kx] += acc;
        }
  }

  if (grad_input == nullptr) return;
  *grad_input = Tensor(input.shape());
  for (int c = 0; c < C; ++c)
    for (int iy = 0; iy < H; ++iy)
      for (int ix = 0; ix < W; ++ix) {
        double acc = 0.0;
        for (int o = 0; o < O; ++o)
          for (int ky = 0; ky < K; ++ky)
            for (int kx = 0; kx < K; ++kx) {
              const int ny = iy + g.pad - ky, nx = ix + g.pad - kx;
              if (ny < 0 || nx < 0 || ny % g.stride != 0 || nx % g.stride != 0) continue;
              const int oy = ny / g.stride, ox = nx / g.stride;
              if (oy >= OH || ox >= OW) continue;
              acc += weight[((static_cast<std::size_t>(o) * C + c) * K + ky) * K + kx] * grad_output.at(o, oy, ox);
            }
        grad_input->at(c, iy, ix) = acc;
      }
}

void linear_forward(const Tensor& input, const Tensor& weight, const Tensor& bias, Tensor& output) {
  const int N = input.dim(0), I = input.dim(1), O = weight.dim(0);
  output = Tensor({N, O});
  for (int n = 0; n < N; ++n)
    for (int o = 0; o < O; ++o) {
      double acc = bias[o];
      for (int i = 0; i < I; ++i)
        acc += input[static_cast<std::size_t>(n) * I + i] * weight[static_cast<std::size_t>(o) * I + i];
      output[static_cast<std::size_t>(n) * O + o] = acc;
    }
}

void linear_backward(const Tensor& input, const Tensor& weight, const Tensor& grad_output,
                     Tensor* grad_input, Tensor& grad_weight, Tensor& grad_bias) {
  const int N = input.dim(0), I = input.dim(1), O = weight.dim(0);
  for (int o = 0; o < O; ++o) {
    double b = 0.0;
    for (int n = 0; n < N; ++n) {
      const double g = grad_output[static_cast<std::size_t>(n) * O + o];
      b += g;
      for (int i = 0; i < I; ++i)
        grad_weight[static_cast<std::size_t>(o) * I + i] += g * input[static_cast<std::size_t>(n) * I + i];
    }
    grad_bias[o] += b;
  }
  if (grad_input == nullptr) return;
  *grad_input = Tensor(input.shape());
  for (int n = 0; n < N; ++n)
    for (int i = 0; i < I; ++i) {
      double acc = 0.0;
      for (int o = 0; o < O; ++o)
        acc += grad_output[static_cast<std::size_t>(n) * O + o] * weight[static_cast<std::size_t>(o) * I + i];
      (*grad_input)[static_cast<std::size_t>(n) * I + i] = acc;
    }
}

void roi_align_forward(const Tensor& features, const Tensor& boxes, RoiAlignParams p, Tensor& output) {
  const int C = features.dim(0), H = features.dim(1), W = features.dim(2);
  const int R = boxes.dim(0), P = p.pooled, S = p.sampling_ratio;
  output = Tensor({R, C, P, P});
  for (int r = 0; r < R; ++r)
    for (int c = 0; c < C; ++c)
      for (int py = 0; py < P; ++py)
        for (int px = 0; px < P; ++px) {
          const double x1 = boxes[r * 4 + 0], y1 = boxes[r * 4 + 1];
          const double bin_w = (boxes[r * 4 + 2] - x1) / P, bin_h = (boxes[r * 4 + 3] - y1) / P;
          double acc = 0.0;
          for (int iy = 0; iy < S; ++iy)
            for (int ix = 0; ix < S; ++ix) {
              const double y = y1 + py * bin_h + (iy + 0.5) * bin_h / S;
              const double x = x1 + px * bin_w + (ix + 0.5) * bin_w / S;
              const auto t = detail::bilinear_tap(H, W, y, x);
              if (!t.valid) continue;
              acc += t.w1 * features.at(c, t.y_low, t.x_low) + t.w2 * features.at(c, t.y_low, t.x_high) +
                     t.w3 * features.at(c, t.y_high, t.x_low) + t.w4 * features.at(c, t.y_high, t.x_high);
            }
          output[((static_cast<std::size_t>(r) * C + c) * P + py) * P + px] = acc * (1.0 / (S * S));
        }
}

}  // namespace catreg::kernels::reference
