#include "catreg/kernels.hpp"

#include <algorithm>
#include <cstddef>

#include "catreg/errors.hpp"
#include "kernels_detail.hpp"

namespace catreg::kernels {

namespace {

// First/last output index whose tap (out * stride - pad + k) lands inside [0, extent).
inline void valid_range(int extent, int out_extent, int stride, int pad, int k, int& lo, int& hi) {
  lo = 0;
  while (lo < out_extent && lo * stride - pad + k < 0) ++lo;
  hi = out_extent;
  while (hi > lo && (hi - 1) * stride - pad + k >= extent) --hi;
}

}  // namespace

void conv2d_forward(const Tensor& input, const Tensor& weight, const Tensor& bias, ConvGeometry g,
                    Tensor& output) {
  require(input.rank() == 3 && weight.rank() == 4, "conv2d_forward: bad ranks");
  const int C = input.dim(0), H = input.dim(1), W = input.dim(2);
  const int O = weight.dim(0), K = g.kernel;
  require(weight.dim(1) == C && weight.dim(2) == K && weight.dim(3) == K, "conv2d_forward: weight shape");
  const int OH = g.out_extent(H), OW = g.out_extent(W);
  if (output.shape() != std::vector<int>{O, OH, OW}) output = Tensor({O, OH, OW});

  const double* in = input.data();
  const double* w = weight.data();
  double* out = output.data();

#pragma omp parallel for schedule(static)
  for (int o = 0; o < O; ++o) {
    double* out_o = out + static_cast<std::size_t>(o) * OH * OW;
    std::fill(out_o, out_o + OH * OW, bias[o]);
    for (int c = 0; c < C; ++c) {
      const double* in_c = in + static_cast<std::size_t>(c) * H * W;
      for (int ky = 0; ky < K; ++ky) {
        int oy0, oy1;
        valid_range(H, OH, g.stride, g.pad, ky, oy0, oy1);
        for (int kx = 0; kx < K; ++kx) {
          int ox0, ox1;
          valid_range(W, OW, g.stride, g.pad, kx, ox0, ox1);
          const double wv = w[((static_cast<std::size_t>(o) * C + c) * K + ky) * K + kx];
          for (int oy = oy0; oy < oy1; ++oy) {
            const double* row = in_c + static_cast<std::size_t>(oy * g.stride - g.pad + ky) * W;
            double* orow = out_o + static_cast<std::size_t>(oy) * OW;
            const int base = -g.pad + kx;
            for (int ox = ox0; ox < ox1; ++ox) orow[ox] += wv * row[ox * g.stride + base];
          }
        }
      }
    }
  }
}

void conv2d_backward(const Tensor& input, const Tensor& weight, const Tensor& grad_output,
                     ConvGeometry g, Tensor* grad_input, Tensor& grad_weight, Tensor& grad_bias) {
  const int C = input.dim(0), H = input.dim(1), W = input.dim(2);
  const int O = weight.dim(0), K = g.kernel;
  const int OH = grad_output.dim(1), OW = grad_output.dim(2);
  require(grad_output.dim(0) == O && OH == g.out_extent(H) && OW == g.out_extent(W),
          "conv2d_backward: grad_output shape");

  const double* in = input.data();
  const double* w = weight.data();
  const double* go = grad_output.data();
  double* gw = grad_weight.data();

#pragma omp parallel for schedule(static)
  for (int o = 0; o < O; ++o) {
    const double* go_o = go + static_cast<std::size_t>(o) * OH * OW;
    double b = 0.0;
    for (int i = 0; i < OH * OW; ++i) b += go_o[i];
    grad_bias[o] += b;
    for (int c = 0; c < C; ++c) {
      const double* in_c = in + static_cast<std::size_t>(c) * H * W;
      for (int ky = 0; ky < K; ++ky) {
        int oy0, oy1;
        valid_range(H, OH, g.stride, g.pad, ky, oy0, oy1);
        for (int kx = 0; kx < K; ++kx) {
          int ox0, ox1;
          valid_range(W, OW, g.stride, g.pad, kx, ox0, ox1);
          double acc = 0.0;
          for (int oy = oy0; oy < oy1; ++oy) {
            const double* row = in_c + static_cast<std::size_t>(oy * g.stride - g.pad + ky) * W;
            const double* grow = go_o + static_cast<std::size_t>(oy) * OW;
            const int base = -g.pad + kx;
            for (int ox = ox0; ox < ox1; ++ox) acc += grow[ox] * row[ox * g.stride + base];
          }
          gw[((static_cast<std::size_t>(o) * C + c) * K + ky) * K + kx] += acc;
        }
      }
    }
  }

  if (grad_input == nullptr) return;
  if (grad_input->shape() != input.shape()) *grad_input = Tensor(input.shape());
  double* gi = grad_input->data();

#pragma omp parallel for schedule(static)
  for (int c = 0; c < C; ++c) {
    double* gi_c = gi + static_cast<std::size_t>(c) * H * W;
    std::fill(gi_c, gi_c + H * W, 0.0);
    for (int o = 0; o < O; ++o) {
      const double* go_o = go + static_cast<std::size_t>(o) * OH * OW;
      for (int ky = 0; ky < K; ++ky) {
        int oy0, oy1;
        valid_range(H, OH, g.stride, g.pad, ky, oy0, oy1);
        for (int kx = 0; kx < K; ++kx) {
          int ox0, ox1;
          valid_range(W, OW, g.stride, g.pad, kx, ox0, ox1);
          const double wv = w[((static_cast<std::size_t>(o) * C + c) * K + ky) * K + kx];
          for (int oy = oy0; oy < oy1; ++oy) {
            double* row = gi_c + static_cast<std::size_t>(oy * g.stride - g.pad + ky) * W;
            const double* grow = go_o + static_cast<std::size_t>(oy) * OW;
            const int base = -g.pad + kx;
            for (int ox = ox0; ox < ox1; ++ox) row[ox * g.stride + base] += wv * grow[ox];
          }
        }
      }
    }
  }
}

void linear_forward(const Tensor& input, const Tensor& weight, const Tensor& bias, Tensor& output) {
  require(input.rank() == 2 && weight.rank() == 2, "linear_forward: bad ranks");
  const int N = input.dim(0), I = input.dim(1), O = weight.dim(0);
  require(weight.dim(1) == I, "linear_forward: weight shape");
  if (output.shape() != std::vector<int>{N, O}) output = Tensor({N, O});
  const double* x = input.data();
  const double* w = weight.data();
  double* y = output.data();

#pragma omp parallel for schedule(static)
  for (int n = 0; n < N; ++n) {
    const double* xn = x + static_cast<std::size_t>(n) * I;
    for (int o = 0; o < O; ++o) {
      const double* wo = w + static_cast<std::size_t>(o) * I;
      double acc = bias[o];
      for (int i = 0; i < I; ++i) acc += xn[i] * wo[i];
      y[static_cast<std::size_t>(n) * O + o] = acc;
    }
  }
}

void linear_backward(const Tensor& input, const Tensor& weight, const Tensor& grad_output,
                     Tensor* grad_input, Tensor& grad_weight, Tensor& grad_bias) {
  const int N = input.dim(0), I = input.dim(1), O = weight.dim(0);
  require(grad_output.dim(0) == N && grad_output.dim(1) == O, "linear_backward: grad_output shape");
  const double* x = input.data();
  const double* w = weight.data();
  const double* go = grad_output.data();
  double* gw = grad_weight.data();

#pragma omp parallel for schedule(static)
  for (int o = 0; o < O; ++o) {
    double* gwo = gw + static_cast<std::size_t>(o) * I;
    double b = 0.0;
    for (int n = 0; n < N; ++n) {
      const double g = go[static_cast<std::size_t>(n) * O + o];
      b += g;
      const double* xn = x + static_cast<std::size_t>(n) * I;
      for (int i = 0; i < I; ++i) gwo[i] += g * xn[i];
    }
    grad_bias[o] += b;
  }

  if (grad_input == nullptr) return;
  if (grad_input->shape() != input.shape()) *grad_input = Tensor(input.shape());
  double* gi = grad_input->data();

#pragma omp parallel for schedule(static)
  for (int n = 0; n < N; ++n) {
    double* gin = gi + static_cast<std::size_t>(n) * I;
    std::fill(gin, gin + I, 0.0);
    for (int o = 0; o < O; ++o) {
      const double g = go[static_cast<std::size_t>(n) * O + o];
      const double* wo = w + static_cast<std::size_t>(o) * I;
      for (int i = 0; i < I; ++i) gin[i] += g * wo[i];
    }
  }
}

void roi_align_forward(const Tensor& features, const Tensor& boxes, RoiAlignParams p, Tensor& output) {
  require(features.rank() == 3 && boxes.rank() == 2 && boxes.dim(1) == 4, "roi_align_forward: bad shapes");
  const int C = features.dim(0), H = features.dim(1), W = features.dim(2);
  const int R = boxes.dim(0), P = p.pooled, S = p.sampling_ratio;
  if (output.shape() != std::vector<int>{R, C, P, P}) output = Tensor({R, C, P, P});
  const double inv_count = 1.0 / (S * S);

#pragma omp parallel for schedule(static)
  for (int r = 0; r < R; ++r) {
    const double x1 = boxes[r * 4 + 0], y1 = boxes[r * 4 + 1];
    const double bin_w = (boxes[r * 4 + 2] - x1) / P, bin_h = (boxes[r * 4 + 3] - y1) / P;
    for (int c = 0; c < C; ++c) {
      const double* f = features.data() + static_cast<std::size_t>(c) * H * W;
      double* out = output.data() + (static_cast<std::size_t>(r) * C + c) * P * P;
      for (int py = 0; py < P; ++py) {
        for (int px = 0; px < P; ++px) {
          double acc = 0.0;
          for (int iy = 0; iy < S; ++iy) {
            const double y = y1 + py * bin_h + (iy + 0.5) * bin_h / S;
            for (int ix = 0; ix < S; ++ix) {
              const double x = x1 + px * bin_w + (ix + 0.5) * bin_w / S;
              const auto t = detail::bilinear_tap(H, W, y, x);
              if (!t.valid) continue;
              acc += t.w1 * f[t.y_low * W + t.x_low] + t.w2 * f[t.y_low * W + t.x_high] +
                     t.w3 * f[t.y_high * W + t.x_low] + t.w4 * f[t.y_high * W + t.x_high];
            }
          }
          out[py * P + px] = acc * inv_count;
        }
      }
    }
  }
}

void roi_align_backward(const Tensor& boxes, const Tensor& grad_output, RoiAlignParams p,
                        Tensor& grad_features) {
  const int C = grad_features.dim(0), H = grad_features.dim(1), W = grad_features.dim(2);
  const int R = boxes.dim(0), P = p.pooled, S = p.sampling_ratio;
  require(grad_output.shape() == std::vector<int>{R, C, P, P}, "roi_align_backward: grad shape");
  const double inv_count = 1.0 / (S * S);

  // Split over channels: each thread owns a disjoint slice of grad_features.
#pragma omp parallel for schedule(static)
  for (int c = 0; c < C; ++c) {
    double* gf = grad_features.data() + static_cast<std::size_t>(c) * H * W;
    for (int r = 0; r < R; ++r) {
      const double x1 = boxes[r * 4 + 0], y1 = boxes[r * 4 + 1];
      const double bin_w = (boxes[r * 4 + 2] - x1) / P, bin_h = (boxes[r * 4 + 3] - y1) / P;
      const double* go = grad_output.data() + (static_cast<std::size_t>(r) * C + c) * P * P;
      for (int py = 0; py < P; ++py) {
        for (int px = 0; px < P; ++px) {
          const double g = go[py * P + px] * inv_count;
          for (int iy = 0; iy < S; ++iy) {
            const double y = y1 + py * bin_h + (iy + 0.5) * bin_h / S;
            for (int ix = 0; ix < S; ++ix) {
              const double x = x1 + px * bin_w + (ix + 0.5) * bin_w / S;
              const auto t = detail::bilinear_tap(H, W, y, x);
              if (!t.valid) continue;
              gf[t.y_low * W + t.x_low] += g * t.w1;
              gf[t.y_low * W + t.x_high] += g * t.w2;
              gf[t.y_high * W + t.x_low] += g * t.w3;
              gf[t.y_high * W + t.x_high] += g * t.w4;
            }
          }
        }
      }
    }
  }
}

}  // namespace catreg::kernels
