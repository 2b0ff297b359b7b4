#pragma once

#include <cmath>

namespace catreg::kernels::detail {

struct BilinearTap {
  int y_low = 0, y_high = 0, x_low = 0, x_high = 0;
  double w1 = 0, w2 = 0, w3 = 0, w4 = 0;
  bool valid = false;
};

// Bilinear weights for sampling (y, x) on an H x W grid. Points more than one
// cell outside the grid contribute nothing.
inline BilinearTap bilinear_tap(int height, int width, double y, double x) {
  BilinearTap t;
  if (!(y >= -1.0 && y <= height && x >= -1.0 && x <= width)) return t;  // also rejects NaN
  y = y <= 0 ? 0 : y;
  x = x <= 0 ? 0 : x;
  t.y_low = static_cast<int>(y);
  t.x_low = static_cast<int>(x);
  if (t.y_low >= height - 1) {
    t.y_high = t.y_low = height - 1;
    y = t.y_low;
  } else {
    t.y_high = t.y_low + 1;
  }
  if (t.x_low >= width - 1) {
    t.x_high = t.x_low = width - 1;
    x = t.x_low;
  } else {
    t.x_high = t.x_low + 1;
  }
  const double ly = y - t.y_low, lx = x - t.x_low;
  const double hy = 1.0 - ly, hx = 1.0 - lx;
  t.w1 = hy * hx;
  t.w2 = hy * lx;
  t.w3 = ly * hx;
  t.w4 = ly * lx;
  t.valid = true;
  return t;
}

}  // namespace catreg::kernels::detail
