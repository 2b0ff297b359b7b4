// Times the OpenMP kernels against the serial reference on detector-sized
// inputs. Thread count follows OMP_NUM_THREADS.

#include <chrono>
#include <cstdio>
#include <random>

#include <omp.h>

#include "catreg/kernels.hpp"

using namespace catreg;
using Clock = std::chrono::steady_clock;

namespace {

Tensor random_tensor(std::vector<int> shape, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> n(0.0, 1.0);
  for (auto& v : t.values()) v = n(rng);
  return t;
}

template <class F>
double time_ms(F&& f, int reps) {
  f();  // warm-up
  const auto t0 = Clock::now();
  for (int i = 0; i < reps; ++i) f();
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count() / reps;
}

void report(const char* name, double par, double ref) {
  std::printf("%-24s parallel %9.3f ms   reference %9.3f ms   speedup %5.2fx\n", name, par, ref, ref / par);
}

}  // namespace

int main() {
  std::mt19937_64 rng(1);
  std::printf("threads: %d\n", omp_get_max_threads());

  {
    const Tensor x = random_tensor({16, 32, 32}, rng), w = random_tensor({32, 16, 3, 3}, rng), b({32});
    const kernels::ConvGeometry g{3, 2, 1};
    Tensor y;
    report("conv2d_forward", time_ms([&] { kernels::conv2d_forward(x, w, b, g, y); }, 50),
           time_ms([&] { kernels::reference::conv2d_forward(x, w, b, g, y); }, 50));
    const Tensor gy = random_tensor(y.shape(), rng);
    Tensor gx, gw(w.shape()), gb(b.shape());
    report("conv2d_backward", time_ms([&] { kernels::conv2d_backward(x, w, gy, g, &gx, gw, gb); }, 50),
           time_ms([&] { kernels::reference::conv2d_backward(x, w, gy, g, &gx, gw, gb); }, 50));
  }
  {
    const Tensor x = random_tensor({48, 3136}, rng), w = random_tensor({64, 3136}, rng), b({64});
    Tensor y;
    report("linear_forward", time_ms([&] { kernels::linear_forward(x, w, b, y); }, 50),
           time_ms([&] { kernels::reference::linear_forward(x, w, b, y); }, 50));
    const Tensor gy = random_tensor(y.shape(), rng);
    Tensor gx, gw(w.shape()), gb(b.shape());
    report("linear_backward", time_ms([&] { kernels::linear_backward(x, w, gy, &gx, gw, gb); }, 50),
           time_ms([&] { kernels::reference::linear_backward(x, w, gy, &gx, gw, gb); }, 50));
  }
  {
    const Tensor f = random_tensor({64, 8, 8}, rng);
    Tensor boxes({48, 4});
    std::uniform_real_distribution<double> u(0.0, 7.0);
    for (int r = 0; r < 48; ++r) {
      const double x0 = u(rng), y0 = u(rng);
      boxes[r * 4 + 0] = x0;
      boxes[r * 4 + 1] = y0;
      boxes[r * 4 + 2] = x0 + 1.0 + u(rng) / 7.0;
      boxes[r * 4 + 3] = y0 + 1.0 + u(rng) / 7.0;
    }
    const kernels::RoiAlignParams p{7, 2};
    Tensor y;
    report("roi_align_forward", time_ms([&] { kernels::roi_align_forward(f, boxes, p, y); }, 50),
           time_ms([&] { kernels::reference::roi_align_forward(f, boxes, p, y); }, 50));
  }
  return 0;
}
