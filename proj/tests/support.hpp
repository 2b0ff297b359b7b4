#pragma once

// Shared fixtures for the unit tests and the acceptance runner.

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "catreg/dataset.hpp"
#include "catreg/model.hpp"
#include "catreg/trainer.hpp"

namespace catreg::testing {

inline Tensor random_tensor(std::vector<int> shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.values()) v = u(rng);
  return t;
}

inline Param& find_param(CatRegModel& model, const std::string& name) {
  for (Param* p : model.params())
    if (p->name == name) return *p;
  throw std::out_of_range("no parameter " + name);
}

// Bias the RoI classifier toward foreground so target proposals get CCR weights != 1.
inline void favour_foreground(CatRegModel& model, std::mt19937_64& rng) {
  Param& b = find_param(model, "head.cls.bias");
  std::uniform_real_distribution<double> u(2.0, 4.0);
  const int C = model.config().num_classes;
  for (int c = 0; c < C; ++c) b.value[c] = u(rng);
  b.value[C] = 0.0;
}

inline DomainPair small_pair(int samples, std::uint64_t seed = 7) {
  DatasetSpec spec;
  spec.samples_per_domain = samples;
  spec.val_samples_per_domain = 0;
  spec.rng_seed = seed;
  return generate_dataset(spec);
}

inline std::vector<Tensor> grads_of(const std::vector<Param*>& params) {
  std::vector<Tensor> out;
  for (Param* p : params) out.push_back(p->grad);
  return out;
}

// Per tensor max|a - b| / max|a|, maximized over tensors. Zero tensors compare absolutely.
inline double max_rel_diff(const std::vector<Tensor>& a, const std::vector<Tensor>& b) {
  double m = 0.0;
  for (std::size_t p = 0; p < a.size(); ++p) {
    double diff = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < a[p].size(); ++i) {
      diff = std::max(diff, std::abs(a[p][i] - b[p][i]));
      scale = std::max({scale, std::abs(a[p][i]), std::abs(b[p][i])});
    }
    m = std::max(m, scale > 0.0 ? diff / scale : diff);
  }
  return m;
}

}  // namespace catreg::testing
