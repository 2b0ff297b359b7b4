#include "catreg/tensor.hpp"

#include <algorithm>
#include <functional>
#include <numeric>

#include "catreg/errors.hpp"

namespace catreg {

std::size_t shape_volume(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    require(d >= 0, "tensor dimension must be nonnegative");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

Tensor::Tensor(std::vector<int> shape, double fill)
    : shape_(std::move(shape)), data_(shape_volume(shape_), fill) {}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

void Tensor::reshape(std::vector<int> shape) {
  require(shape_volume(shape) == data_.size(), "reshape must preserve element count");
  shape_ = std::move(shape);
}

}  // namespace catreg
