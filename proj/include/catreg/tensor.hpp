#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace catreg {

// Dense row-major tensor of doubles. Feature maps use (channels, height, width).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape, double fill = 0.0);

  const std::vector<int>& shape() const { return shape_; }
  int dim(std::size_t i) const { return shape_.at(i); }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // (c, y, x) access for rank-3 tensors.
  double& at(int c, int y, int x) { return data_[(static_cast<std::size_t>(c) * shape_[1] + y) * shape_[2] + x]; }
  double at(int c, int y, int x) const { return data_[(static_cast<std::size_t>(c) * shape_[1] + y) * shape_[2] + x]; }

  void fill(double v);
  void reshape(std::vector<int> shape);

  bool operator==(const Tensor&) const = default;

 private:
  std::vector<int> shape_;
  std::vector<double> data_;
};

std::size_t shape_volume(const std::vector<int>& shape);

// Trainable parameter with its gradient accumulator and momentum buffer.
struct Param {
  std::string name;
  Tensor value;
  Tensor grad;
  Tensor momentum;
  bool decay = true;  // weight decay applies (biases opt out)

  Param() = default;
  Param(std::string n, std::vector<int> shape, bool apply_decay = true)
      : name(std::move(n)), value(shape), grad(shape), momentum(shape), decay(apply_decay) {}

  void zero_grad() { grad.fill(0.0); }
};

}  // namespace catreg
