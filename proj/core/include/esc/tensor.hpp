#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace esc {

// Dense row-major double tensor. Feature maps use the {C, H, W} layout so that
// a map can be viewed as a C x (H*W) matrix with one column per spatial cell.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape, double fill = 0.0);
  Tensor(std::vector<int> shape, std::vector<double> data);

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

  [[nodiscard]] const std::vector<int>& shape() const noexcept { return shape_; }
  [[nodiscard]] int dim(std::size_t i) const { return shape_.at(i); }
  [[nodiscard]] std::size_t rank() const noexcept { return shape_.size(); }
  [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }
  [[nodiscard]] bool empty() const noexcept { return data_.empty(); }

  [[nodiscard]] double* data() noexcept { return data_.data(); }
  [[nodiscard]] const double* data() const noexcept { return data_.data(); }
  [[nodiscard]] std::span<double> values() noexcept { return data_; }
  [[nodiscard]] std::span<const double> values() const noexcept { return data_; }
  [[nodiscard]] std::vector<double>& storage() noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // Accessors for the {C, H, W} layout.
  double& at(int c, int y, int x) { return data_[(static_cast<std::size_t>(c) * shape_[1] + y) * shape_[2] + x]; }
  double at(int c, int y, int x) const { return data_[(static_cast<std::size_t>(c) * shape_[1] + y) * shape_[2] + x]; }

  // Channels, height, width of a rank-3 tensor.
  [[nodiscard]] int channels() const { return shape_.at(0); }
  [[nodiscard]] int height() const { return shape_.at(1); }
  [[nodiscard]] int width() const { return shape_.at(2); }
  [[nodiscard]] int cells() const { return shape_.at(1) * shape_.at(2); }

  void fill(double v);
  Tensor& operator+=(const Tensor& other);
  Tensor& operator*=(double s);

  [[nodiscard]] bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }
  [[nodiscard]] double sum() const;
  [[nodiscard]] double max_abs() const;
  [[nodiscard]] bool all_finite() const;

  [[nodiscard]] Tensor reshaped(std::vector<int> shape) const;

  friend bool operator==(const Tensor& a, const Tensor& b) = default;

 private:
  std::vector<int> shape_;
  std::vector<double> data_;
};

std::size_t element_count(const std::vector<int>& shape);
std::string shape_string(const std::vector<int>& shape);

}  // namespace esc
