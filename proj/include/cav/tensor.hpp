#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace cav {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major array of finite doubles. Every network input, iterate and
/// adversarial example in the toolkit is carried in one of these.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);  // zero-filled
  Tensor(Shape shape, std::vector<double> data);

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  const std::vector<double>& data() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  /// Throws std::invalid_argument when an entry is NaN or infinite.
  void check_finite() const;

  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

double linf_distance(std::span<const double> a, std::span<const double> b);
double lp_norm(std::span<const double> v, double p);  // p may be +inf

}  // namespace cav
