#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

namespace posediff {

/// Dense row-major tensor of 64-bit floats. Values are immutable by
/// convention once handed to the autodiff tape; copies are cheap enough at
/// the pose scales this library works at.
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(std::vector<int64_t> shape);

    static Tensor zeros(std::vector<int64_t> shape);
    static Tensor full(std::vector<int64_t> shape, double value);
    static Tensor from(std::vector<int64_t> shape, std::vector<double> data);
    static Tensor scalar(double value);

    int64_t rank() const { return static_cast<int64_t>(shape_.size()); }
    int64_t numel() const { return static_cast<int64_t>(data_.size()); }
    const std::vector<int64_t>& shape() const { return shape_; }
    int64_t extent(int64_t axis) const;

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    /// Same data, new shape (element count must match).
    Tensor reshaped(std::vector<int64_t> shape) const;

    double item() const;  // scalar tensors only

    std::string shape_str() const;  // e.g. "[2,3]"

    /// Throws std::runtime_error naming `context` if any entry is not finite.
    void ensure_finite(const std::string& context) const;

  private:
    std::vector<int64_t> shape_;
    std::vector<double> data_;
};

int64_t shape_numel(const std::vector<int64_t>& shape);
std::string shape_to_string(const std::vector<int64_t>& shape);

}  // namespace posediff
