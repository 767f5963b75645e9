#include "posediff/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace posediff {

int64_t shape_numel(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t e : shape) {
        if (e < 0) throw std::invalid_argument("tensor extent must be non-negative");
        n *= e;
    }
    return n;
}

std::string shape_to_string(const std::vector<int64_t>& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

Tensor::Tensor(std::vector<int64_t> shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<size_t>(shape_numel(shape_)), 0.0);
}

Tensor Tensor::zeros(std::vector<int64_t> shape) { return Tensor(std::move(shape)); }

Tensor Tensor::full(std::vector<int64_t> shape, double value) {
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = value;
    return t;
}

Tensor Tensor::from(std::vector<int64_t> shape, std::vector<double> data) {
    if (shape_numel(shape) != static_cast<int64_t>(data.size())) {
        throw std::invalid_argument("tensor data length " + std::to_string(data.size()) +
                                    " does not match shape " + shape_to_string(shape));
    }
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = std::move(data);
    return t;
}

Tensor Tensor::scalar(double value) { return from({}, {value}); }

int64_t Tensor::extent(int64_t axis) const {
    if (axis < 0) axis += rank();
    if (axis < 0 || axis >= rank()) throw std::invalid_argument("tensor axis out of range");
    return shape_[static_cast<size_t>(axis)];
}

Tensor Tensor::reshaped(std::vector<int64_t> shape) const {
    if (shape_numel(shape) != numel()) {
        throw std::invalid_argument("reshape " + shape_str() + " -> " + shape_to_string(shape) +
                                    " changes element count");
    }
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = data_;
    return t;
}

double Tensor::item() const {
    if (numel() != 1) throw std::invalid_argument("item() on non-scalar tensor " + shape_str());
    return data_[0];
}

std::string Tensor::shape_str() const { return shape_to_string(shape_); }

void Tensor::ensure_finite(const std::string& context) const {
    for (double x : data_) {
        if (!std::isfinite(x)) {
            throw std::runtime_error(context + ": non-finite value in tensor " + shape_str());
        }
    }
}

}  // namespace posediff
