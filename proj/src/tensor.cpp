#include "glyphflow/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace glyphflow::core {

std::int64_t shape_numel(const Shape& shape) {
    std::int64_t n = 1;
    for (int d : shape) {
        if (d < 0) {
            throw std::invalid_argument("negative dimension in shape " + shape_to_string(shape));
        }
        n *= d;
    }
    return n;
}

std::string shape_to_string(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i > 0) {
            os << ",";
        }
        os << shape[i];
    }
    os << "]";
    return os.str();
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<std::size_t>(shape_numel(shape_)), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_numel(shape_) != static_cast<std::int64_t>(data_.size())) {
        throw std::invalid_argument("tensor data length " + std::to_string(data_.size()) +
                                    " does not match shape " + shape_to_string(shape_));
    }
}

Tensor Tensor::zeros(Shape shape) { return Tensor(std::move(shape)); }

Tensor Tensor::full(Shape shape, double value) {
    Tensor t(std::move(shape));
    for (double& x : t.data_) {
        x = value;
    }
    return t;
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

int Tensor::rows() const {
    if (shape_.size() == 2) {
        return shape_[0];
    }
    if (shape_.size() == 1) {
        return 1;
    }
    throw std::logic_error("rows() on tensor of shape " + shape_str());
}

int Tensor::cols() const {
    if (shape_.size() == 2) {
        return shape_[1];
    }
    if (shape_.size() == 1) {
        return shape_[0];
    }
    throw std::logic_error("cols() on tensor of shape " + shape_str());
}

double& Tensor::at(int r, int c) { return data_[static_cast<std::size_t>(r) * cols() + c]; }

double Tensor::at(int r, int c) const { return data_[static_cast<std::size_t>(r) * cols() + c]; }

bool Tensor::all_finite() const {
    for (double x : data_) {
        if (!std::isfinite(x)) {
            return false;
        }
    }
    return true;
}

std::string Tensor::shape_str() const { return shape_to_string(shape_); }

} // namespace glyphflow::core
