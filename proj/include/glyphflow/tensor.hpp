#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace glyphflow::core {

using Shape = std::vector<int>;

/// Dense row-major array of 64-bit reals. The universal value carrier:
/// images, token embeddings, weights and gradients are all Tensors.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double value);
    static Tensor scalar(double value);

    const Shape& shape() const { return shape_; }
    std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
    bool is_scalar() const { return data_.size() == 1; }

    // 2-D accessors; rows()/cols() treat a 1-D tensor as a single row.
    int rows() const;
    int cols() const;
    double& at(int r, int c);
    double at(int r, int c) const;

    double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& vec() { return data_; }
    const std::vector<double>& vec() const { return data_; }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    bool all_finite() const;

    std::string shape_str() const;

private:
    Shape shape_;
    std::vector<double> data_;
};

std::int64_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

} // namespace glyphflow::core
