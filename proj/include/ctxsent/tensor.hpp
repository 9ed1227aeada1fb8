#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace ctxsent {

// Dense row-major tensor of doubles. Most of the project works with rank-2
// tensors; rank-1 is used for biases and layer-norm parameters.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape);
    Tensor(int rows, int cols);
    explicit Tensor(int n);

    static Tensor zeros_like(const Tensor& other);
    static Tensor from_rows(const std::vector<std::vector<double>>& rows);
    static Tensor identity(int n);

    const std::vector<int>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int64_t size() const { return static_cast<int64_t>(data_.size()); }
    int rows() const;
    int cols() const;

    double& operator()(int i, int j);
    double operator()(int i, int j) const;
    double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    void fill(double v);
    void zero() { fill(0.0); }
    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    bool all_finite() const;

    // Elementwise accumulate; shapes must match.
    void add_(const Tensor& other);
    void scale_(double s);

    std::string shape_str() const;

private:
    std::vector<int> shape_;
    std::vector<double> data_;
};

// Trainable tensor with a gradient buffer of identical shape.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;

    Parameter() = default;
    Parameter(std::string n, Tensor v)
        : name(std::move(n)), value(std::move(v)), grad(Tensor::zeros_like(value)) {}

    void zero_grad() { grad.zero(); }
};

} // namespace ctxsent
