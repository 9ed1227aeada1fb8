#include "ctxsent/tensor.hpp"

#include <cmath>
#include <sstream>

#include "ctxsent/error.hpp"

namespace ctxsent {

namespace {
int64_t shape_size(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) {
        if (d < 0) throw ValidationError("tensor dimension must be non-negative");
        n *= d;
    }
    return n;
}
} // namespace

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<size_t>(shape_size(shape_)), 0.0);
}

Tensor::Tensor(int rows, int cols) : Tensor(std::vector<int>{rows, cols}) {}

Tensor::Tensor(int n) : Tensor(std::vector<int>{n}) {}

Tensor Tensor::zeros_like(const Tensor& other) { return Tensor(other.shape_); }

Tensor Tensor::from_rows(const std::vector<std::vector<double>>& rows) {
    int r = static_cast<int>(rows.size());
    int c = r > 0 ? static_cast<int>(rows[0].size()) : 0;
    Tensor t(r, c);
    for (int i = 0; i < r; ++i) {
        if (static_cast<int>(rows[i].size()) != c)
            throw ValidationError("ragged rows in tensor literal");
        for (int j = 0; j < c; ++j) t(i, j) = rows[i][j];
    }
    return t;
}

Tensor Tensor::identity(int n) {
    Tensor t(n, n);
    for (int i = 0; i < n; ++i) t(i, i) = 1.0;
    return t;
}

int Tensor::rows() const {
    if (rank() != 2) throw ValidationError("rows() on tensor of rank " + std::to_string(rank()));
    return shape_[0];
}

int Tensor::cols() const {
    if (rank() != 2) throw ValidationError("cols() on tensor of rank " + std::to_string(rank()));
    return shape_[1];
}

double& Tensor::operator()(int i, int j) {
    return data_[static_cast<size_t>(i) * shape_[1] + j];
}

double Tensor::operator()(int i, int j) const {
    return data_[static_cast<size_t>(i) * shape_[1] + j];
}

void Tensor::fill(double v) {
    for (auto& x : data_) x = v;
}

bool Tensor::all_finite() const {
    for (double x : data_)
        if (!std::isfinite(x)) return false;
    return true;
}

void Tensor::add_(const Tensor& other) {
    if (!same_shape(other)) throw ValidationError("add_: shape mismatch " + shape_str() + " vs " + other.shape_str());
    for (size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
}

void Tensor::scale_(double s) {
    for (auto& x : data_) x *= s;
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape_.size(); ++i) os << (i ? "," : "") << shape_[i];
    os << "]";
    return os.str();
}

} // namespace ctxsent
