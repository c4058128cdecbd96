#include "posediff/tensor.hpp"

#include <cmath>
#include <sstream>

#include "posediff/errors.hpp"

namespace posediff {

namespace {

std::int64_t shape_size(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int d : shape) {
        if (d < 0) throw ShapeError("negative dimension in tensor shape");
        n *= d;
    }
    return n;
}

}  // namespace

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<size_t>(shape_size(shape_)), 0.0);
}

Tensor::Tensor(std::vector<int> shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_size(shape_) != static_cast<std::int64_t>(data_.size()))
        throw ShapeError("tensor data length does not match shape " + shape_str());
}

Tensor Tensor::zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

Tensor Tensor::full(std::vector<int> shape, double value) {
    Tensor t(std::move(shape));
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = value;
    return t;
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

Tensor Tensor::row(std::vector<double> values) {
    const int n = static_cast<int>(values.size());
    return Tensor({n}, std::move(values));
}

int Tensor::rows() const {
    if (rank() != 2) throw ShapeError("rows() on tensor of shape " + shape_str());
    return shape_[0];
}

int Tensor::cols() const {
    if (rank() != 2) throw ShapeError("cols() on tensor of shape " + shape_str());
    return shape_[1];
}

double& Tensor::at(int r, int c) {
    if (rank() != 2) throw ShapeError("at(r,c) on tensor of shape " + shape_str());
    if (r < 0 || r >= shape_[0] || c < 0 || c >= shape_[1])
        throw ShapeError("index out of range for tensor of shape " + shape_str());
    return data_[static_cast<size_t>(r) * shape_[1] + c];
}

double Tensor::at(int r, int c) const { return const_cast<Tensor*>(this)->at(r, c); }

bool Tensor::all_finite() const {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < shape_.size(); ++i) os << (i ? "," : "") << shape_[i];
    os << ")";
    return os.str();
}

double Tensor::item() const {
    if (size() != 1) throw ShapeError("item() on non-scalar tensor of shape " + shape_str());
    return data_[0];
}

}  // namespace posediff
