#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace posediff {

// Dense row-major f64 tensor.  Everything in this library is small (the
// largest activations are a few thousand entries), so shapes are plain
// vectors of ints and data lives in one contiguous buffer.  All math runs in
// double; there is deliberately no float path.
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape);
    Tensor(std::vector<int> shape, std::vector<double> data);

    static Tensor zeros(std::vector<int> shape);
    static Tensor full(std::vector<int> shape, double value);
    static Tensor scalar(double value);
    // 1-D tensor from a value list.
    static Tensor row(std::vector<double> values);

    const std::vector<int>& shape() const { return shape_; }
    int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    int rank() const { return static_cast<int>(shape_.size()); }
    std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double& operator[](std::int64_t i) { return data_[static_cast<size_t>(i)]; }
    double operator[](std::int64_t i) const { return data_[static_cast<size_t>(i)]; }

    // 2-D accessors; throw ShapeError if the tensor is not a matrix.
    int rows() const;
    int cols() const;
    double& at(int r, int c);
    double at(int r, int c) const;

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    bool all_finite() const;
    std::string shape_str() const;

    // The scalar value; throws ShapeError unless size() == 1.
    double item() const;

  private:
    std::vector<int> shape_;
    std::vector<double> data_;
};

}  // namespace posediff
