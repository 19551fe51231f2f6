#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <vector>

#include "retvi/errors.hpp"

namespace retvi {

// Dense row-major tensor of doubles, up to 4 dimensions.
// Rasters follow the C x H x W layout; weights follow Cout x Cin x kh x kw.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
        for (int d : shape_)
            if (d <= 0)
                throw ShapeError("tensor dimension must be positive");
        data_.assign(numel(shape_), 0.0);
    }

    Tensor(std::initializer_list<int> shape) : Tensor(std::vector<int>(shape)) {}

    static Tensor full(std::vector<int> shape, double v) {
        Tensor t(std::move(shape));
        std::fill(t.data_.begin(), t.data_.end(), v);
        return t;
    }

    static Tensor scalar(double v) {
        Tensor t({1});
        t.data_[0] = v;
        return t;
    }

    const std::vector<int>& shape() const { return shape_; }
    int ndim() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
    std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double& operator[](std::int64_t i) { return data_[static_cast<size_t>(i)]; }
    double operator[](std::int64_t i) const { return data_[static_cast<size_t>(i)]; }

    // 3D raster accessors.
    double& at(int c, int y, int x) {
        return data_[static_cast<size_t>((static_cast<std::int64_t>(c) * shape_[1] + y) * shape_[2] + x)];
    }
    double at(int c, int y, int x) const {
        return data_[static_cast<size_t>((static_cast<std::int64_t>(c) * shape_[1] + y) * shape_[2] + x)];
    }

    int channels() const { return shape_.size() == 3 ? shape_[0] : throw ShapeError("not a 3D raster"); }
    int height() const { return shape_.size() == 3 ? shape_[1] : throw ShapeError("not a 3D raster"); }
    int width() const { return shape_.size() == 3 ? shape_[2] : throw ShapeError("not a 3D raster"); }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    static std::int64_t numel(const std::vector<int>& shape) {
        std::int64_t n = shape.empty() ? 0 : 1;
        for (int d : shape) n *= d;
        return n;
    }

private:
    std::vector<int> shape_;
    std::vector<double> data_;
};

bool all_finite(const Tensor& t);
double max_abs(const Tensor& t);
double max_abs_diff(const Tensor& a, const Tensor& b);

} // namespace retvi
