#pragma once

#include <cstdint>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cgcce {

using Shape = std::vector<std::int64_t>;

/// Raised whenever operand shapes do not satisfy an operation's contract.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

std::string to_string(const Shape& shape);
std::int64_t shape_numel(const Shape& shape);

/// Dense row-major array of doubles. Feature maps use NCHW order.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> values);

    static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

    [[nodiscard]] const Shape& shape() const noexcept { return shape_; }
    [[nodiscard]] std::int64_t rank() const noexcept { return static_cast<std::int64_t>(shape_.size()); }
    [[nodiscard]] std::int64_t dim(std::int64_t i) const;
    [[nodiscard]] std::int64_t numel() const noexcept { return static_cast<std::int64_t>(data_.size()); }
    [[nodiscard]] bool empty() const noexcept { return data_.empty() && shape_.empty(); }

    [[nodiscard]] double* data() noexcept { return data_.data(); }
    [[nodiscard]] const double* data() const noexcept { return data_.data(); }
    [[nodiscard]] std::span<double> values() noexcept { return data_; }
    [[nodiscard]] std::span<const double> values() const noexcept { return data_; }

    double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    // 4-D accessors (N, C, H, W).
    double& at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w);
    double at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const;

    /// Same data, new shape; element count must match.
    [[nodiscard]] Tensor reshaped(Shape shape) const;
    void fill(double value);

    [[nodiscard]] double max_abs() const;

private:
    Shape shape_;
    std::vector<double> data_;
};

double max_abs_diff(const Tensor& a, const Tensor& b);
bool bitwise_equal(const Tensor& a, const Tensor& b);
void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

}  // namespace cgcce
