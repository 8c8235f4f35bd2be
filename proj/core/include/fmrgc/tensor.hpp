#pragma once

#include <bit>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fmrgc/errors.hpp"

namespace fmrgc {

// Dense N-dimensional array of doubles, row-major. Plain value semantics:
// copying copies the buffer. Tensors recorded on a computation graph are
// treated as immutable; mutation helpers are for leaves the caller owns
// (parameters between steps, attack iterates, buffers under construction).
class Tensor {
  public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape)
        : shape_(std::move(shape)), data_(checked_size(shape_), 0.0) {}

    Tensor(std::vector<int> shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (checked_size(shape_) != data_.size())
            throw ShapeMismatchError("tensor data length does not match shape");
    }

    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    static Tensor full(std::vector<int> shape, double v) {
        Tensor t(std::move(shape));
        for (double& x : t.data_) x = v;
        return t;
    }

    const std::vector<int>& shape() const { return shape_; }
    int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
    int rank() const { return static_cast<int>(shape_.size()); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::span<double> values() { return data_; }
    std::span<const double> values() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    bool is_scalar() const { return data_.size() == 1; }

    double item() const {
        if (!is_scalar()) throw NotScalarError("item() on non-scalar tensor");
        return data_[0];
    }

    // Same buffer under a new shape; element count must be preserved.
    Tensor reshaped(std::vector<int> new_shape) const {
        if (checked_size(new_shape) != data_.size())
            throw ShapeMismatchError("reshape changes element count");
        return Tensor(std::move(new_shape), data_);
    }

    bool bit_equal(const Tensor& o) const {
        if (shape_ != o.shape_) return false;
        for (std::size_t i = 0; i < data_.size(); ++i) {
            if (std::bit_cast<std::uint64_t>(data_[i]) != std::bit_cast<std::uint64_t>(o.data_[i]))
                return false;
        }
        return true;
    }

    static std::string shape_string(const std::vector<int>& shape) {
        std::string s = "[";
        for (std::size_t i = 0; i < shape.size(); ++i) {
            if (i) s += ",";
            s += std::to_string(shape[i]);
        }
        return s + "]";
    }

  private:
    static std::size_t checked_size(const std::vector<int>& shape) {
        std::size_t n = 1;
        for (int d : shape) {
            if (d <= 0) throw ShapeMismatchError("non-positive dimension in shape");
            n *= static_cast<std::size_t>(d);
        }
        return shape.empty() ? 0 : n;
    }

    std::vector<int> shape_;
    std::vector<double> data_;
};

}  // namespace fmrgc
