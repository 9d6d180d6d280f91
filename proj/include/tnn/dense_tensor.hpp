#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace tnn {

using Shape = std::vector<std::size_t>;

std::size_t shape_product(std::span<const std::size_t> shape);
std::string shape_to_string(std::span<const std::size_t> shape);

/// Dense multi-way array of doubles in row-major order (last index fastest).
///
/// Every tensor has at least one mode and every mode size is >= 1, so a
/// scalar is represented as shape {1}. Folding and unfolding are pure
/// reinterpretations of the flat buffer.
class DenseTensor {
public:
    /// Scalar zero, shape {1}.
    DenseTensor();
    /// Zero-filled tensor of the given shape.
    explicit DenseTensor(Shape shape);
    DenseTensor(Shape shape, std::vector<double> data);
    DenseTensor(std::initializer_list<std::size_t> shape, std::initializer_list<double> data);

    static DenseTensor filled(Shape shape, double value);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t order() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t mode) const { return shape_.at(mode); }
    std::size_t size() const noexcept { return data_.size(); }

    std::span<const double> data() const noexcept { return data_; }
    std::span<double> data() noexcept { return data_; }
    const std::vector<double>& values() const noexcept { return data_; }

    double operator[](std::size_t flat) const { return data_[flat]; }
    double& operator[](std::size_t flat) { return data_[flat]; }

    /// Element access by multi-index; bounds are checked.
    double at(std::span<const std::size_t> index) const;
    double& at(std::span<const std::size_t> index);
    double at(std::initializer_list<std::size_t> index) const;
    double& at(std::initializer_list<std::size_t> index);

    std::size_t flat_index(std::span<const std::size_t> index) const;

    /// Same data, new shape with equal element count.
    DenseTensor reshaped(Shape shape) const&;
    DenseTensor reshaped(Shape shape) &&;

    friend bool operator==(const DenseTensor&, const DenseTensor&) = default;

private:
    Shape shape_;
    std::vector<double> data_;
};

/// Tensor-times-matrix along `mode` (0-based): b[.., j, ..] = sum_i a[.., i, ..] * m[j, i].
/// `m` must be an order-2 tensor of shape [J, shape[mode]]. A size-1 result mode is kept.
DenseTensor mode_n_product(const DenseTensor& t, const DenseTensor& m, std::size_t mode);

/// Folds a row-major I x J matrix into a tensor with the given mode sizes.
/// The row-major linear index is preserved.
DenseTensor fold_matrix(const DenseTensor& w, const Shape& dims);

/// Inverse of fold_matrix: reinterpret as a rows x cols matrix.
DenseTensor unfold_matrix(const DenseTensor& t, std::size_t rows, std::size_t cols);

/// Folds an I x J matrix into the order-2d tensor a[i_1..i_d, j_1..j_d] where
/// i and j are mixed-radix decomposed over row_dims and col_dims (most
/// significant digit first).
DenseTensor fold_matrix_paired(const DenseTensor& w, const Shape& row_dims, const Shape& col_dims);

/// Inverse of fold_matrix_paired.
DenseTensor unfold_matrix_paired(const DenseTensor& t, const Shape& row_dims, const Shape& col_dims);

/// General axis permutation: result mode k is input mode perm[k].
DenseTensor permute(const DenseTensor& t, std::span<const std::size_t> perm);

/// Mixed-radix digits of `index` over `radices` (most significant first).
std::vector<std::size_t> mixed_radix_digits(std::size_t index, std::span<const std::size_t> radices);

}  // namespace tnn
