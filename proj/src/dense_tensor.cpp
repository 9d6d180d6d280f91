#include "tnn/dense_tensor.hpp"

#include "tnn/errors.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>
#include <utility>

namespace tnn {

std::size_t shape_product(std::span<const std::size_t> shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_to_string(std::span<const std::size_t> shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace {

void check_shape(const Shape& shape) {
    if (shape.empty()) throw ShapeError("tensor shape must have at least one mode");
    for (std::size_t s : shape) {
        if (s == 0) throw ShapeError("tensor mode sizes must be >= 1, got " + shape_to_string(shape));
    }
}

}  // namespace

DenseTensor::DenseTensor() : shape_{1}, data_(1, 0.0) {}

DenseTensor::DenseTensor(Shape shape) : shape_(std::move(shape)) {
    check_shape(shape_);
    data_.assign(shape_product(shape_), 0.0);
}

DenseTensor::DenseTensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape(shape_);
    if (data_.size() != shape_product(shape_)) {
        throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " +
                         shape_to_string(shape_));
    }
}

DenseTensor::DenseTensor(std::initializer_list<std::size_t> shape, std::initializer_list<double> data)
    : DenseTensor(Shape(shape), std::vector<double>(data)) {}

DenseTensor DenseTensor::filled(Shape shape, double value) {
    DenseTensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
}

std::size_t DenseTensor::flat_index(std::span<const std::size_t> index) const {
    if (index.size() != shape_.size()) {
        throw ShapeError("index of order " + std::to_string(index.size()) + " for tensor of shape " +
                         shape_to_string(shape_));
    }
    std::size_t flat = 0;
    for (std::size_t n = 0; n < shape_.size(); ++n) {
        if (index[n] >= shape_[n]) throw std::out_of_range("tensor index out of range");
        flat = flat * shape_[n] + index[n];
    }
    return flat;
}

double DenseTensor::at(std::span<const std::size_t> index) const { return data_[flat_index(index)]; }
double& DenseTensor::at(std::span<const std::size_t> index) { return data_[flat_index(index)]; }
double DenseTensor::at(std::initializer_list<std::size_t> index) const {
    return at(std::span<const std::size_t>(index.begin(), index.size()));
}
double& DenseTensor::at(std::initializer_list<std::size_t> index) {
    return at(std::span<const std::size_t>(index.begin(), index.size()));
}

DenseTensor DenseTensor::reshaped(Shape shape) const& {
    return DenseTensor(std::move(shape), data_);
}

DenseTensor DenseTensor::reshaped(Shape shape) && {
    return DenseTensor(std::move(shape), std::move(data_));
}

DenseTensor mode_n_product(const DenseTensor& t, const DenseTensor& m, std::size_t mode) {
    if (mode >= t.order()) {
        throw ShapeError("mode " + std::to_string(mode) + " out of range for tensor of shape " +
                         shape_to_string(t.shape()));
    }
    if (m.order() != 2 || m.dim(1) != t.dim(mode)) {
        throw ShapeError("mode-n product: matrix of shape " + shape_to_string(m.shape()) +
                         " does not match mode " + std::to_string(mode) + " of tensor " +
                         shape_to_string(t.shape()));
    }
    const std::size_t in = t.dim(mode);
    const std::size_t out = m.dim(0);
    const std::size_t outer = shape_product(std::span(t.shape()).first(mode));
    const std::size_t inner = shape_product(std::span(t.shape()).subspan(mode + 1));

    Shape result_shape = t.shape();
    result_shape[mode] = out;
    DenseTensor result(result_shape);

    const auto a = t.data();
    const auto u = m.data();
    auto b = result.data();
    for (std::size_t o = 0; o < outer; ++o) {
        const double* a_block = a.data() + o * in * inner;
        double* b_block = b.data() + o * out * inner;
        for (std::size_t j = 0; j < out; ++j) {
            double* b_row = b_block + j * inner;
            for (std::size_t i = 0; i < in; ++i) {
                const double coeff = u[j * in + i];
                const double* a_row = a_block + i * inner;
                for (std::size_t r = 0; r < inner; ++r) b_row[r] += coeff * a_row[r];
            }
        }
    }
    return result;
}

DenseTensor fold_matrix(const DenseTensor& w, const Shape& dims) {
    if (w.order() != 2) throw ShapeError("fold_matrix expects an order-2 tensor");
    if (shape_product(dims) != w.size()) {
        throw ShapeError("fold dims " + shape_to_string(dims) + " do not multiply to " +
                         std::to_string(w.dim(0)) + "x" + std::to_string(w.dim(1)));
    }
    return w.reshaped(dims);
}

DenseTensor unfold_matrix(const DenseTensor& t, std::size_t rows, std::size_t cols) {
    if (rows * cols != t.size()) {
        throw ShapeError("cannot unfold tensor of shape " + shape_to_string(t.shape()) + " into " +
                         std::to_string(rows) + "x" + std::to_string(cols));
    }
    return t.reshaped({rows, cols});
}

DenseTensor fold_matrix_paired(const DenseTensor& w, const Shape& row_dims, const Shape& col_dims) {
    if (w.order() != 2) throw ShapeError("fold_matrix_paired expects an order-2 tensor");
    if (row_dims.size() != col_dims.size() || row_dims.empty()) {
        throw ShapeError("row and column dims must have equal, non-zero length");
    }
    if (shape_product(row_dims) != w.dim(0) || shape_product(col_dims) != w.dim(1)) {
        throw ShapeError("paired dims " + shape_to_string(row_dims) + "," + shape_to_string(col_dims) +
                         " do not match matrix " + shape_to_string(w.shape()));
    }
    // i = mixed radix of (i_1..i_d) and j of (j_1..j_d), so i*J + j is exactly
    // the row-major index of (i_1..i_d, j_1..j_d).
    Shape dims = row_dims;
    dims.insert(dims.end(), col_dims.begin(), col_dims.end());
    return w.reshaped(std::move(dims));
}

DenseTensor unfold_matrix_paired(const DenseTensor& t, const Shape& row_dims, const Shape& col_dims) {
    Shape dims = row_dims;
    dims.insert(dims.end(), col_dims.begin(), col_dims.end());
    if (dims != t.shape()) {
        throw ShapeError("tensor shape " + shape_to_string(t.shape()) + " does not match paired dims");
    }
    return t.reshaped({shape_product(row_dims), shape_product(col_dims)});
}

DenseTensor permute(const DenseTensor& t, std::span<const std::size_t> perm) {
    const std::size_t d = t.order();
    if (perm.size() != d) throw ShapeError("permutation length does not match tensor order");
    std::vector<bool> seen(d, false);
    for (std::size_t p : perm) {
        if (p >= d || seen[p]) throw ShapeError("invalid axis permutation");
        seen[p] = true;
    }
    Shape out_shape(d);
    for (std::size_t k = 0; k < d; ++k) out_shape[k] = t.dim(perm[k]);

    // Input strides, viewed in output axis order.
    std::vector<std::size_t> in_stride(d);
    {
        std::size_t s = 1;
        for (std::size_t n = d; n-- > 0;) {
            in_stride[n] = s;
            s *= t.dim(n);
        }
    }
    std::vector<std::size_t> stride(d);
    for (std::size_t k = 0; k < d; ++k) stride[k] = in_stride[perm[k]];

    DenseTensor out(out_shape);
    std::vector<std::size_t> idx(d, 0);
    std::size_t src = 0;
    const auto in = t.data();
    auto dst = out.data();
    for (std::size_t flat = 0; flat < out.size(); ++flat) {
        dst[flat] = in[src];
        for (std::size_t k = d; k-- > 0;) {
            if (++idx[k] < out_shape[k]) {
                src += stride[k];
                break;
            }
            src -= stride[k] * (out_shape[k] - 1);
            idx[k] = 0;
        }
    }
    return out;
}

std::vector<std::size_t> mixed_radix_digits(std::size_t index, std::span<const std::size_t> radices) {
    std::vector<std::size_t> digits(radices.size());
    for (std::size_t n = radices.size(); n-- > 0;) {
        digits[n] = index % radices[n];
        index /= radices[n];
    }
    if (index != 0) throw std::out_of_range("index exceeds mixed-radix range");
    return digits;
}

}  // namespace tnn
