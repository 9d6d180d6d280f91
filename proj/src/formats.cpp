#include "tnn/formats.hpp"

#include "tnn/errors.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cctype>
#include <numeric>

namespace tnn {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

ConstMatrixMap as_matrix(std::span<const double> data, std::size_t rows, std::size_t cols) {
    return ConstMatrixMap(data.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

void require(bool ok, const std::string& msg) {
    if (!ok) throw ShapeError(msg);
}

// ---- CP -------------------------------------------------------------------

void check_cp(std::span<const DenseTensor> f) {
    require(!f.empty(), "CP needs at least one factor matrix");
    const std::size_t rank = f[0].order() == 2 ? f[0].dim(1) : 0;
    for (const auto& u : f) {
        require(u.order() == 2 && u.dim(1) == rank, "CP factors must be matrices with equal column count");
    }
}

// Khatri-Rao (column-wise Kronecker) product of factors [first, last), rows in
// row-major order of the mode indices. Empty range gives a 1 x R row of ones.
std::vector<double> khatri_rao(std::span<const DenseTensor> f, std::size_t first, std::size_t last,
                               std::size_t rank, std::size_t* rows_out) {
    std::vector<double> k(rank, 1.0);
    std::size_t rows = 1;
    for (std::size_t n = first; n < last; ++n) {
        const std::size_t in = f[n].dim(0);
        const auto u = f[n].data();
        std::vector<double> next(rows * in * rank);
        for (std::size_t p = 0; p < rows; ++p) {
            const double* kp = k.data() + p * rank;
            for (std::size_t i = 0; i < in; ++i) {
                const double* ui = u.data() + i * rank;
                double* out = next.data() + (p * in + i) * rank;
                for (std::size_t r = 0; r < rank; ++r) out[r] = kp[r] * ui[r];
            }
        }
        k = std::move(next);
        rows *= in;
    }
    *rows_out = rows;
    return k;
}

DenseTensor reconstruct_cp(std::span<const DenseTensor> f) {
    check_cp(f);
    const std::size_t d = f.size();
    const std::size_t rank = f[0].dim(1);
    Shape shape(d);
    for (std::size_t n = 0; n < d; ++n) shape[n] = f[n].dim(0);
    DenseTensor out(shape);

    std::size_t rows = 0;
    const auto left = khatri_rao(f, 0, d - 1, rank, &rows);
    const std::size_t last = f[d - 1].dim(0);
    const auto u = f[d - 1].data();
    auto a = out.data();
    // Plain sequential sum over the rank index, so zero columns drop out exactly.
    for (std::size_t p = 0; p < rows; ++p) {
        const double* kp = left.data() + p * rank;
        for (std::size_t j = 0; j < last; ++j) {
            const double* uj = u.data() + j * rank;
            double acc = 0.0;
            for (std::size_t r = 0; r < rank; ++r) acc += kp[r] * uj[r];
            a[p * last + j] = acc;
        }
    }
    return out;
}

std::vector<DenseTensor> backprop_cp(std::span<const DenseTensor> f, const DenseTensor& g) {
    check_cp(f);
    const std::size_t d = f.size();
    const std::size_t rank = f[0].dim(1);
    std::vector<DenseTensor> grads;
    grads.reserve(d);
    for (std::size_t n = 0; n < d; ++n) {
        std::size_t left_rows = 0;
        std::size_t right_rows = 0;
        const auto left = khatri_rao(f, 0, n, rank, &left_rows);
        const auto right = khatri_rao(f, n + 1, d, rank, &right_rows);
        const std::size_t in = f[n].dim(0);

        DenseTensor grad({in, rank});
        auto gu = grad.data();
        if (right_rows >= left_rows) {
            // t[(p, i), r] = sum_q g[p, i, q] right[q, r]
            const RowMatrix t = as_matrix(g.data(), left_rows * in, right_rows) * as_matrix(right, right_rows, rank);
            for (std::size_t p = 0; p < left_rows; ++p) {
                const double* lp = left.data() + p * rank;
                for (std::size_t i = 0; i < in; ++i) {
                    const double* tr = t.data() + (p * in + i) * rank;
                    double* out = gu.data() + i * rank;
                    for (std::size_t r = 0; r < rank; ++r) out[r] += lp[r] * tr[r];
                }
            }
        } else {
            // t[(i, q), r] = sum_p g[p, i, q] left[p, r]
            const RowMatrix t =
                as_matrix(g.data(), left_rows, in * right_rows).transpose() * as_matrix(left, left_rows, rank);
            for (std::size_t i = 0; i < in; ++i) {
                double* out = gu.data() + i * rank;
                for (std::size_t q = 0; q < right_rows; ++q) {
                    const double* rq = right.data() + q * rank;
                    const double* tr = t.data() + (i * right_rows + q) * rank;
                    for (std::size_t r = 0; r < rank; ++r) out[r] += rq[r] * tr[r];
                }
            }
        }
        grads.push_back(std::move(grad));
    }
    return grads;
}

// ---- Tucker ---------------------------------------------------------------

void check_tucker(std::span<const DenseTensor> f) {
    require(f.size() >= 2, "Tucker needs factor matrices plus a core");
    const std::size_t d = f.size() - 1;
    const DenseTensor& core = f[d];
    require(core.order() == d, "Tucker core order must equal the number of factor matrices");
    for (std::size_t n = 0; n < d; ++n) {
        require(f[n].order() == 2 && f[n].dim(1) == core.dim(n),
                "Tucker factor " + std::to_string(n) + " does not match core mode size");
    }
}

DenseTensor reconstruct_tucker(std::span<const DenseTensor> f) {
    check_tucker(f);
    const std::size_t d = f.size() - 1;
    DenseTensor t = f[d];
    for (std::size_t n = 0; n < d; ++n) t = mode_n_product(t, f[n], n);
    return t;
}

DenseTensor transpose_matrix(const DenseTensor& m) {
    const std::size_t perm[] = {1, 0};
    return permute(m, perm);
}

std::vector<DenseTensor> backprop_tucker(std::span<const DenseTensor> f, const DenseTensor& g) {
    check_tucker(f);
    const std::size_t d = f.size() - 1;
    std::vector<DenseTensor> grads;
    grads.reserve(d + 1);
    for (std::size_t n = 0; n < d; ++n) {
        // b = core times every factor except mode n
        DenseTensor b = f[d];
        for (std::size_t m = 0; m < d; ++m) {
            if (m != n) b = mode_n_product(b, f[m], m);
        }
        const std::size_t in = g.dim(n);
        const std::size_t rn = b.dim(n);
        const std::size_t outer = shape_product(std::span(g.shape()).first(n));
        const std::size_t inner = shape_product(std::span(g.shape()).subspan(n + 1));
        RowMatrix acc = RowMatrix::Zero(static_cast<Eigen::Index>(in), static_cast<Eigen::Index>(rn));
        for (std::size_t p = 0; p < outer; ++p) {
            auto gp = as_matrix(g.data().subspan(p * in * inner, in * inner), in, inner);
            auto bp = as_matrix(b.data().subspan(p * rn * inner, rn * inner), rn, inner);
            acc.noalias() += gp * bp.transpose();
        }
        grads.emplace_back(Shape{in, rn}, std::vector<double>(acc.data(), acc.data() + acc.size()));
    }
    DenseTensor core_grad = g;
    for (std::size_t n = 0; n < d; ++n) core_grad = mode_n_product(core_grad, transpose_matrix(f[n]), n);
    grads.push_back(std::move(core_grad));
    return grads;
}

// ---- TT -------------------------------------------------------------------

void check_tt(std::span<const DenseTensor> f) {
    require(!f.empty(), "TT needs at least one core");
    for (std::size_t n = 0; n < f.size(); ++n) {
        require(f[n].order() == 3, "TT cores must be order-3");
        if (n > 0) require(f[n].dim(0) == f[n - 1].dim(2), "adjacent TT core ranks disagree");
    }
    require(f.front().dim(0) == 1 && f.back().dim(2) == 1, "TT boundary ranks must be 1");
}

// Left-to-right contraction; returns the (prod I) x R_last matrix.
std::vector<double> tt_chain(std::span<const DenseTensor> cores, std::size_t* rows_out) {
    std::vector<double> left(1, 1.0);
    std::size_t rows = 1;
    std::size_t rank = 1;
    for (const auto& core : cores) {
        const std::size_t in = core.dim(1);
        const std::size_t next_rank = core.dim(2);
        const auto c = core.data();
        // next[p, (i, b)] = sum_a left[p, a] c[a, (i, b)]
        const RowMatrix m = as_matrix(left, rows, rank) * as_matrix(c, rank, in * next_rank);
        std::vector<double> next(m.data(), m.data() + m.size());
        left = std::move(next);
        rows *= in;
        rank = next_rank;
    }
    *rows_out = rows;
    return left;
}

DenseTensor reconstruct_tt(std::span<const DenseTensor> f) {
    check_tt(f);
    Shape shape(f.size());
    for (std::size_t n = 0; n < f.size(); ++n) shape[n] = f[n].dim(1);
    std::size_t rows = 0;
    auto data = tt_chain(f, &rows);
    return DenseTensor(std::move(shape), std::move(data));
}

std::vector<DenseTensor> backprop_tt(std::span<const DenseTensor> f, const DenseTensor& g) {
    check_tt(f);
    const std::size_t d = f.size();
    // suffix[n] = contraction of cores n..d-1 as an R_{n-1} x (I_n..I_d) matrix.
    std::vector<std::vector<double>> suffix(d + 1);
    std::vector<std::size_t> suffix_cols(d + 1, 1);
    suffix[d] = {1.0};
    for (std::size_t n = d; n-- > 0;) {
        const std::size_t r0 = f[n].dim(0);
        const std::size_t in = f[n].dim(1);
        const std::size_t r1 = f[n].dim(2);
        RowMatrix s = as_matrix(f[n].data(), r0 * in, r1) * as_matrix(suffix[n + 1], r1, suffix_cols[n + 1]);
        suffix[n].assign(s.data(), s.data() + s.size());
        suffix_cols[n] = in * suffix_cols[n + 1];
    }

    std::vector<DenseTensor> grads;
    grads.reserve(d);
    std::vector<double> prefix(1, 1.0);
    std::size_t prefix_rows = 1;
    for (std::size_t n = 0; n < d; ++n) {
        const std::size_t r0 = f[n].dim(0);
        const std::size_t in = f[n].dim(1);
        const std::size_t r1 = f[n].dim(2);
        const std::size_t right = suffix_cols[n + 1];
        // t[(a, i), q] = sum_p prefix[p, a] g[p, i, q]
        RowMatrix t = as_matrix(prefix, prefix_rows, r0).transpose() *
                      as_matrix(g.data(), prefix_rows, in * right);
        // grad[(a, i), b] = sum_q t[(a, i), q] suffix[b, q]
        RowMatrix gr = Eigen::Map<const RowMatrix>(t.data(), static_cast<Eigen::Index>(r0 * in),
                                                   static_cast<Eigen::Index>(right)) *
                       as_matrix(suffix[n + 1], r1, right).transpose();
        grads.emplace_back(Shape{r0, in, r1}, std::vector<double>(gr.data(), gr.data() + gr.size()));

        RowMatrix next = as_matrix(prefix, prefix_rows, r0) * as_matrix(f[n].data(), r0, in * r1);
        prefix.assign(next.data(), next.data() + next.size());
        prefix_rows *= in;
    }
    return grads;
}

// ---- TTM ------------------------------------------------------------------

void check_ttm(std::span<const DenseTensor> f) {
    require(!f.empty(), "TTM needs at least one core");
    for (std::size_t n = 0; n < f.size(); ++n) {
        require(f[n].order() == 4, "TTM cores must be order-4");
        if (n > 0) require(f[n].dim(0) == f[n - 1].dim(3), "adjacent TTM core ranks disagree");
    }
    require(f.front().dim(0) == 1 && f.back().dim(3) == 1, "TTM boundary ranks must be 1");
}

std::vector<DenseTensor> ttm_as_tt(std::span<const DenseTensor> f) {
    std::vector<DenseTensor> merged;
    merged.reserve(f.size());
    for (const auto& c : f) merged.push_back(c.reshaped({c.dim(0), c.dim(1) * c.dim(2), c.dim(3)}));
    return merged;
}

// (I_1, J_1, ..., I_d, J_d) -> (I_1..I_d, J_1..J_d)
std::vector<std::size_t> ttm_output_perm(std::size_t d) {
    std::vector<std::size_t> perm(2 * d);
    for (std::size_t k = 0; k < d; ++k) {
        perm[k] = 2 * k;
        perm[d + k] = 2 * k + 1;
    }
    return perm;
}

std::vector<std::size_t> ttm_input_perm(std::size_t d) {
    std::vector<std::size_t> perm(2 * d);
    for (std::size_t k = 0; k < d; ++k) {
        perm[2 * k] = k;
        perm[2 * k + 1] = d + k;
    }
    return perm;
}

DenseTensor reconstruct_ttm(std::span<const DenseTensor> f) {
    check_ttm(f);
    const std::size_t d = f.size();
    const auto merged = ttm_as_tt(f);
    std::size_t rows = 0;
    auto data = tt_chain(merged, &rows);
    Shape interleaved;
    for (const auto& c : f) {
        interleaved.push_back(c.dim(1));
        interleaved.push_back(c.dim(2));
    }
    const auto perm = ttm_output_perm(d);
    return permute(DenseTensor(std::move(interleaved), std::move(data)), perm);
}

std::vector<DenseTensor> backprop_ttm(std::span<const DenseTensor> f, const DenseTensor& g) {
    check_ttm(f);
    const std::size_t d = f.size();
    require(g.order() == 2 * d, "TTM gradient must be an order-2d tensor");
    const auto perm = ttm_input_perm(d);
    const DenseTensor gi = permute(g, perm);
    Shape merged_shape(d);
    for (std::size_t n = 0; n < d; ++n) merged_shape[n] = f[n].dim(1) * f[n].dim(2);
    const auto merged = ttm_as_tt(f);
    auto grads = backprop_tt(merged, gi.reshaped(merged_shape));
    for (std::size_t n = 0; n < d; ++n) grads[n] = std::move(grads[n]).reshaped(f[n].shape());
    return grads;
}

Shape expected_full_shape(FormatKind kind, std::span<const DenseTensor> f) {
    Shape s;
    switch (kind) {
        case FormatKind::CP:
            for (const auto& u : f) s.push_back(u.dim(0));
            break;
        case FormatKind::Tucker:
            for (std::size_t n = 0; n + 1 < f.size(); ++n) s.push_back(f[n].dim(0));
            break;
        case FormatKind::TT:
            for (const auto& c : f) s.push_back(c.dim(1));
            break;
        case FormatKind::TTM:
            for (const auto& c : f) s.push_back(c.dim(1));
            for (const auto& c : f) s.push_back(c.dim(2));
            break;
    }
    return s;
}

}  // namespace

std::string_view to_string(FormatKind kind) {
    switch (kind) {
        case FormatKind::CP: return "cp";
        case FormatKind::Tucker: return "tucker";
        case FormatKind::TT: return "tt";
        case FormatKind::TTM: return "ttm";
    }
    return "?";
}

FormatKind parse_format(std::string_view name) {
    std::string lower(name);
    std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
    if (lower == "cp") return FormatKind::CP;
    if (lower == "tucker") return FormatKind::Tucker;
    if (lower == "tt") return FormatKind::TT;
    if (lower == "ttm") return FormatKind::TTM;
    throw std::invalid_argument("unknown tensor format '" + std::string(name) + "'");
}

std::vector<Shape> factor_shapes(FormatKind kind, const Shape& dims, const Shape& col_dims,
                                 std::span<const std::size_t> ranks) {
    const std::size_t d = dims.size();
    require(d >= 1, "a factorized layer needs at least one mode");
    std::vector<Shape> shapes;
    switch (kind) {
        case FormatKind::CP:
            require(ranks.size() == 1, "CP takes a single rank");
            for (std::size_t n = 0; n < d; ++n) shapes.push_back({dims[n], ranks[0]});
            break;
        case FormatKind::Tucker: {
            require(ranks.size() == d, "Tucker takes one rank per mode");
            Shape core;
            for (std::size_t n = 0; n < d; ++n) {
                shapes.push_back({dims[n], ranks[n]});
                core.push_back(ranks[n]);
            }
            shapes.push_back(core);
            break;
        }
        case FormatKind::TT:
        case FormatKind::TTM: {
            require(d >= 2, "TT/TTM layers need at least two modes");
            require(ranks.size() == d - 1, "TT/TTM take d-1 interior ranks");
            if (kind == FormatKind::TTM) require(col_dims.size() == d, "TTM row and column dims differ in length");
            for (std::size_t n = 0; n < d; ++n) {
                const std::size_t r0 = n == 0 ? 1 : ranks[n - 1];
                const std::size_t r1 = n + 1 == d ? 1 : ranks[n];
                if (kind == FormatKind::TT) {
                    shapes.push_back({r0, dims[n], r1});
                } else {
                    shapes.push_back({r0, dims[n], col_dims[n], r1});
                }
            }
            break;
        }
    }
    for (const auto& s : shapes) {
        for (std::size_t v : s) require(v >= 1, "ranks and dims must be >= 1");
    }
    return shapes;
}

std::size_t lambda_vector_count(FormatKind kind, std::size_t order) {
    switch (kind) {
        case FormatKind::CP: return 1;
        case FormatKind::Tucker: return order;
        case FormatKind::TT:
        case FormatKind::TTM: return order - 1;
    }
    return 0;
}

std::vector<SliceRef> governed_slices(FormatKind kind, std::size_t order, std::size_t v) {
    std::vector<SliceRef> out;
    switch (kind) {
        case FormatKind::CP:
            for (std::size_t n = 0; n < order; ++n) out.push_back({n, 1});
            break;
        case FormatKind::Tucker:
            out.push_back({v, 1});
            break;
        case FormatKind::TT:
        case FormatKind::TTM: {
            const std::size_t last_axis = kind == FormatKind::TT ? 2 : 3;
            out.push_back({v, last_axis});
            if (v + 2 == order) out.push_back({order - 1, 0});
            break;
        }
    }
    return out;
}

std::vector<SliceRef> coupled_slices(FormatKind kind, std::size_t order, std::size_t v) {
    switch (kind) {
        case FormatKind::CP:
            return governed_slices(kind, order, v);
        case FormatKind::Tucker:
            return {{v, 1}, {order, v}};
        case FormatKind::TT:
            return {{v, 2}, {v + 1, 0}};
        case FormatKind::TTM:
            return {{v, 3}, {v + 1, 0}};
    }
    return {};
}

std::optional<SliceRef> governing_axis(FormatKind kind, std::size_t order, std::size_t factor,
                                       std::size_t* lambda_vector) {
    std::size_t v = 0;
    std::optional<SliceRef> ref;
    switch (kind) {
        case FormatKind::CP:
            ref = SliceRef{factor, 1};
            v = 0;
            break;
        case FormatKind::Tucker:
            if (factor < order) {
                ref = SliceRef{factor, 1};
                v = factor;
            }
            break;
        case FormatKind::TT:
        case FormatKind::TTM:
            if (factor + 1 < order) {
                ref = SliceRef{factor, kind == FormatKind::TT ? std::size_t{2} : std::size_t{3}};
                v = factor;
            } else {
                ref = SliceRef{factor, 0};
                v = order - 2;
            }
            break;
    }
    if (ref && lambda_vector) *lambda_vector = v;
    return ref;
}

Shape FactorizedLayer::full_shape() const {
    Shape s = dims;
    if (kind == FormatKind::TTM) s.insert(s.end(), col_dims.begin(), col_dims.end());
    return s;
}

std::size_t FactorizedLayer::full_size() const { return shape_product(full_shape()); }

std::vector<std::size_t> FactorizedLayer::current_ranks() const {
    std::vector<std::size_t> r;
    r.reserve(lambdas.size());
    for (const auto& l : lambdas) r.push_back(l.size());
    return r;
}

std::vector<DenseTensor> FactorizedLayer::means() const {
    std::vector<DenseTensor> out;
    out.reserve(factors.size());
    for (const auto& f : factors) out.push_back(f.mean);
    return out;
}

std::vector<DenseTensor> FactorizedLayer::stddevs() const {
    std::vector<DenseTensor> out;
    out.reserve(factors.size());
    for (const auto& f : factors) out.push_back(f.stddev);
    return out;
}

void FactorizedLayer::validate() const {
    require(lambdas.size() == lambda_vector_count(kind, order()),
            "layer has the wrong number of lambda vectors for its format");
    const auto shapes = factor_shapes(kind, dims, col_dims, current_ranks());
    require(shapes.size() == factors.size(), "layer has the wrong number of factors");
    for (std::size_t i = 0; i < shapes.size(); ++i) {
        require(factors[i].mean.shape() == shapes[i] && factors[i].stddev.shape() == shapes[i],
                "factor " + std::to_string(i) + " has shape " + shape_to_string(factors[i].mean.shape()) +
                    ", expected " + shape_to_string(shapes[i]));
    }
    for (const auto& l : lambdas) {
        for (double x : l) require(x > 0.0, "lambda entries must be positive");
    }
    if (!max_ranks.empty()) require(max_ranks.size() == lambdas.size(), "max_ranks has the wrong length");
}

DenseTensor reconstruct(FormatKind kind, std::span<const DenseTensor> factors) {
    switch (kind) {
        case FormatKind::CP: return reconstruct_cp(factors);
        case FormatKind::Tucker: return reconstruct_tucker(factors);
        case FormatKind::TT: return reconstruct_tt(factors);
        case FormatKind::TTM: return reconstruct_ttm(factors);
    }
    throw ShapeError("unknown format");
}

DenseTensor reconstruct_mean(const FactorizedLayer& layer) {
    const auto m = layer.means();
    return reconstruct(layer.kind, m);
}

std::vector<DenseTensor> backprop_reconstruction(FormatKind kind, std::span<const DenseTensor> factors,
                                                 const DenseTensor& grad_full) {
    // Validates factor consistency as a side effect.
    const Shape full = [&] {
        switch (kind) {
            case FormatKind::CP: check_cp(factors); break;
            case FormatKind::Tucker: check_tucker(factors); break;
            case FormatKind::TT: check_tt(factors); break;
            case FormatKind::TTM: check_ttm(factors); break;
        }
        return expected_full_shape(kind, factors);
    }();
    require(grad_full.shape() == full, "gradient shape " + shape_to_string(grad_full.shape()) +
                                           " does not match reconstruction " + shape_to_string(full));
    switch (kind) {
        case FormatKind::CP: return backprop_cp(factors, grad_full);
        case FormatKind::Tucker: return backprop_tucker(factors, grad_full);
        case FormatKind::TT: return backprop_tt(factors, grad_full);
        case FormatKind::TTM: return backprop_ttm(factors, grad_full);
    }
    throw ShapeError("unknown format");
}

std::size_t param_count(const FactorizedLayer& layer) {
    std::size_t n = 0;
    for (const auto& f : layer.factors) n += f.mean.size();
    return n;
}

std::size_t max_param_count(const FactorizedLayer& layer) {
    const auto ranks = layer.max_ranks.empty() ? layer.current_ranks() : layer.max_ranks;
    std::size_t n = 0;
    for (const auto& s : factor_shapes(layer.kind, layer.dims, layer.col_dims, ranks)) n += shape_product(s);
    return n;
}

DenseTensor take_along(const DenseTensor& t, std::size_t axis, std::span<const std::size_t> keep) {
    require(axis < t.order(), "axis out of range");
    const std::size_t extent = t.dim(axis);
    const std::size_t outer = shape_product(std::span(t.shape()).first(axis));
    const std::size_t inner = shape_product(std::span(t.shape()).subspan(axis + 1));
    Shape shape = t.shape();
    shape[axis] = keep.size();
    DenseTensor out(shape);
    auto src = t.data();
    auto dst = out.data();
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t k = 0; k < keep.size(); ++k) {
            require(keep[k] < extent, "slice index out of range");
            std::copy_n(src.data() + (o * extent + keep[k]) * inner, inner,
                        dst.data() + (o * keep.size() + k) * inner);
        }
    }
    return out;
}

void fill_slice(DenseTensor& t, std::size_t axis, std::size_t index, double value) {
    require(axis < t.order() && index < t.dim(axis), "slice out of range");
    const std::size_t extent = t.dim(axis);
    const std::size_t outer = shape_product(std::span(t.shape()).first(axis));
    const std::size_t inner = shape_product(std::span(t.shape()).subspan(axis + 1));
    auto data = t.data();
    for (std::size_t o = 0; o < outer; ++o) {
        std::fill_n(data.data() + (o * extent + index) * inner, inner, value);
    }
}

FactorizedLayer zero_pruned_slices(const FactorizedLayer& layer, double eps) {
    FactorizedLayer out = layer;
    for (std::size_t v = 0; v < layer.lambdas.size(); ++v) {
        for (std::size_t k = 0; k < layer.lambdas[v].size(); ++k) {
            if (layer.lambdas[v][k] >= eps) continue;
            for (const auto& s : governed_slices(layer.kind, layer.order(), v)) {
                fill_slice(out.factors[s.factor].mean, s.axis, k, 0.0);
                fill_slice(out.factors[s.factor].stddev, s.axis, k, 0.0);
            }
        }
    }
    return out;
}

FactorizedLayer prune(const FactorizedLayer& layer, double eps) {
    if (!(eps > 0.0)) throw std::invalid_argument("prune threshold must be positive");
    FactorizedLayer out = zero_pruned_slices(layer, eps);
    for (std::size_t v = 0; v < layer.lambdas.size(); ++v) {
        std::vector<std::size_t> keep;
        for (std::size_t k = 0; k < layer.lambdas[v].size(); ++k) {
            if (layer.lambdas[v][k] >= eps) keep.push_back(k);
        }
        if (keep.size() == layer.lambdas[v].size()) continue;
        if (keep.empty()) {
            throw RankCollapseError("rank collapsed to zero: every entry of lambda vector " + std::to_string(v) +
                                    " of a " + std::string(to_string(layer.kind)) + " layer is below " +
                                    std::to_string(eps));
        }
        for (const auto& s : coupled_slices(layer.kind, layer.order(), v)) {
            auto& f = out.factors[s.factor];
            f.mean = take_along(f.mean, s.axis, keep);
            f.stddev = take_along(f.stddev, s.axis, keep);
        }
        std::vector<double> kept;
        for (std::size_t k : keep) kept.push_back(layer.lambdas[v][k]);
        out.lambdas[v] = std::move(kept);
    }
    return out;
}

std::vector<std::size_t> inferred_ranks(const FactorizedLayer& layer, double eps) {
    std::vector<std::size_t> counts;
    for (const auto& l : layer.lambdas) {
        counts.push_back(static_cast<std::size_t>(std::count_if(l.begin(), l.end(), [eps](double x) { return x >= eps; })));
    }
    if (layer.kind == FormatKind::TT || layer.kind == FormatKind::TTM) {
        counts.insert(counts.begin(), 1);
        counts.push_back(1);
    }
    return counts;
}

}  // namespace tnn
