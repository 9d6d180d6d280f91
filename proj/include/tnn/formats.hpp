#pragma once

#include "tnn/dense_tensor.hpp"

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace tnn {

enum class FormatKind { CP, Tucker, TT, TTM };

std::string_view to_string(FormatKind kind);
/// Accepts "cp", "tucker", "tt", "ttm" (case-insensitive).
FormatKind parse_format(std::string_view name);

/// Stddev entries are clamped to at least this value after every update.
inline constexpr double kSigmaFloor = 1e-6;

/// Mean-field Gaussian posterior over the entries of one factor tensor.
struct GaussianFactor {
    DenseTensor mean;
    DenseTensor stddev;

    friend bool operator==(const GaussianFactor&, const GaussianFactor&) = default;
};

/// One weight tensor in factorized form, with its rank-control vectors.
///
/// Factor order: CP U_1..U_d; Tucker U_1..U_d then the core; TT/TTM cores
/// G_1..G_d. Lambda vectors: CP one vector of length R; Tucker one per mode;
/// TT/TTM one per interior bond (d-1 of them). The last TT/TTM vector also
/// governs the leading slices of the final core.
///
/// `max_ranks` records the initialization ranks in the same layout as
/// `current_ranks()` (interior bonds only for TT/TTM).
struct FactorizedLayer {
    FormatKind kind = FormatKind::CP;
    Shape dims;      // tensor modes; row dims for TTM
    Shape col_dims;  // TTM only
    std::vector<std::size_t> max_ranks;
    std::vector<GaussianFactor> factors;
    std::vector<std::vector<double>> lambdas;

    std::size_t order() const noexcept { return dims.size(); }
    /// Shape of the reconstructed tensor (row dims followed by col dims for TTM).
    Shape full_shape() const;
    std::size_t full_size() const;
    /// Ranks implied by the lambda vector lengths.
    std::vector<std::size_t> current_ranks() const;
    std::vector<DenseTensor> means() const;
    std::vector<DenseTensor> stddevs() const;
    /// Throws ShapeError if any factor or lambda vector is inconsistent.
    void validate() const;

    friend bool operator==(const FactorizedLayer&, const FactorizedLayer&) = default;
};

/// Factor shapes for the given format, folding and ranks.
std::vector<Shape> factor_shapes(FormatKind kind, const Shape& dims, const Shape& col_dims,
                                 std::span<const std::size_t> ranks);

/// Number of lambda vectors for a format of order d.
std::size_t lambda_vector_count(FormatKind kind, std::size_t order);

/// A (factor, axis) pair: slice k along `axis` of factor `factor`.
struct SliceRef {
    std::size_t factor;
    std::size_t axis;
};

/// Slices whose prior variance is lambda vector `v` (entry k governs slice k).
std::vector<SliceRef> governed_slices(FormatKind kind, std::size_t order, std::size_t v);

/// Every slice whose extent equals the length of lambda vector `v`; these are
/// removed together when an entry of `v` is pruned.
std::vector<SliceRef> coupled_slices(FormatKind kind, std::size_t order, std::size_t v);

/// The lambda vector and axis governing `factor`, or nullopt for the Tucker core.
std::optional<SliceRef> governing_axis(FormatKind kind, std::size_t order, std::size_t factor,
                                       std::size_t* lambda_vector = nullptr);

/// Full tensor from point values of the factors.
DenseTensor reconstruct(FormatKind kind, std::span<const DenseTensor> factors);

/// Reconstruction from the posterior means.
DenseTensor reconstruct_mean(const FactorizedLayer& layer);

/// Exact gradients of <grad_full, reconstruct(factors)> with respect to every factor entry.
std::vector<DenseTensor> backprop_reconstruction(FormatKind kind, std::span<const DenseTensor> factors,
                                                 const DenseTensor& grad_full);

/// Scalar factor entries (means only; lambdas excluded).
std::size_t param_count(const FactorizedLayer& layer);

/// Parameter count the layer had at its initialization ranks.
std::size_t max_param_count(const FactorizedLayer& layer);

/// Copy of `layer` with every slice governed by a lambda entry below eps set
/// to zero (mean and stddev). Shapes are unchanged.
FactorizedLayer zero_pruned_slices(const FactorizedLayer& layer, double eps);

/// Removes every rank component whose lambda is below eps. Throws
/// RankCollapseError if a lambda vector would lose all of its entries.
FactorizedLayer prune(const FactorizedLayer& layer, double eps);

/// Count of lambda entries >= eps per vector. CP: {r}; Tucker: {r_1..r_d};
/// TT/TTM: {1, r_1..r_{d-1}, 1}.
std::vector<std::size_t> inferred_ranks(const FactorizedLayer& layer, double eps);

/// Sub-tensor keeping the listed indices along `axis`.
DenseTensor take_along(const DenseTensor& t, std::size_t axis, std::span<const std::size_t> keep);

/// Sets slice `index` along `axis` to `value`.
void fill_slice(DenseTensor& t, std::size_t axis, std::size_t index, double value);

}  // namespace tnn
