#include "tnn/initialization.hpp"

#include "tnn/errors.hpp"

#include <algorithm>
#include <cmath>

namespace tnn {

double init_scale(FormatKind kind, std::size_t order, std::span<const std::size_t> ranks, double target_variance) {
    if (!(target_variance > 0.0)) throw std::invalid_argument("target variance must be positive");
    double terms = 1.0;  // number of summed products per reconstructed entry
    double depth = static_cast<double>(order);  // factors per product
    switch (kind) {
        case FormatKind::CP:
            terms = static_cast<double>(ranks[0]);
            break;
        case FormatKind::Tucker:
            for (std::size_t r : ranks) terms *= static_cast<double>(r);
            depth += 1.0;
            break;
        case FormatKind::TT:
        case FormatKind::TTM:
            for (std::size_t r : ranks) terms *= static_cast<double>(r);
            break;
    }
    return std::pow(target_variance / terms, 1.0 / (2.0 * depth));
}

FactorizedLayer init_factorized(FormatKind kind, Shape dims, Shape col_dims, std::vector<std::size_t> ranks,
                                double target_variance, std::mt19937_64& rng, double sigma_ratio) {
    FactorizedLayer layer;
    layer.kind = kind;
    const auto shapes = factor_shapes(kind, dims, col_dims, ranks);
    layer.dims = std::move(dims);
    layer.col_dims = std::move(col_dims);
    const double s = init_scale(kind, layer.order(), ranks, target_variance);
    std::normal_distribution<double> normal(0.0, s);
    for (const auto& shape : shapes) {
        GaussianFactor g{DenseTensor(shape), DenseTensor::filled(shape, std::max(kSigmaFloor, sigma_ratio * s))};
        for (double& x : g.mean.data()) x = normal(rng);
        layer.factors.push_back(std::move(g));
    }
    for (std::size_t r : ranks) layer.lambdas.emplace_back(r, s * s);
    layer.max_ranks = std::move(ranks);
    layer.validate();
    return layer;
}

TensorizedLinear make_linear(const LinearSpec& spec, std::mt19937_64& rng, const InitOptions& opts) {
    if (spec.in_features == 0 || spec.out_features == 0) throw ShapeError("linear layer needs positive in/out features");
    const double var = opts.target_variance > 0.0 ? opts.target_variance : 2.0 / static_cast<double>(spec.in_features);
    TensorizedLinear lin;
    lin.weight = init_factorized(spec.kind, spec.dims, spec.col_dims, spec.ranks, var, rng, opts.sigma_ratio);
    lin.bias = GaussianFactor{DenseTensor({spec.out_features}),
                              DenseTensor::filled({spec.out_features}, std::max(kSigmaFloor, opts.sigma_ratio * std::sqrt(var)))};
    lin.activation = spec.activation;
    lin.in_features = spec.in_features;
    lin.out_features = spec.out_features;
    if (lin.weight.full_size() != spec.in_features * spec.out_features) {
        throw ShapeError("weight dims " + shape_to_string(lin.weight.full_shape()) + " do not fold a " +
                         std::to_string(spec.in_features) + "x" + std::to_string(spec.out_features) + " matrix");
    }
    return lin;
}

EmbeddingLayer make_embedding(const EmbeddingSpec& spec, std::mt19937_64& rng, const InitOptions& opts) {
    if (spec.num_tokens == 0 || spec.dim == 0) throw ShapeError("embedding needs positive token count and dim");
    const double var = opts.target_variance > 0.0 ? opts.target_variance : 1.0 / static_cast<double>(spec.dim);
    EmbeddingLayer e;
    e.table = init_factorized(spec.kind, spec.dims, spec.col_dims, spec.ranks, var, rng, opts.sigma_ratio);
    e.num_tokens = spec.num_tokens;
    e.dim = spec.dim;
    if (e.table.full_size() != spec.num_tokens * spec.dim) {
        throw ShapeError("table dims " + shape_to_string(e.table.full_shape()) + " do not fold a " +
                         std::to_string(spec.num_tokens) + "x" + std::to_string(spec.dim) + " table");
    }
    return e;
}

}  // namespace tnn
