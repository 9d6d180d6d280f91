// Random layers and networks for tests.
#pragma once

#include "tnn/formats.hpp"
#include "tnn/initialization.hpp"
#include "tnn/network.hpp"

#include <random>
#include <vector>

namespace fixture {

using tnn::FormatKind;

inline constexpr FormatKind kAllKinds[] = {FormatKind::CP, FormatKind::Tucker, FormatKind::TT, FormatKind::TTM};

/// Small shape/rank configuration for each format.
struct SmallConfig {
    tnn::Shape dims;
    tnn::Shape col_dims;
    std::vector<std::size_t> ranks;
};

inline SmallConfig small_config(FormatKind kind) {
    switch (kind) {
        case FormatKind::CP: return {{3, 4, 2}, {}, {3}};
        case FormatKind::Tucker: return {{3, 2, 4}, {}, {2, 2, 3}};
        case FormatKind::TT: return {{3, 4, 2}, {}, {2, 3}};
        case FormatKind::TTM: return {{2, 3}, {3, 2}, {3}};
    }
    return {};
}

/// Layer with means and stddevs uniform on the given ranges and lambdas in [0.2, 2].
inline tnn::FactorizedLayer random_layer(FormatKind kind, const tnn::Shape& dims, const tnn::Shape& col_dims,
                                         const std::vector<std::size_t>& ranks, std::mt19937_64& rng,
                                         double mean_lo = -1.0, double mean_hi = 1.0) {
    auto layer = tnn::init_factorized(kind, dims, col_dims, ranks, 1.0, rng);
    std::uniform_real_distribution<double> um(mean_lo, mean_hi), us(0.1, 0.5), ul(0.2, 2.0);
    for (auto& f : layer.factors) {
        for (double& x : f.mean.data()) x = um(rng);
        for (double& x : f.stddev.data()) x = us(rng);
    }
    for (auto& l : layer.lambdas) {
        for (double& x : l) x = ul(rng);
    }
    return layer;
}

inline tnn::FactorizedLayer random_layer(FormatKind kind, std::mt19937_64& rng) {
    const auto c = small_config(kind);
    return random_layer(kind, c.dims, c.col_dims, c.ranks, rng);
}

/// One-layer softmax classifier over `in` features and `out` classes.
inline tnn::TensorizedNetwork one_layer_net(FormatKind kind, std::mt19937_64& rng) {
    tnn::LinearSpec spec;
    spec.kind = kind;
    switch (kind) {
        case FormatKind::CP: spec.dims = {2, 3, 4}; spec.ranks = {3}; break;
        case FormatKind::Tucker: spec.dims = {2, 3, 4}; spec.ranks = {2, 2, 3}; break;
        case FormatKind::TT: spec.dims = {2, 3, 4}; spec.ranks = {2, 3}; break;
        case FormatKind::TTM: spec.dims = {2, 3}; spec.col_dims = {2, 2}; spec.ranks = {3}; break;
    }
    spec.in_features = 6;
    spec.out_features = 4;
    tnn::TensorizedNetwork net;
    auto layer = tnn::make_linear(spec, rng);
    std::uniform_real_distribution<double> um(-0.8, 0.8), us(0.1, 0.4);
    for (auto& f : layer.weight.factors) {
        for (double& x : f.mean.data()) x = um(rng);
        for (double& x : f.stddev.data()) x = us(rng);
    }
    for (double& x : layer.bias.mean.data()) x = um(rng);
    for (double& x : layer.bias.stddev.data()) x = us(rng);
    net.layers.push_back(std::move(layer));
    net.num_classes = 4;
    net.validate();
    return net;
}

}  // namespace fixture
