#pragma once

#include "tnn/formats.hpp"
#include "tnn/network.hpp"

#include <cstddef>
#include <random>
#include <vector>

namespace tnn {

/// Factor entry scale s such that the reconstructed entries have variance
/// about `target_variance` when every factor entry is N(0, s^2).
double init_scale(FormatKind kind, std::size_t order, std::span<const std::size_t> ranks, double target_variance);

struct InitOptions {
    double target_variance = 0.0;  // <= 0 means 2 / fan_in
    double sigma_ratio = 0.05;     // stddev = sigma_ratio * s
};

/// Means ~ N(0, s^2), stddev = sigma_ratio * s, every lambda = s^2.
FactorizedLayer init_factorized(FormatKind kind, Shape dims, Shape col_dims, std::vector<std::size_t> ranks,
                                double target_variance, std::mt19937_64& rng, double sigma_ratio = 0.05);

struct LinearSpec {
    FormatKind kind = FormatKind::CP;
    Shape dims;
    Shape col_dims;
    std::vector<std::size_t> ranks;
    std::size_t in_features = 0;
    std::size_t out_features = 0;
    Activation activation = Activation::Identity;
};

struct EmbeddingSpec {
    FormatKind kind = FormatKind::TTM;
    Shape dims;
    Shape col_dims;
    std::vector<std::size_t> ranks;
    std::size_t num_tokens = 0;
    std::size_t dim = 0;
};

TensorizedLinear make_linear(const LinearSpec& spec, std::mt19937_64& rng, const InitOptions& opts = {});
/// Table entries get variance 1/dim unless opts say otherwise.
EmbeddingLayer make_embedding(const EmbeddingSpec& spec, std::mt19937_64& rng, const InitOptions& opts = {});

}  // namespace tnn
