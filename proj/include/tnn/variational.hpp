#pragma once

#include "tnn/dense_tensor.hpp"
#include "tnn/formats.hpp"

#include <cstddef>
#include <random>
#include <vector>

namespace tnn {

/// Hyper-prior on sqrt(lambda): improper log-uniform, or half-Cauchy with scale eta.
struct HyperPrior {
    enum class Kind { LogUniform, HalfCauchy };
    Kind kind = Kind::LogUniform;
    double eta = 1.0;

    static HyperPrior log_uniform() { return {Kind::LogUniform, 1.0}; }
    static HyperPrior half_cauchy(double eta);

    friend bool operator==(const HyperPrior&, const HyperPrior&) = default;
};

/// Smallest value lambda may take between updates.
inline constexpr double kLambdaFloor = 1e-12;

/// KL( N(mu, sigma^2) || N(0, lambda) ).
double kl_gaussian(double mu, double sigma, double lambda);

/// -log p(lambda) up to an additive constant: LU 0.5*log(lambda), HC log(1 + lambda/eta^2).
double hyper_prior_penalty(const HyperPrior& prior, double lambda);

double lambda_star_log_uniform(double m, double d);
double lambda_star_half_cauchy(double m, double d, double eta);
double lambda_star(const HyperPrior& prior, double m, double d);

struct MagnitudeCount {
    double m = 0.0;       // sum of mu^2 + sigma^2 over governed entries
    std::size_t d = 0;    // number of governed entries
};

MagnitudeCount accumulate_M_D(const FactorizedLayer& layer, std::size_t lambda_vector, std::size_t k);

/// (M, D) for every entry of one lambda vector.
std::vector<MagnitudeCount> accumulate_M_D(const FactorizedLayer& layer, std::size_t lambda_vector);

/// Per-entry prior variance for every factor (lambda or sigma0^2 for the Tucker core).
std::vector<DenseTensor> prior_variances(const FactorizedLayer& layer, double sigma0);

/// Point values of every factor plus the standard-normal draws that produced them.
struct FactorSample {
    std::vector<DenseTensor> values;
    std::vector<DenseTensor> z;
};

/// u = mu + z * sigma with z ~ N(0, 1), drawn factor by factor in flat order.
FactorSample sample_factors(const FactorizedLayer& layer, std::mt19937_64& rng);

/// Values for the given noise; zero noise gives the means.
FactorSample apply_noise(const FactorizedLayer& layer, std::vector<DenseTensor> z);

/// Samples a Gaussian vector (bias) with the same conventions.
struct VectorSample {
    DenseTensor values;
    DenseTensor z;
};
VectorSample sample_vector(const GaussianFactor& g, std::mt19937_64& rng);
VectorSample apply_noise(const GaussianFactor& g, DenseTensor z);

struct FactorGradients {
    std::vector<DenseTensor> mean;
    std::vector<DenseTensor> stddev;
};

/// Gradients of the Gaussian KL part with respect to every mean and stddev.
FactorGradients kl_gradients(const FactorizedLayer& layer, double sigma0);

/// KL gradient of a Gaussian vector against N(0, sigma0^2).
GaussianFactor kl_gradients(const GaussianFactor& g, double sigma0);

/// Gaussian KL summed over every factor entry of the layer (no hyper-prior term).
double kl_layer_gaussian(const FactorizedLayer& layer, double sigma0);

/// Hyper-prior penalty summed over every lambda entry of the layer.
double kl_layer_hyper(const FactorizedLayer& layer, const HyperPrior& prior);

/// Gaussian KL of a vector against N(0, sigma0^2).
double kl_vector(const GaussianFactor& g, double sigma0);

/// One incremental update lambda <- gamma * lambda* + (1 - gamma) * lambda
/// for every lambda entry, floored at kLambdaFloor.
void update_lambdas(FactorizedLayer& layer, const HyperPrior& prior, double gamma);

}  // namespace tnn
