#include "tnn/variational.hpp"

#include "tnn/errors.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace tnn {

namespace {

// Sum of f(mu, sigma) over each slice along `axis`.
template <class F>
void add_slice_sums(const GaussianFactor& g, std::size_t axis, std::vector<double>& out, F f) {
    const auto& shape = g.mean.shape();
    const std::size_t extent = shape[axis];
    const std::size_t outer = shape_product(std::span(shape).first(axis));
    const std::size_t inner = shape_product(std::span(shape).subspan(axis + 1));
    const auto mu = g.mean.data();
    const auto sd = g.stddev.data();
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t k = 0; k < extent; ++k) {
            const std::size_t base = (o * extent + k) * inner;
            double acc = 0.0;
            for (std::size_t r = 0; r < inner; ++r) acc += f(mu[base + r], sd[base + r]);
            out[k] += acc;
        }
    }
}

void check_vector_index(const FactorizedLayer& layer, std::size_t v) {
    if (v >= layer.lambdas.size()) {
        throw std::out_of_range("lambda vector " + std::to_string(v) + " out of range");
    }
}

}  // namespace

HyperPrior HyperPrior::half_cauchy(double eta) {
    if (!(eta > 0.0)) throw std::invalid_argument("half-Cauchy scale eta must be positive");
    return {Kind::HalfCauchy, eta};
}

double kl_gaussian(double mu, double sigma, double lambda) {
    if (!(sigma > 0.0) || !(lambda > 0.0)) throw std::invalid_argument("kl_gaussian needs sigma > 0 and lambda > 0");
    return 0.5 * std::log(lambda) - std::log(sigma) + (mu * mu + sigma * sigma) / (2.0 * lambda) - 0.5;
}

double hyper_prior_penalty(const HyperPrior& prior, double lambda) {
    if (prior.kind == HyperPrior::Kind::LogUniform) return 0.5 * std::log(lambda);
    return std::log1p(lambda / (prior.eta * prior.eta));
}

double lambda_star_log_uniform(double m, double d) { return m / (d + 1.0); }

double lambda_star_half_cauchy(double m, double d, double eta) {
    const double e2 = eta * eta;
    const double root = std::sqrt(m * m + (2.0 * d + 8.0) * e2 * m + e2 * e2 * d * d);
    return std::max(0.0, (m - e2 * d + root) / (2.0 * d + 2.0));
}

double lambda_star(const HyperPrior& prior, double m, double d) {
    return prior.kind == HyperPrior::Kind::LogUniform ? lambda_star_log_uniform(m, d)
                                                      : lambda_star_half_cauchy(m, d, prior.eta);
}

std::vector<MagnitudeCount> accumulate_M_D(const FactorizedLayer& layer, std::size_t v) {
    check_vector_index(layer, v);
    const std::size_t len = layer.lambdas[v].size();
    std::vector<double> m(len, 0.0);
    std::size_t d = 0;
    for (const auto& s : governed_slices(layer.kind, layer.order(), v)) {
        const auto& g = layer.factors[s.factor];
        add_slice_sums(g, s.axis, m, [](double mu, double sd) { return mu * mu + sd * sd; });
        d += g.mean.size() / g.mean.dim(s.axis);
    }
    std::vector<MagnitudeCount> out(len);
    for (std::size_t k = 0; k < len; ++k) out[k] = {m[k], d};
    return out;
}

MagnitudeCount accumulate_M_D(const FactorizedLayer& layer, std::size_t v, std::size_t k) {
    check_vector_index(layer, v);
    if (k >= layer.lambdas[v].size()) throw std::out_of_range("lambda entry " + std::to_string(k) + " out of range");
    return accumulate_M_D(layer, v)[k];
}

std::vector<DenseTensor> prior_variances(const FactorizedLayer& layer, double sigma0) {
    std::vector<DenseTensor> out;
    out.reserve(layer.factors.size());
    for (std::size_t f = 0; f < layer.factors.size(); ++f) {
        const auto& shape = layer.factors[f].mean.shape();
        std::size_t v = 0;
        const auto axis = governing_axis(layer.kind, layer.order(), f, &v);
        if (!axis) {
            out.push_back(DenseTensor::filled(shape, sigma0 * sigma0));
            continue;
        }
        DenseTensor t(shape);
        const std::size_t extent = shape[axis->axis];
        const std::size_t outer = shape_product(std::span(shape).first(axis->axis));
        const std::size_t inner = shape_product(std::span(shape).subspan(axis->axis + 1));
        auto data = t.data();
        const auto& lam = layer.lambdas[v];
        for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t k = 0; k < extent; ++k) {
                std::fill_n(data.data() + (o * extent + k) * inner, inner, lam[k]);
            }
        }
        out.push_back(std::move(t));
    }
    return out;
}

FactorSample sample_factors(const FactorizedLayer& layer, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<DenseTensor> z;
    z.reserve(layer.factors.size());
    for (const auto& f : layer.factors) {
        DenseTensor noise(f.mean.shape());
        for (double& x : noise.data()) x = normal(rng);
        z.push_back(std::move(noise));
    }
    return apply_noise(layer, std::move(z));
}

FactorSample apply_noise(const FactorizedLayer& layer, std::vector<DenseTensor> z) {
    if (z.size() != layer.factors.size()) throw ShapeError("noise record has the wrong number of factors");
    FactorSample s;
    s.values.reserve(z.size());
    for (std::size_t f = 0; f < z.size(); ++f) {
        const auto& g = layer.factors[f];
        if (z[f].shape() != g.mean.shape()) throw ShapeError("noise record shape mismatch for factor " + std::to_string(f));
        DenseTensor u(g.mean.shape());
        const auto mu = g.mean.data();
        const auto sd = g.stddev.data();
        const auto zf = z[f].data();
        auto out = u.data();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = mu[i] + zf[i] * sd[i];
        s.values.push_back(std::move(u));
    }
    s.z = std::move(z);
    return s;
}

VectorSample sample_vector(const GaussianFactor& g, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    DenseTensor z(g.mean.shape());
    for (double& x : z.data()) x = normal(rng);
    return apply_noise(g, std::move(z));
}

VectorSample apply_noise(const GaussianFactor& g, DenseTensor z) {
    if (z.shape() != g.mean.shape()) throw ShapeError("noise record shape mismatch for vector");
    DenseTensor u(g.mean.shape());
    for (std::size_t i = 0; i < u.size(); ++i) u[i] = g.mean[i] + z[i] * g.stddev[i];
    return {std::move(u), std::move(z)};
}

FactorGradients kl_gradients(const FactorizedLayer& layer, double sigma0) {
    const auto var = prior_variances(layer, sigma0);
    FactorGradients out;
    for (std::size_t f = 0; f < layer.factors.size(); ++f) {
        const auto& g = layer.factors[f];
        DenseTensor gm(g.mean.shape());
        DenseTensor gs(g.mean.shape());
        for (std::size_t i = 0; i < g.mean.size(); ++i) {
            const double lam = var[f][i];
            gm[i] = g.mean[i] / lam;
            gs[i] = -1.0 / g.stddev[i] + g.stddev[i] / lam;
        }
        out.mean.push_back(std::move(gm));
        out.stddev.push_back(std::move(gs));
    }
    return out;
}

GaussianFactor kl_gradients(const GaussianFactor& g, double sigma0) {
    const double lam = sigma0 * sigma0;
    GaussianFactor out{DenseTensor(g.mean.shape()), DenseTensor(g.mean.shape())};
    for (std::size_t i = 0; i < g.mean.size(); ++i) {
        out.mean[i] = g.mean[i] / lam;
        out.stddev[i] = -1.0 / g.stddev[i] + g.stddev[i] / lam;
    }
    return out;
}

double kl_layer_gaussian(const FactorizedLayer& layer, double sigma0) {
    const auto var = prior_variances(layer, sigma0);
    double total = 0.0;
    for (std::size_t f = 0; f < layer.factors.size(); ++f) {
        const auto& g = layer.factors[f];
        for (std::size_t i = 0; i < g.mean.size(); ++i) total += kl_gaussian(g.mean[i], g.stddev[i], var[f][i]);
    }
    return total;
}

double kl_layer_hyper(const FactorizedLayer& layer, const HyperPrior& prior) {
    double total = 0.0;
    for (const auto& lam : layer.lambdas) {
        for (double x : lam) total += hyper_prior_penalty(prior, x);
    }
    return total;
}

double kl_vector(const GaussianFactor& g, double sigma0) {
    const double lam = sigma0 * sigma0;
    double total = 0.0;
    for (std::size_t i = 0; i < g.mean.size(); ++i) total += kl_gaussian(g.mean[i], g.stddev[i], lam);
    return total;
}

void update_lambdas(FactorizedLayer& layer, const HyperPrior& prior, double gamma) {
    for (std::size_t v = 0; v < layer.lambdas.size(); ++v) {
        const auto md = accumulate_M_D(layer, v);
        auto& lam = layer.lambdas[v];
        for (std::size_t k = 0; k < lam.size(); ++k) {
            const double target = lambda_star(prior, md[k].m, static_cast<double>(md[k].d));
            lam[k] = std::max(kLambdaFloor, gamma * target + (1.0 - gamma) * lam[k]);
        }
    }
}

}  // namespace tnn
