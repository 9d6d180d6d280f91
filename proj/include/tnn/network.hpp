#pragma once

#include "tnn/dense_tensor.hpp"
#include "tnn/formats.hpp"
#include "tnn/variational.hpp"

#include <cstddef>
#include <optional>
#include <random>
#include <span>
#include <variant>
#include <vector>

namespace tnn {

enum class Activation { Identity, ReLU };

std::string_view to_string(Activation a);
Activation parse_activation(std::string_view name);

/// y = act(x W + b), with W (in x out, row-major) folded into `weight`.
/// W is the row-major reading of the reconstructed buffer, so a TTM matrix of
/// any shape with in * out entries is accepted.
struct TensorizedLinear {
    FactorizedLayer weight;
    GaussianFactor bias;  // shape [out]
    Activation activation = Activation::Identity;
    std::size_t in_features = 0;
    std::size_t out_features = 0;

    friend bool operator==(const TensorizedLinear&, const TensorizedLinear&) = default;
};

/// Token table (num_tokens x dim) in factorized form. Each sample is a bag of
/// token ids; its output is the mean of the selected rows.
struct EmbeddingLayer {
    FactorizedLayer table;
    std::size_t num_tokens = 0;
    std::size_t dim = 0;

    friend bool operator==(const EmbeddingLayer&, const EmbeddingLayer&) = default;
};

using NetworkLayer = std::variant<TensorizedLinear, EmbeddingLayer>;

struct TensorizedNetwork {
    std::vector<NetworkLayer> layers;
    std::size_t num_classes = 0;

    bool takes_tokens() const;
    /// Feature count of dense inputs, or the token count for embedding-first nets.
    std::size_t input_dim() const;
    /// Throws ShapeError if the layer chain does not line up.
    void validate() const;

    friend bool operator==(const TensorizedNetwork&, const TensorizedNetwork&) = default;
};

const FactorizedLayer& factorized(const NetworkLayer& layer);
FactorizedLayer& factorized(NetworkLayer& layer);
const GaussianFactor* bias_of(const NetworkLayer& layer);
GaussianFactor* bias_of(NetworkLayer& layer);

/// One minibatch: dense rows (B x F) or token bags.
struct InputBatch {
    DenseTensor features;
    std::vector<std::vector<std::size_t>> tokens;
    bool is_tokens = false;

    std::size_t size() const { return is_tokens ? tokens.size() : features.dim(0); }
};

InputBatch dense_batch(DenseTensor features);
InputBatch token_batch(std::vector<std::vector<std::size_t>> bags);

/// Noise for every factor of every layer (plus biases) used by one pass.
struct NetworkNoise {
    std::vector<std::vector<DenseTensor>> factors;
    std::vector<std::optional<DenseTensor>> biases;
};

/// Standard-normal draws for the whole network, layer by layer.
NetworkNoise draw_noise(const TensorizedNetwork& net, std::mt19937_64& rng);
/// All-zero noise: a pass with it uses the posterior means.
NetworkNoise zero_noise(const TensorizedNetwork& net);

/// State recorded by a forward pass for the backward pass.
struct LayerTrace {
    std::vector<DenseTensor> factor_values;
    DenseTensor bias_values;
    DenseTensor weight;       // materialized (in x out) or table
    bool materialized = true;  // false for TTM row lookups
    DenseTensor input;        // B x in (dense layers)
    DenseTensor pre_activation;
};

struct ForwardTrace {
    std::optional<NetworkNoise> noise;
    std::vector<LayerTrace> layers;
    InputBatch input;
    DenseTensor logits;  // B x C
};

struct PassOptions {
    std::size_t threads = 1;
    /// Use the factorized row lookup for TTM embedding tables.
    bool ttm_lookup = true;
};

/// Forward pass with the given noise (u = mu + z * sigma everywhere).
ForwardTrace forward_with_noise(const TensorizedNetwork& net, const InputBatch& input, NetworkNoise noise,
                                const PassOptions& opts = {});

/// Sampled mode: draws noise from `rng` and records it in the trace.
ForwardTrace forward_sampled(const TensorizedNetwork& net, const InputBatch& input, std::mt19937_64& rng,
                             const PassOptions& opts = {});

/// Posterior-mean logits (B x C); no noise is drawn.
DenseTensor forward_mean(const TensorizedNetwork& net, const InputBatch& input, const PassOptions& opts = {});

/// Mean over the batch of -log softmax(logits)[label].
double nll_multinomial(const DenseTensor& logits, std::span<const std::size_t> labels);

/// Gradient of nll_multinomial with respect to the logits.
DenseTensor nll_multinomial_grad(const DenseTensor& logits, std::span<const std::size_t> labels);

/// Gradients with respect to every variational parameter, mirroring the network layout.
struct LayerGradients {
    std::vector<DenseTensor> mean;
    std::vector<DenseTensor> stddev;
    std::optional<GaussianFactor> bias;  // mean/stddev gradients
};

struct NetworkGradients {
    std::vector<LayerGradients> layers;
};

/// Zero gradients shaped like the network's parameters.
NetworkGradients zero_gradients(const TensorizedNetwork& net);

/// Gradients of the mean NLL of the traced pass. Throws if the trace has no noise record.
NetworkGradients backward(const TensorizedNetwork& net, const ForwardTrace& trace,
                          std::span<const std::size_t> labels, const PassOptions& opts = {});

/// Gradients of `logit_grad` (B x C) pushed back through the traced pass.
NetworkGradients backward_from_logits(const TensorizedNetwork& net, const ForwardTrace& trace,
                                      const DenseTensor& logit_grad, const PassOptions& opts = {});

/// Rows of the table for the given tokens, from point factor values.
/// TTM tables with `lookup` set are contracted per row without materializing.
DenseTensor embedding_lookup(const EmbeddingLayer& layer, std::span<const DenseTensor> factor_values,
                             std::span<const std::size_t> tokens, bool lookup = true);

/// Gaussian KL of every factor and bias plus the hyper-prior terms.
double kl_total(const TensorizedNetwork& net, const HyperPrior& prior, double sigma0);

/// Gaussian KL part only (no hyper-prior terms).
double kl_gaussian_total(const TensorizedNetwork& net, double sigma0);

/// KL gradients for every variational parameter.
NetworkGradients kl_gradients(const TensorizedNetwork& net, double sigma0);

/// Scalar factor entries plus bias entries.
std::size_t param_count(const TensorizedNetwork& net);
/// Entries of the equivalent dense weights and biases.
std::size_t dense_param_count(const TensorizedNetwork& net);

/// Prunes every layer; propagates RankCollapseError.
TensorizedNetwork prune(const TensorizedNetwork& net, double eps);

}  // namespace tnn
