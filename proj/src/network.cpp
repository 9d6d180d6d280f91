#include "tnn/network.hpp"

#include "tnn/errors.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <thread>

namespace tnn {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

ConstMatrixMap cmat(const DenseTensor& t, std::size_t rows, std::size_t cols) {
    return ConstMatrixMap(t.data().data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

MatrixMap mmat(DenseTensor& t, std::size_t rows, std::size_t cols) {
    return MatrixMap(t.data().data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

// Splits [0, n) into at most `threads` contiguous chunks and runs fn(begin, end, chunk).
void run_chunks(std::size_t n, std::size_t threads, const std::function<void(std::size_t, std::size_t, std::size_t)>& fn) {
    const std::size_t chunks = std::max<std::size_t>(1, std::min(threads, n));
    if (chunks == 1) {
        fn(0, n, 0);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(chunks);
    for (std::size_t c = 0; c < chunks; ++c) {
        const std::size_t begin = n * c / chunks;
        const std::size_t end = n * (c + 1) / chunks;
        pool.emplace_back(fn, begin, end, c);
    }
    for (auto& t : pool) t.join();
}

std::size_t chunk_count(std::size_t n, std::size_t threads) {
    return std::max<std::size_t>(1, std::min(threads, n));
}

std::string layer_label(std::size_t l) { return "layer " + std::to_string(l); }

// Rows of a TTM table for one token: contract core slices at the token's row digits.
std::vector<DenseTensor> ttm_row_slices(std::span<const DenseTensor> cores,
                                        std::span<const std::size_t> digits) {
    std::vector<DenseTensor> slices;
    slices.reserve(cores.size());
    for (std::size_t n = 0; n < cores.size(); ++n) {
        const std::size_t keep[] = {digits[n]};
        const auto& c = cores[n];
        slices.push_back(take_along(c, 1, keep).reshaped({c.dim(0), c.dim(2), c.dim(3)}));
    }
    return slices;
}

void check_token(std::size_t token, std::size_t num_tokens) {
    if (token >= num_tokens) {
        throw std::out_of_range("token index " + std::to_string(token) + " out of range for table of " +
                                std::to_string(num_tokens) + " rows");
    }
}

}  // namespace

std::string_view to_string(Activation a) { return a == Activation::ReLU ? "relu" : "identity"; }

Activation parse_activation(std::string_view name) {
    std::string lower(name);
    std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
    if (lower == "relu") return Activation::ReLU;
    if (lower == "identity" || lower == "none" || lower == "linear") return Activation::Identity;
    throw std::invalid_argument("unknown activation '" + std::string(name) + "'");
}

const FactorizedLayer& factorized(const NetworkLayer& layer) {
    return std::visit(
        [](const auto& l) -> const FactorizedLayer& {
            if constexpr (std::is_same_v<std::decay_t<decltype(l)>, TensorizedLinear>) {
                return l.weight;
            } else {
                return l.table;
            }
        },
        layer);
}

FactorizedLayer& factorized(NetworkLayer& layer) {
    return const_cast<FactorizedLayer&>(factorized(static_cast<const NetworkLayer&>(layer)));
}

const GaussianFactor* bias_of(const NetworkLayer& layer) {
    if (const auto* lin = std::get_if<TensorizedLinear>(&layer)) return &lin->bias;
    return nullptr;
}

GaussianFactor* bias_of(NetworkLayer& layer) {
    if (auto* lin = std::get_if<TensorizedLinear>(&layer)) return &lin->bias;
    return nullptr;
}

bool TensorizedNetwork::takes_tokens() const {
    return !layers.empty() && std::holds_alternative<EmbeddingLayer>(layers.front());
}

std::size_t TensorizedNetwork::input_dim() const {
    if (layers.empty()) return 0;
    if (const auto* e = std::get_if<EmbeddingLayer>(&layers.front())) return e->num_tokens;
    return std::get<TensorizedLinear>(layers.front()).in_features;
}

void TensorizedNetwork::validate() const {
    if (layers.empty()) throw ShapeError("network has no layers");
    std::size_t width = 0;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const auto& f = factorized(layers[l]);
        f.validate();
        if (const auto* e = std::get_if<EmbeddingLayer>(&layers[l])) {
            if (l != 0) throw ShapeError(layer_label(l) + ": embedding layers must come first");
            if (f.full_size() != e->num_tokens * e->dim) {
                throw ShapeError(layer_label(l) + ": table dims " + shape_to_string(f.full_shape()) +
                                 " do not fold a " + std::to_string(e->num_tokens) + "x" + std::to_string(e->dim) +
                                 " table");
            }
            if (f.kind == FormatKind::TTM &&
                (shape_product(f.dims) != e->num_tokens || shape_product(f.col_dims) != e->dim)) {
                throw ShapeError(layer_label(l) + ": TTM row/col dims do not match the table");
            }
            width = e->dim;
            continue;
        }
        const auto& lin = std::get<TensorizedLinear>(layers[l]);
        if (f.full_size() != lin.in_features * lin.out_features) {
            throw ShapeError(layer_label(l) + ": weight dims " + shape_to_string(f.full_shape()) + " do not fold a " +
                             std::to_string(lin.in_features) + "x" + std::to_string(lin.out_features) + " matrix");
        }
        if (lin.bias.mean.shape() != Shape{lin.out_features} || lin.bias.stddev.shape() != Shape{lin.out_features}) {
            throw ShapeError(layer_label(l) + ": bias length must equal out_features");
        }
        if (l > 0 && lin.in_features != width) {
            throw ShapeError(layer_label(l) + ": expects " + std::to_string(lin.in_features) +
                             " inputs but the previous layer produces " + std::to_string(width));
        }
        width = lin.out_features;
    }
    if (width != num_classes) {
        throw ShapeError("final layer produces " + std::to_string(width) + " outputs but num_classes is " +
                         std::to_string(num_classes));
    }
}

InputBatch dense_batch(DenseTensor features) {
    if (features.order() != 2) throw ShapeError("dense inputs must be a B x F matrix");
    InputBatch b;
    b.features = std::move(features);
    return b;
}

InputBatch token_batch(std::vector<std::vector<std::size_t>> bags) {
    InputBatch b;
    b.tokens = std::move(bags);
    b.is_tokens = true;
    return b;
}

NetworkNoise draw_noise(const TensorizedNetwork& net, std::mt19937_64& rng) {
    NetworkNoise noise;
    std::normal_distribution<double> normal(0.0, 1.0);
    for (const auto& layer : net.layers) {
        std::vector<DenseTensor> zs;
        for (const auto& g : factorized(layer).factors) {
            DenseTensor z(g.mean.shape());
            for (double& x : z.data()) x = normal(rng);
            zs.push_back(std::move(z));
        }
        noise.factors.push_back(std::move(zs));
        if (const auto* b = bias_of(layer)) {
            DenseTensor z(b->mean.shape());
            for (double& x : z.data()) x = normal(rng);
            noise.biases.emplace_back(std::move(z));
        } else {
            noise.biases.emplace_back(std::nullopt);
        }
    }
    return noise;
}

NetworkNoise zero_noise(const TensorizedNetwork& net) {
    NetworkNoise noise;
    for (const auto& layer : net.layers) {
        std::vector<DenseTensor> zs;
        for (const auto& g : factorized(layer).factors) zs.emplace_back(g.mean.shape());
        noise.factors.push_back(std::move(zs));
        if (const auto* b = bias_of(layer)) {
            noise.biases.emplace_back(DenseTensor(b->mean.shape()));
        } else {
            noise.biases.emplace_back(std::nullopt);
        }
    }
    return noise;
}

DenseTensor embedding_lookup(const EmbeddingLayer& layer, std::span<const DenseTensor> factor_values,
                             std::span<const std::size_t> tokens, bool lookup) {
    const auto& table = layer.table;
    if (tokens.empty()) throw ShapeError("embedding lookup needs at least one token");
    DenseTensor rows({tokens.size(), layer.dim});
    if (table.kind == FormatKind::TTM && lookup) {
        for (std::size_t t = 0; t < tokens.size(); ++t) {
            check_token(tokens[t], layer.num_tokens);
            const auto digits = mixed_radix_digits(tokens[t], table.dims);
            const auto slices = ttm_row_slices(factor_values, digits);
            const DenseTensor row = reconstruct(FormatKind::TT, slices);
            std::copy(row.data().begin(), row.data().end(), rows.data().begin() + t * layer.dim);
        }
        return rows;
    }
    const DenseTensor full = reconstruct(table.kind, factor_values);
    for (std::size_t t = 0; t < tokens.size(); ++t) {
        check_token(tokens[t], layer.num_tokens);
        std::copy_n(full.data().begin() + tokens[t] * layer.dim, layer.dim, rows.data().begin() + t * layer.dim);
    }
    return rows;
}

ForwardTrace forward_with_noise(const TensorizedNetwork& net, const InputBatch& input, NetworkNoise noise,
                                const PassOptions& opts) {
    if (noise.factors.size() != net.layers.size() || noise.biases.size() != net.layers.size()) {
        throw ShapeError("noise record does not match the network");
    }
    const std::size_t batch = input.size();
    if (batch == 0) throw ShapeError("empty input batch");
    if (input.is_tokens != net.takes_tokens()) {
        throw ShapeError(net.takes_tokens() ? "network expects token inputs" : "network expects dense inputs");
    }

    ForwardTrace trace;
    trace.input = input;
    trace.layers.resize(net.layers.size());
    DenseTensor act;
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        const auto& layer = net.layers[l];
        const auto& f = factorized(layer);
        auto& lt = trace.layers[l];
        lt.factor_values = apply_noise(f, noise.factors[l]).values;

        if (const auto* emb = std::get_if<EmbeddingLayer>(&layer)) {
            DenseTensor out({batch, emb->dim});
            const bool use_lookup = f.kind == FormatKind::TTM && opts.ttm_lookup;
            lt.materialized = !use_lookup;
            if (!use_lookup) lt.weight = reconstruct(f.kind, lt.factor_values);
            for (std::size_t b = 0; b < batch; ++b) {
                const auto& bag = input.tokens[b];
                if (bag.empty()) throw ShapeError("sample " + std::to_string(b) + " has an empty token bag");
                DenseTensor rows;
                if (use_lookup) {
                    rows = embedding_lookup(*emb, lt.factor_values, bag, true);
                } else {
                    rows = DenseTensor({bag.size(), emb->dim});
                    for (std::size_t t = 0; t < bag.size(); ++t) {
                        check_token(bag[t], emb->num_tokens);
                        std::copy_n(lt.weight.data().begin() + bag[t] * emb->dim, emb->dim,
                                    rows.data().begin() + t * emb->dim);
                    }
                }
                const double scale = 1.0 / static_cast<double>(bag.size());
                for (std::size_t t = 0; t < bag.size(); ++t) {
                    for (std::size_t j = 0; j < emb->dim; ++j) out[b * emb->dim + j] += rows[t * emb->dim + j] * scale;
                }
            }
            act = std::move(out);
            continue;
        }

        const auto& lin = std::get<TensorizedLinear>(layer);
        const DenseTensor& x = l == 0 ? input.features : act;
        if (x.order() != 2 || x.dim(1) != lin.in_features) {
            throw ShapeError(layer_label(l) + ": input has " + std::to_string(x.order() == 2 ? x.dim(1) : 0) +
                             " features, expected " + std::to_string(lin.in_features));
        }
        lt.weight = reconstruct(f.kind, lt.factor_values);
        if (!noise.biases[l]) throw ShapeError(layer_label(l) + ": missing bias noise");
        lt.bias_values = apply_noise(lin.bias, *noise.biases[l]).values;
        lt.input = x;

        DenseTensor z({batch, lin.out_features});
        const auto w = cmat(lt.weight, lin.in_features, lin.out_features);
        run_chunks(batch, opts.threads, [&](std::size_t begin, std::size_t end, std::size_t) {
            const auto rows = static_cast<Eigen::Index>(end - begin);
            auto zb = mmat(z, batch, lin.out_features).middleRows(static_cast<Eigen::Index>(begin), rows);
            zb.noalias() = cmat(lt.input, batch, lin.in_features).middleRows(static_cast<Eigen::Index>(begin), rows) * w;
            for (Eigen::Index r = 0; r < rows; ++r) {
                for (std::size_t j = 0; j < lin.out_features; ++j) zb(r, static_cast<Eigen::Index>(j)) += lt.bias_values[j];
            }
        });
        lt.pre_activation = z;
        if (lin.activation == Activation::ReLU) {
            for (double& v : z.data()) v = v > 0.0 ? v : 0.0;
        }
        act = std::move(z);
    }
    trace.logits = std::move(act);
    trace.noise = std::move(noise);
    return trace;
}

ForwardTrace forward_sampled(const TensorizedNetwork& net, const InputBatch& input, std::mt19937_64& rng,
                             const PassOptions& opts) {
    return forward_with_noise(net, input, draw_noise(net, rng), opts);
}

DenseTensor forward_mean(const TensorizedNetwork& net, const InputBatch& input, const PassOptions& opts) {
    return forward_with_noise(net, input, zero_noise(net), opts).logits;
}

double nll_multinomial(const DenseTensor& logits, std::span<const std::size_t> labels) {
    if (logits.order() != 2 || logits.dim(0) != labels.size() || labels.empty()) {
        throw ShapeError("logits must be B x C with one label per row");
    }
    const std::size_t b = logits.dim(0);
    const std::size_t c = logits.dim(1);
    double total = 0.0;
    for (std::size_t i = 0; i < b; ++i) {
        if (labels[i] >= c) throw std::out_of_range("label " + std::to_string(labels[i]) + " out of range");
        const double* row = logits.data().data() + i * c;
        const double mx = *std::max_element(row, row + c);
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j) s += std::exp(row[j] - mx);
        total += mx + std::log(s) - row[labels[i]];
    }
    return total / static_cast<double>(b);
}

DenseTensor nll_multinomial_grad(const DenseTensor& logits, std::span<const std::size_t> labels) {
    if (logits.order() != 2 || logits.dim(0) != labels.size() || labels.empty()) {
        throw ShapeError("logits must be B x C with one label per row");
    }
    const std::size_t b = logits.dim(0);
    const std::size_t c = logits.dim(1);
    DenseTensor g(logits.shape());
    const double inv_b = 1.0 / static_cast<double>(b);
    for (std::size_t i = 0; i < b; ++i) {
        if (labels[i] >= c) throw std::out_of_range("label " + std::to_string(labels[i]) + " out of range");
        const double* row = logits.data().data() + i * c;
        double* out = g.data().data() + i * c;
        const double mx = *std::max_element(row, row + c);
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            out[j] = std::exp(row[j] - mx);
            s += out[j];
        }
        for (std::size_t j = 0; j < c; ++j) out[j] = out[j] / s * inv_b;
        out[labels[i]] -= inv_b;
    }
    return g;
}

NetworkGradients zero_gradients(const TensorizedNetwork& net) {
    NetworkGradients g;
    for (const auto& layer : net.layers) {
        LayerGradients lg;
        for (const auto& f : factorized(layer).factors) {
            lg.mean.emplace_back(f.mean.shape());
            lg.stddev.emplace_back(f.mean.shape());
        }
        if (const auto* b = bias_of(layer)) lg.bias = GaussianFactor{DenseTensor(b->mean.shape()), DenseTensor(b->mean.shape())};
        g.layers.push_back(std::move(lg));
    }
    return g;
}

NetworkGradients backward(const TensorizedNetwork& net, const ForwardTrace& trace, std::span<const std::size_t> labels,
                          const PassOptions& opts) {
    return backward_from_logits(net, trace, nll_multinomial_grad(trace.logits, labels), opts);
}

NetworkGradients backward_from_logits(const TensorizedNetwork& net, const ForwardTrace& trace,
                                      const DenseTensor& logit_grad, const PassOptions& opts) {
    if (!trace.noise) throw std::invalid_argument("backward needs a forward trace with a recorded noise sample");
    if (trace.layers.size() != net.layers.size()) throw ShapeError("trace does not match the network");
    if (logit_grad.shape() != trace.logits.shape()) throw ShapeError("logit gradient shape mismatch");
    const auto& noise = *trace.noise;
    const std::size_t batch = trace.input.size();

    NetworkGradients grads;
    grads.layers.resize(net.layers.size());
    DenseTensor upstream = logit_grad;
    for (std::size_t l = net.layers.size(); l-- > 0;) {
        const auto& layer = net.layers[l];
        const auto& f = factorized(layer);
        const auto& lt = trace.layers[l];
        auto& lg = grads.layers[l];
        std::vector<DenseTensor> factor_grads;

        if (const auto* emb = std::get_if<EmbeddingLayer>(&layer)) {
            // Per-token row gradients, in token order.
            std::map<std::size_t, std::vector<double>> rows;
            for (std::size_t b = 0; b < batch; ++b) {
                const auto& bag = trace.input.tokens[b];
                const double scale = 1.0 / static_cast<double>(bag.size());
                for (std::size_t t : bag) {
                    auto& r = rows[t];
                    r.resize(emb->dim, 0.0);
                    for (std::size_t j = 0; j < emb->dim; ++j) r[j] += upstream[b * emb->dim + j] * scale;
                }
            }
            if (!lt.materialized) {
                for (const auto& g : f.factors) factor_grads.emplace_back(g.mean.shape());
                Shape row_shape = f.col_dims;
                for (const auto& [token, r] : rows) {
                    const auto digits = mixed_radix_digits(token, f.dims);
                    const auto slices = ttm_row_slices(lt.factor_values, digits);
                    const auto sg = backprop_reconstruction(FormatKind::TT, slices, DenseTensor(row_shape, r));
                    for (std::size_t n = 0; n < slices.size(); ++n) {
                        auto& dst = factor_grads[n];
                        const std::size_t r0 = dst.dim(0), in = dst.dim(1), jn = dst.dim(2), r1 = dst.dim(3);
                        for (std::size_t a = 0; a < r0; ++a) {
                            for (std::size_t j = 0; j < jn; ++j) {
                                for (std::size_t c = 0; c < r1; ++c) {
                                    dst[((a * in + digits[n]) * jn + j) * r1 + c] += sg[n][(a * jn + j) * r1 + c];
                                }
                            }
                        }
                    }
                }
            } else {
                DenseTensor full(f.full_shape());
                for (const auto& [token, r] : rows) {
                    std::copy(r.begin(), r.end(), full.data().begin() + token * emb->dim);
                }
                factor_grads = backprop_reconstruction(f.kind, lt.factor_values, full);
            }
        } else {
            const auto& lin = std::get<TensorizedLinear>(layer);
            DenseTensor dz = upstream;
            if (lin.activation == Activation::ReLU) {
                for (std::size_t i = 0; i < dz.size(); ++i) {
                    if (!(lt.pre_activation[i] > 0.0)) dz[i] = 0.0;
                }
            }
            const std::size_t in = lin.in_features;
            const std::size_t out = lin.out_features;
            // dW = X^T dZ, reduced over fixed row chunks in chunk order.
            const std::size_t chunks = chunk_count(batch, opts.threads);
            std::vector<RowMatrix> partial(chunks);
            run_chunks(batch, opts.threads, [&](std::size_t begin, std::size_t end, std::size_t c) {
                const auto rows = static_cast<Eigen::Index>(end - begin);
                const auto b0 = static_cast<Eigen::Index>(begin);
                partial[c].noalias() = cmat(lt.input, batch, in).middleRows(b0, rows).transpose() *
                                       cmat(dz, batch, out).middleRows(b0, rows);
            });
            DenseTensor dw({in, out});
            auto dwm = mmat(dw, in, out);
            for (const auto& p : partial) dwm += p;

            GaussianFactor bias_grad{DenseTensor({out}), DenseTensor({out})};
            for (std::size_t b = 0; b < batch; ++b) {
                for (std::size_t j = 0; j < out; ++j) bias_grad.mean[j] += dz[b * out + j];
            }
            const auto& zb = *noise.biases[l];
            for (std::size_t j = 0; j < out; ++j) bias_grad.stddev[j] = zb[j] * bias_grad.mean[j];
            lg.bias = std::move(bias_grad);

            if (l > 0) {
                DenseTensor dx({batch, in});
                mmat(dx, batch, in).noalias() = cmat(dz, batch, out) * cmat(lt.weight, in, out).transpose();
                upstream = std::move(dx);
            }
            factor_grads = backprop_reconstruction(f.kind, lt.factor_values, std::move(dw).reshaped(f.full_shape()));
        }

        lg.mean = std::move(factor_grads);
        lg.stddev.clear();
        for (std::size_t i = 0; i < lg.mean.size(); ++i) {
            DenseTensor gs = lg.mean[i];
            const auto& z = noise.factors[l][i];
            for (std::size_t k = 0; k < gs.size(); ++k) gs[k] *= z[k];
            lg.stddev.push_back(std::move(gs));
        }
    }
    return grads;
}

double kl_gaussian_total(const TensorizedNetwork& net, double sigma0) {
    double total = 0.0;
    for (const auto& layer : net.layers) {
        total += kl_layer_gaussian(factorized(layer), sigma0);
        if (const auto* b = bias_of(layer)) total += kl_vector(*b, sigma0);
    }
    return total;
}

double kl_total(const TensorizedNetwork& net, const HyperPrior& prior, double sigma0) {
    double total = kl_gaussian_total(net, sigma0);
    for (const auto& layer : net.layers) total += kl_layer_hyper(factorized(layer), prior);
    return total;
}

NetworkGradients kl_gradients(const TensorizedNetwork& net, double sigma0) {
    NetworkGradients g;
    for (const auto& layer : net.layers) {
        LayerGradients lg;
        auto fg = kl_gradients(factorized(layer), sigma0);
        lg.mean = std::move(fg.mean);
        lg.stddev = std::move(fg.stddev);
        if (const auto* b = bias_of(layer)) lg.bias = kl_gradients(*b, sigma0);
        g.layers.push_back(std::move(lg));
    }
    return g;
}

std::size_t param_count(const TensorizedNetwork& net) {
    std::size_t n = 0;
    for (const auto& layer : net.layers) {
        n += param_count(factorized(layer));
        if (const auto* b = bias_of(layer)) n += b->mean.size();
    }
    return n;
}

std::size_t dense_param_count(const TensorizedNetwork& net) {
    std::size_t n = 0;
    for (const auto& layer : net.layers) {
        if (const auto* lin = std::get_if<TensorizedLinear>(&layer)) {
            n += lin->in_features * lin->out_features + lin->out_features;
        } else {
            const auto& e = std::get<EmbeddingLayer>(layer);
            n += e.num_tokens * e.dim;
        }
    }
    return n;
}

TensorizedNetwork prune(const TensorizedNetwork& net, double eps) {
    TensorizedNetwork out = net;
    for (auto& layer : out.layers) {
        auto& f = factorized(layer);
        f = prune(f, eps);
    }
    return out;
}

}  // namespace tnn
