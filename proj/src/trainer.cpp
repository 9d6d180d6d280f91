#include "tnn/trainer.hpp"

#include "tnn/errors.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

namespace tnn {

namespace {

// Visits (param, grad, is_stddev) in a fixed order: per layer, factor means and
// stddevs, then bias mean and stddev.
template <class F>
void for_each_param(TensorizedNetwork& net, const NetworkGradients& grads, F&& fn) {
    if (grads.layers.size() != net.layers.size()) throw ShapeError("gradient layout does not match the network");
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        auto& f = factorized(net.layers[l]);
        const auto& g = grads.layers[l];
        if (g.mean.size() != f.factors.size() || g.stddev.size() != f.factors.size()) {
            throw ShapeError("gradient factor count does not match layer " + std::to_string(l));
        }
        for (std::size_t i = 0; i < f.factors.size(); ++i) {
            fn(f.factors[i].mean.data(), g.mean[i].data(), false);
            fn(f.factors[i].stddev.data(), g.stddev[i].data(), true);
        }
        if (auto* b = bias_of(net.layers[l])) {
            if (!g.bias) throw ShapeError("missing bias gradient for layer " + std::to_string(l));
            fn(b->mean.data(), g.bias->mean.data(), false);
            fn(b->stddev.data(), g.bias->stddev.data(), true);
        }
    }
}

void axpy_gradients(NetworkGradients& acc, const NetworkGradients& g, double scale) {
    for (std::size_t l = 0; l < acc.layers.size(); ++l) {
        auto& a = acc.layers[l];
        const auto& b = g.layers[l];
        for (std::size_t i = 0; i < a.mean.size(); ++i) {
            for (std::size_t k = 0; k < a.mean[i].size(); ++k) {
                a.mean[i][k] += scale * b.mean[i][k];
                a.stddev[i][k] += scale * b.stddev[i][k];
            }
        }
        if (a.bias) {
            for (std::size_t k = 0; k < a.bias->mean.size(); ++k) {
                a.bias->mean[k] += scale * b.bias->mean[k];
                a.bias->stddev[k] += scale * b.bias->stddev[k];
            }
        }
    }
}

void scale_gradients(NetworkGradients& g, double scale) {
    for (auto& l : g.layers) {
        for (auto& t : l.mean) for (double& x : t.data()) x *= scale;
        for (auto& t : l.stddev) for (double& x : t.data()) x *= scale;
        if (l.bias) {
            for (double& x : l.bias->mean.data()) x *= scale;
            for (double& x : l.bias->stddev.data()) x *= scale;
        }
    }
}

// First layer holding a non-finite parameter or KL term, or -1.
int blame_layer(const TensorizedNetwork& net, const TrainConfig& cfg) {
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        const auto& f = factorized(net.layers[l]);
        for (const auto& g : f.factors) {
            for (double x : g.mean.data()) if (!std::isfinite(x)) return static_cast<int>(l);
            for (double x : g.stddev.data()) if (!std::isfinite(x)) return static_cast<int>(l);
        }
        for (const auto& lam : f.lambdas) {
            for (double x : lam) if (!std::isfinite(x)) return static_cast<int>(l);
        }
        if (!std::isfinite(kl_layer_gaussian(f, cfg.sigma0) + kl_layer_hyper(f, cfg.prior))) return static_cast<int>(l);
    }
    return -1;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (salt + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

std::vector<std::vector<std::size_t>> all_ranks(const TensorizedNetwork& net, double eps) {
    std::vector<std::vector<std::size_t>> r;
    for (const auto& layer : net.layers) r.push_back(inferred_ranks(factorized(layer), eps));
    return r;
}

}  // namespace

int TrainConfig::effective_warmup() const { return warmup_epochs >= 0 ? warmup_epochs : std::max(1, epochs / 2); }

void TrainConfig::validate() const {
    auto fail = [](const std::string& field, const std::string& msg) {
        throw std::invalid_argument(field + ": " + msg);
    };
    if (!(learning_rate > 0.0)) fail("learning_rate", "must be positive");
    if (!(gamma >= 0.0 && gamma <= 1.0)) fail("gamma", "must lie in [0, 1]");
    if (!(epsilon > 0.0)) fail("epsilon", "must be positive");
    if (epochs < 1) fail("epochs", "must be >= 1");
    if (effective_warmup() < 1) fail("warmup_epochs", "must be >= 1");
    if (effective_warmup() > epochs) fail("warmup_epochs", "must not exceed epochs");
    if (batch_size < 1) fail("batch_size", "must be >= 1");
    if (!(sigma0 > 0.0)) fail("sigma0", "must be positive");
    if (prior.kind == HyperPrior::Kind::HalfCauchy && !(prior.eta > 0.0)) fail("eta", "must be positive");
    if (!(lr_decay > 0.0)) fail("lr_decay", "must be positive");
    if (!(kl_weight >= 0.0)) fail("kl_weight", "must be non-negative");
    if (threads < 1) fail("threads", "must be >= 1");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) fail("adam_beta1", "must lie in [0, 1)");
    if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) fail("adam_beta2", "must lie in [0, 1)");
}

double beta_schedule(int epoch, int warmup_epochs) {
    if (epoch < 1 || warmup_epochs < 1) throw std::invalid_argument("beta_schedule needs epoch >= 1 and warmup >= 1");
    return std::min(1.0, static_cast<double>(epoch) / static_cast<double>(warmup_epochs));
}

Optimizer::Optimizer(const TrainConfig& cfg, const TensorizedNetwork& net)
    : kind_(cfg.optimizer), lr_(cfg.learning_rate), b1_(cfg.adam_beta1), b2_(cfg.adam_beta2), eps_(cfg.adam_epsilon) {
    if (kind_ == OptimizerKind::Adam) {
        TensorizedNetwork copy = net;
        const auto zeros = zero_gradients(copy);
        for_each_param(copy, zeros, [&](std::span<double> p, std::span<const double>, bool) {
            m_.emplace_back(p.size(), 0.0);
            v_.emplace_back(p.size(), 0.0);
        });
    }
}

void Optimizer::step(TensorizedNetwork& net, const NetworkGradients& grads) {
    ++t_;
    std::size_t slot = 0;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for_each_param(net, grads, [&](std::span<double> p, std::span<const double> g, bool is_stddev) {
        if (p.size() != g.size()) throw ShapeError("gradient size mismatch");
        if (kind_ == OptimizerKind::SGD) {
            for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr_ * g[i];
        } else {
            if (slot >= m_.size() || m_[slot].size() != p.size()) throw ShapeError("optimizer state does not match the network");
            auto& m = m_[slot];
            auto& v = v_[slot];
            for (std::size_t i = 0; i < p.size(); ++i) {
                m[i] = b1_ * m[i] + (1.0 - b1_) * g[i];
                v[i] = b2_ * v[i] + (1.0 - b2_) * g[i] * g[i];
                p[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
            }
        }
        if (is_stddev) {
            for (double& x : p) x = std::max(x, kSigmaFloor);
        }
        ++slot;
    });
}

TrainReport train(TensorizedNetwork& net, const LabeledDataset& train_set, const LabeledDataset* test_set,
                  const TrainConfig& cfg, const EpochCallback& on_epoch) {
    cfg.validate();
    net.validate();
    train_set.validate();
    if (train_set.num_classes != net.num_classes) throw ShapeError("dataset class count does not match the network");
    if (test_set) test_set->validate();

    const auto t0 = std::chrono::steady_clock::now();
    const PassOptions pass{cfg.threads, true};
    const double n = static_cast<double>(train_set.size());
    const int warmup = cfg.effective_warmup();
    const bool ard = cfg.mode == TrainMode::ARD;
    std::mt19937_64 noise_rng(mix_seed(cfg.seed, 0));
    Optimizer opt(cfg, net);
    const LabeledDataset train_eval = train_set.head(cfg.train_eval_limit);

    TrainReport report;
    report.dense_params = dense_param_count(net);
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const double beta = cfg.kl_weight * beta_schedule(epoch, warmup);
        const auto order = batches(train_set.size(), cfg.batch_size, mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
        double loss_sum = 0.0;
        double nll_sum = 0.0;
        for (std::size_t b = 0; b < order.size(); ++b) {
            const auto& idx = order[b];
            const InputBatch input = train_set.gather(idx);
            const auto labels = train_set.gather_labels(idx);

            // Half step 1: sampled gradient step on the factor posteriors.
            const ForwardTrace trace = forward_sampled(net, input, noise_rng, pass);
            const double nll = nll_multinomial(trace.logits, labels);
            const double kl = beta > 0.0 ? kl_total(net, cfg.prior, cfg.sigma0) : 0.0;
            const double loss = n * nll + beta * kl;
            if (!std::isfinite(loss)) {
                throw TrainingAborted("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(b),
                                      epoch, b, blame_layer(net, cfg));
            }
            loss_sum += loss;
            nll_sum += nll;

            NetworkGradients grads = backward(net, trace, labels, pass);
            scale_gradients(grads, n);
            if (beta > 0.0) axpy_gradients(grads, kl_gradients(net, cfg.sigma0), beta);
            opt.step(net, grads);

            // Half step 2: incremental closed-form lambda update.
            if (ard) {
                for (auto& layer : net.layers) update_lambdas(factorized(layer), cfg.prior, cfg.gamma);
            }
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.beta = beta;
        rec.loss = loss_sum / static_cast<double>(order.size());
        rec.nll = nll_sum / static_cast<double>(order.size());
        rec.kl = kl_total(net, cfg.prior, cfg.sigma0);
        if (!std::isfinite(rec.kl)) {
            throw TrainingAborted("non-finite KL at the end of epoch " + std::to_string(epoch), epoch, order.size(),
                                  blame_layer(net, cfg));
        }
        rec.train_acc = cfg.train_eval_limit > 0 ? evaluate(net, train_eval, cfg.threads)
                                                 : std::numeric_limits<double>::quiet_NaN();
        rec.test_acc = test_set ? evaluate(net, *test_set, cfg.threads) : std::numeric_limits<double>::quiet_NaN();
        rec.ranks = all_ranks(net, cfg.epsilon);
        report.epochs.push_back(rec);
        if (on_epoch) on_epoch(net, rec);
        opt.set_learning_rate(opt.learning_rate() * cfg.lr_decay);
    }

    report.params_before_prune = param_count(net);
    for (const auto& layer : net.layers) report.layer_params_before.push_back(param_count(factorized(layer)));
    if (cfg.prune_at_end) net = prune(net, cfg.epsilon);
    report.params_after_prune = param_count(net);
    for (const auto& layer : net.layers) report.layer_params_after.push_back(param_count(factorized(layer)));
    report.final_ranks = all_ranks(net, cfg.epsilon);
    report.final_test_acc = test_set ? evaluate(net, *test_set, cfg.threads) : std::numeric_limits<double>::quiet_NaN();
    report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

double evaluate(const TensorizedNetwork& net, const LabeledDataset& ds, std::size_t threads) {
    if (ds.size() == 0) throw std::invalid_argument("cannot evaluate on an empty dataset");
    const PassOptions pass{threads, true};
    constexpr std::size_t kChunk = 1000;
    std::size_t correct = 0;
    const std::size_t c = net.num_classes;
    for (std::size_t start = 0; start < ds.size(); start += kChunk) {
        const std::size_t len = std::min(kChunk, ds.size() - start);
        std::vector<std::size_t> idx(len);
        std::iota(idx.begin(), idx.end(), start);
        const DenseTensor logits = forward_mean(net, ds.gather(idx), pass);
        for (std::size_t r = 0; r < len; ++r) {
            const double* row = logits.data().data() + r * c;
            const auto pred = static_cast<std::size_t>(std::max_element(row, row + c) - row);
            if (pred == ds.labels[start + r]) ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(ds.size());
}

std::vector<Uncertainty> predict_uncertainty(const TensorizedNetwork& net, const InputBatch& inputs, std::size_t samples,
                                             std::uint64_t seed) {
    if (samples < 2) throw std::invalid_argument("predict_uncertainty needs at least 2 samples");
    const std::size_t b = inputs.size();
    const std::size_t c = net.num_classes;
    std::vector<double> sum(b * c, 0.0);
    std::vector<std::vector<double>> probs(samples);
    std::mt19937_64 rng(seed);
    for (std::size_t s = 0; s < samples; ++s) {
        const DenseTensor logits = forward_sampled(net, inputs, rng).logits;
        auto& p = probs[s];
        p.resize(b * c);
        for (std::size_t r = 0; r < b; ++r) {
            const double* row = logits.data().data() + r * c;
            const double mx = *std::max_element(row, row + c);
            double z = 0.0;
            for (std::size_t j = 0; j < c; ++j) z += p[r * c + j] = std::exp(row[j] - mx);
            for (std::size_t j = 0; j < c; ++j) p[r * c + j] /= z;
        }
        for (std::size_t i = 0; i < b * c; ++i) sum[i] += p[i];
    }
    std::vector<Uncertainty> out(b);
    for (std::size_t r = 0; r < b; ++r) {
        out[r].mean.resize(c);
        out[r].stddev.resize(c);
        for (std::size_t j = 0; j < c; ++j) {
            const double mean = sum[r * c + j] / static_cast<double>(samples);
            double ss = 0.0;
            for (std::size_t s = 0; s < samples; ++s) {
                const double d = probs[s][r * c + j] - mean;
                ss += d * d;
            }
            out[r].mean[j] = mean;
            out[r].stddev[j] = std::sqrt(ss / static_cast<double>(samples - 1));
        }
    }
    return out;
}

}  // namespace tnn
