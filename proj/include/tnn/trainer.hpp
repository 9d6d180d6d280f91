#pragma once

#include "tnn/data.hpp"
#include "tnn/network.hpp"
#include "tnn/variational.hpp"

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace tnn {

enum class TrainMode { ARD, FixedRank };
enum class OptimizerKind { SGD, Adam };

struct TrainConfig {
    double learning_rate = 1e-3;
    double gamma = 0.05;           // lambda step size per batch
    double epsilon = 1e-5;         // rank cutoff
    int warmup_epochs = -1;        // < 0: epochs / 2
    int epochs = 10;
    std::size_t batch_size = 100;
    HyperPrior prior;
    double sigma0 = 1.0;           // prior stddev of biases and Tucker cores
    std::uint64_t seed = 0;
    TrainMode mode = TrainMode::ARD;
    OptimizerKind optimizer = OptimizerKind::SGD;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;
    double lr_decay = 1.0;         // learning rate multiplier applied after each epoch
    std::size_t threads = 1;
    std::size_t train_eval_limit = 10000;  // samples used for train accuracy; 0 disables
    bool prune_at_end = true;
    double kl_weight = 1.0;        // multiplies beta; 0 with FixedRank gives plain likelihood training

    int effective_warmup() const;
    /// Throws std::invalid_argument naming the offending field.
    void validate() const;
};

struct EpochRecord {
    int epoch = 0;
    double loss = 0.0;   // mean over batches of N * nll + beta * kl
    double nll = 0.0;    // mean over batches of the minibatch mean NLL
    double kl = 0.0;     // kl_total at the end of the epoch
    double beta = 0.0;
    double train_acc = 0.0;
    double test_acc = 0.0;  // NaN without a test set
    std::vector<std::vector<std::size_t>> ranks;  // inferred ranks per layer
};

struct TrainReport {
    std::vector<EpochRecord> epochs;
    std::size_t params_before_prune = 0;
    std::size_t params_after_prune = 0;
    std::size_t dense_params = 0;
    std::vector<std::size_t> layer_params_before;
    std::vector<std::size_t> layer_params_after;
    std::vector<std::vector<std::size_t>> final_ranks;
    double final_test_acc = 0.0;  // after pruning; NaN without a test set
    double wall_seconds = 0.0;
};

/// min(1, e / e_w).
double beta_schedule(int epoch, int warmup_epochs);

using EpochCallback = std::function<void(const TensorizedNetwork&, const EpochRecord&)>;

/// Runs the full loop and, if configured, prunes `net` in place at the end.
/// Throws TrainingAborted on a non-finite loss.
TrainReport train(TensorizedNetwork& net, const LabeledDataset& train_set, const LabeledDataset* test_set,
                  const TrainConfig& cfg, const EpochCallback& on_epoch = {});

/// Posterior-mean accuracy; ties go to the lowest class index.
double evaluate(const TensorizedNetwork& net, const LabeledDataset& ds, std::size_t threads = 1);

struct Uncertainty {
    std::vector<double> mean;
    std::vector<double> stddev;
};

/// Per-sample softmax mean and stddev over S sampled passes.
std::vector<Uncertainty> predict_uncertainty(const TensorizedNetwork& net, const InputBatch& inputs, std::size_t samples,
                                             std::uint64_t seed);

/// Gradient step state for the variational parameters.
class Optimizer {
public:
    Optimizer(const TrainConfig& cfg, const TensorizedNetwork& net);
    void set_learning_rate(double lr) { lr_ = lr; }
    double learning_rate() const { return lr_; }
    /// Descends along `grads` and clamps every stddev at kSigmaFloor.
    void step(TensorizedNetwork& net, const NetworkGradients& grads);

private:
    OptimizerKind kind_;
    double lr_;
    double b1_, b2_, eps_;
    std::size_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

}  // namespace tnn
