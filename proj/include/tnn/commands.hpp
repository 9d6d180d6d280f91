#pragma once

#include "tnn/network.hpp"
#include "tnn/trainer.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

namespace tnn {

/// Process exit codes shared by every subcommand.
enum ExitCode : int { kExitOk = 0, kExitUsage = 2, kExitNumerical = 3 };

struct CommandOptions {
    std::filesystem::path spec;
    std::filesystem::path checkpoint;
    std::filesystem::path input;
    std::optional<std::filesystem::path> out;
    std::optional<std::uint64_t> seed;
    std::size_t samples = 100;
    std::size_t threads = 1;
    bool deterministic = false;
    std::optional<double> epsilon;
    bool quiet = false;
};

int cmd_train(const CommandOptions& opts, std::ostream& out, std::ostream& err);
int cmd_eval(const CommandOptions& opts, std::ostream& out, std::ostream& err);
int cmd_predict(const CommandOptions& opts, std::ostream& out, std::ostream& err);
int cmd_synth_gen(const CommandOptions& opts, std::ostream& out, std::ostream& err);

/// metrics.csv contents for a report; one rank column per lambda vector.
std::string metrics_csv(const TrainReport& report, const TensorizedNetwork& net_before_prune);

/// ranks.json contents: inferred ranks and log10-lambda histograms per layer.
std::string ranks_json(const TensorizedNetwork& trained, double epsilon);

}  // namespace tnn
