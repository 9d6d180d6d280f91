#include "tnn/commands.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
    CLI::App app{"Tensorized neural networks with automatic rank determination"};
    app.require_subcommand(1);

    tnn::CommandOptions opts;
    std::string out_path;
    std::uint64_t seed = 0;
    double epsilon = 0.0;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--threads", opts.threads, "Worker threads for batch passes")->check(CLI::PositiveNumber);
        cmd->add_flag("--deterministic", opts.deterministic, "Single-threaded, bit-reproducible run");
        cmd->add_option("--seed", seed, "Seed override");
    };

    auto* train = app.add_subcommand("train", "Train a network from a run spec");
    train->add_option("--spec", opts.spec, "Run spec (JSON)")->required();
    train->add_option("--out", out_path, "Output directory (overrides output_dir)");
    train->add_flag("--quiet", opts.quiet, "No per-epoch log");
    add_common(train);

    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
    eval->add_option("--checkpoint", opts.checkpoint, "Checkpoint file")->required();
    eval->add_option("--spec", opts.spec, "JSON file with a data section");
    eval->add_option("--input", opts.input, "Dataset blob instead of --spec");
    eval->add_option("--epsilon", epsilon, "Rank cutoff (default: from checkpoint)");
    add_common(eval);

    auto* predict = app.add_subcommand("predict", "Softmax mean/stddev over sampled passes");
    predict->add_option("--checkpoint", opts.checkpoint, "Checkpoint file")->required();
    predict->add_option("--input", opts.input, "JSON with 'features' rows or 'tokens' bags")->required();
    predict->add_option("--samples", opts.samples, "Sample count S (>= 2)");
    predict->add_option("--out", out_path, "Write JSON here instead of stdout");
    add_common(predict);

    auto* synth = app.add_subcommand("synth-gen", "Generate a synthetic ground-truth-rank dataset");
    synth->add_option("--spec", opts.spec, "JSON file with data.synthetic")->required();
    synth->add_option("--out", out_path, "Output directory")->required();
    add_common(synth);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : tnn::kExitUsage;
    }

    if (!out_path.empty()) opts.out = out_path;
    for (auto* cmd : {train, eval, predict, synth}) {
        if (cmd->parsed() && cmd->count("--seed")) opts.seed = seed;
    }
    if (eval->parsed() && eval->count("--epsilon")) opts.epsilon = epsilon;

    if (train->parsed()) return tnn::cmd_train(opts, std::cout, std::cerr);
    if (eval->parsed()) return tnn::cmd_eval(opts, std::cout, std::cerr);
    if (predict->parsed()) return tnn::cmd_predict(opts, std::cout, std::cerr);
    return tnn::cmd_synth_gen(opts, std::cout, std::cerr);
}
