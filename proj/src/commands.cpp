#include "tnn/commands.hpp"

#include "tnn/blob.hpp"
#include "tnn/checkpoint.hpp"
#include "tnn/errors.hpp"
#include "tnn/run_spec.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <ostream>

namespace tnn {

namespace {

using nlohmann::json;

std::string fmt(double v) {
    if (std::isnan(v)) return "nan";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// Counts per lambda vector (TT/TTM boundary ranks stripped).
std::vector<std::size_t> vector_ranks(const FactorizedLayer& f, const std::vector<std::size_t>& inferred) {
    if (f.kind == FormatKind::TT || f.kind == FormatKind::TTM) {
        return std::vector<std::size_t>(inferred.begin() + 1, inferred.end() - 1);
    }
    return inferred;
}

json json_number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json config_json(const TrainConfig& c) {
    json j;
    j["epochs"] = c.epochs;
    j["batch_size"] = c.batch_size;
    j["learning_rate"] = c.learning_rate;
    j["gamma"] = c.gamma;
    j["epsilon"] = c.epsilon;
    j["warmup_epochs"] = c.effective_warmup();
    j["prior"] = c.prior.kind == HyperPrior::Kind::LogUniform ? "log_uniform" : "half_cauchy";
    if (c.prior.kind == HyperPrior::Kind::HalfCauchy) j["eta"] = c.prior.eta;
    j["sigma0"] = c.sigma0;
    j["seed"] = c.seed;
    j["mode"] = c.mode == TrainMode::ARD ? "ard" : "fixed_rank";
    j["optimizer"] = c.optimizer == OptimizerKind::SGD ? "sgd" : "adam";
    j["lr_decay"] = c.lr_decay;
    j["kl_weight"] = c.kl_weight;
    j["threads"] = c.threads;
    return j;
}

// Reads the `data` section of either a full run spec or a data-only document.
DataSource data_from_file(const std::filesystem::path& path) {
    json doc;
    try {
        doc = json::parse(read_file(path));
    } catch (const json::parse_error& e) {
        throw SpecError("spec", std::string("not valid JSON: ") + e.what());
    } catch (const std::runtime_error& e) {
        throw SpecError("spec", e.what());
    }
    if (!doc.is_object() || !doc.contains("data")) throw SpecError("data", "required field is missing");
    return parse_data_source(doc.at("data"), path.parent_path());
}

void check_compatible(const TensorizedNetwork& net, const LabeledDataset& ds) {
    if (net.takes_tokens() != ds.token_inputs) throw ShapeError("dataset input type does not match the network");
    if (!ds.token_inputs && ds.feature_dim != net.input_dim()) {
        throw ShapeError("dataset has " + std::to_string(ds.feature_dim) + " features, network expects " +
                         std::to_string(net.input_dim()));
    }
    if (ds.num_classes > net.num_classes) {
        throw ShapeError("dataset has " + std::to_string(ds.num_classes) + " classes, network predicts " +
                         std::to_string(net.num_classes));
    }
}

template <class F>
int guarded(std::ostream& err, F&& body) {
    try {
        return body();
    } catch (const TrainingAborted& e) {
        err << "error: training aborted: " << e.what() << " (epoch " << e.epoch() << ", batch " << e.batch();
        if (e.layer() >= 0) err << ", layer " << e.layer();
        err << ")\n";
        return kExitNumerical;
    } catch (const RankCollapseError& e) {
        err << "error: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const SpecError& e) {
        err << "error: invalid spec: " << e.what() << "\n";
        return kExitUsage;
    } catch (const FormatError& e) {
        err << "error: " << e.what() << " (byte offset " << e.offset() << ")\n";
        return kExitUsage;
    } catch (const std::invalid_argument& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::out_of_range& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::runtime_error& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    }
}

}  // namespace

std::string metrics_csv(const TrainReport& report, const TensorizedNetwork& net) {
    std::string out = "epoch,loss,nll,kl,beta,train_acc,test_acc";
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        const auto& f = factorized(net.layers[l]);
        for (std::size_t v = 0; v < f.lambdas.size(); ++v) {
            out += ",rank_l" + std::to_string(l) + "_" + std::to_string(v);
        }
    }
    out += "\n";
    for (const auto& e : report.epochs) {
        out += std::to_string(e.epoch) + "," + fmt(e.loss) + "," + fmt(e.nll) + "," + fmt(e.kl) + "," + fmt(e.beta) + "," +
               fmt(e.train_acc) + "," + fmt(e.test_acc);
        for (std::size_t l = 0; l < e.ranks.size(); ++l) {
            for (std::size_t r : vector_ranks(factorized(net.layers[l]), e.ranks[l])) out += "," + std::to_string(r);
        }
        out += "\n";
    }
    return out;
}

std::string ranks_json(const TensorizedNetwork& trained, double epsilon) {
    constexpr int kLowDecade = -12;
    constexpr int kHighDecade = 4;
    json j;
    j["epsilon"] = epsilon;
    j["layers"] = json::array();
    for (std::size_t l = 0; l < trained.layers.size(); ++l) {
        const auto& f = factorized(trained.layers[l]);
        json lj;
        lj["format"] = std::string(to_string(f.kind));
        lj["max_ranks"] = f.max_ranks;
        lj["inferred_ranks"] = inferred_ranks(f, epsilon);
        lj["lambda_histograms"] = json::array();
        for (const auto& lam : f.lambdas) {
            std::vector<int> edges;
            for (int d = kLowDecade; d <= kHighDecade; ++d) edges.push_back(d);
            std::vector<std::size_t> counts(edges.size() - 1, 0);
            for (double x : lam) {
                const double lg = std::log10(x);
                auto bin = static_cast<long>(std::floor(lg)) - kLowDecade;
                bin = std::clamp<long>(bin, 0, static_cast<long>(counts.size()) - 1);
                ++counts[static_cast<std::size_t>(bin)];
            }
            json h;
            h["log10_edges"] = edges;
            h["counts"] = counts;
            h["lambda"] = lam;
            lj["lambda_histograms"].push_back(std::move(h));
        }
        j["layers"].push_back(std::move(lj));
    }
    return j.dump(2) + "\n";
}

int cmd_train(const CommandOptions& opts, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        if (opts.spec.empty()) throw SpecError("--spec", "a run spec is required");
        RunSpec spec = load_run_spec(opts.spec);
        if (opts.seed) {
            spec.seed = *opts.seed;
            spec.train.seed = *opts.seed;
        }
        if (opts.out) spec.output_dir = *opts.out;
        spec.train.threads = opts.deterministic ? 1 : std::max(opts.threads, spec.train.threads);

        LoadedData data = load_data(spec.data);
        TensorizedNetwork net = build_network(spec);
        try {
            check_compatible(net, data.train);
            if (data.test) check_compatible(net, *data.test);
        } catch (const ShapeError& e) {
            throw SpecError("data", e.what());
        }
        data.train.num_classes = net.num_classes;
        if (data.test) data.test->num_classes = net.num_classes;

        std::filesystem::create_directories(spec.output_dir);
        const auto ckpt_path = spec.output_dir / "checkpoint.tnn";
        TensorizedNetwork last = net;
        json meta;
        meta["epsilon"] = spec.train.epsilon;
        meta["train"] = config_json(spec.train);
        const auto on_epoch = [&](const TensorizedNetwork& n, const EpochRecord& rec) {
            last = n;
            if (spec.checkpoint_every && rec.epoch % static_cast<int>(spec.checkpoint_every) == 0) {
                json m = meta;
                m["epoch"] = rec.epoch;
                m["pruned"] = false;
                save_checkpoint(ckpt_path, n, m);
            }
            if (!opts.quiet) {
                err << "epoch " << rec.epoch << " loss " << fmt(rec.loss) << " nll " << fmt(rec.nll) << " kl " << fmt(rec.kl)
                    << " beta " << fmt(rec.beta) << " train_acc " << fmt(rec.train_acc) << " test_acc "
                    << fmt(rec.test_acc) << "\n";
            }
        };
        const TrainReport report = train(net, data.train, data.test ? &*data.test : nullptr, spec.train, on_epoch);

        json fm = meta;
        fm["epoch"] = spec.train.epochs;
        fm["pruned"] = spec.train.prune_at_end;
        save_checkpoint(spec.output_dir / "final.tnn", net, fm);
        write_file(spec.output_dir / "metrics.csv", metrics_csv(report, last));
        write_file(spec.output_dir / "ranks.json", ranks_json(last, spec.train.epsilon));
        if (data.generator) save_checkpoint(spec.output_dir / "generator.tnn", *data.generator);

        json r;
        r["config"] = config_json(spec.train);
        r["epochs"] = json::array();
        for (const auto& e : report.epochs) {
            json ej;
            ej["epoch"] = e.epoch;
            ej["loss"] = json_number(e.loss);
            ej["nll"] = json_number(e.nll);
            ej["kl"] = json_number(e.kl);
            ej["beta"] = e.beta;
            ej["train_acc"] = json_number(e.train_acc);
            ej["test_acc"] = json_number(e.test_acc);
            ej["ranks"] = e.ranks;
            r["epochs"].push_back(std::move(ej));
        }
        r["params_before_prune"] = report.params_before_prune;
        r["params_after_prune"] = report.params_after_prune;
        r["layer_params_before_prune"] = report.layer_params_before;
        r["layer_params_after_prune"] = report.layer_params_after;
        r["dense_params"] = report.dense_params;
        r["compression_ratio"] = static_cast<double>(report.dense_params) / static_cast<double>(report.params_after_prune);
        r["final_ranks"] = report.final_ranks;
        r["final_test_acc"] = json_number(report.final_test_acc);
        r["wall_seconds"] = report.wall_seconds;
        if (data.generator) {
            r["true_ranks"] = json::array();
            for (const auto& layer : data.generator->layers) r["true_ranks"].push_back(factorized(layer).max_ranks);
        }
        write_file(spec.output_dir / "report.json", r.dump(2) + "\n");

        out << "params " << report.params_before_prune << " -> " << report.params_after_prune << " (dense "
            << report.dense_params << ")\n";
        for (std::size_t l = 0; l < report.final_ranks.size(); ++l) {
            out << "layer " << l << " ranks";
            for (std::size_t x : report.final_ranks[l]) out << " " << x;
            out << "\n";
        }
        if (!std::isnan(report.final_test_acc)) out << "test_acc " << fmt(report.final_test_acc) << "\n";
        out << "wrote " << spec.output_dir.string() << "\n";
        return static_cast<int>(kExitOk);
    });
}

int cmd_eval(const CommandOptions& opts, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        if (opts.checkpoint.empty()) throw SpecError("--checkpoint", "a checkpoint is required");
        const Checkpoint ck = load_checkpoint(opts.checkpoint);
        LabeledDataset ds;
        if (!opts.input.empty()) {
            ds = load_dataset(opts.input);
        } else if (!opts.spec.empty()) {
            LoadedData data = load_data(data_from_file(opts.spec));
            ds = data.test ? std::move(*data.test) : std::move(data.train);
        } else {
            throw SpecError("--spec", "pass --spec (data section) or --input (dataset blob)");
        }
        try {
            check_compatible(ck.net, ds);
        } catch (const ShapeError& e) {
            throw SpecError("data", e.what());
        }
        ds.num_classes = ck.net.num_classes;
        const double eps = opts.epsilon ? *opts.epsilon : ck.meta.value("epsilon", 1e-5);
        const std::size_t threads = opts.deterministic ? 1 : opts.threads;
        const std::size_t before = param_count(ck.net);
        // Accuracy of the model as pruned at eps.
        const TensorizedNetwork pruned = prune(ck.net, eps);
        const double acc = evaluate(pruned, ds, threads);
        const std::size_t after = param_count(pruned);
        const std::size_t dense = dense_param_count(ck.net);
        out << "accuracy " << fmt(acc) << "\n";
        out << "samples " << ds.size() << "\n";
        out << "params_before_prune " << before << "\n";
        out << "params_after_prune " << after << "\n";
        out << "dense_params " << dense << "\n";
        out << "compression_ratio " << fmt(static_cast<double>(dense) / static_cast<double>(after)) << "\n";
        return static_cast<int>(kExitOk);
    });
}

int cmd_predict(const CommandOptions& opts, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        if (opts.checkpoint.empty()) throw SpecError("--checkpoint", "a checkpoint is required");
        if (opts.input.empty()) throw SpecError("--input", "an input JSON file is required");
        if (opts.samples < 2) throw SpecError("--samples", "must be >= 2");
        const Checkpoint ck = load_checkpoint(opts.checkpoint);
        json doc;
        try {
            doc = json::parse(read_file(opts.input));
        } catch (const json::parse_error& e) {
            throw SpecError("--input", std::string("not valid JSON: ") + e.what());
        }
        InputBatch batch;
        try {
            if (ck.net.takes_tokens()) {
                auto bags = doc.at("tokens").get<std::vector<std::vector<std::size_t>>>();
                if (bags.empty()) throw SpecError("tokens", "must hold at least one bag");
                batch = token_batch(std::move(bags));
            } else {
                const auto rows = doc.at("features").get<std::vector<std::vector<double>>>();
                if (rows.empty()) throw SpecError("features", "must hold at least one row");
                const std::size_t f = ck.net.input_dim();
                DenseTensor x({rows.size(), f});
                for (std::size_t r = 0; r < rows.size(); ++r) {
                    if (rows[r].size() != f) {
                        throw SpecError("features[" + std::to_string(r) + "]", "must have " + std::to_string(f) + " values");
                    }
                    std::copy(rows[r].begin(), rows[r].end(), x.data().begin() + r * f);
                }
                batch = dense_batch(std::move(x));
            }
        } catch (const json::exception& e) {
            throw SpecError(ck.net.takes_tokens() ? "tokens" : "features", e.what());
        }
        const std::uint64_t seed = opts.seed.value_or(0);
        const auto result = predict_uncertainty(ck.net, batch, opts.samples, seed);
        json j;
        j["samples"] = opts.samples;
        j["seed"] = seed;
        j["predictions"] = json::array();
        for (const auto& u : result) {
            json p;
            p["mean"] = u.mean;
            p["stddev"] = u.stddev;
            j["predictions"].push_back(std::move(p));
        }
        const std::string text = j.dump(2) + "\n";
        if (opts.out) {
            write_file(*opts.out, text);
        } else {
            out << text;
        }
        return static_cast<int>(kExitOk);
    });
}

int cmd_synth_gen(const CommandOptions& opts, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        if (opts.spec.empty()) throw SpecError("--spec", "a spec with a data.synthetic section is required");
        if (!opts.out) throw SpecError("--out", "an output directory is required");
        DataSource src = data_from_file(opts.spec);
        auto* syn = std::get_if<SyntheticSource>(&src);
        if (!syn) throw SpecError("data.synthetic", "synth-gen needs a synthetic data section");
        if (opts.seed) syn->spec.seed = *opts.seed;
        LoadedData data = load_data(src);
        std::filesystem::create_directories(*opts.out);
        save_dataset(*opts.out / "train.tnnd", data.train);
        if (data.test) save_dataset(*opts.out / "test.tnnd", *data.test);
        save_checkpoint(*opts.out / "generator.tnn", *data.generator);
        std::vector<std::size_t> counts(data.train.num_classes, 0);
        for (std::size_t l : data.train.labels) ++counts[l];
        out << "train " << data.train.size() << " samples, " << data.train.num_classes << " classes; class counts";
        for (std::size_t c : counts) out << " " << c;
        out << "\n";
        if (data.test) out << "test " << data.test->size() << " samples\n";
        out << "wrote " << opts.out->string() << "\n";
        return static_cast<int>(kExitOk);
    });
}

}  // namespace tnn
