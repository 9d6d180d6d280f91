#include "tnn/blob.hpp"
#include "tnn/checkpoint.hpp"
#include "tnn/data.hpp"
#include "tnn/initialization.hpp"
#include "tnn/trainer.hpp"

#include <gtest/gtest.h>
#include <json.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <random>
#include <string>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct RunResult {
    int code = -1;
    std::string out;
    std::string err;
};

class Cli : public ::testing::Test {
protected:
    void SetUp() override {
        const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
        dir_ = fs::temp_directory_path() / (std::string("tnn_cli_") + info->name());
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }

    RunResult run(const std::string& args) const {
        const auto out = dir_ / "stdout.txt", err = dir_ / "stderr.txt";
        const std::string cmd = std::string("\"") + TNN_CLI_PATH + "\" " + args + " >\"" + out.string() + "\" 2>\"" +
                                err.string() + "\"";
        const int status = std::system(cmd.c_str());
        RunResult r;
        r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
        r.out = tnn::read_file(out);
        r.err = tnn::read_file(err);
        return r;
    }

    fs::path write_json(const std::string& name, const json& j) const {
        const auto p = dir_ / name;
        tnn::write_file(p, j.dump(2));
        return p;
    }

    static json synthetic_spec(const std::string& out_dir) {
        json j = json::parse(R"({
          "seed": 7,
          "train": {"epochs": 3, "batch_size": 32, "learning_rate": 0.01, "optimizer": "adam", "gamma": 0.1},
          "model": {"layers": [{"type": "linear", "format": "cp", "dims": [4, 3, 5], "ranks": [4],
                                "in_features": 12, "out_features": 5}]},
          "data": {"synthetic": {"format": "cp", "dims": [4, 3, 5], "ranks": [2], "inputs": "gaussian",
                                 "num_train": 200, "num_test": 50, "seed": 3}}
        })");
        j["output_dir"] = out_dir;
        return j;
    }

    fs::path dir_;
};

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

}  // namespace

TEST_F(Cli, UsageErrorsExitTwo) {
    EXPECT_EQ(run("").code, 2);
    EXPECT_EQ(run("train").code, 2);
    EXPECT_EQ(run("frobnicate").code, 2);
    EXPECT_EQ(run("train --spec x.json --bogus").code, 2);
    EXPECT_EQ(run("--help").code, 0);
}

TEST_F(Cli, TrainWritesOutputsAndIsDeterministic) {
    const auto spec = write_json("spec.json", synthetic_spec("run_a"));
    const auto r = run("train --quiet --deterministic --spec " + q(spec));
    ASSERT_EQ(r.code, 0) << r.err;
    for (const char* f : {"report.json", "metrics.csv", "checkpoint.tnn", "final.tnn", "ranks.json", "generator.tnn"})
        EXPECT_TRUE(fs::exists(dir_ / "run_a" / f)) << f;

    const auto csv = tnn::read_file(dir_ / "run_a" / "metrics.csv");
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "epoch,loss,nll,kl,beta,train_acc,test_acc,rank_l0_0");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);

    const auto report = json::parse(tnn::read_file(dir_ / "run_a" / "report.json"));
    EXPECT_EQ(report.at("epochs").size(), 3u);
    EXPECT_EQ(report.at("true_ranks"), json::parse("[[2]]"));
    const auto ranks = json::parse(tnn::read_file(dir_ / "run_a" / "ranks.json"));
    EXPECT_EQ(ranks.at("layers")[0].at("max_ranks"), json::parse("[4]"));

    const auto r2 = run("train --quiet --deterministic --spec " + q(spec) + " --out " + q(dir_ / "run_b"));
    ASSERT_EQ(r2.code, 0) << r2.err;
    EXPECT_EQ(tnn::read_file(dir_ / "run_b" / "metrics.csv"), csv);
    EXPECT_EQ(tnn::read_file(dir_ / "run_b" / "ranks.json"), tnn::read_file(dir_ / "run_a" / "ranks.json"));

    const auto r3 = run("train --quiet --deterministic --seed 8 --spec " + q(spec) + " --out " + q(dir_ / "run_c"));
    ASSERT_EQ(r3.code, 0) << r3.err;
    EXPECT_NE(tnn::read_file(dir_ / "run_c" / "metrics.csv"), csv);
}

TEST_F(Cli, InvalidSpecsNameTheField) {
    auto spec = synthetic_spec("out");
    spec["data"] = json::parse(R"({"mnist": {"dir": "/nonexistent/mnist"}})");
    auto r = run("train --spec " + q(write_json("a.json", spec)));
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("data.mnist.dir"), std::string::npos) << r.err;

    spec = synthetic_spec("out");
    spec["train"]["learnign_rate"] = 0.1;
    r = run("train --spec " + q(write_json("b.json", spec)));
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("train.learnign_rate"), std::string::npos) << r.err;

    spec = synthetic_spec("out");
    spec["model"]["layers"][0]["dims"] = json::array({4, 3, 4});
    r = run("train --spec " + q(write_json("c.json", spec)));
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("model.layers[0].dims"), std::string::npos) << r.err;

    spec = synthetic_spec("out");
    spec["train"]["gamma"] = 2.0;
    r = run("train --spec " + q(write_json("d.json", spec)));
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("train.gamma"), std::string::npos) << r.err;

    EXPECT_EQ(run("train --spec " + q(dir_ / "missing.json")).code, 2);
    tnn::write_file(dir_ / "broken.json", "{ not json");
    EXPECT_EQ(run("train --spec " + q(dir_ / "broken.json")).code, 2);
}

TEST_F(Cli, NumericalFailureExitsThree) {
    auto spec = synthetic_spec("out");
    spec["train"]["optimizer"] = "sgd";
    spec["train"]["learning_rate"] = 1e200;
    const auto r = run("train --quiet --spec " + q(write_json("s.json", spec)));
    EXPECT_EQ(r.code, 3);
    EXPECT_NE(r.err.find("epoch 1"), std::string::npos) << r.err;
}

TEST_F(Cli, EvalPrintsAccuracyAndCounts) {
    const auto spec = write_json("spec.json", synthetic_spec("run"));
    ASSERT_EQ(run("train --quiet --spec " + q(spec)).code, 0);
    const auto r = run("eval --checkpoint " + q(dir_ / "run" / "final.tnn") + " --spec " + q(spec));
    ASSERT_EQ(r.code, 0) << r.err;
    for (const char* key : {"accuracy ", "params_before_prune ", "params_after_prune ", "dense_params 65\n",
                            "compression_ratio "})
        EXPECT_NE(r.out.find(key), std::string::npos) << key << "\n" << r.out;

    const auto s = run("synth-gen --spec " + q(spec) + " --out " + q(dir_ / "gen"));
    ASSERT_EQ(s.code, 0) << s.err;
    const auto e = run("eval --checkpoint " + q(dir_ / "run" / "final.tnn") + " --input " + q(dir_ / "gen" / "test.tnnd"));
    ASSERT_EQ(e.code, 0) << e.err;
    EXPECT_NE(e.out.find("samples 50"), std::string::npos);
}

TEST_F(Cli, EvalOfUntrainedCheckpointIsNearChance) {
    std::mt19937_64 rng(1);
    tnn::TensorizedNetwork net;
    net.layers.push_back(tnn::make_linear({tnn::FormatKind::TT, {4, 4, 10}, {}, {3, 3}, 16, 10, tnn::Activation::Identity}, rng));
    net.num_classes = 10;
    tnn::save_checkpoint(dir_ / "untrained.tnn", net);
    auto ds = tnn::gaussian_inputs(3000, 16, 2);
    ds.num_classes = 10;
    for (std::size_t i = 0; i < 3000; ++i) ds.labels.push_back(i % 10);
    tnn::save_dataset(dir_ / "balanced.tnnd", ds);
    const auto r = run("eval --checkpoint " + q(dir_ / "untrained.tnn") + " --input " + q(dir_ / "balanced.tnnd"));
    ASSERT_EQ(r.code, 0) << r.err;
    const double acc = std::stod(r.out.substr(r.out.find("accuracy ") + 9));
    EXPECT_NEAR(acc, 0.1, 0.03);

    auto wrong = tnn::gaussian_inputs(10, 5, 3);
    wrong.num_classes = 2;
    wrong.labels.assign(10, 1);
    tnn::save_dataset(dir_ / "wrong.tnnd", wrong);
    EXPECT_EQ(run("eval --checkpoint " + q(dir_ / "untrained.tnn") + " --input " + q(dir_ / "wrong.tnnd")).code, 2);
    tnn::write_file(dir_ / "junk.tnn", "TNNBLOB1junk");
    EXPECT_EQ(run("eval --checkpoint " + q(dir_ / "junk.tnn") + " --input " + q(dir_ / "balanced.tnnd")).code, 2);
}

TEST_F(Cli, PredictEmitsNormalizedSeededUncertainty) {
    std::mt19937_64 rng(4);
    tnn::TensorizedNetwork net;
    net.layers.push_back(tnn::make_linear({tnn::FormatKind::CP, {2, 3, 4}, {}, {3}, 6, 4, tnn::Activation::Identity}, rng));
    net.num_classes = 4;
    tnn::save_checkpoint(dir_ / "net.tnn", net);
    const auto input = write_json("in.json", json::parse(R"({"features": [[1,2,3,4,5,6],[0,0,0,0,0,1]]})"));

    const std::string base = "predict --checkpoint " + q(dir_ / "net.tnn") + " --input " + q(input) + " --samples 50";
    const auto a = run(base + " --seed 5");
    ASSERT_EQ(a.code, 0) << a.err;
    EXPECT_EQ(run(base + " --seed 5").out, a.out);
    EXPECT_NE(run(base + " --seed 6").out, a.out);
    const auto j = json::parse(a.out);
    ASSERT_EQ(j.at("predictions").size(), 2u);
    for (const auto& p : j.at("predictions")) {
        double s = 0.0;
        for (double m : p.at("mean")) s += m;
        EXPECT_NEAR(s, 1.0, 1e-9);
        for (double sd : p.at("stddev")) EXPECT_GT(sd, 0.0);
    }

    auto& lin = std::get<tnn::TensorizedLinear>(net.layers[0]);
    for (auto& f : lin.weight.factors) f.stddev = tnn::DenseTensor(f.stddev.shape());
    lin.bias.stddev = tnn::DenseTensor(lin.bias.stddev.shape());
    tnn::save_checkpoint(dir_ / "sharp.tnn", net);
    const auto z = run("predict --checkpoint " + q(dir_ / "sharp.tnn") + " --input " + q(input) + " --out " +
                       q(dir_ / "pred.json"));
    ASSERT_EQ(z.code, 0) << z.err;
    for (const auto& p : json::parse(tnn::read_file(dir_ / "pred.json")).at("predictions"))
        for (double sd : p.at("stddev")) EXPECT_LT(sd, 1e-15);

    const auto bad = write_json("bad.json", json::parse(R"({"features": [[1,2,3]]})"));
    const auto rb = run("predict --checkpoint " + q(dir_ / "net.tnn") + " --input " + q(bad));
    EXPECT_EQ(rb.code, 2);
    EXPECT_NE(rb.err.find("features[0]"), std::string::npos) << rb.err;
    EXPECT_EQ(run(base + " --samples 1").code, 2);
    tnn::write_file(dir_ / "notjson.json", "[1,");
    EXPECT_EQ(run("predict --checkpoint " + q(dir_ / "net.tnn") + " --input " + q(dir_ / "notjson.json")).code, 2);
}

TEST_F(Cli, SynthGenWritesDatasetAndGenerator) {
    const auto spec = write_json("spec.json", synthetic_spec("unused"));
    const auto r = run("synth-gen --spec " + q(spec) + " --out " + q(dir_ / "gen"));
    ASSERT_EQ(r.code, 0) << r.err;
    const auto train = tnn::load_dataset(dir_ / "gen" / "train.tnnd");
    EXPECT_EQ(train.size(), 200u);
    EXPECT_EQ(train.num_classes, 5u);
    const auto gen = tnn::load_checkpoint(dir_ / "gen" / "generator.tnn");
    const auto logits = tnn::forward_mean(gen.net, train.all_inputs());
    for (std::size_t i = 0; i < train.size(); ++i) {
        const double* row = logits.data().data() + i * 5;
        EXPECT_EQ(train.labels[i], static_cast<std::size_t>(std::max_element(row, row + 5) - row));
    }
}
