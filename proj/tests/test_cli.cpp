#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <sstream>

#include "cli.hpp"
#include "schema_check.hpp"
#include "tafe/parallel.hpp"
#include "tafe/tensor_io.hpp"

using namespace tafe;
using namespace tafe::tools;
namespace fs = std::filesystem;

namespace {

const fs::path kSchemas = fs::path(TAFE_SOURCE_DIR) / "docs" / "schemas";

struct CliResult {
    int code;
    std::string out;
    std::string err;
};

CliResult run(std::vector<std::string> args) {
    args.insert(args.begin(), "tafe");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out;
    std::ostringstream err;
    const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    set_num_threads(1);
    return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("tafe_cli_" + name);
    fs::remove_all(p);
    return p;
}

void expect_valid(const std::string& text, const std::string& schema) {
    const auto errors = schema::validate(nlohmann::json::parse(text), kSchemas / schema);
    for (const auto& e : errors) ADD_FAILURE() << schema << ": " << e;
}

// A 32 x 32 dataset and a short training run shared by the tests below.
class CliRun : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        root_ = scratch("suite");
        fs::create_directories(root_);
        ASSERT_EQ(run({"gen-data", "--n", "3", "--seed", "5", "--size", "32", "--out", (root_ / "data").string()}).code, 0);
        write_text_file(root_ / "cfg.json",
                        R"({"d": 8, "heads": 2, "stages": 1, "height": 32, "width": 32, "iterations": 3, "batch_size": 2})");
        const CliResult r = run({"train", "--config", (root_ / "cfg.json").string(), "--data", (root_ / "data").string(),
                           "--out", (root_ / "run").string()});
        ASSERT_EQ(r.code, 0) << r.err;
    }
    static void TearDownTestSuite() { fs::remove_all(root_); }
    static fs::path root_;
};

fs::path CliRun::root_;

}  // namespace

TEST(Cli, UsageErrors) {
    EXPECT_EQ(run({}).code, kExitUsage);
    EXPECT_EQ(run({"frobnicate"}).code, kExitUsage);
    EXPECT_EQ(run({"gen-data", "--n", "2"}).code, kExitUsage);
    EXPECT_EQ(run({"gen-data", "--n", "2", "--size", "abc", "--out", scratch("x").string()}).code, kExitUsage);
    EXPECT_EQ(run({"--threads", "0", "gradcheck"}).code, kExitUsage);
    EXPECT_EQ(run({"gradcheck", "--scope", "everything"}).code, kExitUsage);
    EXPECT_EQ(run({"bench", "--k", "4"}).code, kExitUsage);
    EXPECT_EQ(run({"bench", "--kernel", "fft"}).code, kExitUsage);
    EXPECT_EQ(run({"train", "--data", scratch("missing").string(), "--out", scratch("o").string()}).code, kExitUsage);
    EXPECT_EQ(run({"--help"}).code, kExitOk);
}

TEST(Cli, ThreadsEnvironmentVariable) {
    ::setenv("TAFE_THREADS", "zero", 1);
    EXPECT_EQ(run({"bench", "--reps", "1", "--size", "8x8", "--channels", "1"}).code, kExitUsage);
    ::setenv("TAFE_THREADS", "2", 1);
    EXPECT_EQ(run({"bench", "--reps", "1", "--size", "8x8", "--channels", "1"}).code, kExitOk);
    ::unsetenv("TAFE_THREADS");
}

TEST(Cli, GenDataDeterministicAndValid) {
    const fs::path a = scratch("gen_a");
    const fs::path b = scratch("gen_b");
    ASSERT_EQ(run({"gen-data", "--n", "8", "--seed", "7", "--size", "64", "--out", a.string()}).code, 0);
    ASSERT_EQ(run({"gen-data", "--n", "8", "--seed", "7", "--size", "64", "--out", b.string()}).code, 0);
    std::size_t files = 0;
    for (const auto& e : fs::directory_iterator(a)) {
        ++files;
        EXPECT_EQ(read_file_bytes(e.path()), read_file_bytes(b / e.path().filename()));
    }
    EXPECT_EQ(files, 17u);
    expect_valid(read_text_file(a / "manifest.json"), "dataset_manifest.schema.json");
    fs::remove_all(a);
    fs::remove_all(b);
}

TEST_F(CliRun, TrainWritesValidArtifacts) {
    EXPECT_TRUE(fs::exists(root_ / "run" / "checkpoint" / "manifest.json"));
    expect_valid(read_text_file(root_ / "run" / "checkpoint" / "manifest.json"), "checkpoint_manifest.schema.json");
    expect_valid(read_text_file(root_ / "run" / "train_log.json"), "train_log.schema.json");
    expect_valid(read_text_file(root_ / "cfg.json"), "run_config.schema.json");
}

TEST_F(CliRun, TrainIsReproducibleAndOverridable) {
    const fs::path again = root_ / "run2";
    ASSERT_EQ(run({"train", "--config", (root_ / "cfg.json").string(), "--data", (root_ / "data").string(),
                   "--out", again.string()})
                  .code,
              0);
    EXPECT_EQ(read_file_bytes(again / "train_log.json"), read_file_bytes(root_ / "run" / "train_log.json"));

    const fs::path ablation = root_ / "ablation";
    ASSERT_EQ(run({"train", "--config", (root_ / "cfg.json").string(), "--data", (root_ / "data").string(),
                   "--out", ablation.string(), "--set", "afe_enabled=false", "--set", "iterations=1"})
                  .code,
              0);
    const auto manifest = nlohmann::json::parse(read_text_file(ablation / "checkpoint" / "manifest.json"));
    EXPECT_FALSE(manifest["config"]["afe_enabled"].get<bool>());
    EXPECT_EQ(manifest["config"]["iterations"].get<int>(), 1);
}

TEST_F(CliRun, TrainConfigErrors) {
    write_text_file(root_ / "bad.json", R"({"d": 8, "speed": 11})");
    EXPECT_EQ(run({"train", "--config", (root_ / "bad.json").string(), "--data", (root_ / "data").string(),
                   "--out", (root_ / "bad").string()})
                  .code,
              kExitUsage);
    EXPECT_FALSE(fs::exists(root_ / "bad"));
    EXPECT_EQ(run({"train", "--config", (root_ / "cfg.json").string(), "--data", (root_ / "data").string(),
                   "--out", (root_ / "bad").string(), "--set", "heads=3"})
                  .code,
              kExitUsage);
    EXPECT_EQ(run({"train", "--config", (root_ / "cfg.json").string(), "--data", (root_ / "data").string(),
                   "--out", (root_ / "bad").string(), "--set", "novalue"})
                  .code,
              kExitUsage);
}

TEST_F(CliRun, TrainNumericAbort) {
    const CliResult r = run({"train", "--config", (root_ / "cfg.json").string(), "--data", (root_ / "data").string(),
                       "--out", (root_ / "nan").string(), "--set", "optimizer=sgd", "--set", "learning_rate=1e300",
                       "--set", "grad_clip=0"});
    EXPECT_EQ(r.code, kExitNumeric) << r.err;
}

TEST_F(CliRun, EvalWritesMetrics) {
    const fs::path out = root_ / "metrics.json";
    const CliResult r = run({"eval", "--checkpoint", (root_ / "run").string(), "--data", (root_ / "data").string(),
                       "--out", out.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("mIoU"), std::string::npos);
    const std::string text = read_text_file(out);
    expect_valid(text, "metrics.schema.json");
    const double miou = nlohmann::json::parse(text)["miou"].get<double>();
    EXPECT_GE(miou, 0.0);
    EXPECT_LE(miou, 1.0);

    const fs::path gt = root_ / "gt.json";
    ASSERT_EQ(run({"eval", "--checkpoint", (root_ / "run" / "checkpoint").string(), "--data",
                   (root_ / "data").string(), "--out", gt.string(), "--gt-as-pred"})
                  .code,
              0);
    EXPECT_EQ(nlohmann::json::parse(read_text_file(gt))["miou"].get<double>(), 1.0);
}

TEST_F(CliRun, EvalShapeMismatch) {
    const fs::path big = root_ / "big";
    ASSERT_EQ(run({"gen-data", "--n", "1", "--size", "64", "--out", big.string()}).code, 0);
    EXPECT_EQ(run({"eval", "--checkpoint", (root_ / "run").string(), "--data", big.string(), "--out",
                   (root_ / "m.json").string()})
                  .code,
              kExitUsage);
    EXPECT_EQ(run({"eval", "--checkpoint", (root_ / "nowhere").string(), "--data", big.string(), "--out",
                   (root_ / "m.json").string()})
                  .code,
              kExitUsage);
}

TEST(Cli, GradcheckOpsAndNegativeControl) {
    const CliResult ok = run({"gradcheck", "--scope", "ops"});
    EXPECT_EQ(ok.code, kExitOk);
    expect_valid(ok.out, "gradcheck_report.schema.json");
    const auto report = nlohmann::json::parse(ok.out);
    EXPECT_TRUE(report["pass"].get<bool>());
    for (const auto& c : report["checks"]) EXPECT_TRUE(c.contains("max_rel_err"));

    const CliResult bad = run({"gradcheck", "--scope", "ops", "--inject-fault"});
    EXPECT_EQ(bad.code, kExitCheckFailed);
    EXPECT_FALSE(nlohmann::json::parse(bad.out)["pass"].get<bool>());
}

TEST(Cli, BenchReportsRatiosAndGuard) {
    for (int k : {3, 5, 7}) {
        const fs::path out = scratch("bench_" + std::to_string(k) + ".json");
        const CliResult r = run({"bench", "--k", std::to_string(k), "--size", "16x24", "--reps", "2", "--channels", "4",
                           "--out", out.string()});
        ASSERT_EQ(r.code, 0) << r.err;
        expect_valid(r.out, "bench.schema.json");
        EXPECT_EQ(read_text_file(out), r.out);
        const auto j = nlohmann::json::parse(r.out);
        EXPECT_EQ(j["mac_ratio_cascade_dense"]["numerator"].get<int>(), 2 * k);
        EXPECT_EQ(j["mac_ratio_cascade_dense"]["denominator"].get<int>(), k * k);
        EXPECT_TRUE(j["guard"]["pass"].get<bool>());
        EXPECT_EQ(j["kernels"].size(), 3u);
        fs::remove(out);
    }
    const auto single = nlohmann::json::parse(run({"bench", "--kernel", "cascade", "--reps", "1"}).out);
    ASSERT_EQ(single["kernels"].size(), 1u);
    EXPECT_EQ(single["kernels"][0]["macs_per_output"].get<int>(), 2 * 7 * 16);
}
