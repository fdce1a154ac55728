#include "cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "bench.hpp"
#include "gradcheck_suite.hpp"
#include "tafe/errors.hpp"
#include "tafe/model.hpp"
#include "tafe/parallel.hpp"
#include "tafe/synthdata.hpp"
#include "tafe/tensor_io.hpp"

namespace tafe::tools {

namespace fs = std::filesystem;

namespace {

std::pair<std::size_t, std::size_t> parse_size(const std::string& s) {
    std::size_t h = 0;
    std::size_t w = 0;
    char sep = 0;
    std::istringstream in(s);
    if (s.find('x') == std::string::npos) {
        in >> h;
        w = h;
    } else {
        in >> h >> sep >> w;
    }
    if (!in || !in.eof() || h == 0 || w == 0) {
        throw UsageError("invalid size '" + s + "' (expected N or HxW)");
    }
    return {h, w};
}

std::size_t parse_threads(const std::string& s) {
    char* end = nullptr;
    const long v = std::strtol(s.c_str(), &end, 10);
    if (s.empty() || *end != '\0' || v < 1) {
        throw UsageError("thread count must be a positive integer, got '" + s + "'");
    }
    return static_cast<std::size_t>(v);
}

void require_dataset(const fs::path& dir) {
    if (!fs::is_regular_file(dir / "manifest.json")) {
        throw UsageError("no manifest.json in dataset directory " + dir.string());
    }
}

void require_writable_parent(const fs::path& file) {
    const fs::path parent = file.has_parent_path() ? file.parent_path() : fs::path(".");
    fs::create_directories(parent);
}

struct RunConfig {
    TafeConfig model;
    std::string data;
    std::string out;
};

// The config file mirrors TafeConfig plus optional "data" and "out" paths.
RunConfig load_run_config(const std::string& path) {
    RunConfig rc;
    if (path.empty()) return rc;
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(read_text_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config " + path + " is not valid JSON: " + e.what());
    } catch (const Error& e) {
        throw ConfigError(e.what());
    }
    if (!doc.is_object()) throw ConfigError("config must be a JSON object");
    for (const char* key : {"data", "out"}) {
        if (doc.contains(key)) {
            if (!doc[key].is_string()) throw ConfigError(std::string("config key '") + key + "' must be a string");
            (std::string(key) == "data" ? rc.data : rc.out) = doc[key].get<std::string>();
            doc.erase(key);
        }
    }
    rc.model = TafeConfig::from_json(doc.dump());
    return rc;
}

void print_scores(std::ostream& out, const EvalResult& r) {
    out << "class      IoU      Dice\n";
    for (std::size_t k = 0; k < r.iou.per_class.size(); ++k) {
        out << std::setw(5) << k << "  ";
        const auto& iou = r.iou.per_class[k];
        const auto& dice = r.dice.per_class[k];
        if (iou) {
            out << std::fixed << std::setprecision(4) << std::setw(7) << *iou << "  " << std::setw(7) << *dice;
        } else {
            out << "absent   absent";
        }
        out << "\n";
    }
    out << std::fixed << std::setprecision(4) << "mIoU " << r.iou.mean << "  mDice " << r.dice.mean << "\n";
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"tafe: strip-convolution enhanced transformer segmentation at desk scale"};
    app.require_subcommand(1);
    std::string threads;
    app.add_option("--threads", threads, "worker threads for conv/attention kernels (env TAFE_THREADS)");

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
    std::size_t gen_n = 0;
    std::uint64_t gen_seed = 0;
    std::string gen_size = "64";
    std::string gen_out;
    gen->add_option("--n", gen_n, "number of samples")->required();
    gen->add_option("--seed", gen_seed, "base seed");
    gen->add_option("--size", gen_size, "image size N or HxW");
    gen->add_option("--out", gen_out, "output directory")->required();

    auto* tr = app.add_subcommand("train", "train a model");
    std::string tr_config;
    std::string tr_data;
    std::string tr_out;
    std::vector<std::string> tr_set;
    tr->add_option("--config", tr_config, "JSON config file");
    tr->add_option("--data", tr_data, "dataset directory");
    tr->add_option("--out", tr_out, "run directory");
    tr->add_option("--set", tr_set, "override key=value (repeatable)");

    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
    std::string ev_ckpt;
    std::string ev_data;
    std::string ev_out;
    bool ev_gt = false;
    ev->add_option("--checkpoint", ev_ckpt, "run directory or checkpoint directory")->required();
    ev->add_option("--data", ev_data, "dataset directory")->required();
    ev->add_option("--out", ev_out, "metrics.json path")->required();
    ev->add_flag("--gt-as-pred", ev_gt, "score the ground truth against itself");

    auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient checks");
    std::string gc_scope = "ops";
    bool gc_fault = false;
    std::string gc_out;
    gc->add_option("--scope", gc_scope, "ops, blocks or model");
    gc->add_flag("--inject-fault", gc_fault, "append a deliberately wrong gradient (negative control)");
    gc->add_option("--out", gc_out, "also write the report to this file");

    auto* bn = app.add_subcommand("bench", "time dense, cascaded and parallel strip convolutions");
    std::string bn_kernel = "all";
    std::size_t bn_k = 7;
    std::string bn_size = "64x64";
    std::size_t bn_reps = 5;
    std::size_t bn_channels = 16;
    std::string bn_out;
    bn->add_option("--kernel", bn_kernel, "dense, cascade, parallel or all");
    bn->add_option("--k", bn_k, "strip length (3, 5 or 7)");
    bn->add_option("--size", bn_size, "input size HxW");
    bn->add_option("--reps", bn_reps, "timed repetitions");
    bn->add_option("--channels", bn_channels, "channel count");
    bn->add_option("--out", bn_out, "also write the report to this file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n" << app.help();
        return kExitUsage;
    }

    try {
        if (threads.empty()) {
            if (const char* env = std::getenv("TAFE_THREADS"); env != nullptr && *env != '\0') threads = env;
        }
        set_num_threads(threads.empty() ? 1 : parse_threads(threads));

        if (gen->parsed()) {
            const auto [h, w] = parse_size(gen_size);
            SceneSpec spec;
            spec.height = h;
            spec.width = w;
            const DatasetManifest m = gen_dataset(gen_n, gen_seed, gen_out, spec);
            out << "wrote " << m.samples.size() << " samples to " << gen_out << "\n";
            return kExitOk;
        }

        if (tr->parsed()) {
            RunConfig rc = load_run_config(tr_config);
            for (const auto& kv : tr_set) {
                const auto eq = kv.find('=');
                if (eq == std::string::npos || eq == 0) throw UsageError("--set expects key=value, got '" + kv + "'");
                rc.model.set(kv.substr(0, eq), kv.substr(eq + 1));
            }
            if (!tr_data.empty()) rc.data = tr_data;
            if (!tr_out.empty()) rc.out = tr_out;
            if (rc.data.empty() || rc.out.empty()) throw UsageError("train needs --data and --out (flags or config)");
            rc.model.validate();
            require_dataset(rc.data);
            fs::create_directories(rc.out);
            const auto samples = load_dataset(rc.data);
            TrainOptions opts;
            opts.out_dir = fs::path(rc.out);
            const TrainResult result = train(rc.model, samples, opts);
            out << "trained " << result.log.size() << " iterations, final loss " << std::setprecision(6)
                << (result.log.empty() ? 0.0 : result.log.back().loss) << "\n";
            return kExitOk;
        }

        if (ev->parsed()) {
            fs::path ckpt = ev_ckpt;
            if (!fs::exists(ckpt / "manifest.json") && fs::exists(ckpt / "checkpoint" / "manifest.json")) {
                ckpt /= "checkpoint";
            }
            if (!fs::exists(ckpt / "manifest.json")) throw UsageError("no checkpoint manifest under " + ev_ckpt);
            require_dataset(ev_data);
            require_writable_parent(ev_out);
            const TafeModel model = load_checkpoint(ckpt);
            const auto samples = load_dataset(ev_data);
            for (const auto& s : samples) {
                if (s.image.shape().h != model.config.height || s.image.shape().w != model.config.width) {
                    throw ShapeError("dataset images are " + std::to_string(s.image.shape().h) + "x" +
                                     std::to_string(s.image.shape().w) + ", checkpoint expects " +
                                     std::to_string(model.config.height) + "x" +
                                     std::to_string(model.config.width));
                }
            }
            const EvalResult r = evaluate(model, samples, ev_gt);
            write_text_file(ev_out, metrics_json(r, model.config));
            print_scores(out, r);
            return kExitOk;
        }

        if (gc->parsed()) {
            const GradScope scope = parse_scope(gc_scope);
            const SuiteReport report = run_gradcheck(scope, gc_fault);
            const std::string json = report_json(report, scope);
            if (!gc_out.empty()) {
                require_writable_parent(gc_out);
                write_text_file(gc_out, json);
            }
            out << json;
            return report.pass ? kExitOk : kExitCheckFailed;
        }

        if (bn->parsed()) {
            std::vector<BenchKernel> kernels;
            if (bn_kernel == "all") {
                kernels = {BenchKernel::Dense, BenchKernel::Cascade, BenchKernel::Parallel};
            } else {
                kernels = {parse_kernel(bn_kernel)};
            }
            const auto [h, w] = parse_size(bn_size);
            BenchCase bc;
            bc.k = bn_k;
            bc.height = h;
            bc.width = w;
            bc.reps = bn_reps;
            bc.channels = bn_channels;
            const BenchReport report = run_bench(bc, kernels);
            const std::string json = bench_json(report);
            if (!bn_out.empty()) {
                require_writable_parent(bn_out);
                write_text_file(bn_out, json);
            }
            out << json;
            return report.guard_pass ? kExitOk : kExitCheckFailed;
        }
    } catch (const NumericError& e) {
        err << "numeric abort: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const fs::filesystem_error& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    }
    return kExitUsage;
}

}  // namespace tafe::tools
