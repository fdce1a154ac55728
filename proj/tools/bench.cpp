#include "bench.hpp"

#include <chrono>
#include <cmath>
#include <random>

#include <json.hpp>

#include "tafe/errors.hpp"

namespace tafe::tools {

BenchKernel parse_kernel(const std::string& s) {
    if (s == "dense") return BenchKernel::Dense;
    if (s == "cascade") return BenchKernel::Cascade;
    if (s == "parallel") return BenchKernel::Parallel;
    throw UsageError("unknown kernel '" + s + "' (expected dense, cascade, parallel or all)");
}

const char* kernel_name(BenchKernel k) {
    switch (k) {
        case BenchKernel::Dense: return "dense";
        case BenchKernel::Cascade: return "cascade";
        case BenchKernel::Parallel: return "parallel";
    }
    return "?";
}

std::size_t macs_per_output(BenchKernel kernel, std::size_t k, std::size_t channels) {
    return kernel == BenchKernel::Dense ? k * k * channels : 2 * k * channels;
}

StripWeights random_strips(std::size_t k, std::size_t channels, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, 1.0 / static_cast<double>(k));
    StripWeights s{{Tensor(Shape{channels, channels, 1, k}), {}},
                   {Tensor(Shape{channels, channels, k, 1}), {}}};
    for (double& v : s.row.weights.data()) v = dist(rng);
    for (double& v : s.col.weights.data()) v = dist(rng);
    return s;
}

ConvKernel compose_cascade(const StripWeights& s) {
    const std::size_t c = s.row.c_out();
    const std::size_t k = s.row.kw();
    ConvKernel dense{Tensor(Shape{c, c, k, k}), {}};
    for (std::size_t o = 0; o < c; ++o) {
        for (std::size_t i = 0; i < c; ++i) {
            for (std::size_t y = 0; y < k; ++y) {
                for (std::size_t x = 0; x < k; ++x) {
                    double acc = 0.0;
                    for (std::size_t m = 0; m < c; ++m) {
                        acc += s.col.weights.at(o, m, y, 0) * s.row.weights.at(m, i, 0, x);
                    }
                    dense.weights.at(o, i, y, x) = acc;
                }
            }
        }
    }
    return dense;
}

Tensor run_kernel(BenchKernel kernel, const Tensor& input, const StripWeights& strips,
                  const ConvKernel& dense) {
    switch (kernel) {
        case BenchKernel::Dense: return conv2d(input, dense, Padding::Same);
        case BenchKernel::Cascade:
            return conv2d(conv2d(input, strips.row, Padding::Same), strips.col, Padding::Same);
        case BenchKernel::Parallel:
            return add(conv2d(input, strips.col, Padding::Same), conv2d(input, strips.row, Padding::Same));
    }
    throw UsageError("unknown kernel");
}

BenchReport run_bench(const BenchCase& config, const std::vector<BenchKernel>& kernels) {
    if (config.k % 2 == 0 || config.k == 0) throw UsageError("--k must be odd (3, 5 or 7)");
    if (config.reps == 0) throw UsageError("--reps must be >= 1");
    if (config.height == 0 || config.width == 0 || config.channels == 0) {
        throw UsageError("bench sizes must be positive");
    }
    std::mt19937_64 rng(config.seed);
    std::uniform_real_distribution<double> unif(-1.0, 1.0);
    Tensor input(Shape{1, config.channels, config.height, config.width});
    for (double& v : input.data()) v = unif(rng);
    const StripWeights strips = random_strips(config.k, config.channels, config.seed + 1);
    const ConvKernel dense = compose_cascade(strips);

    BenchReport report;
    report.config = config;
    report.ratio_numerator = macs_per_output(BenchKernel::Cascade, config.k, 1);
    report.ratio_denominator = macs_per_output(BenchKernel::Dense, config.k, 1);
    report.mac_ratio = static_cast<double>(report.ratio_numerator) /
                       static_cast<double>(report.ratio_denominator);

    const std::uint64_t outputs = config.height * config.width * config.channels;
    for (BenchKernel kernel : kernels) {
        std::vector<double> ms;
        for (std::size_t r = 0; r < config.reps; ++r) {
            const auto t0 = std::chrono::steady_clock::now();
            const Tensor out = run_kernel(kernel, input, strips, dense);
            const auto t1 = std::chrono::steady_clock::now();
            ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
            if (out.size() != outputs) throw ShapeError("bench output size mismatch");
        }
        double mean = 0.0;
        for (double v : ms) mean += v;
        mean /= static_cast<double>(ms.size());
        double var = 0.0;
        for (double v : ms) var += (v - mean) * (v - mean);
        const double sd = ms.size() > 1 ? std::sqrt(var / static_cast<double>(ms.size() - 1)) : 0.0;
        const std::size_t mpo = macs_per_output(kernel, config.k, config.channels);
        report.timings.push_back({kernel, mpo, outputs * mpo, mean, sd});
    }

    // Guard: the cascade must reproduce its composed dense kernel.
    const Tensor cascade = run_kernel(BenchKernel::Cascade, input, strips, dense);
    const Tensor reference = run_kernel(BenchKernel::Dense, input, strips, dense);
    report.guard_max_abs_diff = max_abs_diff(cascade, reference);

    Tensor single(Shape{1, 1, config.height, config.width});
    for (double& v : single.data()) v = unif(rng);
    const StripWeights rank1 = random_strips(config.k, 1, config.seed + 2);
    const ConvKernel rank1_dense = compose_cascade(rank1);
    report.guard_rank1_max_abs_diff =
        max_abs_diff(run_kernel(BenchKernel::Cascade, single, rank1, rank1_dense),
                     run_kernel(BenchKernel::Dense, single, rank1, rank1_dense));
    report.guard_pass = report.guard_max_abs_diff < kGuardTolerance &&
                        report.guard_rank1_max_abs_diff < kGuardTolerance;
    return report;
}

std::string bench_json(const BenchReport& report) {
    nlohmann::ordered_json j;
    const BenchCase& c = report.config;
    j["k"] = c.k;
    j["size"] = {c.height, c.width};
    j["channels"] = c.channels;
    j["reps"] = c.reps;
    j["mac_ratio_cascade_dense"] = {{"numerator", report.ratio_numerator},
                                    {"denominator", report.ratio_denominator},
                                    {"value", report.mac_ratio}};
    j["kernels"] = nlohmann::ordered_json::array();
    for (const auto& t : report.timings) {
        j["kernels"].push_back({{"kernel", kernel_name(t.kernel)},
                                {"macs_per_output", t.macs_per_output},
                                {"total_macs", t.total_macs},
                                {"wall_clock_mean_ms", t.mean_ms},
                                {"wall_clock_std_ms", t.std_ms}});
    }
    j["guard"] = {{"max_abs_diff", report.guard_max_abs_diff},
                  {"rank1_max_abs_diff", report.guard_rank1_max_abs_diff},
                  {"tolerance", kGuardTolerance},
                  {"pass", report.guard_pass}};
    j["timing_note"] = "wall_clock_* fields are measured timings and vary between runs";
    return j.dump(2) + "\n";
}

}  // namespace tafe::tools
