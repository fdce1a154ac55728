#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "tafe/tensor.hpp"

namespace tafe::tools {

enum class BenchKernel { Dense, Cascade, Parallel };

BenchKernel parse_kernel(const std::string& s);
const char* kernel_name(BenchKernel k);

struct BenchCase {
    std::size_t k = 7;
    std::size_t height = 64;
    std::size_t width = 64;
    std::size_t channels = 16;
    std::size_t reps = 5;
    std::uint64_t seed = 0;
};

// Analytic multiply-accumulate counts per output element.
std::size_t macs_per_output(BenchKernel kernel, std::size_t k, std::size_t channels);

// The three topologies on one input. Dense is a k x k conv; cascade is a
// 1 x k conv followed by k x 1; parallel sums k x 1 and 1 x k of the input.
struct StripWeights {
    ConvKernel row;  // (c, c, 1, k)
    ConvKernel col;  // (c, c, k, 1)
};

StripWeights random_strips(std::size_t k, std::size_t channels, std::uint64_t seed);
// Dense kernel equal to the cascade: W[o][i][y][x] = sum_m col[o][m][y] * row[m][i][x].
ConvKernel compose_cascade(const StripWeights& s);
Tensor run_kernel(BenchKernel kernel, const Tensor& input, const StripWeights& strips,
                  const ConvKernel& dense);

struct TimingStats {
    BenchKernel kernel = BenchKernel::Dense;
    std::size_t macs_per_output = 0;
    std::uint64_t total_macs = 0;
    double mean_ms = 0.0;
    double std_ms = 0.0;
};

struct BenchReport {
    BenchCase config;
    std::vector<TimingStats> timings;
    std::size_t ratio_numerator = 0;    // 2k
    std::size_t ratio_denominator = 0;  // k^2
    double mac_ratio = 0.0;             // cascade / dense from the analytic counts
    // Cascade vs its composed dense kernel on the timed input, and on a
    // single-channel input where the composed kernel is exactly rank 1.
    double guard_max_abs_diff = 0.0;
    double guard_rank1_max_abs_diff = 0.0;
    bool guard_pass = false;
};

inline constexpr double kGuardTolerance = 1e-10;

BenchReport run_bench(const BenchCase& config, const std::vector<BenchKernel>& kernels);

// Timings are labelled as wall-clock and excluded from reproducibility.
std::string bench_json(const BenchReport& report);

}  // namespace tafe::tools
