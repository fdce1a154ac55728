// Dense k x k vs cascaded and parallel strip convolutions.

#include <benchmark/benchmark.h>

#include <random>

#include "bench.hpp"
#include "tafe/parallel.hpp"

namespace {

using tafe::tools::BenchKernel;

constexpr std::size_t kChannels = 16;
constexpr std::size_t kSide = 64;

void strip_conv(benchmark::State& state, BenchKernel kernel) {
    const auto k = static_cast<std::size_t>(state.range(0));
    tafe::set_num_threads(1);
    const auto strips = tafe::tools::random_strips(k, kChannels, 0);
    const auto dense = tafe::tools::compose_cascade(strips);
    tafe::Tensor input(tafe::Shape{1, kChannels, kSide, kSide});
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (double& v : input.data()) v = u(rng);

    for (auto _ : state) benchmark::DoNotOptimize(tafe::tools::run_kernel(kernel, input, strips, dense));

    const auto macs = tafe::tools::macs_per_output(kernel, k, kChannels);
    state.counters["macs_per_output"] = static_cast<double>(macs);
    state.counters["MACs/s"] = benchmark::Counter(static_cast<double>(macs * kChannels * kSide * kSide),
                                                   benchmark::Counter::kIsIterationInvariantRate);
}

}  // namespace

BENCHMARK_CAPTURE(strip_conv, dense, BenchKernel::Dense)->Arg(3)->Arg(5)->Arg(7)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(strip_conv, cascade, BenchKernel::Cascade)->Arg(3)->Arg(5)->Arg(7)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(strip_conv, parallel, BenchKernel::Parallel)->Arg(3)->Arg(5)->Arg(7)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
