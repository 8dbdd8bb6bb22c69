// Times the OpenMP kernels against their serial reference implementations.
// The two paths produce bitwise-identical results (asserted in the test
// suites); this target only reports throughput.

#include <chrono>
#include <cstdio>
#include <vector>

#include "trajlab/error_profile.hpp"
#include "trajlab/parallel.hpp"
#include "trajlab/sim.hpp"
#include "trajlab/tensor.hpp"

using namespace trajlab;
namespace chrono = std::chrono;

namespace {

double seconds(chrono::high_resolution_clock::time_point a,
               chrono::high_resolution_clock::time_point b) {
    return chrono::duration_cast<chrono::duration<double>>(b - a).count();
}

template <typename F>
double timed(F&& f) {
    const auto t0 = chrono::high_resolution_clock::now();
    f();
    const auto t1 = chrono::high_resolution_clock::now();
    return seconds(t0, t1);
}

}  // namespace

int main() {
    std::printf("threads available: %d\n\n", hardware_threads());

    {
        sim::SimConfig cfg;
        cfg.n_sampled_steps = 100;
        const int count = 200;
        const double ts = timed([&] { sim::generate_trajectories(cfg, count, 1, 0, Exec::Serial); });
        const double tp = timed([&] { sim::generate_trajectories(cfg, count, 1, 0, Exec::Parallel); });
        std::printf("trajectory generation (%d sims):  serial %.3fs  parallel %.3fs  speedup %.2fx\n",
                    count, ts, tp, ts / tp);
    }

    {
        sim::SimConfig cfg;
        const std::vector<double> dt_grid{0.002, 0.005, 0.01};
        const double ts = timed(
            [&] { err::computational_error(cfg, dt_grid, 0.001, 50, 16, 1, Exec::Serial); });
        const double tp = timed(
            [&] { err::computational_error(cfg, dt_grid, 0.001, 50, 16, 1, Exec::Parallel); });
        std::printf("computational error grid:         serial %.3fs  parallel %.3fs  speedup %.2fx\n",
                    ts, tp, ts / tp);
    }

    {
        const int m = 2560, k = 96, n = 32, reps = 200;
        auto a = ad::Tensor::full(m, k, 0.5);
        auto b = ad::Tensor::full(k, n, 0.25);
        ad::set_parallel_kernels(false);
        const double ts = timed([&] {
            for (int r = 0; r < reps; ++r) ad::matmul(a, b);
        });
        ad::set_parallel_kernels(true);
        const double tp = timed([&] {
            for (int r = 0; r < reps; ++r) ad::matmul(a, b);
        });
        std::printf("matmul %dx%dx%d (%d reps):     serial %.3fs  parallel %.3fs  speedup %.2fx\n",
                    m, k, n, reps, ts, tp, ts / tp);
    }
    return 0;
}
