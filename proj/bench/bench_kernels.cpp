// Times every dual-implementation kernel: serial reference vs the OpenMP
// version, asserting bit-identical outputs before reporting throughput.
#include <chrono>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include "rapa/kernels.hpp"
#include "rapa/rng.hpp"

using namespace rapa;
using Clock = std::chrono::steady_clock;

namespace {

std::vector<float> rand_vec(size_t n, Rng& rng) {
    std::vector<float> v(n);
    for (auto& x : v) x = static_cast<float>(rng.uniform(-1.0, 1.0));
    return v;
}

template <typename F>
double time_ms(int iters, F&& fn) {
    fn();  // warm-up
    const auto t0 = Clock::now();
    for (int i = 0; i < iters; ++i) fn();
    const auto t1 = Clock::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count() / iters;
}

bool equal_bits(const std::vector<float>& a, const std::vector<float>& b) {
    return a.size() == b.size() &&
           std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

int failures = 0;

void report(const std::string& name, double serial_ms, double omp_ms, bool identical) {
    std::printf("%-24s serial %8.3f ms   omp %8.3f ms   speedup %5.2fx   %s\n", name.c_str(),
                serial_ms, omp_ms, serial_ms / omp_ms, identical ? "bit-identical" : "MISMATCH");
    if (!identical) ++failures;
}

}  // namespace

int main() {
#ifdef _OPENMP
    std::printf("openmp threads: %d\n", omp_get_max_threads());
#else
    std::printf("built without openmp; comparing identical serial paths\n");
#endif

    Rng rng(20240614);

    {
        const auto s = kernels::Conv2dShape::make(32, 32, 16, 64, 3, 3, 2, 1);
        const auto in = rand_vec(static_cast<size_t>(s.cin * s.h * s.w), rng);
        const auto kern = rand_vec(static_cast<size_t>(s.cout * s.cin * s.kh * s.kw), rng);
        const auto bias = rand_vec(static_cast<size_t>(s.cout), rng);
        std::vector<float> out_a(static_cast<size_t>(s.cout * s.oh * s.ow));
        std::vector<float> out_b(out_a.size());
        const double t_ref = time_ms(50, [&] {
            kernels::ref::conv2d_forward(s, in.data(), kern.data(), bias.data(), out_a.data());
        });
        const double t_omp = time_ms(50, [&] {
            kernels::conv2d_forward(s, in.data(), kern.data(), bias.data(), out_b.data());
        });
        report("conv2d_forward", t_ref, t_omp, equal_bits(out_a, out_b));

        const auto gout = rand_vec(out_a.size(), rng);
        std::vector<float> gin_a(in.size()), gin_b(in.size());
        const double bi_ref = time_ms(50, [&] {
            kernels::ref::conv2d_backward_input(s, gout.data(), kern.data(), gin_a.data());
        });
        const double bi_omp = time_ms(50, [&] {
            kernels::conv2d_backward_input(s, gout.data(), kern.data(), gin_b.data());
        });
        report("conv2d_backward_input", bi_ref, bi_omp, equal_bits(gin_a, gin_b));

        std::vector<float> gk_a(kern.size()), gk_b(kern.size());
        const double bk_ref = time_ms(50, [&] {
            kernels::ref::conv2d_backward_kernel(s, in.data(), gout.data(), gk_a.data());
        });
        const double bk_omp = time_ms(50, [&] {
            kernels::conv2d_backward_kernel(s, in.data(), gout.data(), gk_b.data());
        });
        report("conv2d_backward_kernel", bk_ref, bk_omp, equal_bits(gk_a, gk_b));
    }

    {
        const int64_t n = 512, d = 256;
        const auto x = rand_vec(static_cast<size_t>(n * d), rng);
        std::vector<float> out_a(static_cast<size_t>(n * n)), out_b(out_a.size());
        const double t_ref =
            time_ms(20, [&] { kernels::ref::pairwise_sqdist(x.data(), n, d, out_a.data()); });
        const double t_omp =
            time_ms(20, [&] { kernels::pairwise_sqdist(x.data(), n, d, out_b.data()); });
        report("pairwise_sqdist", t_ref, t_omp, equal_bits(out_a, out_b));
    }

    {
        const int64_t t = 8, c = 256, hw = 32 * 16;
        const auto stack = rand_vec(static_cast<size_t>(t * c * hw), rng);
        std::vector<float> out_a(static_cast<size_t>(t * c)), out_b(out_a.size());
        std::vector<int64_t> args_a(out_a.size()), args_b(out_a.size());
        const double t_ref = time_ms(100, [&] {
            kernels::ref::pool_frames(stack.data(), t, c, hw, true, out_a.data(),
                                      args_a.data());
        });
        const double t_omp = time_ms(100, [&] {
            kernels::pool_frames(stack.data(), t, c, hw, true, out_b.data(), args_b.data());
        });
        report("pool_frames_max", t_ref, t_omp,
               equal_bits(out_a, out_b) && args_a == args_b);

        const double a_ref = time_ms(100, [&] {
            kernels::ref::pool_frames(stack.data(), t, c, hw, false, out_a.data(), nullptr);
        });
        const double a_omp = time_ms(100, [&] {
            kernels::pool_frames(stack.data(), t, c, hw, false, out_b.data(), nullptr);
        });
        report("pool_frames_avg", a_ref, a_omp, equal_bits(out_a, out_b));
    }

    {
        // batch-norm statistics layout: feature = channel, reduce = (n, h, w)
        const int64_t n = 32, c = 64, hw = 16 * 8;
        const auto x = rand_vec(static_cast<size_t>(n * c * hw), rng);
        std::vector<int64_t> base(static_cast<size_t>(c)), off(static_cast<size_t>(n * hw));
        for (int64_t f = 0; f < c; ++f) base[static_cast<size_t>(f)] = f * hw;
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < hw; ++j) off[static_cast<size_t>(i * hw + j)] = i * c * hw + j;
        std::vector<float> mean_a(static_cast<size_t>(c)), var_a(mean_a.size());
        std::vector<float> mean_b(mean_a.size()), var_b(mean_a.size());
        const double t_ref = time_ms(50, [&] {
            kernels::ref::feature_stats(x.data(), base.data(), c, off.data(), n * hw,
                                        mean_a.data(), var_a.data());
        });
        const double t_omp = time_ms(50, [&] {
            kernels::feature_stats(x.data(), base.data(), c, off.data(), n * hw, mean_b.data(),
                                   var_b.data());
        });
        report("feature_stats", t_ref, t_omp,
               equal_bits(mean_a, mean_b) && equal_bits(var_a, var_b));
    }

    if (failures) {
        std::printf("%d kernel(s) diverged from the serial reference\n", failures);
        return 1;
    }
    return 0;
}
