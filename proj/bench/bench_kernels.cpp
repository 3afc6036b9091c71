// Serial-reference vs OpenMP/BLAS kernel comparison, plus end-to-end
// training-step and sampling throughput at several widths.
#include <chrono>
#include <cstdio>
#include <vector>

#include "cth/diffusion.hpp"
#include "cth/kernels.hpp"
#include "cth/parallel.hpp"
#include "cth/rng.hpp"

using namespace cth;
using Clock = std::chrono::steady_clock;

namespace {

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

template <typename F>
double time_ms(int reps, F&& f) {
    f();  // warm-up
    const auto t0 = Clock::now();
    for (int i = 0; i < reps; ++i) f();
    return ms_since(t0) / reps;
}

std::vector<float> randf(int64_t n, Rng& rng) {
    std::vector<float> v(static_cast<size_t>(n));
    for (auto& x : v) x = static_cast<float>(rng.normal());
    return v;
}

void bench_conv() {
    Rng rng(1);
    const int64_t B = 64, Ci = 32, L = 68, Co = 32, K = 3;
    const int64_t Lo = kern::conv_out_len(L, K, 1, 1);
    auto x = randf(B * Ci * L, rng);
    auto w = randf(Co * Ci * K, rng);
    auto b = randf(Co, rng);
    auto gy = randf(B * Co * Lo, rng);
    std::vector<float> y(static_cast<size_t>(B * Co * Lo));
    std::vector<float> gx(x.size()), gw(w.size()), gb(b.size());

    const double flops_fwd = 2.0 * B * Co * Lo * Ci * K;
    std::printf("conv1d fwd  [B=%ld %ldx%ld -> %ldx%ld]\n", B, Ci, L, Co, Lo);
    const double t_ref = time_ms(20, [&] {
        kern::conv1d_fwd_ref(x.data(), w.data(), b.data(), y.data(), B, Ci, L, Co, K, 1, 1);
    });
    std::printf("  reference (serial)   %8.3f ms  %6.2f GFLOP/s\n", t_ref,
                flops_fwd / t_ref / 1e6);
    for (int t : {1, 2}) {
        set_threads(t);
        const double ms = time_ms(50, [&] {
            kern::conv1d_fwd(x.data(), w.data(), b.data(), y.data(), B, Ci, L, Co, K, 1, 1);
        });
        std::printf("  blas+omp (%d thread)  %8.3f ms  %6.2f GFLOP/s\n", t, ms,
                    flops_fwd / ms / 1e6);
    }
    std::printf("conv1d bwd\n");
    const double t_bref = time_ms(10, [&] {
        std::fill(gx.begin(), gx.end(), 0.f);
        std::fill(gw.begin(), gw.end(), 0.f);
        std::fill(gb.begin(), gb.end(), 0.f);
        kern::conv1d_bwd_ref(x.data(), w.data(), gy.data(), gx.data(), gw.data(), gb.data(), B,
                             Ci, L, Co, K, 1, 1);
    });
    std::printf("  reference (serial)   %8.3f ms\n", t_bref);
    for (int t : {1, 2}) {
        set_threads(t);
        const double ms = time_ms(20, [&] {
            std::fill(gx.begin(), gx.end(), 0.f);
            std::fill(gw.begin(), gw.end(), 0.f);
            std::fill(gb.begin(), gb.end(), 0.f);
            kern::conv1d_bwd(x.data(), w.data(), gy.data(), gx.data(), gw.data(), gb.data(), B,
                             Ci, L, Co, K, 1, 1);
        });
        std::printf("  blas+omp (%d thread)  %8.3f ms\n", t, ms);
    }
}

Cohort bench_cohort() {
    CohortSpec spec;
    spec.n_subjects = 120;
    spec.n_test = 24;
    spec.train_ad = 25;
    spec.train_mci = 43;
    spec.train_cn = 28;
    spec.test_mci = 14;
    spec.test_cn = 10;
    spec.m36_ad = 6;
    spec.m36_mci = 10;
    spec.m36_cn = 8;
    spec.seed = 7;
    return generate_cohort(spec);
}

void bench_training_step() {
    const Cohort cohort = bench_cohort();
    CohortSpec spec;
    spec.n_test = 24;
    const auto [train, test] = split_cohort(cohort, spec);
    (void)test;
    const auto stats = compute_normalization(train);
    const auto pairs = build_training_pairs(train, stats);
    DiffusionConfig dcfg;

    std::printf("\ntraining step, batch 64 (%zu candidate pairs)\n", pairs.size());
    for (int64_t width : {8, 16, 32}) {
        ArchConfig arch;
        arch.base_width = width;
        arch.embed_dim = 4 * width;
        arch.in_channels = 1 + kCondChannels;
        Rng rng_i(2);
        ParamStore<float> params = init_unet_params<float>(arch, rng_i);
        std::vector<const TrainingPair*> batch;
        for (size_t i = 0; i < 64 && i < pairs.size(); ++i) batch.push_back(&pairs[i]);
        for (int t : {1, 2}) {
            set_threads(t);
            Rng rng(3);
            const double ms = time_ms(5, [&] {
                (void)denoising_loss(params, arch, 1.0, batch, stats, dcfg, rng);
            });
            std::printf("  width %2ld (%7ld params), %d thread: %8.2f ms/step  (512 epochs x %zu steps ~ %.1f min)\n",
                        width, params.total_values(), t, ms,
                        (pairs.size() + 63) / 64,
                        ms * 512.0 * static_cast<double>((pairs.size() + 63) / 64) / 60000.0);
        }
    }
}

void bench_sampling() {
    const Cohort cohort = bench_cohort();
    CohortSpec spec;
    spec.n_test = 24;
    const auto [train, test] = split_cohort(cohort, spec);
    const auto stats = compute_normalization(train);
    std::printf("\nsampling (Heun, 32 intervals = 63 denoiser calls per sample)\n");
    for (int64_t width : {8, 16, 32}) {
        ArchConfig arch;
        arch.base_width = width;
        arch.embed_dim = 4 * width;
        arch.in_channels = 1 + kCondChannels;
        Rng rng_i(4);
        Denoiser<float> den{arch, init_unet_params<float>(arch, rng_i), stats, 1.0};
        Cohort eight;
        for (size_t i = 0; i < 8; ++i) eight.subjects.push_back(test.subjects[i]);
        PredictOptions opt;
        opt.steps = 32;
        opt.realizations = 1;
        for (int t : {1, 2}) {
            set_threads(t);
            const double ms =
                time_ms(2, [&] { (void)predict_trajectory(den, eight, {36}, opt); });
            std::printf("  width %2ld, %d thread: %8.2f ms / 8 samples\n", width, t, ms);
        }
    }
}

}  // namespace

int main() {
    std::printf("threads available: %d\n", threads());
    bench_conv();
    bench_training_step();
    bench_sampling();
    return 0;
}
