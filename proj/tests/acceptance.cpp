// Acceptance suite: one pass/fail line per criterion, exit code = failures.
// Criterion 7 trains the full default configuration and dominates the
// runtime (budgeted at 30 CPU-minutes).
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "cth/adam.hpp"
#include "cth/baselines.hpp"
#include "cth/checkpoint.hpp"
#include "cth/diffusion.hpp"
#include "cth/evaluation.hpp"
#include "cth/gaussian_oracle.hpp"
#include "cth/run_config.hpp"

#include "fd_check.hpp"

namespace fs = std::filesystem;
using namespace cth;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;

struct Criterion {
    const char* name;
    Clock::time_point t0 = Clock::now();
    bool ok = true;
    std::string detail;

    explicit Criterion(const char* n) : name(n) {}
    void check(bool pass, const std::string& what) {
        ok = ok && pass;
        detail += (detail.empty() ? "" : "; ") + what + (pass ? "" : " <-- FAIL");
    }
    ~Criterion() {
        const double s = std::chrono::duration<double>(Clock::now() - t0).count();
        std::printf("[%s] %-44s (%6.1f s)  %s\n", ok ? "PASS" : "FAIL", name, s, detail.c_str());
        std::fflush(stdout);
        if (!ok) ++g_failures;
    }
};

std::string fmtd(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.4g", v);
    return buf;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

// ---- criterion 1: gradient correctness ----

double max_op_fd_error() {
    using cth::test::central_diff;
    using cth::test::rel_err;
    using cth::test::seed_weights;
    using cth::test::weighted_sum;
    Rng rng(1001);
    double worst = 0;
    auto probe = [&](auto&& build, std::vector<Tensor<double>*> inputs) {
        // analytic grads
        Tape<double> t;
        std::vector<Tape<double>::Id> ids;
        for (auto* in : inputs) ids.push_back(t.leaf(*in, true));
        auto out = build(t, ids);
        t.backward(out, seed_weights(t.val(out).shape));
        std::vector<Tensor<double>> grads;
        for (auto id : ids) grads.push_back(t.grad(id));
        auto eval = [&] {
            Tape<double> t2;
            std::vector<Tape<double>::Id> cids;
            for (auto* in : inputs) cids.push_back(t2.constant(*in));
            return weighted_sum(t2.val(build(t2, cids)));
        };
        for (size_t i = 0; i < inputs.size(); ++i) {
            Tensor<double>& ten = *inputs[i];
            for (int64_t k = 0; k < ten.numel(); ++k) {
                const double fd = central_diff(ten[k], eval);
                worst = std::max(worst, rel_err(grads[i][k], fd));
            }
        }
    };
    auto rt = [&](Shape s, double std = 1.0) {
        Tensor<double> t(std::move(s));
        cth::test::fill_random(t, rng, std);
        return t;
    };

    {  // conv1d stride 1 and 2
        auto x = rt({2, 3, 9}), w = rt({4, 3, 3}), b = rt({4});
        probe([](auto& t, auto& id) { return t.conv1d(id[0], id[1], id[2], 1, 1); },
              {&x, &w, &b});
        probe([](auto& t, auto& id) { return t.conv1d(id[0], id[1], id[2], 2, 1); },
              {&x, &w, &b});
    }
    {  // linear
        auto x = rt({3, 5}), w = rt({4, 5}), b = rt({4});
        probe([](auto& t, auto& id) { return t.linear(id[0], id[1], id[2]); }, {&x, &w, &b});
    }
    {  // group_norm
        auto x = rt({2, 4, 6}), g = rt({4}), b = rt({4});
        probe([](auto& t, auto& id) { return t.group_norm(id[0], 2, id[1], id[2], 1e-5); },
              {&x, &g, &b});
    }
    {  // self_attention
        auto x = rt({2, 4, 6}, 0.5), wq = rt({4, 4}, 0.5), wk = rt({4, 4}, 0.5),
             wv = rt({4, 4}, 0.5), wo = rt({4, 4}, 0.5);
        probe([](auto& t, auto& id) { return t.self_attention(id[0], id[1], id[2], id[3], id[4]); },
              {&x, &wq, &wk, &wv, &wo});
    }
    {  // silu, square, film, upsample, concat+slice
        auto x = rt({2, 3, 5});
        probe([](auto& t, auto& id) { return t.silu(id[0]); }, {&x});
        probe([](auto& t, auto& id) { return t.square(id[0]); }, {&x});
        auto ss = rt({2, 6}, 0.3);
        probe([](auto& t, auto& id) { return t.film(id[0], id[1]); }, {&x, &ss});
        probe([](auto& t, auto& id) { return t.upsample_nearest(id[0], 9); }, {&x});
        auto y = rt({2, 2, 5});
        probe([](auto& t, auto& id) { return t.slice_channels(t.concat_channels(id[0], id[1]), 1, 4); },
              {&x, &y});
    }
    return worst;
}

double composed_fd_error() {
    ArchConfig arch;
    arch.base_width = 8;
    arch.embed_dim = 32;
    arch.in_channels = 1 + kCondChannels;
    Rng rng(1002);
    ParamStore<double> params = init_unet_params<double>(arch, rng);
    for (auto& t : params.tensors)
        for (int64_t i = 0; i < t.numel(); ++i) t[i] += rng.normal(0.0, 0.15);
    const int64_t B = 2;
    Tensor<double> x({B, 1, 68}), cond({B, kCondChannels, 68}), target({B, 1, 68});
    cth::test::fill_random(x, rng);
    cth::test::fill_random(cond, rng, 0.5);
    cth::test::fill_random(target, rng);
    const std::vector<double> sigmas = {0.31, 1.7};
    const std::vector<double> weights = {1.0, 0.6};
    auto eval = [&] {
        Tape<double> t;
        auto planted = plant_params(t, params, false);
        auto d = denoise_on_tape(t, params, planted, arch, 0.9, x, sigmas, cond);
        return t.val(t.weighted_sq_loss(d, target, weights))[0];
    };
    Tape<double> t;
    auto planted = plant_params(t, params, true);
    auto d = denoise_on_tape(t, params, planted, arch, 0.9, x, sigmas, cond);
    t.backward_scalar(t.weighted_sq_loss(d, target, weights));
    Rng pick(1003);
    double worst = 0;
    for (size_t p = 0; p < params.size(); ++p) {
        const Tensor<double> g = t.grad(planted.ids[p]);
        Tensor<double>& tens = params.tensors[p];
        for (int64_t k = 0; k < std::min<int64_t>(tens.numel(), 5); ++k) {
            const int64_t i = pick.below(tens.numel());
            const double fd = cth::test::central_diff(tens[i], eval);
            worst = std::max(worst, cth::test::rel_err(g[i], fd));
        }
    }
    return worst;
}

// ---- criterion 5 helpers ----

struct OracleTask {
    GaussianPrior prior;
    NormalizationStats stats;
    ConditionRaw raw;
    std::vector<TrainingPair> pairs;
};

OracleTask make_oracle_task(int n_pairs, uint64_t seed) {
    OracleTask task;
    task.prior.mean.resize(68);
    task.prior.std.assign(68, 1.0);
    for (int i = 0; i < 68; ++i)
        task.prior.mean[static_cast<size_t>(i)] = 0.8 * std::sin(2.0 * M_PI * i / 68.0) +
                                                  0.3 * std::cos(2.0 * M_PI * 3 * i / 68.0);
    task.stats.cth_mean.assign(68, 2.5);
    task.stats.cth_std.assign(68, 0.3);
    task.stats.res_mean.assign(68, 0.0);
    task.stats.res_std.assign(68, 1.0);
    task.stats.age_mean = 72.0;
    task.stats.age_std = 7.0;
    task.raw.baseline_cth.resize(68);
    for (int i = 0; i < 68; ++i)
        task.raw.baseline_cth[static_cast<size_t>(i)] =
            2.5 + 0.3 * task.prior.mean[static_cast<size_t>(i)];  // channel 0 == prior mean
    task.raw.age = 72.0;
    task.raw.sex = 0;
    task.raw.dx = Dx::CN;
    task.raw.delta_months = 12.0;
    Rng rng(substream(seed, "oracle-task"));
    task.pairs.resize(static_cast<size_t>(n_pairs));
    for (auto& p : task.pairs) {
        p.subject_id = "oracle";
        p.src_month = 0;
        p.dst_month = 12;
        p.cond = task.raw;
        p.x0.resize(68);
        for (int i = 0; i < 68; ++i)
            p.x0[static_cast<size_t>(i)] = task.prior.mean[static_cast<size_t>(i)] + rng.normal();
    }
    return task;
}

}  // namespace

int main(int argc, char** argv) {
    const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::path("acceptance_work");
    fs::create_directories(work);
    set_threads(1);  // deterministic wall-clock behaviour on the 2-core runner
    std::printf("acceptance suite; work dir %s\n", work.string().c_str());

    {  // 1. gradient correctness
        Criterion c("gradient correctness (finite differences)");
        const double op_err = max_op_fd_error();
        c.check(op_err < 1e-6, "per-op max rel err " + fmtd(op_err) + " < 1e-6");
        const double net_err = composed_fd_error();
        c.check(net_err < 1e-4, "composed width-8 max rel err " + fmtd(net_err) + " < 1e-4");
    }

    {  // 2. Eq.4 identity, analytic and learned
        Criterion c("score/denoiser identity (1000 probes, 64-bit)");
        Rng rng(2001);
        GaussianPrior prior{{}, {}};
        for (int i = 0; i < 68; ++i) {
            prior.mean.push_back(rng.normal(0, 2));
            prior.std.push_back(0.2 + rng.uniform());
        }
        double worst_a = 0;
        for (int rep = 0; rep < 1000; ++rep) {
            std::vector<double> x(68);
            for (auto& v : x) v = rng.normal(0, 3);
            const double sigma = std::exp(rng.normal(-0.5, 1.0));
            const auto d = analytic_denoiser(prior, x, sigma);
            const auto s = analytic_score(prior, x, sigma);
            for (size_t k = 0; k < 68; ++k)
                worst_a = std::max(worst_a,
                                   std::abs(s[k] * sigma * sigma + x[k] - d[k]) /
                                       std::max({std::abs(d[k]), std::abs(x[k]), 1e-30}));
        }
        c.check(worst_a < 1e-12, "analytic " + fmtd(worst_a) + " < 1e-12");

        ArchConfig arch;
        arch.base_width = 8;
        arch.embed_dim = 32;
        Denoiser<double> den{arch, init_unet_params<double>(arch, rng), NormalizationStats{}, 1.0};
        den.stats.cth_mean.assign(68, 2.5);
        den.stats.cth_std.assign(68, 0.3);
        den.stats.res_mean.assign(68, 0.0);
        den.stats.res_std.assign(68, 0.1);
        den.stats.age_mean = 72;
        den.stats.age_std = 7;
        for (auto& t : den.params.tensors)
            for (int64_t i = 0; i < t.numel(); ++i) t[i] += rng.normal(0.0, 0.1);
        ConditionRaw raw;
        raw.baseline_cth.assign(68, 2.5);
        raw.age = 70;
        raw.sex = 1;
        raw.dx = Dx::MCI;
        raw.delta_months = 24;
        const auto cond = encode_condition(raw, den.stats);
        double worst_l = 0;
        for (int rep = 0; rep < 1000; ++rep) {
            Tensor<double> x({1, 68});
            for (int64_t i = 0; i < 68; ++i) x[i] = rng.normal();
            const double sigma = std::exp(rng.normal(-0.5, 1.0));
            const auto d = den.denoise(x, sigma, cond);
            const auto s = den.score(x, sigma, cond);
            for (int64_t k = 0; k < 68; ++k)
                worst_l = std::max(worst_l,
                                   std::abs(s[k] * sigma * sigma + x[k] - d[k]) /
                                       std::max({std::abs(d[k]), std::abs(x[k]), 1e-30}));
        }
        c.check(worst_l < 1e-12, "learned " + fmtd(worst_l) + " < 1e-12");
    }

    {  // 3. sampler distributional correctness
        Criterion c("sampler distribution (KS at 50 steps, 1e4 samples)");
        DiffusionConfig cfg;
        GaussianPrior prior{std::vector<double>(68, 0.0), std::vector<double>(68, 1.0)};
        const auto samples = oracle_sample(prior, cfg, 50, 10000, 3001);
        double worst = 0;
        for (int k = 0; k < 68; ++k) {
            std::vector<double> xs(samples.size());
            for (size_t i = 0; i < samples.size(); ++i) xs[i] = samples[i][static_cast<size_t>(k)];
            worst = std::max(worst, ks_statistic(xs, [](double v) { return normal_cdf(v); }));
        }
        c.check(worst < 0.02, "max per-dim KS " + fmtd(worst) + " < 0.02");

        GaussianPrior point{std::vector<double>(68, 0.8), std::vector<double>(68, 0.0)};
        const auto ps = oracle_sample(point, cfg, 50, 64, 3002);
        double endpoint = 0;
        for (const auto& s : ps)
            for (double v : s) endpoint = std::max(endpoint, std::abs(v - 0.8));
        c.check(endpoint < 1e-3, "point-mass endpoint " + fmtd(endpoint) + " < 1e-3");
    }

    {  // 4. sampler order (see decisions ledger: the point-mass flow is
       //    integrated exactly, so the ratio test uses the s=1 oracle)
        Criterion c("sampler second-order convergence");
        DiffusionConfig cfg;
        GaussianPrior prior{std::vector<double>(4, 0.4), std::vector<double>(4, 1.0)};
        auto endpoint_err = [&](int steps, uint64_t seed) {
            auto den = [&](const std::vector<double>& x, double sg) {
                return analytic_denoiser(prior, x, sg);
            };
            Rng rng(substream(seed, "oracle", {0}));
            Rng rng2(substream(seed, "oracle", {0}));
            const auto got = heun_sample(den, 4, cfg, steps, rng);
            std::vector<double> xT(4);
            rng2.fill_normal(xT.data(), 4, 0.0, cfg.sigma_max);
            const double shrink = 1.0 / std::sqrt(1.0 + cfg.sigma_max * cfg.sigma_max);
            double err = 0;
            for (size_t k = 0; k < 4; ++k)
                err = std::max(err, std::abs(got[k] - (0.4 + (xT[k] - 0.4) * shrink)));
            return err;
        };
        std::vector<double> ratios;
        for (uint64_t s = 1; s <= 21; ++s)
            ratios.push_back(endpoint_err(20, s) / endpoint_err(40, s));
        std::sort(ratios.begin(), ratios.end());
        const double median = ratios[ratios.size() / 2];
        c.check(median >= 3.0 && median <= 5.0,
                "median error ratio over octave " + fmtd(median) + " in [3,5]");
    }

    {  // 5. learning sanity on the Gaussian-oracle task
        Criterion c("learning sanity (RMSE vs analytic posterior mean)");
        OracleTask task = make_oracle_task(4096, 5001);
        ArchConfig arch;
        arch.base_width = 8;
        arch.embed_dim = 32;
        arch.in_channels = 1 + kCondChannels;
        const double sigma_data = residual_sigma_data(task.pairs);
        Rng rng_init(substream(5002, "init"));
        ParamStore<float> params = init_unet_params<float>(arch, rng_init);
        AdamState<float> adam = AdamState<float>::like(params.tensors);
        AdamConfig acfg;
        DiffusionConfig dcfg;
        Rng rng_train(substream(5002, "train"));
        std::vector<double> losses;
        const int target_steps = 3000;
        const auto budget_end = Clock::now() + std::chrono::seconds(110);
        std::vector<const TrainingPair*> batch(64);
        int steps_done = 0;
        for (int step = 0; step < target_steps && Clock::now() < budget_end; ++step) {
            for (int b = 0; b < 64; ++b)
                batch[static_cast<size_t>(b)] =
                    &task.pairs[static_cast<size_t>(rng_train.below(
                        static_cast<int64_t>(task.pairs.size())))];
            LossResult res =
                denoising_loss(params, arch, sigma_data, batch, task.stats, dcfg, rng_train);
            adam_step(params.tensors, res.grads, params.names, adam, acfg);
            losses.push_back(res.loss);
            ++steps_done;
        }
        Denoiser<float> den{arch, std::move(params), task.stats, sigma_data};
        const auto cond = encode_condition(task.raw, task.stats).cast<float>();
        Rng probe(5003);
        double worst_rmse = 0;
        for (double sigma : {0.1, 0.5, 1.0}) {
            double se = 0;
            int n = 0;
            for (int rep = 0; rep < 256; ++rep) {
                std::vector<double> x0(68), x(68);
                for (int i = 0; i < 68; ++i)
                    x0[static_cast<size_t>(i)] =
                        task.prior.mean[static_cast<size_t>(i)] + probe.normal();
                x = perturb(x0, sigma, probe);
                Tensor<float> xt({1, 68});
                for (int64_t i = 0; i < 68; ++i) xt[i] = static_cast<float>(x[static_cast<size_t>(i)]);
                const Tensor<float> d = den.denoise(xt, sigma, cond);
                const auto ideal = analytic_denoiser(task.prior, x, sigma);
                for (int64_t i = 0; i < 68; ++i) {
                    const double e = static_cast<double>(d[i]) - ideal[static_cast<size_t>(i)];
                    se += e * e;
                    ++n;
                }
            }
            worst_rmse = std::max(worst_rmse, std::sqrt(se / n));
        }
        c.check(worst_rmse < 0.05, "worst RMSE over sigma {0.1,0.5,1.0} = " + fmtd(worst_rmse) +
                                       " < 0.05 (" + std::to_string(steps_done) + " steps)");
        // loss trend: trailing-100 mean halves from the initial trailing-100 mean
        const size_t w = 100;
        double head = 0, tail = 0;
        for (size_t i = 0; i < w; ++i) head += losses[i];
        for (size_t i = losses.size() - w; i < losses.size(); ++i) tail += losses[i];
        c.check(tail < 0.5 * head,
                "trailing loss mean " + fmtd(tail / w) + " < 0.5 x initial " + fmtd(head / w));
    }

    {  // 6. forward-process statistics
        Criterion c("forward perturbation statistics (1e4 draws)");
        std::vector<double> x0(68);
        for (int i = 0; i < 68; ++i) x0[static_cast<size_t>(i)] = -1.0 + 0.03 * i;
        const int n = 10000;
        const double sigma = 1.0;
        Rng rng(6001);
        std::vector<double> mean(68, 0.0), m2(68, 0.0);
        for (int rep = 0; rep < n; ++rep) {
            const auto y = perturb(x0, sigma, rng);
            for (size_t k = 0; k < 68; ++k) {
                mean[k] += y[k];
                m2[k] += y[k] * y[k];
            }
        }
        double worst_mean = 0, worst_var = 0;
        for (size_t k = 0; k < 68; ++k) {
            mean[k] /= n;
            const double var = m2[k] / n - mean[k] * mean[k];
            worst_mean = std::max(worst_mean, std::abs(mean[k] - x0[k]));
            worst_var = std::max(worst_var, std::abs(var - sigma * sigma));
        }
        c.check(worst_mean < 4.0 * sigma / std::sqrt(double(n)),
                "max |mean error| " + fmtd(worst_mean) + " < " + fmtd(0.04));
        c.check(worst_var < 0.05 * sigma * sigma,
                "max |variance error| " + fmtd(worst_var) + " < 0.05");
    }

    // ---- criteria 7 and 8 share the full default end-to-end run ----
    {
        Criterion c7("end-to-end synthetic benchmark (default, 512 epochs)");
        const RunConfig cfg;  // defaults throughout
        const CohortSpec spec = cfg.resolved_cohort();
        const Cohort cohort = generate_cohort(spec);
        const auto [train_split, test_split] = split_cohort(cohort, spec);

        TrainOptions topt;
        topt.diffusion = cfg.diffusion;
        topt.arch = cfg.arch;
        topt.hyper = cfg.train;
        topt.policy = cfg.policy();
        topt.seed = cfg.seed;
        topt.loss_log_path = (work / "e2e_loss.csv").string();
        const Denoiser<float> den = train_diffusion(train_split, topt);
        {
            CheckpointMeta meta;
            meta.kind = "diffusion";
            meta.arch = den.arch;
            meta.stats = den.stats;
            meta.sigma_data = den.sigma_data;
            meta.training = {{"epochs", topt.hyper.epochs}};
            meta.seed = cfg.seed;
            save_checkpoint((work / "e2e_model.ckpt").string(), meta, den.params);
        }

        PredictOptions popt;
        popt.diffusion = cfg.diffusion;
        popt.steps = 32;
        popt.realizations = 4;
        popt.seed = cfg.seed;
        const std::vector<int> months = {6, 12, 24, 36};
        set_threads(2);  // sampling tasks parallelize cleanly
        const auto preds = predict_trajectory(den, test_split, months, popt);
        set_threads(1);
        write_predictions_csv(preds, (work / "e2e_pred.csv").string());
        const PredictionSet set = PredictionSet::from_rows(preds);
        const auto art = evaluate_predictions(set, test_split);
        {
            std::ofstream os(work / "e2e_report.json");
            os << art.report.dump(2) << "\n";
        }

        // month-restricted MAE vs the carry-forward floor
        auto month_mae = [&](int month) {
            PredictionSet sub;
            sub.realizations = set.realizations;
            for (const auto& [key, v] : set.by_key)
                if (key.second == month) sub.by_key[key] = v;
            const auto mae = mae_by_group(sub, test_split);
            const auto cf = carry_forward_mae(test_split, {month});
            return std::pair{mae.at("All").mean, cf.at("All").mean};
        };
        for (int month : {24, 36}) {
            const auto [model_mae, cf_mae] = month_mae(month);
            c7.check(model_mae < cf_mae, "m" + std::to_string(month) + " MAE " + fmtd(model_mae) +
                                             " < carry-forward " + fmtd(cf_mae));
        }

        // Bland-Altman bias at m36 against the mean true change
        {
            std::vector<double> pv, tv;
            double change = 0;
            int64_t n = 0;
            for (const auto& s : test_split.subjects) {
                const auto& bl = s.visits.at(0);
                const auto& v36 = s.visits.at(36);
                const auto p = set.point_estimate({s.id, 36});
                for (size_t r = 0; r < 68; ++r) {
                    pv.push_back(p[r]);
                    tv.push_back(v36[r]);
                    change += std::abs(v36[r] - bl[r]);
                    ++n;
                }
            }
            const double mean_change = change / static_cast<double>(n);
            const auto ba = bland_altman(pv, tv);
            c7.check(std::abs(ba.md) < 0.2 * mean_change,
                     "m36 |MD| " + fmtd(std::abs(ba.md)) + " < 20% of mean |change| " +
                         fmtd(mean_change));
        }

        // pooled regression against truth
        {
            const auto& fit = art.report["linear_fit"]["All"];
            const double r2 = fit["r_squared"].get<double>();
            const double slope = fit["slope"].get<double>();
            c7.check(r2 > 0.9, "pooled R^2 " + fmtd(r2) + " > 0.9");
            c7.check(slope > 0.9, "pooled slope " + fmtd(slope) + " > 0.9");
        }

        Criterion c8("subgroup ordering of predicted 36-month thinning");
        std::map<Dx, std::pair<double, int>> thinning;
        for (const auto& s : test_split.subjects) {
            const auto p = set.point_estimate({s.id, 36});
            const auto& bl = s.visits.at(0);
            double d = 0;
            for (size_t r = 0; r < 68; ++r) d += bl[r] - p[r];
            auto& acc = thinning[s.dx_at(36)];
            acc.first += d / 68.0;
            acc.second += 1;
        }
        const double cn = thinning[Dx::CN].first / thinning[Dx::CN].second;
        const double mci = thinning[Dx::MCI].first / thinning[Dx::MCI].second;
        const double ad = thinning[Dx::AD].first / thinning[Dx::AD].second;
        c8.check(ad > mci, "AD " + fmtd(ad) + " > MCI " + fmtd(mci));
        c8.check(mci > cn, "MCI " + fmtd(mci) + " > CN " + fmtd(cn));
    }

    {  // 9. uncertainty calibration on the well-specified oracle task
        Criterion c("uncertainty calibration (K=100, oracle task)");
        DiffusionConfig cfg;
        GaussianPrior prior = make_oracle_task(1, 9001).prior;
        const int replicates = 50, K = 100;
        PredictionSet set;
        set.realizations = K;
        for (int r = 0; r < replicates; ++r) {
            const auto samples = oracle_sample(prior, cfg, 50, K, 9002 + static_cast<uint64_t>(r));
            auto& v = set.by_key[{"rep" + std::to_string(r), 36}];
            v.resize(static_cast<size_t>(K));
            for (int k = 0; k < K; ++k)
                for (size_t d = 0; d < 68; ++d) v[static_cast<size_t>(k)][d] = samples[static_cast<size_t>(k)][d];
        }
        const auto unc = uncertainty_summary(set);
        Rng fresh(9999);
        int64_t covered = 0, total = 0;
        for (const auto& [key, cells] : unc) {
            (void)key;
            for (size_t d = 0; d < 68; ++d) {
                const double truth = prior.mean[d] + prior.std[d] * fresh.normal();
                covered += (truth >= cells[d].lo95 && truth <= cells[d].hi95) ? 1 : 0;
                ++total;
            }
        }
        const double coverage = static_cast<double>(covered) / static_cast<double>(total);
        c.check(coverage >= 0.90 && coverage <= 0.99,
                "95% interval coverage " + fmtd(coverage) + " in [0.90, 0.99]");
    }

    {  // 10. determinism & formats
        Criterion c("determinism and bit-exact formats");
        CohortSpec spec;
        spec.n_subjects = 60;
        spec.n_test = 12;
        spec.train_ad = 16;
        spec.train_mci = 16;
        spec.train_cn = 16;
        spec.test_mci = 7;
        spec.test_cn = 5;
        spec.m36_ad = 3;
        spec.m36_mci = 5;
        spec.m36_cn = 4;
        spec.seed = 777;
        const Cohort cohort = generate_cohort(spec);
        const auto [train_split, test_split] = split_cohort(cohort, spec);

        // cohort csv canonical round trip
        write_cohort_csv(cohort, (work / "d_cohort1.csv").string());
        const Cohort reloaded = load_cohort_csv((work / "d_cohort1.csv").string());
        write_cohort_csv(reloaded, (work / "d_cohort2.csv").string());
        c.check(slurp(work / "d_cohort1.csv") == slurp(work / "d_cohort2.csv"),
                "cohort csv round trip byte-exact");

        auto train_once = [&](const char* tag) {
            TrainOptions topt;
            topt.arch.base_width = 4;
            topt.arch.embed_dim = 16;
            topt.hyper.epochs = 4;
            topt.seed = 99;
            const Denoiser<float> den = train_diffusion(train_split, topt);
            CheckpointMeta meta;
            meta.kind = "diffusion";
            meta.arch = den.arch;
            meta.stats = den.stats;
            meta.sigma_data = den.sigma_data;
            meta.training = {{"epochs", 4}};
            meta.seed = 99;
            const fs::path ckpt = work / (std::string("d_model_") + tag + ".ckpt");
            save_checkpoint(ckpt.string(), meta, den.params);
            PredictOptions popt;
            popt.steps = 8;
            popt.realizations = 2;
            popt.seed = 99;
            const auto preds = predict_trajectory(den, test_split, {6, 36}, popt);
            const fs::path pred = work / (std::string("d_pred_") + tag + ".csv");
            write_predictions_csv(preds, pred.string());
            const auto art = evaluate_predictions(PredictionSet::from_rows(preds), test_split);
            const fs::path rep = work / (std::string("d_report_") + tag + ".json");
            std::ofstream os(rep);
            os << art.report.dump(2) << "\n";
            os.close();
            return std::tuple{slurp(ckpt), slurp(pred), slurp(rep)};
        };
        const auto a = train_once("a");
        const auto b = train_once("b");
        c.check(std::get<0>(a) == std::get<0>(b), "checkpoints byte-identical");
        c.check(std::get<1>(a) == std::get<1>(b), "predictions byte-identical");
        c.check(std::get<2>(a) == std::get<2>(b), "metric reports byte-identical");

        const LoadedCheckpoint lc = load_checkpoint((work / "d_model_a.ckpt").string());
        save_checkpoint((work / "d_model_c.ckpt").string(), lc.meta, lc.params);
        c.check(slurp(work / "d_model_a.ckpt") == slurp(work / "d_model_c.ckpt"),
                "checkpoint round trip byte-exact");
    }

    {  // 11. ablation harness parity
        Criterion c("ablation harness parity (U-net w/ and w/o attention)");
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
        spec.seed = 1100;
        const Cohort cohort = generate_cohort(spec);
        const auto [train_split, test_split] = split_cohort(cohort, spec);

        BaselineTrainOptions opt;  // identical hyperparameters for both variants
        opt.arch.base_width = 8;
        opt.hyper.epochs = 24;
        opt.seed = 1101;
        nlohmann::json reports[2];
        int i = 0;
        for (BaselineKind kind : {BaselineKind::kUnetAttention, BaselineKind::kUnetPlain}) {
            const DeterministicModel model = train_deterministic(kind, train_split, opt);
            const auto preds = predict_deterministic(model, test_split, {6, 12, 24, 36});
            const auto art =
                evaluate_predictions(PredictionSet::from_rows(preds), test_split);
            reports[i] = art.report;
            std::ofstream os(work / ("ablation_" + baseline_kind_name(kind) + ".json"));
            os << art.report.dump(2) << "\n";
            ++i;
        }
        // identical schema: same keys at the top level and per section
        auto keys = [](const nlohmann::json& j) {
            std::vector<std::string> ks;
            for (auto it = j.begin(); it != j.end(); ++it) ks.push_back(it.key());
            return ks;
        };
        c.check(keys(reports[0]) == keys(reports[1]), "report schema identical across variants");
        c.check(keys(reports[0]["mae_table"]) == keys(reports[1]["mae_table"]),
                "mae groups identical");
        const double mae_attn = reports[0]["mae_table"]["All"]["mean"].get<double>();
        const double mae_plain = reports[1]["mae_table"]["All"]["mean"].get<double>();
        c.check(std::isfinite(mae_attn) && std::isfinite(mae_plain),
                "MAE finite (attn " + fmtd(mae_attn) + ", plain " + fmtd(mae_plain) +
                    "; no ordering asserted)");

        // parameter parity for shared blocks against the diffusion denoiser
        Rng rng(1102);
        ArchConfig diff_arch;
        diff_arch.base_width = 8;
        diff_arch.embed_dim = 32;
        diff_arch.in_channels = 1 + kCondChannels;
        const auto diff_params = init_unet_params<float>(diff_arch, rng);
        ArchConfig attn_arch = diff_arch;
        attn_arch.in_channels = kCondChannels;
        attn_arch.embed_dim = 0;
        const auto attn_params = init_unet_params<float>(attn_arch, rng);
        bool parity = true;
        for (size_t p = 0; p < diff_params.size(); ++p) {
            const std::string& name = diff_params.names[p];
            if (name.rfind("emb.", 0) == 0 || name.find(".film.") != std::string::npos ||
                name.rfind("stem.", 0) == 0)
                continue;
            parity = parity && attn_params.has(name) &&
                     attn_params.at(name).shape == diff_params.tensors[p].shape;
        }
        c.check(parity, "shared-block parameter shapes identical to the diffusion denoiser");
    }

    std::printf("%s (%d failure%s)\n", g_failures == 0 ? "ALL CRITERIA PASS" : "FAILURES",
                g_failures, g_failures == 1 ? "" : "s");
    return g_failures;
}
