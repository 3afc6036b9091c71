#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "cth/baselines.hpp"
#include "cth/checkpoint.hpp"
#include "cth/cohort.hpp"
#include "cth/diffusion.hpp"
#include "cth/evaluation.hpp"
#include "cth/gaussian_oracle.hpp"
#include "cth/parallel.hpp"
#include "cth/run_config.hpp"

namespace fs = std::filesystem;
using namespace cth;

namespace {

void apply_threads(const RunConfig& cfg, int cli_threads) {
    const int t = cli_threads > 0 ? cli_threads : cfg.threads;
    if (t > 0) set_threads(t);
}

std::string sibling(const std::string& path, const std::string& suffix) {
    fs::path p(path);
    fs::path dir = p.parent_path();
    std::string stem = p.stem().string();
    fs::path out = dir / (stem + suffix + p.extension().string());
    return out.string();
}

int cmd_generate(const RunConfig& cfg, const std::string& out) {
    const CohortSpec spec = cfg.resolved_cohort();
    const Cohort cohort = generate_cohort(spec);
    write_cohort_csv(cohort, out);
    const auto [train, test] = split_cohort(cohort, spec);
    write_cohort_csv(train, sibling(out, "_train"));
    write_cohort_csv(test, sibling(out, "_test"));
    fs::path dir = fs::path(out).parent_path();
    if (dir.empty()) dir = ".";
    write_roi_names_json((dir / "roi_names.json").string());
    echo_effective_config(cfg, out, "generate");
    std::cout << "cohort: " << cohort.subjects.size() << " subjects (" << train.subjects.size()
              << " train / " << test.subjects.size() << " test) -> " << out << "\n";
    return 0;
}

int cmd_train(const RunConfig& cfg, const std::string& cohort_path, const std::string& model,
              const std::string& out, std::string loss_log) {
    const Cohort cohort = load_cohort_csv(cohort_path);
    const auto [train_split, test_split] = split_cohort(cohort, cfg.resolved_cohort());
    (void)test_split;
    if (loss_log.empty()) loss_log = out + ".loss.csv";

    CheckpointMeta meta;
    meta.seed = cfg.seed;
    meta.training = {{"model", model},
                     {"epochs", cfg.train.epochs},
                     {"batch_size", cfg.train.batch_size},
                     {"lr", cfg.train.lr},
                     {"pair_policy", cfg.pair_policy},
                     {"cohort", cohort_path}};

    if (model == "diffusion") {
        TrainOptions opt;
        opt.diffusion = cfg.diffusion;
        opt.arch = cfg.arch;
        opt.hyper = cfg.train;
        opt.policy = cfg.policy();
        opt.seed = cfg.seed;
        opt.loss_log_path = loss_log;
        const Denoiser<float> den = train_diffusion(train_split, opt);
        meta.kind = "diffusion";
        meta.arch = den.arch;
        meta.stats = den.stats;
        meta.sigma_data = den.sigma_data;
        save_checkpoint(out, meta, den.params);
    } else if (model == "unet_attn" || model == "unet_plain") {
        BaselineTrainOptions opt;
        opt.arch = cfg.arch;
        opt.hyper = cfg.train;
        opt.policy = cfg.policy();
        opt.seed = cfg.seed;
        opt.loss_log_path = loss_log;
        const BaselineKind kind =
            model == "unet_attn" ? BaselineKind::kUnetAttention : BaselineKind::kUnetPlain;
        const DeterministicModel dm = train_deterministic(kind, train_split, opt);
        meta.kind = model;
        meta.arch = dm.arch;
        meta.stats = dm.stats;
        meta.sigma_data = 1.0;
        save_checkpoint(out, meta, dm.params);
    } else {
        throw std::invalid_argument("train: unknown model '" + model +
                                    "' (expected diffusion, unet_attn, or unet_plain)");
    }
    echo_effective_config(cfg, out, "train");
    std::cout << "checkpoint (" << model << ") -> " << out << "\n";
    return 0;
}

int cmd_predict(const RunConfig& cfg, const std::string& ckpt_path,
                const std::string& cohort_path, const std::vector<int>& months,
                int realizations, int steps, const std::string& out) {
    const LoadedCheckpoint lc = load_checkpoint(ckpt_path);
    const Cohort subjects = load_cohort_csv(cohort_path);
    std::vector<Prediction> preds;
    if (lc.meta.kind == "diffusion") {
        Denoiser<float> den;
        den.arch = lc.meta.arch;
        den.params = lc.params;
        den.stats = lc.meta.stats;
        den.sigma_data = lc.meta.sigma_data;
        PredictOptions opt;
        opt.diffusion = cfg.diffusion;
        opt.steps = steps > 0 ? steps : cfg.sample_steps;
        opt.realizations = realizations > 0 ? realizations : cfg.realizations;
        opt.seed = cfg.seed;
        preds = predict_trajectory(den, subjects, months, opt);
    } else {
        DeterministicModel dm;
        dm.kind = lc.meta.kind == "unet_attn" ? BaselineKind::kUnetAttention
                                              : BaselineKind::kUnetPlain;
        dm.arch = lc.meta.arch;
        dm.params = lc.params;
        dm.stats = lc.meta.stats;
        preds = predict_deterministic(dm, subjects, months);
    }
    write_predictions_csv(preds, out);
    echo_effective_config(cfg, out, "predict");
    std::cout << preds.size() << " predictions -> " << out << "\n";
    return 0;
}

int cmd_evaluate(const RunConfig& cfg, const std::string& pred_path,
                 const std::string& truth_path, const std::string& out,
                 const std::vector<std::string>& trajectory_subjects) {
    const auto rows = load_predictions_csv(pred_path);
    const PredictionSet set = PredictionSet::from_rows(rows);
    const Cohort truth = load_cohort_csv(truth_path);
    const EvaluationArtifacts art = evaluate_predictions(set, truth);
    {
        std::ofstream os(out, std::ios::trunc);
        if (!os) throw std::runtime_error("evaluate: cannot write '" + out + "'");
        os << art.report.dump(2) << "\n";
    }
    fs::path dir = fs::path(out).parent_path();
    if (dir.empty()) dir = ".";
    write_ba_points_csv(art.ba_points, (dir / "ba_points.csv").string());
    write_fit_points_csv(art.fit_points, (dir / "fit_points.csv").string());
    for (const auto& sid : trajectory_subjects)
        write_trajectory_csv(set, sid, (dir / ("trajectory_" + sid + ".csv")).string());
    echo_effective_config(cfg, out, "evaluate");
    std::cout << "report -> " << out << "\n";
    return 0;
}

int cmd_oracle_check(int steps, int samples, int dims, uint64_t seed) {
    bool all_pass = true;
    auto row = [&](const char* name, double value, const char* cmp, double threshold,
                   bool pass) {
        all_pass = all_pass && pass;
        std::printf("%-34s %12.4e  %s %.4g   [%s]\n", name, value, cmp, threshold,
                    pass ? "PASS" : "FAIL");
    };

    // Eq.4 identity in 64-bit over random probes
    {
        Rng rng(seed);
        GaussianPrior prior{{}, {}};
        for (int i = 0; i < dims; ++i) {
            prior.mean.push_back(rng.normal(0, 2));
            prior.std.push_back(0.2 + rng.uniform());
        }
        double worst = 0;
        for (int rep = 0; rep < 1000; ++rep) {
            std::vector<double> x(static_cast<size_t>(dims));
            for (auto& v : x) v = rng.normal(0, 3);
            const double sigma = std::exp(rng.normal(-0.5, 1.0));
            const auto d = analytic_denoiser(prior, x, sigma);
            const auto s = analytic_score(prior, x, sigma);
            for (size_t k = 0; k < x.size(); ++k) {
                const double rebuilt = s[k] * sigma * sigma + x[k];
                worst = std::max(worst, std::abs(rebuilt - d[k]) /
                                            std::max({std::abs(d[k]), std::abs(x[k]), 1e-30}));
            }
        }
        row("eq4 identity (score*s^2+x vs D)", worst, "<", 1e-12, worst < 1e-12);
    }

    DiffusionConfig cfg;
    // distributional correctness against the standard-normal prior
    {
        GaussianPrior prior{std::vector<double>(static_cast<size_t>(dims), 0.0),
                            std::vector<double>(static_cast<size_t>(dims), 1.0)};
        const auto samples_v = oracle_sample(prior, cfg, steps, samples, seed + 1);
        double worst = 0;
        for (int k = 0; k < dims; ++k) {
            std::vector<double> xs(samples_v.size());
            for (size_t i = 0; i < samples_v.size(); ++i) xs[i] = samples_v[i][static_cast<size_t>(k)];
            worst = std::max(worst,
                             ks_statistic(xs, [](double v) { return normal_cdf(v); }));
        }
        row("sampler KS vs prior (max dim)", worst, "<", 0.02, worst < 0.02);
    }
    // point-mass endpoint
    {
        GaussianPrior prior{std::vector<double>(static_cast<size_t>(dims), 0.8),
                            std::vector<double>(static_cast<size_t>(dims), 0.0)};
        const auto samples_v = oracle_sample(prior, cfg, steps, 64, seed + 2);
        double worst = 0;
        for (const auto& s : samples_v)
            for (double v : s) worst = std::max(worst, std::abs(v - 0.8));
        row("point-mass endpoint error", worst, "<", 1e-3, worst < 1e-3);
    }
    // second-order convergence on the unit-variance prior
    {
        GaussianPrior prior{std::vector<double>(4, 0.3), std::vector<double>(4, 1.0)};
        auto endpoint_err = [&](int n_steps, uint64_t s) {
            auto den = [&](const std::vector<double>& x, double sg) {
                return analytic_denoiser(prior, x, sg);
            };
            Rng rng(substream(s, "oracle", {0}));
            Rng rng2(substream(s, "oracle", {0}));
            const auto got = heun_sample(den, 4, cfg, n_steps, rng);
            std::vector<double> xT(4);
            rng2.fill_normal(xT.data(), 4, 0.0, cfg.sigma_max);
            const double shrink = 1.0 / std::sqrt(1.0 + cfg.sigma_max * cfg.sigma_max);
            double err = 0;
            for (size_t k = 0; k < 4; ++k)
                err = std::max(err, std::abs(got[k] - (0.3 + (xT[k] - 0.3) * shrink)));
            return err;
        };
        std::vector<double> ratios;
        for (uint64_t s = 1; s <= 15; ++s)
            ratios.push_back(endpoint_err(20, s) / endpoint_err(40, s));
        std::sort(ratios.begin(), ratios.end());
        const double median = ratios[ratios.size() / 2];
        const bool pass = median >= 3.0 && median <= 5.0;
        row("order ratio (step-size octave)", median, "in [3,5] around", 4.0, pass);
    }

    std::cout << (all_pass ? "oracle-check: all invariants PASS\n"
                           : "oracle-check: FAILURES detected\n");
    return all_pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Conditional score-based diffusion for cortical thickness trajectories"};
    app.require_subcommand(1);

    std::string config_path;
    int cli_threads = 0;
    uint64_t cli_seed = 0;
    bool seed_given = false;
    app.add_option("--config", config_path, "JSON run configuration (or $CTH_CONFIG)");
    app.add_option("--threads", cli_threads, "worker thread count (0 = config/default)");
    auto* seed_opt = app.add_option("--seed", cli_seed, "override the root seed");

    auto* gen = app.add_subcommand("generate", "generate a synthetic cohort CSV");
    std::string gen_out;
    gen->add_option("--out", gen_out, "output cohort CSV")->required();

    auto* train = app.add_subcommand("train", "train a model on a cohort");
    std::string train_cohort, train_model = "diffusion", train_out, train_loss_log;
    train->add_option("--cohort", train_cohort, "cohort CSV")->required();
    train->add_option("--model", train_model, "diffusion | unet_attn | unet_plain");
    train->add_option("--out", train_out, "checkpoint output path")->required();
    train->add_option("--loss-log", train_loss_log, "loss log CSV (default <out>.loss.csv)");

    auto* predict = app.add_subcommand("predict", "sample trajectory predictions");
    std::string pred_ckpt, pred_cohort, pred_out;
    std::vector<int> pred_months;
    int pred_realizations = 0, pred_steps = 0;
    predict->add_option("--ckpt", pred_ckpt, "checkpoint path")->required();
    predict->add_option("--cohort", pred_cohort, "subjects CSV (conditions on baseline rows)")
        ->required();
    predict->add_option("--months", pred_months, "target months (comma separated)")
        ->required()
        ->delimiter(',');
    predict->add_option("--realizations", pred_realizations, "realizations per month");
    predict->add_option("--steps", pred_steps, "Heun intervals (default from config)");
    predict->add_option("--out", pred_out, "predictions CSV")->required();

    auto* evaluate = app.add_subcommand("evaluate", "score predictions against ground truth");
    std::string eval_pred, eval_truth, eval_out;
    std::vector<std::string> eval_traj;
    evaluate->add_option("--pred", eval_pred, "predictions CSV")->required();
    evaluate->add_option("--truth", eval_truth, "ground-truth cohort CSV")->required();
    evaluate->add_option("--out", eval_out, "metrics report JSON")->required();
    evaluate->add_option("--trajectory-subject", eval_traj,
                         "emit trajectory_<id>.csv for this subject (repeatable)");

    auto* oracle = app.add_subcommand("oracle-check", "verify sampler invariants analytically");
    int oc_steps = 50, oc_samples = 10000, oc_dims = 68;
    uint64_t oc_seed = 2024;
    oracle->add_option("--steps", oc_steps, "sampler steps");
    oracle->add_option("--samples", oc_samples, "sample count");
    oracle->add_option("--dims", oc_dims, "dimensions");
    oracle->add_option("--seed", oc_seed, "seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n" << app.help() << "\n";
        return 2;
    }
    seed_given = seed_opt->count() > 0;

    try {
        RunConfig cfg = load_run_config(config_path);
        if (seed_given) cfg.seed = cli_seed;
        apply_threads(cfg, cli_threads);
        if (gen->parsed()) return cmd_generate(cfg, gen_out);
        if (train->parsed())
            return cmd_train(cfg, train_cohort, train_model, train_out, train_loss_log);
        if (predict->parsed())
            return cmd_predict(cfg, pred_ckpt, pred_cohort, pred_months, pred_realizations,
                               pred_steps, pred_out);
        if (evaluate->parsed()) return cmd_evaluate(cfg, eval_pred, eval_truth, eval_out, eval_traj);
        if (oracle->parsed()) return cmd_oracle_check(oc_steps, oc_samples, oc_dims, oc_seed);
    } catch (const std::exception& e) {
        const nlohmann::json err = {{"error", e.what()}};
        std::cerr << err.dump() << "\n";
        return 1;
    }
    return 2;
}
