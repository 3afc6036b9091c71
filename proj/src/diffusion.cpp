#include "cth/diffusion.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>

#include "cth/adam.hpp"
#include "cth/parallel.hpp"

namespace cth {

nlohmann::json DiffusionConfig::to_json() const {
    return {{"sigma_min", sigma_min},
            {"sigma_max", sigma_max},
            {"rho", rho},
            {"p_mean", p_mean},
            {"p_std", p_std},
            {"weighting", weighting == Weighting::kEdm ? "edm" : "uniform"},
            {"nfe", nfe}};
}

DiffusionConfig DiffusionConfig::from_json(const nlohmann::json& j) {
    DiffusionConfig c;
    c.sigma_min = j.at("sigma_min").get<double>();
    c.sigma_max = j.at("sigma_max").get<double>();
    c.rho = j.at("rho").get<double>();
    c.p_mean = j.at("p_mean").get<double>();
    c.p_std = j.at("p_std").get<double>();
    const std::string w = j.at("weighting").get<std::string>();
    if (w == "edm")
        c.weighting = Weighting::kEdm;
    else if (w == "uniform")
        c.weighting = Weighting::kUniform;
    else
        throw std::invalid_argument("diffusion config: weighting must be 'edm' or 'uniform'");
    c.nfe = j.at("nfe").get<int>();
    return c;
}

nlohmann::json TrainHyper::to_json() const {
    return {{"batch_size", batch_size}, {"lr", lr}, {"epochs", epochs}};
}

TrainHyper TrainHyper::from_json(const nlohmann::json& j) {
    TrainHyper h;
    h.batch_size = j.at("batch_size").get<int>();
    h.lr = j.at("lr").get<double>();
    h.epochs = j.at("epochs").get<int>();
    return h;
}

std::vector<double> sigma_schedule(const DiffusionConfig& cfg, int steps) {
    if (steps < 1) throw std::invalid_argument("sigma_schedule: steps must be >= 1");
    if (!(cfg.sigma_min > 0 && cfg.sigma_min < cfg.sigma_max))
        throw std::invalid_argument("sigma_schedule: need 0 < sigma_min < sigma_max");
    std::vector<double> out(static_cast<size_t>(steps) + 1);
    if (steps == 1) {
        out[0] = cfg.sigma_max;
    } else {
        const double inv_rho = 1.0 / cfg.rho;
        const double smax_r = std::pow(cfg.sigma_max, inv_rho);
        const double smin_r = std::pow(cfg.sigma_min, inv_rho);
        for (int i = 0; i < steps; ++i) {
            const double t = static_cast<double>(i) / static_cast<double>(steps - 1);
            out[static_cast<size_t>(i)] = std::pow(smax_r + t * (smin_r - smax_r), cfg.rho);
        }
        // endpoints exact by contract, not just by rounding
        out[0] = cfg.sigma_max;
        out[static_cast<size_t>(steps) - 1] = cfg.sigma_min;
    }
    out[static_cast<size_t>(steps)] = 0.0;
    return out;
}

double sample_sigma_train(const DiffusionConfig& cfg, Rng& rng) {
    return std::exp(cfg.p_mean + cfg.p_std * rng.normal());
}

std::vector<double> perturb(const std::vector<double>& x0, double sigma, Rng& rng) {
    if (sigma < 0) throw std::invalid_argument("perturb: sigma must be >= 0");
    std::vector<double> out(x0.size());
    for (size_t i = 0; i < x0.size(); ++i) out[i] = x0[i] + sigma * rng.normal();
    return out;
}

std::vector<TrainingPair> build_training_pairs(const Cohort& cohort,
                                               const NormalizationStats& stats,
                                               PairPolicy policy) {
    std::vector<TrainingPair> pairs;
    for (const auto& s : cohort.subjects) {
        std::vector<int> months;
        for (const auto& [m, v] : s.visits) {
            (void)v;
            months.push_back(m);
        }
        for (size_t i = 0; i < months.size(); ++i) {
            if (policy == PairPolicy::kBaselineOnly && months[i] != 0) break;
            for (size_t j = i + 1; j < months.size(); ++j) {
                const auto& src = s.visits.at(months[i]);
                const auto& dst = s.visits.at(months[j]);
                TrainingPair p;
                p.subject_id = s.id;
                p.src_month = months[i];
                p.dst_month = months[j];
                p.cond.baseline_cth = src;
                p.cond.age = s.age_bl + months[i] / 12.0;
                p.cond.sex = s.sex;
                p.cond.dx = s.dx_by_visit.at(months[i]);
                p.cond.delta_months = months[j] - months[i];
                p.x0.resize(68);
                for (int64_t r = 0; r < 68; ++r)
                    p.x0[static_cast<size_t>(r)] =
                        (dst[static_cast<size_t>(r)] - src[static_cast<size_t>(r)] -
                         stats.res_mean[static_cast<size_t>(r)]) /
                        stats.res_std[static_cast<size_t>(r)];
                pairs.push_back(std::move(p));
            }
        }
    }
    return pairs;
}

double residual_sigma_data(const std::vector<TrainingPair>& pairs) {
    if (pairs.empty()) throw std::invalid_argument("residual_sigma_data: no training pairs");
    double sum = 0;
    int64_t n = 0;
    for (const auto& p : pairs)
        for (double v : p.x0) {
            sum += v;
            ++n;
        }
    const double mean = sum / static_cast<double>(n);
    double var = 0;
    for (const auto& p : pairs)
        for (double v : p.x0) var += (v - mean) * (v - mean);
    return std::sqrt(var / static_cast<double>(n - 1));
}

namespace {

// conditions and targets pre-encoded once per pair; the loss only draws
// noise and assembles the batch
struct EncodedPair {
    Tensor<float> cond;        // [kCondChannels, 68]
    std::vector<double> x0;    // normalized residual
};

EncodedPair encode_pair(const TrainingPair& p, const NormalizationStats& stats) {
    return {encode_condition(p.cond, stats).cast<float>(), p.x0};
}

LossResult encoded_loss(const ParamStore<float>& params, const ArchConfig& arch,
                        double sigma_data, const std::vector<const EncodedPair*>& batch,
                        const DiffusionConfig& cfg, Rng& rng) {
    if (batch.empty()) throw std::invalid_argument("denoising_loss: empty batch");
    const int64_t B = static_cast<int64_t>(batch.size());
    Tensor<float> x_noisy({B, 1, kNumRois});
    Tensor<float> target({B, 1, kNumRois});
    Tensor<float> cond({B, kCondChannels, kNumRois});
    std::vector<double> sigmas(static_cast<size_t>(B));
    std::vector<float> weights(static_cast<size_t>(B));
    double sigma_sum = 0;
    for (int64_t b = 0; b < B; ++b) {
        const EncodedPair& p = *batch[static_cast<size_t>(b)];
        const double sigma = sample_sigma_train(cfg, rng);
        sigmas[static_cast<size_t>(b)] = sigma;
        sigma_sum += sigma;
        const std::vector<double> noisy = perturb(p.x0, sigma, rng);
        for (int64_t r = 0; r < kNumRois; ++r) {
            x_noisy.at(b, 0, r) = static_cast<float>(noisy[static_cast<size_t>(r)]);
            target.at(b, 0, r) = static_cast<float>(p.x0[static_cast<size_t>(r)]);
        }
        for (int64_t i = 0; i < p.cond.numel(); ++i) cond[b * p.cond.numel() + i] = p.cond[i];
        weights[static_cast<size_t>(b)] =
            cfg.weighting == DiffusionConfig::Weighting::kEdm
                ? static_cast<float>(edm_loss_weight(sigma, sigma_data))
                : 1.0f;
    }

    Tape<float> tape;
    Planted<float> planted = plant_params(tape, params, true);
    auto d = denoise_on_tape(tape, params, planted, arch, sigma_data, x_noisy, sigmas, cond);

    const Tensor<float>& dv = tape.val(d);
    for (int64_t b = 0; b < B; ++b) {
        double item = 0;
        for (int64_t r = 0; r < kNumRois; ++r) {
            const double e = static_cast<double>(dv.at(b, 0, r) - target.at(b, 0, r));
            item += e * e;
        }
        item *= weights[static_cast<size_t>(b)];
        if (!std::isfinite(item))
            throw std::runtime_error("denoising_loss: non-finite loss at batch index " +
                                     std::to_string(b));
    }

    auto loss = tape.weighted_sq_loss(d, target, weights);
    tape.backward_scalar(loss);

    LossResult out;
    out.loss = static_cast<double>(tape.val(loss)[0]);
    out.sigma_mean = sigma_sum / static_cast<double>(B);
    out.grads.reserve(params.size());
    for (auto id : planted.ids) out.grads.push_back(tape.grad(id));
    return out;
}

}  // namespace

LossResult denoising_loss(const ParamStore<float>& params, const ArchConfig& arch,
                          double sigma_data, const std::vector<const TrainingPair*>& batch,
                          const NormalizationStats& stats, const DiffusionConfig& cfg, Rng& rng) {
    std::vector<EncodedPair> encoded;
    encoded.reserve(batch.size());
    for (const TrainingPair* p : batch) encoded.push_back(encode_pair(*p, stats));
    std::vector<const EncodedPair*> ptrs;
    ptrs.reserve(encoded.size());
    for (const auto& e : encoded) ptrs.push_back(&e);
    return encoded_loss(params, arch, sigma_data, ptrs, cfg, rng);
}

Denoiser<float> train_diffusion(const Cohort& train_split, const TrainOptions& opt) {
    if (train_split.subjects.empty())
        throw std::invalid_argument("train_diffusion: empty training cohort");
    if (opt.hyper.epochs < 1) throw std::invalid_argument("train_diffusion: epochs must be >= 1");

    ArchConfig arch = opt.arch;
    arch.in_channels = 1 + kCondChannels;
    arch.length = kNumRois;

    const NormalizationStats stats = compute_normalization(train_split);
    std::vector<TrainingPair> pairs = build_training_pairs(train_split, stats, opt.policy);
    if (pairs.empty())
        throw std::invalid_argument("train_diffusion: no usable visit pairs in training cohort");
    const double sigma_data = residual_sigma_data(pairs);

    Rng rng_init(substream(opt.seed, "init"));
    ParamStore<float> params = init_unet_params<float>(arch, rng_init);
    AdamState<float> adam = AdamState<float>::like(params.tensors);
    AdamConfig adam_cfg;
    adam_cfg.lr = opt.hyper.lr;

    std::ofstream log;
    if (!opt.loss_log_path.empty()) {
        log.open(opt.loss_log_path, std::ios::trunc);
        if (!log)
            throw std::runtime_error("train_diffusion: cannot open loss log '" +
                                     opt.loss_log_path + "'");
        log << "epoch,step,loss,sigma_mean,wallclock_ms\n";
    }

    std::vector<EncodedPair> encoded;
    encoded.reserve(pairs.size());
    for (const auto& p : pairs) encoded.push_back(encode_pair(p, stats));

    Rng rng_train(substream(opt.seed, "train"));
    std::vector<size_t> order(pairs.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    const auto t0 = std::chrono::steady_clock::now();
    int64_t step = 0;
    for (int epoch = 1; epoch <= opt.hyper.epochs; ++epoch) {
        rng_train.shuffle(order);
        for (size_t at = 0; at < order.size(); at += static_cast<size_t>(opt.hyper.batch_size)) {
            const size_t end = std::min(order.size(), at + static_cast<size_t>(opt.hyper.batch_size));
            std::vector<const EncodedPair*> batch;
            batch.reserve(end - at);
            for (size_t i = at; i < end; ++i) batch.push_back(&encoded[order[i]]);
            LossResult res = encoded_loss(params, arch, sigma_data, batch, opt.diffusion,
                                          rng_train);
            adam_step(params.tensors, res.grads, params.names, adam, adam_cfg);
            ++step;
            if (log) {
                const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                                    std::chrono::steady_clock::now() - t0)
                                    .count();
                log << epoch << "," << step << "," << res.loss << "," << res.sigma_mean << ","
                    << ms << "\n";
            }
        }
    }

    Denoiser<float> den;
    den.arch = arch;
    den.params = std::move(params);
    den.stats = stats;
    den.sigma_data = sigma_data;
    return den;
}

std::vector<Prediction> predict_trajectory(const Denoiser<float>& den, const Cohort& subjects,
                                           const std::vector<int>& months,
                                           const PredictOptions& opt) {
    if (opt.realizations < 1)
        throw std::invalid_argument("predict_trajectory: realizations must be >= 1");
    std::vector<int> ms = months;
    std::sort(ms.begin(), ms.end());
    ms.erase(std::unique(ms.begin(), ms.end()), ms.end());
    if (ms.empty()) throw std::invalid_argument("predict_trajectory: no target months");
    for (int m : ms)
        if (m <= 0)
            throw std::invalid_argument("predict_trajectory: target months must be > 0, got " +
                                        std::to_string(m));

    std::vector<const Subject*> order;
    for (const auto& s : subjects.subjects) {
        if (!s.visits.count(0))
            throw std::invalid_argument("predict_trajectory: subject '" + s.id +
                                        "' has no baseline visit");
        order.push_back(&s);
    }
    std::sort(order.begin(), order.end(),
              [](const Subject* a, const Subject* b) { return a->id < b->id; });

    const int64_t S = static_cast<int64_t>(order.size());
    const int64_t M = static_cast<int64_t>(ms.size());
    const int64_t K = opt.realizations;

    // condition tensors once per (subject, month)
    std::vector<Tensor<float>> conds(static_cast<size_t>(S * M));
    for (int64_t si = 0; si < S; ++si)
        for (int64_t mi = 0; mi < M; ++mi) {
            const Subject& s = *order[static_cast<size_t>(si)];
            ConditionRaw raw;
            raw.baseline_cth = s.visits.at(0);
            raw.age = s.age_bl;
            raw.sex = s.sex;
            raw.dx = s.dx_by_visit.at(0);
            raw.delta_months = ms[static_cast<size_t>(mi)];
            conds[static_cast<size_t>(si * M + mi)] =
                encode_condition(raw, den.stats).cast<float>();
        }

    std::vector<Prediction> out(static_cast<size_t>(S * M * K));
    parallel_for(S * M * K, [&](int64_t task) {
        const int64_t si = task / (M * K);
        const int64_t mi = (task / K) % M;
        const int64_t k = task % K;
        const Subject& s = *order[static_cast<size_t>(si)];
        const int month = ms[static_cast<size_t>(mi)];
        const Tensor<float>& cond = conds[static_cast<size_t>(si * M + mi)];

        auto denoise_fn = [&](const std::vector<double>& x, double sigma) {
            Tensor<float> xt({1, kNumRois});
            for (int64_t r = 0; r < kNumRois; ++r)
                xt[r] = static_cast<float>(x[static_cast<size_t>(r)]);
            Tensor<float> d = den.denoise(xt, sigma, cond);
            std::vector<double> o(static_cast<size_t>(kNumRois));
            for (int64_t r = 0; r < kNumRois; ++r) o[static_cast<size_t>(r)] = d[r];
            return o;
        };
        Rng rng(substream(opt.seed, "sample",
                          {fnv1a64(s.id), static_cast<uint64_t>(month), static_cast<uint64_t>(k)}));
        const std::vector<double> x0n =
            heun_sample(denoise_fn, kNumRois, opt.diffusion, opt.steps, rng);

        Prediction& p = out[static_cast<size_t>(task)];
        p.subject_id = s.id;
        p.month = month;
        p.realization = static_cast<int>(k);
        const auto& bl = s.visits.at(0);
        for (int64_t r = 0; r < kNumRois; ++r)
            p.cth[static_cast<size_t>(r)] =
                bl[static_cast<size_t>(r)] +
                x0n[static_cast<size_t>(r)] * den.stats.res_std[static_cast<size_t>(r)] +
                den.stats.res_mean[static_cast<size_t>(r)];
    });
    return out;
}

}  // namespace cth
