#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cth/cohort.hpp"
#include "cth/denoiser.hpp"
#include "cth/evaluation.hpp"
#include "cth/rng.hpp"
#include "cth/tensor.hpp"

#include "json.hpp"

namespace cth {

// Variance-exploding convention adopted from the EDM backbone: scale
// mu_t = 1, sigma(t) = t, so the probability-flow ODE reduces to
// dx/dsigma = (x - D(x;sigma,y)) / sigma.
struct DiffusionConfig {
    double sigma_min = 0.002;
    double sigma_max = 80.0;
    double rho = 7.0;
    double p_mean = -1.2;  // training noise: log-normal ln sigma ~ N(p_mean, p_std^2)
    double p_std = 1.2;
    enum class Weighting { kUniform, kEdm };
    Weighting weighting = Weighting::kEdm;
    int nfe = 1000;  // denoiser-call budget for a sampling run

    nlohmann::json to_json() const;
    static DiffusionConfig from_json(const nlohmann::json& j);
};

// Karras et al. (2022) discretization: steps values from sigma_max down to
// sigma_min, then an appended 0. Endpoints are exact.
std::vector<double> sigma_schedule(const DiffusionConfig& cfg, int steps);

double sample_sigma_train(const DiffusionConfig& cfg, Rng& rng);

// x0 + sigma * n, n ~ N(0, I); consumes exactly x0.size() normal draws.
std::vector<double> perturb(const std::vector<double>& x0, double sigma, Rng& rng);

struct TrainingPair {
    std::string subject_id;
    int src_month = 0, dst_month = 0;
    ConditionRaw cond;            // conditioning-visit state
    std::vector<double> x0;       // normalized residual, length 68
};

enum class PairPolicy { kAllOrdered, kBaselineOnly };

std::vector<TrainingPair> build_training_pairs(const Cohort& cohort,
                                               const NormalizationStats& stats,
                                               PairPolicy policy = PairPolicy::kAllOrdered);

// Pooled std of the normalized residuals; the sigma_data used by
// preconditioning, recomputed per dataset.
double residual_sigma_data(const std::vector<TrainingPair>& pairs);

// Second-order deterministic (Heun) integration of the probability-flow
// ODE from sigma_max to 0; the final interval is a single Euler step.
// Denoiser-call count is 2*steps - 1.
template <typename DenoiseFn>
std::vector<double> heun_sample(DenoiseFn&& denoise, int64_t dim, const DiffusionConfig& cfg,
                                int steps, Rng& rng) {
    if (steps < 1) throw std::invalid_argument("heun_sample: steps must be >= 1");
    if (2 * steps - 1 > cfg.nfe)
        throw std::invalid_argument("heun_sample: " + std::to_string(2 * steps - 1) +
                                    " denoiser calls exceed the nfe budget " +
                                    std::to_string(cfg.nfe));
    const std::vector<double> sig = sigma_schedule(cfg, steps);
    std::vector<double> x(static_cast<size_t>(dim));
    rng.fill_normal(x.data(), dim, 0.0, sig[0]);
    std::vector<double> d(static_cast<size_t>(dim)), xe(static_cast<size_t>(dim));
    for (size_t i = 0; i + 1 < sig.size(); ++i) {
        const double s = sig[i], s_next = sig[i + 1];
        const double h = s_next - s;
        std::vector<double> den = denoise(x, s);
        for (int64_t k = 0; k < dim; ++k) {
            d[static_cast<size_t>(k)] = (x[static_cast<size_t>(k)] - den[static_cast<size_t>(k)]) / s;
            xe[static_cast<size_t>(k)] = x[static_cast<size_t>(k)] + h * d[static_cast<size_t>(k)];
        }
        if (s_next > 0) {
            std::vector<double> den2 = denoise(xe, s_next);
            for (int64_t k = 0; k < dim; ++k) {
                const double d2 =
                    (xe[static_cast<size_t>(k)] - den2[static_cast<size_t>(k)]) / s_next;
                x[static_cast<size_t>(k)] += h * 0.5 * (d[static_cast<size_t>(k)] + d2);
            }
        } else {
            x.swap(xe);
        }
        for (int64_t k = 0; k < dim; ++k)
            if (!std::isfinite(x[static_cast<size_t>(k)]))
                throw std::runtime_error("heun_sample: non-finite state after step " +
                                         std::to_string(i));
    }
    return x;
}

struct TrainHyper {
    int batch_size = 64;
    double lr = 1e-3;
    int epochs = 512;

    nlohmann::json to_json() const;
    static TrainHyper from_json(const nlohmann::json& j);
};

struct LossResult {
    double loss = 0;
    double sigma_mean = 0;
    std::vector<Tensor<float>> grads;  // aligned with ParamStore order
};

// Eq.-5 style denoising objective over one batch: draw sigma per item,
// perturb x0, weight ||D(x0+n;sigma,y) - x0||^2, average over the batch.
LossResult denoising_loss(const ParamStore<float>& params, const ArchConfig& arch,
                          double sigma_data, const std::vector<const TrainingPair*>& batch,
                          const NormalizationStats& stats, const DiffusionConfig& cfg, Rng& rng);

struct TrainOptions {
    DiffusionConfig diffusion;
    ArchConfig arch;  // in_channels is forced to 1 + kCondChannels
    TrainHyper hyper;
    PairPolicy policy = PairPolicy::kAllOrdered;
    uint64_t seed = 0;
    std::string loss_log_path;  // optional CSV: epoch,step,loss,sigma_mean,wallclock_ms
};

Denoiser<float> train_diffusion(const Cohort& train_split, const TrainOptions& opt);

struct PredictOptions {
    DiffusionConfig diffusion;
    int steps = 500;  // Heun intervals; 500 -> 999 denoiser calls
    int realizations = 1;
    uint64_t seed = 0;
};

// Conditions on each subject's baseline visit and samples the residual for
// every requested month; realizations use independent RNG substreams and
// tasks run in parallel with canonical output order.
std::vector<Prediction> predict_trajectory(const Denoiser<float>& den, const Cohort& subjects,
                                           const std::vector<int>& months,
                                           const PredictOptions& opt);

}  // namespace cth
