#include "cth/gaussian_oracle.hpp"

#include <algorithm>
#include <cmath>

#include "cth/parallel.hpp"

namespace cth {

std::vector<double> analytic_denoiser(const GaussianPrior& prior, const std::vector<double>& x,
                                      double sigma) {
    if (sigma < 0) throw std::invalid_argument("analytic_denoiser: sigma must be >= 0");
    if (prior.mean.size() != x.size() || prior.std.size() != x.size())
        throw std::invalid_argument("analytic_denoiser: dimension mismatch");
    if (sigma == 0) return x;
    std::vector<double> out(x.size());
    const double s2 = sigma * sigma;
    for (size_t i = 0; i < x.size(); ++i) {
        const double v = prior.std[i] * prior.std[i];
        out[i] = (v * x[i] + s2 * prior.mean[i]) / (v + s2);
    }
    return out;
}

std::vector<double> analytic_score(const GaussianPrior& prior, const std::vector<double>& x,
                                   double sigma) {
    if (prior.mean.size() != x.size() || prior.std.size() != x.size())
        throw std::invalid_argument("analytic_score: dimension mismatch");
    std::vector<double> out(x.size());
    const double s2 = sigma * sigma;
    for (size_t i = 0; i < x.size(); ++i) {
        const double denom = prior.std[i] * prior.std[i] + s2;
        if (denom == 0)
            throw std::domain_error("analytic_score: undefined at sigma = 0 for a point mass");
        out[i] = (prior.mean[i] - x[i]) / denom;
    }
    return out;
}

std::vector<std::vector<double>> oracle_sample(const GaussianPrior& prior,
                                               const DiffusionConfig& cfg, int steps,
                                               int n_samples, uint64_t seed) {
    if (steps < 2) throw std::invalid_argument("oracle_sample: steps must be >= 2");
    if (n_samples < 1) throw std::invalid_argument("oracle_sample: n_samples must be >= 1");
    const int64_t dim = static_cast<int64_t>(prior.mean.size());
    std::vector<std::vector<double>> out(static_cast<size_t>(n_samples));
    auto denoise_fn = [&](const std::vector<double>& x, double sigma) {
        return analytic_denoiser(prior, x, sigma);
    };
    parallel_for(n_samples, [&](int64_t i) {
        Rng rng(substream(seed, "oracle", {static_cast<uint64_t>(i)}));
        out[static_cast<size_t>(i)] = heun_sample(denoise_fn, dim, cfg, steps, rng);
    });
    return out;
}

double ks_statistic(std::vector<double> samples, const std::function<double(double)>& cdf) {
    if (samples.size() < 2)
        throw std::invalid_argument("ks_statistic: need at least 2 samples, got " +
                                    std::to_string(samples.size()));
    std::sort(samples.begin(), samples.end());
    const double n = static_cast<double>(samples.size());
    double d = 0;
    for (size_t i = 0; i < samples.size(); ++i) {
        const double f = cdf(samples[i]);
        d = std::max(d, std::abs(f - static_cast<double>(i) / n));
        d = std::max(d, std::abs(static_cast<double>(i + 1) / n - f));
    }
    return d;
}

double normal_cdf(double x, double mean, double std) {
    return 0.5 * std::erfc(-(x - mean) / (std * std::sqrt(2.0)));
}

}  // namespace cth
