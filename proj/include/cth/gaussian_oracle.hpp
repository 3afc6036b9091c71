#pragma once

#include <functional>
#include <vector>

#include "cth/diffusion.hpp"

namespace cth {

// Diagonal-covariance Gaussian world where the posterior mean, score, and
// perturbed marginals are closed-form; verifies the sampler and trained
// denoisers through the production code path.
struct GaussianPrior {
    std::vector<double> mean;
    std::vector<double> std;  // s >= 0; s = 0 is the point-mass limit
};

// Exact posterior mean: (s^2 x + sigma^2 m) / (s^2 + sigma^2); returns x at
// sigma = 0.
std::vector<double> analytic_denoiser(const GaussianPrior& prior, const std::vector<double>& x,
                                      double sigma);

// (m - x) / (s^2 + sigma^2); equals (analytic_denoiser - x)/sigma^2.
std::vector<double> analytic_score(const GaussianPrior& prior, const std::vector<double>& x,
                                   double sigma);

// Runs the production heun_sample code path with the analytic denoiser.
std::vector<std::vector<double>> oracle_sample(const GaussianPrior& prior,
                                               const DiffusionConfig& cfg, int steps,
                                               int n_samples, uint64_t seed);

// Kolmogorov-Smirnov sup-distance between the empirical CDF and cdf.
double ks_statistic(std::vector<double> samples, const std::function<double(double)>& cdf);

double normal_cdf(double x, double mean = 0.0, double std = 1.0);

}  // namespace cth
