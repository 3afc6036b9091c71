#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "cth/condition.hpp"
#include "cth/net.hpp"
#include "cth/tape.hpp"

namespace cth {

// EDM preconditioning (Karras et al. 2022, Table 1):
//   D(x;sigma,y) = c_skip*x + c_out*F(c_in*x; c_noise, y)
inline double edm_c_skip(double sigma, double sigma_data) {
    return sigma_data * sigma_data / (sigma * sigma + sigma_data * sigma_data);
}
inline double edm_c_out(double sigma, double sigma_data) {
    return sigma * sigma_data / std::sqrt(sigma * sigma + sigma_data * sigma_data);
}
inline double edm_c_in(double sigma, double sigma_data) {
    return 1.0 / std::sqrt(sigma * sigma + sigma_data * sigma_data);
}
inline double edm_c_noise(double sigma) { return std::log(sigma) / 4.0; }
inline double edm_loss_weight(double sigma, double sigma_data) {
    return (sigma * sigma + sigma_data * sigma_data) / ((sigma * sigma_data) * (sigma * sigma_data));
}

// Builds the preconditioned denoiser on a tape. x_noisy and cond enter as
// constants ([B,1,L] / [B,C,L] or their rank-2 single-item forms); only the
// planted parameters are differentiable.
template <typename T>
typename Tape<T>::Id denoise_on_tape(Tape<T>& tape, const ParamStore<T>& store,
                                     const Planted<T>& planted, const ArchConfig& cfg,
                                     double sigma_data, const Tensor<T>& x_noisy,
                                     const std::vector<double>& sigmas, const Tensor<T>& cond) {
    const bool batched = x_noisy.rank() == 3;
    const int64_t B = batched ? x_noisy.dim(0) : 1;
    if (static_cast<int64_t>(sigmas.size()) != B)
        throw std::invalid_argument("denoise_on_tape: sigma count != batch size");
    for (double s : sigmas)
        if (!(s > 0)) throw std::invalid_argument("denoise_on_tape: sigma must be > 0");
    const int64_t L = x_noisy.dim(batched ? 2 : 1);
    if ((batched ? x_noisy.dim(1) : x_noisy.dim(0)) != 1)
        throw std::invalid_argument("denoise_on_tape: x must have one channel");
    if (cfg.in_channels != 1 + (batched ? cond.dim(1) : cond.dim(0)))
        throw std::invalid_argument("denoise_on_tape: in_channels != 1 + condition channels");

    Tensor<T> x_scaled(x_noisy.shape);
    std::vector<T> cskip(static_cast<size_t>(B)), cout(static_cast<size_t>(B));
    Tensor<T> cn(batched ? Shape{B, 1} : Shape{1});
    const int64_t stride = x_noisy.numel() / B;
    for (int64_t b = 0; b < B; ++b) {
        const double s = sigmas[static_cast<size_t>(b)];
        const double ci = edm_c_in(s, sigma_data);
        cskip[static_cast<size_t>(b)] = static_cast<T>(edm_c_skip(s, sigma_data));
        cout[static_cast<size_t>(b)] = static_cast<T>(edm_c_out(s, sigma_data));
        cn[b] = static_cast<T>(edm_c_noise(s));
        for (int64_t i = 0; i < stride; ++i)
            x_scaled[b * stride + i] = static_cast<T>(ci) * x_noisy[b * stride + i];
    }
    auto in = tape.concat_channels(tape.constant(std::move(x_scaled)), tape.constant(cond));
    auto f = unet_forward(tape, store, planted, cfg, in, tape.constant(std::move(cn)));
    (void)L;
    return tape.lincomb_per_item(f, x_noisy, std::move(cskip), std::move(cout));
}

// The conditional denoiser D(x; sigma, y) with its normalization context.
template <typename T>
struct Denoiser {
    ArchConfig arch;
    ParamStore<T> params;
    NormalizationStats stats;
    double sigma_data = 1.0;

    // F_theta on a throwaway tape; x_in [1,L], cond [kCondChannels,L].
    Tensor<T> raw_forward(const Tensor<T>& x_in, double c_noise_val, const Tensor<T>& cond) const {
        Tape<T> tape;
        auto planted = plant_params(tape, params, false);
        auto in = tape.concat_channels(tape.constant(x_in), tape.constant(cond));
        Tensor<T> cn({1});
        cn[0] = static_cast<T>(c_noise_val);
        auto out = unet_forward(tape, params, planted, arch, in, tape.constant(std::move(cn)));
        return tape.val(out);
    }

    Tensor<T> denoise(const Tensor<T>& x_noisy, double sigma, const Tensor<T>& cond) const {
        if (!(sigma > 0)) throw std::invalid_argument("denoise: sigma must be > 0");
        Tape<T> tape;
        auto planted = plant_params(tape, params, false);
        auto d = denoise_on_tape(tape, params, planted, arch, sigma_data, x_noisy, {sigma}, cond);
        return tape.val(d);
    }

    // Eq.-4 score: (D(x;sigma,y) - x) / sigma^2
    Tensor<T> score(const Tensor<T>& x, double sigma, const Tensor<T>& cond) const {
        Tensor<T> d = denoise(x, sigma, cond);
        const T inv = static_cast<T>(1.0 / (sigma * sigma));
        for (int64_t i = 0; i < d.numel(); ++i) d[i] = (d[i] - x[i]) * inv;
        return d;
    }
};

}  // namespace cth
