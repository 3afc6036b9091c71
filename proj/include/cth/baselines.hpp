#pragma once

#include <string>
#include <vector>

#include "cth/diffusion.hpp"

namespace cth {

// Ablation regressors: the same U-net trunk trained by plain supervised MSE
// to predict the normalized CTh residual directly from the condition tensor.
// No noise input, no preconditioning, no sigma embedding; attention present
// or absent per variant.
enum class BaselineKind { kUnetAttention, kUnetPlain };

inline std::string baseline_kind_name(BaselineKind k) {
    return k == BaselineKind::kUnetAttention ? "unet_attn" : "unet_plain";
}

struct DeterministicModel {
    BaselineKind kind = BaselineKind::kUnetAttention;
    ArchConfig arch;
    ParamStore<float> params;
    NormalizationStats stats;

    // cond [kCondChannels, 68] -> predicted normalized residual [1, 68]
    Tensor<float> forward(const Tensor<float>& cond) const;
};

struct BaselineTrainOptions {
    ArchConfig arch;  // base_width/groups reused; channels and embedding forced
    TrainHyper hyper;
    PairPolicy policy = PairPolicy::kAllOrdered;
    uint64_t seed = 0;
    std::string loss_log_path;
};

DeterministicModel train_deterministic(BaselineKind kind, const Cohort& train_split,
                                       const BaselineTrainOptions& opt);

// One prediction per (subject, month), realization fixed at 0; consumes no
// randomness.
std::vector<Prediction> predict_deterministic(const DeterministicModel& model,
                                              const Cohort& subjects,
                                              const std::vector<int>& months);

}  // namespace cth
