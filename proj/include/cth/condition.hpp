#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "cth/tensor.hpp"

#include "json.hpp"

namespace cth {

inline constexpr int64_t kNumRois = 68;
inline constexpr int64_t kCondChannels = 7;

enum class Dx { CN = 0, MCI = 1, AD = 2 };

inline std::string dx_name(Dx d) {
    switch (d) {
        case Dx::CN: return "CN";
        case Dx::MCI: return "MCI";
        case Dx::AD: return "AD";
    }
    throw std::invalid_argument("dx_name: invalid diagnosis code");
}

inline Dx dx_from_name(const std::string& s) {
    if (s == "CN") return Dx::CN;
    if (s == "MCI") return Dx::MCI;
    if (s == "AD") return Dx::AD;
    throw std::invalid_argument("diagnosis must be one of CN, MCI, AD; got '" + s + "'");
}

// z-scoring constants, computed on the training split only.
struct NormalizationStats {
    std::vector<double> cth_mean, cth_std;  // per-ROI, thickness levels
    std::vector<double> res_mean, res_std;  // per-ROI, visit-pair residuals
    double age_mean = 0, age_std = 1;
    double delta_scale = 36.0;  // months; fixed scaling for the interval channel

    nlohmann::json to_json() const {
        return {{"cth_mean", cth_mean}, {"cth_std", cth_std},   {"res_mean", res_mean},
                {"res_std", res_std},   {"age_mean", age_mean}, {"age_std", age_std},
                {"delta_scale", delta_scale}};
    }
    static NormalizationStats from_json(const nlohmann::json& j) {
        NormalizationStats s;
        s.cth_mean = j.at("cth_mean").get<std::vector<double>>();
        s.cth_std = j.at("cth_std").get<std::vector<double>>();
        s.res_mean = j.at("res_mean").get<std::vector<double>>();
        s.res_std = j.at("res_std").get<std::vector<double>>();
        s.age_mean = j.at("age_mean").get<double>();
        s.age_std = j.at("age_std").get<double>();
        s.delta_scale = j.at("delta_scale").get<double>();
        return s;
    }
};

struct ConditionRaw {
    std::vector<double> baseline_cth;  // 68, mm
    double age = 0;                    // years at the conditioning visit
    int sex = 0;                       // 0 = female, 1 = male
    Dx dx = Dx::CN;
    double delta_months = 0;           // conditioning visit -> prediction target
};

inline void validate_condition(const ConditionRaw& c) {
    if (static_cast<int64_t>(c.baseline_cth.size()) != kNumRois)
        throw std::invalid_argument("baseline_cth: expected " + std::to_string(kNumRois) +
                                    " values, got " + std::to_string(c.baseline_cth.size()));
    for (int64_t i = 0; i < kNumRois; ++i) {
        double v = c.baseline_cth[static_cast<size_t>(i)];
        if (!(v > 0.0 && v < 6.0))
            throw std::invalid_argument("baseline_cth[" + std::to_string(i) + "]: value " +
                                        std::to_string(v) + " outside (0, 6) mm");
    }
    if (!(c.age >= 40.0 && c.age <= 100.0))
        throw std::invalid_argument("age: value " + std::to_string(c.age) +
                                    " outside [40, 100] years");
    if (c.sex != 0 && c.sex != 1)
        throw std::invalid_argument("sex: must be 0 or 1, got " + std::to_string(c.sex));
    if (!(c.delta_months > 0.0 && c.delta_months <= 120.0))
        throw std::invalid_argument("delta_months: value " + std::to_string(c.delta_months) +
                                    " outside (0, 120] months");
}

// Channel layout: 0 = z-scored baseline CTh, 1 = z-scored age, 2 = sex,
// 3-5 = diagnosis one-hot (CN, MCI, AD), 6 = delta_months / delta_scale.
// Channels 1-6 are constant along the length axis.
inline Tensor<double> encode_condition(const ConditionRaw& raw, const NormalizationStats& st) {
    validate_condition(raw);
    Tensor<double> t({kCondChannels, kNumRois});
    for (int64_t i = 0; i < kNumRois; ++i)
        t.at(0, i) = (raw.baseline_cth[static_cast<size_t>(i)] - st.cth_mean[static_cast<size_t>(i)]) /
                     st.cth_std[static_cast<size_t>(i)];
    const double age_n = (raw.age - st.age_mean) / st.age_std;
    const double delta_n = raw.delta_months / st.delta_scale;
    for (int64_t i = 0; i < kNumRois; ++i) {
        t.at(1, i) = age_n;
        t.at(2, i) = raw.sex;
        t.at(3, i) = raw.dx == Dx::CN ? 1.0 : 0.0;
        t.at(4, i) = raw.dx == Dx::MCI ? 1.0 : 0.0;
        t.at(5, i) = raw.dx == Dx::AD ? 1.0 : 0.0;
        t.at(6, i) = delta_n;
    }
    return t;
}

struct DecodedCondition {
    std::vector<double> baseline_norm;
    double age_norm = 0;
    int sex = 0;
    Dx dx = Dx::CN;
    double delta_norm = 0;
};

inline DecodedCondition decode_condition(const Tensor<double>& t) {
    if (t.shape != Shape{kCondChannels, kNumRois})
        throw std::invalid_argument("decode_condition: expected [7,68], got " +
                                    shape_str(t.shape));
    DecodedCondition d;
    d.baseline_norm.resize(static_cast<size_t>(kNumRois));
    for (int64_t i = 0; i < kNumRois; ++i) d.baseline_norm[static_cast<size_t>(i)] = t.at(0, i);
    d.age_norm = t.at(1, 0);
    d.sex = static_cast<int>(t.at(2, 0));
    int hot = -1;
    for (int k = 0; k < 3; ++k) {
        bool all_one = true, all_zero = true;
        for (int64_t i = 0; i < kNumRois; ++i) {
            if (t.at(3 + k, i) != 1.0) all_one = false;
            if (t.at(3 + k, i) != 0.0) all_zero = false;
        }
        if (all_one) {
            if (hot >= 0) throw std::invalid_argument("decode_condition: multiple one-hot channels set");
            hot = k;
        } else if (!all_zero) {
            throw std::invalid_argument("decode_condition: diagnosis channel neither 0 nor 1");
        }
    }
    if (hot < 0) throw std::invalid_argument("decode_condition: no diagnosis channel set");
    d.dx = static_cast<Dx>(hot);
    d.delta_norm = t.at(6, 0);
    return d;
}

}  // namespace cth
