#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "cth/condition.hpp"

#include "json.hpp"

namespace cth {

inline const std::array<int, 5> kVisitMonths = {0, 6, 12, 24, 36};

struct Subject {
    std::string id;
    int sex = 0;
    double age_bl = 0;
    std::map<int, Dx> dx_by_visit;                   // month -> diagnosis
    std::map<int, std::vector<double>> visits;       // month -> 68 CTh values (mm)

    bool complete() const { return visits.size() == kVisitMonths.size(); }
    Dx dx_at(int month) const;  // diagnosis at the latest visit <= month
};

struct Cohort {
    std::vector<Subject> subjects;

    const Subject* find(const std::string& id) const;
    size_t size() const { return subjects.size(); }
};

// Synthetic cohort layout mirroring the study design: 898 subjects over
// visits {bl, m06, m12, m24, m36}, complete baselines, training-split
// missingness, and a testing split whose MCI/CN composition evolves to the
// m36 target through MCI->AD (and a few CN->MCI) conversions.
struct CohortSpec {
    int n_subjects = 898;
    int n_test = 178;
    int train_ad = 187, train_mci = 324, train_cn = 209;   // baseline diagnoses
    int test_mci = 100, test_cn = 78;                      // baseline diagnoses
    int m36_ad = 40, m36_mci = 68, m36_cn = 70;            // month-36 target

    // generative mechanism (invented plausibility defaults, all overridable)
    double rate_cn = 0.005, rate_mci = 0.015, rate_ad = 0.030;  // annual fraction
    double vuln_lo = 0.5, vuln_hi = 2.0;                        // per-ROI multipliers
    double template_lo = 2.0, template_hi = 3.5;                // mm
    double noise_std = 0.05;                                    // mm, measurement
    double severity_deficit = 0.35;   // mm of baseline loss at severity 1
    double rate_jitter = 0.3;         // per-subject rate multiplier half-range
    double miss_m06 = 0.10, miss_m12 = 0.15, miss_m24 = 0.25, miss_m36 = 0.35;
    uint64_t seed = 0;

    int n_train() const { return n_subjects - n_test; }

    nlohmann::json to_json() const;
    static CohortSpec from_json(const nlohmann::json& j);
};

Cohort generate_cohort(const CohortSpec& spec);

// CSV schema: subject_id,visit_month,sex,age_bl,dx,roi_001,...,roi_068
// One row per (subject, visit); UTF-8; LF; shortest round-trip decimals.
void write_cohort_csv(const Cohort& cohort, const std::string& path);
Cohort load_cohort_csv(const std::string& path);

// Training-split statistics only; throws on zero-variance ROIs.
NormalizationStats compute_normalization(const Cohort& train_split);

// Test subjects are the first n_test complete-data subjects in id order.
std::pair<Cohort, Cohort> split_cohort(const Cohort& cohort, const CohortSpec& spec);

// Desikan-Killiany atlas names for the positional roi_001..roi_068 columns.
const std::array<std::string, 68>& roi_names();
bool roi_is_temporal(int64_t roi);
void write_roi_names_json(const std::string& path);

}  // namespace cth
