#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cth/cohort.hpp"

#include "json.hpp"

namespace cth {

struct Prediction {
    std::string subject_id;
    int month = 0;
    int realization = 0;
    std::array<double, 68> cth{};  // mm
};

// CSV schema: subject_id,target_month,realization,roi_001..roi_068
void write_predictions_csv(const std::vector<Prediction>& preds, const std::string& path);
std::vector<Prediction> load_predictions_csv(const std::string& path);

// (subject, month) -> K x 68 realizations, K uniform across keys.
struct PredictionSet {
    std::map<std::pair<std::string, int>, std::vector<std::array<double, 68>>> by_key;
    int realizations = 0;

    static PredictionSet from_rows(const std::vector<Prediction>& rows);
    // mean over realizations (the point-estimate convention for K > 1)
    std::array<double, 68> point_estimate(const std::pair<std::string, int>& key) const;
};

struct GroupStat {
    double mean = 0, sd = 0;
    int64_t n = 0;
};

// Per-subject MAE (mean over ROIs and evaluated visits), then mean +/- SD
// over subjects; grouping uses the diagnosis at the evaluated visit.
// Groups: "All", "CN", "MCI", "AD"; empty groups are absent from the map.
std::map<std::string, GroupStat> mae_by_group(const PredictionSet& pred, const Cohort& truth);

// The carry-forward (zero-change) floor, restricted to the given months.
std::map<std::string, GroupStat> carry_forward_mae(const Cohort& truth,
                                                   const std::vector<int>& months);

struct AgreementReport {
    double md = 0;        // mean difference (pred - truth)
    double sd = 0;        // sample SD of differences
    double lo = 0, hi = 0;  // md -/+ 1.96*sd
    int64_t n = 0;
};

struct BlandAltmanPoint {
    std::string group;
    double mean = 0, diff = 0;
};

AgreementReport bland_altman(const std::vector<double>& pred, const std::vector<double>& truth);

struct LinearFit {
    double slope = 0, intercept = 0, r_squared = 0;
    int64_t n = 0;
};

// OLS of pred on truth; R^2 = squared Pearson correlation.
LinearFit linear_fit(const std::vector<double>& pred, const std::vector<double>& truth);

struct UncertaintyCell {
    double mean = 0, std = 0, lo95 = 0, hi95 = 0;
};

// Per-(subject, month, ROI) statistics over realizations: empirical
// 2.5/97.5 percentiles for K >= 40, mean +/- 1.96*std otherwise. K >= 2.
std::map<std::pair<std::string, int>, std::vector<UncertaintyCell>> uncertainty_summary(
    const PredictionSet& pred);

struct EvaluationArtifacts {
    nlohmann::json report;
    std::vector<BlandAltmanPoint> ba_points;
    // (group, truth, pred) pooled points for the regression scatter
    std::vector<std::tuple<std::string, double, double>> fit_points;
};

// Full metrics pass over the months present in the prediction set. Every
// predicted (subject, month) must exist in the ground-truth cohort.
EvaluationArtifacts evaluate_predictions(const PredictionSet& pred, const Cohort& truth);

void write_ba_points_csv(const std::vector<BlandAltmanPoint>& pts, const std::string& path);
void write_fit_points_csv(const std::vector<std::tuple<std::string, double, double>>& pts,
                          const std::string& path);
// month,roi,mean,lo95,hi95 rows for one subject (requires K >= 2)
void write_trajectory_csv(const PredictionSet& pred, const std::string& subject_id,
                          const std::string& path);

}  // namespace cth
