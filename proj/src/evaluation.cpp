#include "cth/evaluation.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace cth {

namespace {

std::string fmt(double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

const std::array<std::string, 4> kGroups = {"All", "CN", "MCI", "AD"};

GroupStat stat_of(const std::vector<double>& xs) {
    GroupStat g;
    g.n = static_cast<int64_t>(xs.size());
    if (g.n == 0) return g;
    double s = 0;
    for (double x : xs) s += x;
    g.mean = s / static_cast<double>(g.n);
    if (g.n >= 2) {
        double v = 0;
        for (double x : xs) v += (x - g.mean) * (x - g.mean);
        g.sd = std::sqrt(v / static_cast<double>(g.n - 1));
    }
    return g;
}

}  // namespace

void write_predictions_csv(const std::vector<Prediction>& preds, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
    os << "subject_id,target_month,realization";
    for (int r = 1; r <= 68; ++r) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), ",roi_%03d", r);
        os << buf;
    }
    os << "\n";
    for (const auto& p : preds) {
        os << p.subject_id << "," << p.month << "," << p.realization;
        for (double v : p.cth) os << "," << fmt(v);
        os << "\n";
    }
    if (!os) throw std::runtime_error("write failed for '" + path + "'");
}

std::vector<Prediction> load_predictions_csv(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open predictions csv '" + path + "'");
    std::string line;
    if (!std::getline(is, line))
        throw std::runtime_error("predictions csv '" + path + "': empty file");
    std::vector<Prediction> out;
    int lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> tok;
        std::stringstream ss(line);
        std::string t;
        while (std::getline(ss, t, ',')) tok.push_back(t);
        if (tok.size() != 71)
            throw std::runtime_error("predictions csv line " + std::to_string(lineno) +
                                     ": expected 71 fields, got " + std::to_string(tok.size()));
        Prediction p;
        p.subject_id = tok[0];
        p.month = std::stoi(tok[1]);
        p.realization = std::stoi(tok[2]);
        for (int r = 0; r < 68; ++r) {
            double v = 0;
            const std::string& s = tok[static_cast<size_t>(3 + r)];
            auto res = std::from_chars(s.data(), s.data() + s.size(), v);
            if (res.ec != std::errc())
                throw std::runtime_error("predictions csv line " + std::to_string(lineno) +
                                         ": bad number '" + s + "'");
            p.cth[static_cast<size_t>(r)] = v;
        }
        out.push_back(std::move(p));
    }
    return out;
}

PredictionSet PredictionSet::from_rows(const std::vector<Prediction>& rows) {
    PredictionSet set;
    std::map<std::pair<std::string, int>, std::vector<int>> realz;
    for (const auto& p : rows) {
        auto key = std::make_pair(p.subject_id, p.month);
        auto& v = set.by_key[key];
        auto& rz = realz[key];
        if (static_cast<int>(v.size()) <= p.realization) {
            v.resize(static_cast<size_t>(p.realization) + 1);
            rz.resize(static_cast<size_t>(p.realization) + 1, 0);
        }
        if (rz[static_cast<size_t>(p.realization)]++)
            throw std::runtime_error("predictions: duplicate realization " +
                                     std::to_string(p.realization) + " for subject '" +
                                     p.subject_id + "' month " + std::to_string(p.month));
        v[static_cast<size_t>(p.realization)] = p.cth;
    }
    if (set.by_key.empty()) throw std::runtime_error("predictions: no rows");
    set.realizations = static_cast<int>(set.by_key.begin()->second.size());
    for (const auto& [key, v] : set.by_key) {
        if (static_cast<int>(v.size()) != set.realizations)
            throw std::runtime_error("predictions: realization count differs at subject '" +
                                     key.first + "' month " + std::to_string(key.second));
        auto& rz = realz[key];
        for (size_t i = 0; i < rz.size(); ++i)
            if (rz[i] != 1)
                throw std::runtime_error("predictions: missing realization " + std::to_string(i) +
                                         " for subject '" + key.first + "'");
    }
    return set;
}

std::array<double, 68> PredictionSet::point_estimate(
    const std::pair<std::string, int>& key) const {
    const auto& v = by_key.at(key);
    std::array<double, 68> out{};
    for (const auto& real : v)
        for (size_t r = 0; r < 68; ++r) out[r] += real[r];
    for (auto& x : out) x /= static_cast<double>(v.size());
    return out;
}

namespace {

// per-subject |error| means split by visit-time diagnosis
std::map<std::string, GroupStat> grouped_subject_mae(
    const PredictionSet& pred, const Cohort& truth,
    const std::function<std::array<double, 68>(const std::pair<std::string, int>&)>& point) {
    std::map<std::string, std::map<std::string, std::pair<double, int64_t>>> acc;  // group -> subject -> (sum, n)
    for (const auto& [key, reals] : pred.by_key) {
        (void)reals;
        const Subject* s = truth.find(key.first);
        if (!s)
            throw std::runtime_error("evaluation: predicted subject '" + key.first +
                                     "' not in ground truth");
        auto vit = s->visits.find(key.second);
        if (vit == s->visits.end())
            throw std::runtime_error("evaluation: subject '" + key.first +
                                     "' has no ground-truth visit at month " +
                                     std::to_string(key.second));
        const std::array<double, 68> p = point(key);
        double err = 0;
        for (size_t r = 0; r < 68; ++r) err += std::abs(p[r] - vit->second[r]);
        err /= 68.0;
        const std::string g = dx_name(s->dx_by_visit.at(key.second));
        for (const std::string& group : {std::string("All"), g}) {
            auto& cell = acc[group][key.first];
            cell.first += err;
            cell.second += 1;
        }
    }
    std::map<std::string, GroupStat> out;
    for (const auto& gname : kGroups) {
        auto it = acc.find(gname);
        if (it == acc.end()) continue;
        std::vector<double> per_subject;
        for (const auto& [sid, cell] : it->second) {
            (void)sid;
            per_subject.push_back(cell.first / static_cast<double>(cell.second));
        }
        out[gname] = stat_of(per_subject);
    }
    return out;
}

}  // namespace

std::map<std::string, GroupStat> mae_by_group(const PredictionSet& pred, const Cohort& truth) {
    return grouped_subject_mae(pred, truth,
                               [&](const auto& key) { return pred.point_estimate(key); });
}

std::map<std::string, GroupStat> carry_forward_mae(const Cohort& truth,
                                                   const std::vector<int>& months) {
    PredictionSet cf;
    cf.realizations = 1;
    for (const auto& s : truth.subjects) {
        auto bl = s.visits.find(0);
        if (bl == s.visits.end()) continue;
        std::array<double, 68> v{};
        std::copy(bl->second.begin(), bl->second.end(), v.begin());
        for (int m : months)
            if (s.visits.count(m)) cf.by_key[{s.id, m}] = {v};
    }
    if (cf.by_key.empty()) throw std::runtime_error("carry_forward_mae: no evaluable visits");
    return mae_by_group(cf, truth);
}

AgreementReport bland_altman(const std::vector<double>& pred, const std::vector<double>& truth) {
    if (pred.size() != truth.size())
        throw std::invalid_argument("bland_altman: size mismatch");
    if (pred.size() < 2)
        throw std::invalid_argument("bland_altman: need at least 2 paired points");
    AgreementReport r;
    r.n = static_cast<int64_t>(pred.size());
    double s = 0;
    for (size_t i = 0; i < pred.size(); ++i) s += pred[i] - truth[i];
    r.md = s / static_cast<double>(r.n);
    double v = 0;
    for (size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - truth[i] - r.md;
        v += d * d;
    }
    r.sd = std::sqrt(v / static_cast<double>(r.n - 1));
    r.lo = r.md - 1.96 * r.sd;
    r.hi = r.md + 1.96 * r.sd;
    return r;
}

LinearFit linear_fit(const std::vector<double>& pred, const std::vector<double>& truth) {
    if (pred.size() != truth.size()) throw std::invalid_argument("linear_fit: size mismatch");
    if (pred.size() < 3) throw std::invalid_argument("linear_fit: need at least 3 points");
    const double n = static_cast<double>(pred.size());
    double mx = 0, my = 0;
    for (size_t i = 0; i < pred.size(); ++i) {
        mx += truth[i];
        my += pred[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0, syy = 0, sxy = 0;
    for (size_t i = 0; i < pred.size(); ++i) {
        const double dx = truth[i] - mx, dy = pred[i] - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if (!(sxx > 0)) throw std::invalid_argument("linear_fit: zero variance in truth");
    LinearFit f;
    f.n = static_cast<int64_t>(pred.size());
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    f.r_squared = syy > 0 ? (sxy * sxy) / (sxx * syy) : 1.0;
    return f;
}

std::map<std::pair<std::string, int>, std::vector<UncertaintyCell>> uncertainty_summary(
    const PredictionSet& pred) {
    if (pred.realizations < 2)
        throw std::invalid_argument(
            "uncertainty_summary: needs >= 2 realizations; use the deterministic evaluation "
            "path for single-realization predictions");
    const int K = pred.realizations;
    std::map<std::pair<std::string, int>, std::vector<UncertaintyCell>> out;
    std::vector<double> vals(static_cast<size_t>(K));
    for (const auto& [key, reals] : pred.by_key) {
        std::vector<UncertaintyCell> cells(68);
        for (size_t r = 0; r < 68; ++r) {
            for (int k = 0; k < K; ++k) vals[static_cast<size_t>(k)] = reals[static_cast<size_t>(k)][r];
            UncertaintyCell c;
            bool constant = true;
            for (double v : vals) constant = constant && v == vals[0];
            if (constant) {
                c.mean = c.lo95 = c.hi95 = vals[0];
                cells[r] = c;
                continue;
            }
            double s = 0;
            for (double v : vals) s += v;
            c.mean = s / static_cast<double>(K);
            double var = 0;
            for (double v : vals) var += (v - c.mean) * (v - c.mean);
            c.std = std::sqrt(var / static_cast<double>(K - 1));
            if (K >= 40) {
                std::vector<double> sorted = vals;
                std::sort(sorted.begin(), sorted.end());
                auto pct = [&](double q) {
                    const double pos = q * static_cast<double>(K - 1);
                    const size_t i = static_cast<size_t>(pos);
                    const double frac = pos - static_cast<double>(i);
                    return i + 1 < sorted.size() ? sorted[i] * (1 - frac) + sorted[i + 1] * frac
                                                 : sorted[i];
                };
                c.lo95 = pct(0.025);
                c.hi95 = pct(0.975);
            } else {
                c.lo95 = c.mean - 1.96 * c.std;
                c.hi95 = c.mean + 1.96 * c.std;
            }
            cells[r] = c;
        }
        out[key] = std::move(cells);
    }
    return out;
}

EvaluationArtifacts evaluate_predictions(const PredictionSet& pred, const Cohort& truth) {
    EvaluationArtifacts art;
    std::set<int> month_set;
    for (const auto& [key, v] : pred.by_key) {
        (void)v;
        month_set.insert(key.second);
    }
    const std::vector<int> months(month_set.begin(), month_set.end());

    // pooled (subject, visit, ROI) points per group
    std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> pool;
    for (const auto& [key, reals] : pred.by_key) {
        (void)reals;
        const Subject* s = truth.find(key.first);
        if (!s)
            throw std::runtime_error("evaluation: predicted subject '" + key.first +
                                     "' not in ground truth");
        auto vit = s->visits.find(key.second);
        if (vit == s->visits.end())
            throw std::runtime_error("evaluation: subject '" + key.first +
                                     "' has no ground-truth visit at month " +
                                     std::to_string(key.second));
        const std::array<double, 68> p = pred.point_estimate(key);
        const std::string g = dx_name(s->dx_by_visit.at(key.second));
        for (size_t r = 0; r < 68; ++r) {
            for (const std::string& group : {std::string("All"), g}) {
                pool[group].first.push_back(p[r]);
                pool[group].second.push_back(vit->second[r]);
            }
            art.ba_points.push_back({g, (p[r] + vit->second[r]) / 2.0, p[r] - vit->second[r]});
            art.fit_points.emplace_back(g, vit->second[r], p[r]);
        }
    }

    nlohmann::json report;
    report["months"] = months;
    report["realizations"] = pred.realizations;

    const auto mae = mae_by_group(pred, truth);
    nlohmann::json jm;
    for (const auto& [g, st] : mae) jm[g] = {{"mean", st.mean}, {"sd", st.sd}, {"n", st.n}};
    report["mae_table"] = jm;

    const auto cf = carry_forward_mae(truth, months);
    nlohmann::json jc;
    for (const auto& [g, st] : cf) jc[g] = {{"mean", st.mean}, {"sd", st.sd}, {"n", st.n}};
    report["carry_forward"] = jc;

    nlohmann::json jb, jf;
    for (const auto& gname : kGroups) {
        auto it = pool.find(gname);
        if (it == pool.end()) continue;
        const auto& [pv, tv] = it->second;
        if (pv.size() >= 2) {
            const AgreementReport ar = bland_altman(pv, tv);
            jb[gname] = {{"md", ar.md}, {"sd", ar.sd}, {"lo", ar.lo}, {"hi", ar.hi}, {"n", ar.n}};
        }
        if (pv.size() >= 3) {
            const LinearFit lf = linear_fit(pv, tv);
            jf[gname] = {{"slope", lf.slope},
                         {"intercept", lf.intercept},
                         {"r_squared", lf.r_squared},
                         {"n", lf.n}};
        }
    }
    report["bland_altman"] = jb;
    report["linear_fit"] = jf;

    if (pred.realizations >= 2) {
        const auto unc = uncertainty_summary(pred);
        std::map<int, std::array<double, 4>> per_month;  // sum_std, sum_width, covered, n
        for (const auto& [key, cells] : unc) {
            const Subject* s = truth.find(key.first);
            const auto& tv = s->visits.at(key.second);
            auto& a = per_month[key.second];
            for (size_t r = 0; r < 68; ++r) {
                a[0] += cells[r].std;
                a[1] += cells[r].hi95 - cells[r].lo95;
                a[2] += (tv[r] >= cells[r].lo95 && tv[r] <= cells[r].hi95) ? 1.0 : 0.0;
                a[3] += 1.0;
            }
        }
        nlohmann::json ju;
        for (const auto& [m, a] : per_month)
            ju[std::to_string(m)] = {{"mean_std", a[0] / a[3]},
                                     {"mean_interval", a[1] / a[3]},
                                     {"coverage95", a[2] / a[3]}};
        report["uncertainty"] = ju;
    }

    art.report = std::move(report);
    return art;
}

void write_ba_points_csv(const std::vector<BlandAltmanPoint>& pts, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
    os << "group,mean,diff\n";
    for (const auto& p : pts) os << p.group << "," << fmt(p.mean) << "," << fmt(p.diff) << "\n";
}

void write_fit_points_csv(const std::vector<std::tuple<std::string, double, double>>& pts,
                          const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
    os << "group,truth,pred\n";
    for (const auto& [g, t, p] : pts) os << g << "," << fmt(t) << "," << fmt(p) << "\n";
}

void write_trajectory_csv(const PredictionSet& pred, const std::string& subject_id,
                          const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
    os << "month,roi,mean,lo95,hi95\n";
    bool any = false;
    for (const auto& [key, reals] : pred.by_key) {
        if (key.first != subject_id) continue;
        any = true;
        const int K = static_cast<int>(reals.size());
        for (size_t r = 0; r < 68; ++r) {
            bool constant = true;
            for (const auto& real : reals) constant = constant && real[r] == reals[0][r];
            double mean = 0;
            for (const auto& real : reals) mean += real[r];
            mean /= K;
            if (constant) mean = reals[0][r];
            double lo = mean, hi = mean;
            if (K >= 2 && !constant) {
                double var = 0;
                for (const auto& real : reals) var += (real[r] - mean) * (real[r] - mean);
                const double sd = std::sqrt(var / (K - 1));
                if (K >= 40) {
                    std::vector<double> sorted;
                    for (const auto& real : reals) sorted.push_back(real[r]);
                    std::sort(sorted.begin(), sorted.end());
                    auto pct = [&](double q) {
                        const double pos = q * (K - 1);
                        const size_t i = static_cast<size_t>(pos);
                        const double frac = pos - static_cast<double>(i);
                        return i + 1 < sorted.size()
                                   ? sorted[i] * (1 - frac) + sorted[i + 1] * frac
                                   : sorted[i];
                    };
                    lo = pct(0.025);
                    hi = pct(0.975);
                } else {
                    lo = mean - 1.96 * sd;
                    hi = mean + 1.96 * sd;
                }
            }
            char buf[16];
            std::snprintf(buf, sizeof(buf), "roi_%03zu", r + 1);
            os << key.second << "," << buf << "," << fmt(mean) << "," << fmt(lo) << "," << fmt(hi)
               << "\n";
        }
    }
    if (!any)
        throw std::runtime_error("write_trajectory_csv: subject '" + subject_id +
                                 "' not in prediction set");
}

}  // namespace cth
