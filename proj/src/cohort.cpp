#include "cth/cohort.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "cth/rng.hpp"

namespace cth {

Dx Subject::dx_at(int month) const {
    auto it = dx_by_visit.upper_bound(month);
    if (it == dx_by_visit.begin()) throw std::runtime_error("subject " + id + ": no diagnosis");
    return std::prev(it)->second;
}

const Subject* Cohort::find(const std::string& sid) const {
    for (const auto& s : subjects)
        if (s.id == sid) return &s;
    return nullptr;
}

nlohmann::json CohortSpec::to_json() const {
    return {{"n_subjects", n_subjects},
            {"n_test", n_test},
            {"train_ad", train_ad},
            {"train_mci", train_mci},
            {"train_cn", train_cn},
            {"test_mci", test_mci},
            {"test_cn", test_cn},
            {"m36_ad", m36_ad},
            {"m36_mci", m36_mci},
            {"m36_cn", m36_cn},
            {"rate_cn", rate_cn},
            {"rate_mci", rate_mci},
            {"rate_ad", rate_ad},
            {"vuln_lo", vuln_lo},
            {"vuln_hi", vuln_hi},
            {"template_lo", template_lo},
            {"template_hi", template_hi},
            {"noise_std", noise_std},
            {"severity_deficit", severity_deficit},
            {"rate_jitter", rate_jitter},
            {"miss_m06", miss_m06},
            {"miss_m12", miss_m12},
            {"miss_m24", miss_m24},
            {"miss_m36", miss_m36},
            {"seed", seed}};
}

CohortSpec CohortSpec::from_json(const nlohmann::json& j) {
    CohortSpec s;
    s.n_subjects = j.at("n_subjects").get<int>();
    s.n_test = j.at("n_test").get<int>();
    s.train_ad = j.at("train_ad").get<int>();
    s.train_mci = j.at("train_mci").get<int>();
    s.train_cn = j.at("train_cn").get<int>();
    s.test_mci = j.at("test_mci").get<int>();
    s.test_cn = j.at("test_cn").get<int>();
    s.m36_ad = j.at("m36_ad").get<int>();
    s.m36_mci = j.at("m36_mci").get<int>();
    s.m36_cn = j.at("m36_cn").get<int>();
    s.rate_cn = j.at("rate_cn").get<double>();
    s.rate_mci = j.at("rate_mci").get<double>();
    s.rate_ad = j.at("rate_ad").get<double>();
    s.vuln_lo = j.at("vuln_lo").get<double>();
    s.vuln_hi = j.at("vuln_hi").get<double>();
    s.template_lo = j.at("template_lo").get<double>();
    s.template_hi = j.at("template_hi").get<double>();
    s.noise_std = j.at("noise_std").get<double>();
    s.severity_deficit = j.at("severity_deficit").get<double>();
    s.rate_jitter = j.at("rate_jitter").get<double>();
    s.miss_m06 = j.at("miss_m06").get<double>();
    s.miss_m12 = j.at("miss_m12").get<double>();
    s.miss_m24 = j.at("miss_m24").get<double>();
    s.miss_m36 = j.at("miss_m36").get<double>();
    s.seed = j.at("seed").get<uint64_t>();
    return s;
}

namespace {

constexpr const char* kDkNames[34] = {
    "bankssts",       "caudalanteriorcingulate", "caudalmiddlefrontal", "cuneus",
    "entorhinal",     "frontalpole",             "fusiform",            "inferiorparietal",
    "inferiortemporal", "insula",                "isthmuscingulate",    "lateraloccipital",
    "lateralorbitofrontal", "lingual",           "medialorbitofrontal", "middletemporal",
    "paracentral",    "parahippocampal",         "parsopercularis",     "parsorbitalis",
    "parstriangularis", "pericalcarine",         "postcentral",         "posteriorcingulate",
    "precentral",     "precuneus",               "rostralanteriorcingulate",
    "rostralmiddlefrontal", "superiorfrontal",   "superiorparietal",    "superiortemporal",
    "supramarginal",  "temporalpole",            "transversetemporal"};

const std::set<std::string> kTemporal = {
    "bankssts",        "entorhinal",      "fusiform",   "inferiortemporal", "middletemporal",
    "parahippocampal", "superiortemporal", "temporalpole", "transversetemporal"};

double clamp_mm(double v) { return std::min(5.95, std::max(0.05, v)); }

struct Plan {
    Dx dx_bl;
    bool is_test = false;
    int convert_month = -1;  // -1: no conversion
    Dx convert_to = Dx::CN;
    double z_lo = 0, z_hi = 0;  // severity range
};

}  // namespace

const std::array<std::string, 68>& roi_names() {
    static const std::array<std::string, 68> names = [] {
        std::array<std::string, 68> n;
        for (int i = 0; i < 34; ++i) {
            n[static_cast<size_t>(i)] = std::string("lh_") + kDkNames[i];
            n[static_cast<size_t>(34 + i)] = std::string("rh_") + kDkNames[i];
        }
        return n;
    }();
    return names;
}

bool roi_is_temporal(int64_t roi) {
    const std::string& n = roi_names()[static_cast<size_t>(roi)];
    return kTemporal.count(n.substr(3)) != 0;
}

void write_roi_names_json(const std::string& path) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& n : roi_names()) j.push_back(n);
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
    os << j.dump(2) << "\n";
}

Cohort generate_cohort(const CohortSpec& spec) {
    if (spec.n_test <= 0 || spec.n_test >= spec.n_subjects)
        throw std::invalid_argument("cohort spec: n_test must be in (0, n_subjects)");
    if (spec.train_ad + spec.train_mci + spec.train_cn != spec.n_train())
        throw std::invalid_argument("cohort spec: training group counts do not sum to " +
                                    std::to_string(spec.n_train()));
    if (spec.test_mci + spec.test_cn != spec.n_test)
        throw std::invalid_argument("cohort spec: testing group counts do not sum to " +
                                    std::to_string(spec.n_test));
    if (spec.m36_ad + spec.m36_mci + spec.m36_cn != spec.n_test)
        throw std::invalid_argument("cohort spec: m36 composition does not sum to " +
                                    std::to_string(spec.n_test));
    const int mci_to_ad = spec.m36_ad;            // test set starts with no AD
    const int cn_to_mci = spec.test_cn - spec.m36_cn;
    if (mci_to_ad < 0 || mci_to_ad > spec.test_mci || cn_to_mci < 0 ||
        cn_to_mci > spec.test_cn ||
        spec.test_mci - mci_to_ad + cn_to_mci != spec.m36_mci)
        throw std::invalid_argument(
            "cohort spec: infeasible m36 composition target (needs " +
            std::to_string(mci_to_ad) + " MCI->AD and " + std::to_string(cn_to_mci) +
            " CN->MCI conversions)");

    // Per-ROI template means and vulnerability multipliers, temporal regions
    // at the vulnerable end.
    Rng rng_t(substream(spec.seed, "cohort.template"));
    std::array<double, 68> templ{}, vuln{};
    const double vuln_mid = spec.vuln_lo + 0.6 * (spec.vuln_hi - spec.vuln_lo);
    for (int64_t r = 0; r < 68; ++r) {
        templ[static_cast<size_t>(r)] = rng_t.uniform(spec.template_lo, spec.template_hi);
        vuln[static_cast<size_t>(r)] = roi_is_temporal(r)
                                           ? rng_t.uniform(vuln_mid, spec.vuln_hi)
                                           : rng_t.uniform(spec.vuln_lo, vuln_mid);
    }
    double vuln_mean = 0;
    for (double v : vuln) vuln_mean += v;
    vuln_mean /= 68.0;

    // Roster: training subjects first, then testing; converters occupy the
    // leading MCI/CN slots of the testing block.
    std::vector<Plan> plans;
    plans.reserve(static_cast<size_t>(spec.n_subjects));
    auto add = [&](int count, Plan p) {
        for (int i = 0; i < count; ++i) plans.push_back(p);
    };
    add(spec.train_ad, {Dx::AD, false, -1, Dx::CN, 0.70, 1.00});
    add(spec.train_mci, {Dx::MCI, false, -1, Dx::CN, 0.35, 0.65});
    add(spec.train_cn, {Dx::CN, false, -1, Dx::CN, 0.00, 0.30});
    const std::array<int, 4> follow = {6, 12, 24, 36};
    for (int i = 0; i < mci_to_ad; ++i)
        plans.push_back({Dx::MCI, true, follow[static_cast<size_t>(i % 4)], Dx::AD, 0.55, 0.65});
    add(spec.test_mci - mci_to_ad, {Dx::MCI, true, -1, Dx::CN, 0.35, 0.55});
    for (int i = 0; i < cn_to_mci; ++i)
        plans.push_back({Dx::CN, true, follow[static_cast<size_t>(i % 2 + 1)], Dx::MCI, 0.25, 0.30});
    add(spec.test_cn - cn_to_mci, {Dx::CN, true, -1, Dx::CN, 0.00, 0.25});

    const std::array<double, 4> miss = {spec.miss_m06, spec.miss_m12, spec.miss_m24,
                                        spec.miss_m36};
    auto base_rate = [&](Dx d) {
        switch (d) {
            case Dx::CN: return spec.rate_cn;
            case Dx::MCI: return spec.rate_mci;
            default: return spec.rate_ad;
        }
    };

    Cohort cohort;
    cohort.subjects.reserve(plans.size());
    for (size_t si = 0; si < plans.size(); ++si) {
        const Plan& plan = plans[si];
        Rng rng(substream(spec.seed, "cohort.subject", {static_cast<uint64_t>(si)}));
        Subject s;
        {
            std::ostringstream os;
            os << "S" << std::setw(4) << std::setfill('0') << si + 1;
            s.id = os.str();
        }
        s.sex = rng.bernoulli(0.5);
        s.age_bl = std::min(90.0, std::max(55.0, rng.normal(73.0, 7.0)));
        const double z = rng.uniform(plan.z_lo, plan.z_hi);
        const double rate_mult =
            rng.uniform(1.0 - spec.rate_jitter, 1.0 + spec.rate_jitter) * (0.6 + 0.8 * z);
        const double subj_offset = rng.normal(0.0, 0.08);

        std::array<double, 68> value{};
        for (int64_t r = 0; r < 68; ++r)
            value[static_cast<size_t>(r)] =
                templ[static_cast<size_t>(r)] -
                spec.severity_deficit * z * (vuln[static_cast<size_t>(r)] / vuln_mean) +
                subj_offset + rng.normal(0.0, 0.02);

        // diagnosis per visit
        for (int m : kVisitMonths)
            s.dx_by_visit[m] =
                (plan.convert_month >= 0 && m >= plan.convert_month) ? plan.convert_to : plan.dx_bl;

        // latent trajectory: stepwise multiplicative decline between visits
        std::map<int, std::array<double, 68>> latent;
        latent[0] = value;
        for (size_t k = 1; k < kVisitMonths.size(); ++k) {
            const int m_prev = kVisitMonths[k - 1], m = kVisitMonths[k];
            const double years = (m - m_prev) / 12.0;
            const double rate = base_rate(s.dx_by_visit.at(m_prev)) * rate_mult;
            std::array<double, 68> next{};
            for (int64_t r = 0; r < 68; ++r)
                next[static_cast<size_t>(r)] =
                    latent.at(m_prev)[static_cast<size_t>(r)] *
                    std::pow(1.0 - rate * vuln[static_cast<size_t>(r)], years);
            latent[m] = next;
        }

        // observed = latent + measurement noise
        for (int m : kVisitMonths) {
            std::vector<double> obs(68);
            for (int64_t r = 0; r < 68; ++r)
                obs[static_cast<size_t>(r)] =
                    clamp_mm(latent.at(m)[static_cast<size_t>(r)] + rng.normal(0.0, spec.noise_std));
            s.visits[m] = std::move(obs);
        }

        // training-split missingness (baseline always kept); completeness is
        // what marks the testing split, so a training subject that drew no
        // missing visit has one dropped.
        if (!plan.is_test) {
            bool dropped = false;
            for (size_t k = 0; k < follow.size(); ++k)
                if (rng.uniform() < miss[k]) {
                    s.visits.erase(follow[k]);
                    dropped = true;
                }
            if (!dropped) s.visits.erase(follow[static_cast<size_t>(rng.below(4))]);
            for (auto it = s.dx_by_visit.begin(); it != s.dx_by_visit.end();)
                it = s.visits.count(it->first) ? std::next(it) : s.dx_by_visit.erase(it);
        }
        cohort.subjects.push_back(std::move(s));
    }
    return cohort;
}

namespace {

std::string fmt_double(double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

double parse_double(const std::string& tok, int line, const std::string& col) {
    double v = 0;
    auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (res.ec != std::errc() || res.ptr != tok.data() + tok.size())
        throw std::runtime_error("cohort csv line " + std::to_string(line) + ": column '" + col +
                                 "': cannot parse '" + tok + "' as a number");
    return v;
}

}  // namespace

void write_cohort_csv(const Cohort& cohort, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
    os << "subject_id,visit_month,sex,age_bl,dx";
    for (int r = 1; r <= 68; ++r) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), ",roi_%03d", r);
        os << buf;
    }
    os << "\n";
    std::vector<const Subject*> order;
    for (const auto& s : cohort.subjects) order.push_back(&s);
    std::sort(order.begin(), order.end(),
              [](const Subject* a, const Subject* b) { return a->id < b->id; });
    for (const Subject* s : order)
        for (const auto& [month, values] : s->visits) {
            os << s->id << "," << month << "," << s->sex << "," << fmt_double(s->age_bl) << ","
               << dx_name(s->dx_by_visit.at(month));
            for (double v : values) os << "," << fmt_double(v);
            os << "\n";
        }
    if (!os) throw std::runtime_error("write failed for '" + path + "'");
}

Cohort load_cohort_csv(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open cohort csv '" + path + "'");
    std::string line;
    if (!std::getline(is, line)) throw std::runtime_error("cohort csv '" + path + "': empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::vector<std::string> header;
    {
        std::stringstream ss(line);
        std::string tok;
        while (std::getline(ss, tok, ',')) header.push_back(tok);
    }
    std::vector<std::string> expected = {"subject_id", "visit_month", "sex", "age_bl", "dx"};
    for (int r = 1; r <= 68; ++r) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "roi_%03d", r);
        expected.emplace_back(buf);
    }
    if (header.size() != expected.size()) {
        for (const auto& col : expected)
            if (std::find(header.begin(), header.end(), col) == header.end())
                throw std::runtime_error("cohort csv '" + path + "': missing column '" + col + "'");
        throw std::runtime_error("cohort csv '" + path + "': expected " +
                                 std::to_string(expected.size()) + " columns, got " +
                                 std::to_string(header.size()));
    }
    for (size_t i = 0; i < expected.size(); ++i)
        if (header[i] != expected[i])
            throw std::runtime_error("cohort csv '" + path + "': missing column '" + expected[i] +
                                     "' (found '" + header[i] + "' at position " +
                                     std::to_string(i + 1) + ")");

    std::map<std::string, Subject> by_id;
    std::set<std::pair<std::string, int>> seen;
    int lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> tok;
        {
            std::stringstream ss(line);
            std::string t;
            while (std::getline(ss, t, ',')) tok.push_back(t);
            if (!line.empty() && line.back() == ',') tok.push_back("");
        }
        if (tok.size() != expected.size())
            throw std::runtime_error("cohort csv line " + std::to_string(lineno) + ": expected " +
                                     std::to_string(expected.size()) + " fields, got " +
                                     std::to_string(tok.size()));
        const std::string& sid = tok[0];
        const int month = static_cast<int>(parse_double(tok[1], lineno, "visit_month"));
        if (std::find(kVisitMonths.begin(), kVisitMonths.end(), month) == kVisitMonths.end())
            throw std::runtime_error("cohort csv line " + std::to_string(lineno) +
                                     ": visit_month " + tok[1] + " not in {0,6,12,24,36}");
        if (!seen.insert({sid, month}).second)
            throw std::runtime_error("cohort csv line " + std::to_string(lineno) +
                                     ": duplicate row for subject '" + sid + "' month " +
                                     std::to_string(month));
        const int sex = static_cast<int>(parse_double(tok[2], lineno, "sex"));
        if (sex != 0 && sex != 1)
            throw std::runtime_error("cohort csv line " + std::to_string(lineno) +
                                     ": sex must be 0 or 1");
        const double age = parse_double(tok[3], lineno, "age_bl");
        Dx dx;
        try {
            dx = dx_from_name(tok[4]);
        } catch (const std::exception& e) {
            throw std::runtime_error("cohort csv line " + std::to_string(lineno) + ": " + e.what());
        }
        std::vector<double> values(68);
        for (int r = 0; r < 68; ++r) {
            values[static_cast<size_t>(r)] = parse_double(tok[static_cast<size_t>(5 + r)], lineno,
                                                           expected[static_cast<size_t>(5 + r)]);
            if (!(values[static_cast<size_t>(r)] > 0 && values[static_cast<size_t>(r)] < 6))
                throw std::runtime_error("cohort csv line " + std::to_string(lineno) + ": " +
                                         expected[static_cast<size_t>(5 + r)] + " value " +
                                         tok[static_cast<size_t>(5 + r)] +
                                         " outside (0, 6) mm");
        }
        Subject& s = by_id[sid];
        if (s.id.empty()) {
            s.id = sid;
            s.sex = sex;
            s.age_bl = age;
        } else if (s.sex != sex || s.age_bl != age) {
            throw std::runtime_error("cohort csv line " + std::to_string(lineno) + ": subject '" +
                                     sid + "' has inconsistent sex/age_bl across rows");
        }
        s.dx_by_visit[month] = dx;
        s.visits[month] = std::move(values);
    }
    Cohort cohort;
    for (auto& [sid, s] : by_id) {
        if (!s.visits.count(0))
            throw std::runtime_error("cohort csv: subject '" + sid +
                                     "' has follow-up visits but no baseline (month 0) row; "
                                     "complete baseline data is required");
        cohort.subjects.push_back(std::move(s));
    }
    return cohort;
}

NormalizationStats compute_normalization(const Cohort& train_split) {
    if (train_split.subjects.empty())
        throw std::invalid_argument("compute_normalization: empty training split");
    NormalizationStats st;
    st.cth_mean.assign(68, 0.0);
    st.cth_std.assign(68, 0.0);
    st.res_mean.assign(68, 0.0);
    st.res_std.assign(68, 0.0);

    // thickness levels over all training rows
    int64_t n_rows = 0;
    for (const auto& s : train_split.subjects)
        for (const auto& [m, v] : s.visits) {
            (void)m;
            ++n_rows;
            for (int64_t r = 0; r < 68; ++r) st.cth_mean[static_cast<size_t>(r)] += v[static_cast<size_t>(r)];
        }
    for (auto& m : st.cth_mean) m /= static_cast<double>(n_rows);
    for (const auto& s : train_split.subjects)
        for (const auto& [m, v] : s.visits) {
            (void)m;
            for (int64_t r = 0; r < 68; ++r) {
                double d = v[static_cast<size_t>(r)] - st.cth_mean[static_cast<size_t>(r)];
                st.cth_std[static_cast<size_t>(r)] += d * d;
            }
        }
    if (n_rows < 2) throw std::invalid_argument("compute_normalization: need >= 2 visit rows");
    for (auto& v : st.cth_std) v = std::sqrt(v / static_cast<double>(n_rows - 1));

    // residuals over all ordered visit pairs
    int64_t n_pairs = 0;
    for (const auto& s : train_split.subjects) {
        std::vector<int> months;
        for (const auto& [m, v] : s.visits) {
            (void)v;
            months.push_back(m);
        }
        for (size_t i = 0; i < months.size(); ++i)
            for (size_t j = i + 1; j < months.size(); ++j) {
                ++n_pairs;
                const auto& a = s.visits.at(months[i]);
                const auto& b = s.visits.at(months[j]);
                for (int64_t r = 0; r < 68; ++r)
                    st.res_mean[static_cast<size_t>(r)] +=
                        b[static_cast<size_t>(r)] - a[static_cast<size_t>(r)];
            }
    }
    if (n_pairs < 2)
        throw std::invalid_argument("compute_normalization: need >= 2 visit pairs in training split");
    for (auto& m : st.res_mean) m /= static_cast<double>(n_pairs);
    for (const auto& s : train_split.subjects) {
        std::vector<int> months;
        for (const auto& [m, v] : s.visits) {
            (void)v;
            months.push_back(m);
        }
        for (size_t i = 0; i < months.size(); ++i)
            for (size_t j = i + 1; j < months.size(); ++j) {
                const auto& a = s.visits.at(months[i]);
                const auto& b = s.visits.at(months[j]);
                for (int64_t r = 0; r < 68; ++r) {
                    double d = b[static_cast<size_t>(r)] - a[static_cast<size_t>(r)] -
                               st.res_mean[static_cast<size_t>(r)];
                    st.res_std[static_cast<size_t>(r)] += d * d;
                }
            }
    }
    for (int64_t r = 0; r < 68; ++r) {
        st.res_std[static_cast<size_t>(r)] =
            std::sqrt(st.res_std[static_cast<size_t>(r)] / static_cast<double>(n_pairs - 1));
        if (!(st.cth_std[static_cast<size_t>(r)] > 0) || !(st.res_std[static_cast<size_t>(r)] > 0))
            throw std::runtime_error("compute_normalization: zero variance in roi_" +
                                     std::to_string(r + 1) +
                                     " (degenerate cohort specification)");
    }

    // age at the conditioning visit, over all training rows
    double asum = 0;
    for (const auto& s : train_split.subjects)
        for (const auto& [m, v] : s.visits) {
            (void)v;
            asum += s.age_bl + m / 12.0;
        }
    st.age_mean = asum / static_cast<double>(n_rows);
    double avar = 0;
    for (const auto& s : train_split.subjects)
        for (const auto& [m, v] : s.visits) {
            (void)v;
            double d = s.age_bl + m / 12.0 - st.age_mean;
            avar += d * d;
        }
    st.age_std = std::sqrt(avar / static_cast<double>(n_rows - 1));
    if (!(st.age_std > 0))
        throw std::runtime_error("compute_normalization: zero variance in age");
    return st;
}

std::pair<Cohort, Cohort> split_cohort(const Cohort& cohort, const CohortSpec& spec) {
    std::vector<const Subject*> order;
    for (const auto& s : cohort.subjects) order.push_back(&s);
    std::sort(order.begin(), order.end(),
              [](const Subject* a, const Subject* b) { return a->id < b->id; });
    Cohort train, test;
    for (const Subject* s : order) {
        if (s->complete() && static_cast<int>(test.subjects.size()) < spec.n_test)
            test.subjects.push_back(*s);
        else
            train.subjects.push_back(*s);
    }
    if (static_cast<int>(test.subjects.size()) < spec.n_test)
        throw std::runtime_error("split_cohort: only " + std::to_string(test.subjects.size()) +
                                 " complete-data subjects available for a testing split of " +
                                 std::to_string(spec.n_test));
    return {std::move(train), std::move(test)};
}

}  // namespace cth
