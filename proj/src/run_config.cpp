#include "cth/run_config.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>

namespace cth {

namespace {

void check_unknown_keys(const nlohmann::json& defaults, const nlohmann::json& given,
                        const std::string& path) {
    if (!given.is_object()) return;
    for (auto it = given.begin(); it != given.end(); ++it) {
        const std::string where = path.empty() ? it.key() : path + "." + it.key();
        if (!defaults.contains(it.key()))
            throw std::invalid_argument("config: unknown key '" + where + "'");
        if (defaults.at(it.key()).is_object())
            check_unknown_keys(defaults.at(it.key()), it.value(), where);
    }
}

template <typename T>
void merge_field(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

nlohmann::json merged(const nlohmann::json& defaults, const nlohmann::json& given) {
    nlohmann::json out = defaults;
    out.merge_patch(given);
    return out;
}

}  // namespace

PairPolicy RunConfig::policy() const {
    if (pair_policy == "all_ordered") return PairPolicy::kAllOrdered;
    if (pair_policy == "baseline_only") return PairPolicy::kBaselineOnly;
    throw std::invalid_argument("config: pair_policy must be 'all_ordered' or 'baseline_only'");
}

CohortSpec RunConfig::resolved_cohort() const {
    CohortSpec s = cohort;
    if (s.seed == 0) s.seed = substream(seed, "data");
    return s;
}

nlohmann::json RunConfig::to_json() const {
    return {{"seed", seed},
            {"threads", threads},
            {"cohort", cohort.to_json()},
            {"diffusion", diffusion.to_json()},
            {"arch", arch.to_json()},
            {"train", train.to_json()},
            {"pair_policy", pair_policy},
            {"sample_steps", sample_steps},
            {"realizations", realizations}};
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
    const nlohmann::json defaults = RunConfig{}.to_json();
    check_unknown_keys(defaults, j, "");
    const nlohmann::json full = merged(defaults, j);
    RunConfig c;
    c.seed = full.at("seed").get<uint64_t>();
    c.threads = full.at("threads").get<int>();
    c.cohort = CohortSpec::from_json(full.at("cohort"));
    c.diffusion = DiffusionConfig::from_json(full.at("diffusion"));
    c.arch = ArchConfig::from_json(full.at("arch"));
    c.train = TrainHyper::from_json(full.at("train"));
    c.pair_policy = full.at("pair_policy").get<std::string>();
    c.sample_steps = full.at("sample_steps").get<int>();
    c.realizations = full.at("realizations").get<int>();
    (void)c.policy();  // validate
    return c;
}

RunConfig load_run_config(const std::string& path) {
    std::string p = path;
    if (p.empty())
        if (const char* env = std::getenv("CTH_CONFIG")) p = env;
    if (p.empty()) return RunConfig{};
    std::ifstream is(p);
    if (!is) throw std::runtime_error("config: cannot open '" + p + "'");
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("config: '" + p + "' is not valid JSON: " + e.what());
    }
    return RunConfig::from_json(j);
}

void echo_effective_config(const RunConfig& cfg, const std::string& out_path,
                           const std::string& tag) {
    namespace fs = std::filesystem;
    fs::path dir = fs::path(out_path).parent_path();
    if (dir.empty()) dir = ".";
    RunConfig resolved = cfg;
    resolved.cohort = cfg.resolved_cohort();
    const fs::path echo = dir / ("effective_config." + tag + ".json");
    std::ofstream os(echo);
    if (!os) throw std::runtime_error("config: cannot write '" + echo.string() + "'");
    os << resolved.to_json().dump(2) << "\n";
}

}  // namespace cth
