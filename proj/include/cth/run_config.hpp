#pragma once

#include <cstdint>
#include <string>

#include "cth/cohort.hpp"
#include "cth/diffusion.hpp"

#include "json.hpp"

namespace cth {

// One JSON document configuring the whole pipeline. Every field has a
// default; unknown keys are rejected; the fully-resolved document is echoed
// into each output directory so a run can be reproduced from its echo.
struct RunConfig {
    uint64_t seed = 42;
    int threads = 0;  // 0 = all available
    CohortSpec cohort;           // cohort.seed 0 -> derived from the root seed
    DiffusionConfig diffusion;
    ArchConfig arch;
    TrainHyper train;
    std::string pair_policy = "all_ordered";  // or "baseline_only"
    int sample_steps = 500;
    int realizations = 1;

    PairPolicy policy() const;
    // cohort spec with its seed resolved from the root seed when unset
    CohortSpec resolved_cohort() const;

    nlohmann::json to_json() const;
    static RunConfig from_json(const nlohmann::json& j);  // unknown keys rejected
};

// Reads the file when path is non-empty, else $CTH_CONFIG, else defaults.
RunConfig load_run_config(const std::string& path);

// Writes <dir>/effective_config.<tag>.json
void echo_effective_config(const RunConfig& cfg, const std::string& out_path,
                           const std::string& tag);

}  // namespace cth
