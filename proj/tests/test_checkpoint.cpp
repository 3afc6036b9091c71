#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "cth/checkpoint.hpp"

using namespace cth;

namespace {

std::string tmp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

std::string slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

CheckpointMeta sample_meta() {
    CheckpointMeta m;
    m.kind = "diffusion";
    m.arch = ArchConfig{};
    m.stats.cth_mean.assign(68, 2.5);
    m.stats.cth_std.assign(68, 0.31);
    m.stats.res_mean.assign(68, -0.047);
    m.stats.res_std.assign(68, 0.083);
    m.stats.age_mean = 73.2;
    m.stats.age_std = 6.9;
    m.sigma_data = 1.0123456789;
    m.training = {{"epochs", 8}, {"lr", 0.001}};
    m.seed = 0xDEADBEEFull;
    return m;
}

}  // namespace

TEST_CASE("checkpoint round-trip is bit-exact") {
    Rng rng(30);
    ArchConfig arch;
    arch.base_width = 8;
    ParamStore<float> params = init_unet_params<float>(arch, rng);

    const std::string p1 = tmp_path("cth_ckpt_a.bin"), p2 = tmp_path("cth_ckpt_b.bin");
    CheckpointMeta meta = sample_meta();
    meta.arch = arch;
    save_checkpoint(p1, meta, params);
    LoadedCheckpoint lc = load_checkpoint(p1);
    save_checkpoint(p2, lc.meta, lc.params);
    CHECK(slurp(p1) == slurp(p2));

    CHECK(lc.meta.kind == "diffusion");
    CHECK(lc.meta.seed == 0xDEADBEEFull);
    CHECK(lc.meta.sigma_data == 1.0123456789);
    CHECK(lc.meta.arch == arch);
    REQUIRE(lc.params.size() == params.size());
    for (size_t i = 0; i < params.size(); ++i) {
        CHECK(lc.params.names[i] == params.names[i]);
        CHECK(lc.params.tensors[i].shape == params.tensors[i].shape);
        CHECK(lc.params.tensors[i].data == params.tensors[i].data);
    }
    std::remove(p1.c_str());
    std::remove(p2.c_str());
}

TEST_CASE("checkpoint: bad magic and truncation are rejected") {
    const std::string p = tmp_path("cth_ckpt_bad.bin");
    {
        std::ofstream os(p, std::ios::binary);
        os << "NOPE";
    }
    CHECK_THROWS_WITH_AS(load_checkpoint(p), doctest::Contains("magic"), std::runtime_error);

    Rng rng(31);
    ArchConfig arch;
    arch.base_width = 4;
    save_checkpoint(p, sample_meta(), init_unet_params<float>(arch, rng));
    const std::string full = slurp(p);
    {
        std::ofstream os(p, std::ios::binary | std::ios::trunc);
        os.write(full.data(), static_cast<std::streamsize>(full.size() / 2));
    }
    CHECK_THROWS_WITH_AS(load_checkpoint(p), doctest::Contains("truncated"), std::runtime_error);
    std::remove(p.c_str());
}

TEST_CASE("checkpoint: missing file error names the path") {
    CHECK_THROWS_WITH_AS(load_checkpoint("/nonexistent/nowhere.ckpt"),
                         doctest::Contains("nowhere.ckpt"), std::runtime_error);
}
