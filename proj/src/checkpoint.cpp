#include "cth/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace cth {

namespace {

void put_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::istream& is, const char* what) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4))
        throw std::runtime_error(std::string("checkpoint: truncated while reading ") + what);
    return static_cast<uint32_t>(b[0]) | static_cast<uint32_t>(b[1]) << 8 |
           static_cast<uint32_t>(b[2]) << 16 | static_cast<uint32_t>(b[3]) << 24;
}

nlohmann::json meta_to_json(const CheckpointMeta& m) {
    return {{"kind", m.kind},
            {"arch", m.arch.to_json()},
            {"normalization", m.stats.to_json()},
            {"sigma_data", m.sigma_data},
            {"training", m.training},
            {"seed", m.seed}};
}

CheckpointMeta meta_from_json(const nlohmann::json& j) {
    CheckpointMeta m;
    m.kind = j.at("kind").get<std::string>();
    m.arch = ArchConfig::from_json(j.at("arch"));
    m.stats = NormalizationStats::from_json(j.at("normalization"));
    m.sigma_data = j.at("sigma_data").get<double>();
    m.training = j.at("training");
    m.seed = j.at("seed").get<uint64_t>();
    return m;
}

}  // namespace

void save_checkpoint(const std::string& path, const CheckpointMeta& meta,
                     const ParamStore<float>& params) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
    os.write("CTHD", 4);
    put_u32(os, kCheckpointVersion);
    const std::string header = meta_to_json(meta).dump();
    put_u32(os, static_cast<uint32_t>(header.size()));
    os.write(header.data(), static_cast<std::streamsize>(header.size()));
    put_u32(os, static_cast<uint32_t>(params.size()));
    for (size_t p = 0; p < params.size(); ++p) {
        const std::string& name = params.names[p];
        const Tensor<float>& t = params.tensors[p];
        put_u32(os, static_cast<uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        put_u32(os, static_cast<uint32_t>(t.shape.size()));
        for (int64_t d : t.shape) put_u32(os, static_cast<uint32_t>(d));
        os.write(reinterpret_cast<const char*>(t.ptr()),
                 static_cast<std::streamsize>(sizeof(float) * t.data.size()));
    }
    if (!os) throw std::runtime_error("checkpoint: write failed for '" + path + "'");
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "CTHD", 4) != 0)
        throw std::runtime_error("checkpoint: bad magic in '" + path + "'");
    const uint32_t version = get_u32(is, "version");
    if (version != kCheckpointVersion)
        throw std::runtime_error("checkpoint: unsupported format version " +
                                 std::to_string(version));
    const uint32_t hlen = get_u32(is, "header length");
    std::string header(hlen, '\0');
    if (!is.read(header.data(), hlen))
        throw std::runtime_error("checkpoint: truncated header");
    LoadedCheckpoint out;
    out.meta = meta_from_json(nlohmann::json::parse(header));
    const uint32_t n = get_u32(is, "parameter count");
    for (uint32_t p = 0; p < n; ++p) {
        const uint32_t nlen = get_u32(is, "name length");
        std::string name(nlen, '\0');
        if (!is.read(name.data(), nlen)) throw std::runtime_error("checkpoint: truncated name");
        const uint32_t ndim = get_u32(is, "rank");
        Shape shape(ndim);
        for (uint32_t d = 0; d < ndim; ++d)
            shape[d] = static_cast<int64_t>(get_u32(is, "dimension"));
        Tensor<float>& t = out.params.add(name, shape);
        if (!is.read(reinterpret_cast<char*>(t.ptr()),
                     static_cast<std::streamsize>(sizeof(float) * t.data.size())))
            throw std::runtime_error("checkpoint: truncated data for '" + name + "'");
    }
    return out;
}

}  // namespace cth
