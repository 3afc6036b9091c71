#pragma once

#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "cth/rng.hpp"
#include "cth/tape.hpp"
#include "cth/tensor.hpp"

#include "json.hpp"

namespace cth {

// 1D U-net over length-68 signals: three resolution levels at widths
// {W, 2W, 4W}, stride-2 conv downsampling, nearest-neighbour upsampling with
// skip concatenation, optional bottleneck self-attention, optional FiLM
// conditioning from a noise-level embedding (embed_dim 0 disables it, which
// is how the deterministic regression variants are built).
struct ArchConfig {
    int64_t length = 68;
    int64_t in_channels = 8;
    int64_t base_width = 16;
    int64_t embed_dim = 64;
    bool attention = true;
    int64_t groups = 8;

    bool operator==(const ArchConfig&) const = default;

    nlohmann::json to_json() const {
        return {{"length", length},       {"in_channels", in_channels},
                {"base_width", base_width}, {"embed_dim", embed_dim},
                {"attention", attention}, {"groups", groups}};
    }
    static ArchConfig from_json(const nlohmann::json& j) {
        ArchConfig a;
        a.length = j.at("length").get<int64_t>();
        a.in_channels = j.at("in_channels").get<int64_t>();
        a.base_width = j.at("base_width").get<int64_t>();
        a.embed_dim = j.at("embed_dim").get<int64_t>();
        a.attention = j.at("attention").get<bool>();
        a.groups = j.at("groups").get<int64_t>();
        return a;
    }
};

template <typename T>
struct ParamStore {
    std::vector<std::string> names;
    std::vector<Tensor<T>> tensors;
    std::unordered_map<std::string, size_t> index;

    Tensor<T>& add(const std::string& name, Shape shape) {
        if (index.count(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
        index[name] = names.size();
        names.push_back(name);
        tensors.emplace_back(std::move(shape));
        return tensors.back();
    }
    bool has(const std::string& name) const { return index.count(name) != 0; }
    Tensor<T>& at(const std::string& name) {
        auto it = index.find(name);
        if (it == index.end()) throw std::out_of_range("unknown parameter '" + name + "'");
        return tensors[it->second];
    }
    const Tensor<T>& at(const std::string& name) const {
        auto it = index.find(name);
        if (it == index.end()) throw std::out_of_range("unknown parameter '" + name + "'");
        return tensors[it->second];
    }
    size_t size() const { return names.size(); }
    int64_t total_values() const {
        int64_t n = 0;
        for (const auto& t : tensors) n += t.numel();
        return n;
    }
    template <typename U>
    ParamStore<U> cast() const {
        ParamStore<U> out;
        out.names = names;
        out.index = index;
        for (const auto& t : tensors) out.tensors.push_back(t.template cast<U>());
        return out;
    }
};

inline int64_t norm_groups_for(int64_t channels, int64_t requested) {
    int64_t g = std::min<int64_t>(requested, channels);
    while (g > 1 && channels % g != 0) --g;
    return g;
}

inline int64_t down_len(int64_t l) { return (l + 2 - 3) / 2 + 1; }  // stride-2 K=3 pad=1

namespace detail {

template <typename T>
void add_conv(ParamStore<T>& p, const std::string& name, int64_t co, int64_t ci, int64_t k,
              Rng* rng) {
    Tensor<T>& w = p.add(name + ".w", {co, ci, k});
    p.add(name + ".b", {co});
    if (rng) {
        const double std = 1.0 / std::sqrt(static_cast<double>(ci * k));
        for (int64_t i = 0; i < w.numel(); ++i) w[i] = static_cast<T>(rng->normal(0.0, std));
    }
}

template <typename T>
void add_linear(ParamStore<T>& p, const std::string& name, int64_t fo, int64_t fi, Rng* rng) {
    Tensor<T>& w = p.add(name + ".w", {fo, fi});
    p.add(name + ".b", {fo});
    if (rng) {
        const double std = 1.0 / std::sqrt(static_cast<double>(fi));
        for (int64_t i = 0; i < w.numel(); ++i) w[i] = static_cast<T>(rng->normal(0.0, std));
    }
}

template <typename T>
void add_norm(ParamStore<T>& p, const std::string& name, int64_t c) {
    Tensor<T>& g = p.add(name + ".g", {c});
    p.add(name + ".b", {c});
    std::fill(g.data.begin(), g.data.end(), T(1));
}

template <typename T>
void add_resblock(ParamStore<T>& p, const std::string& name, int64_t c, int64_t embed, Rng* rng) {
    add_norm(p, name + ".gn", c);
    if (embed > 0) add_linear<T>(p, name + ".film", 2 * c, embed, nullptr);  // zero-init
    add_conv(p, name + ".conv", c, c, 3, rng);
}

}  // namespace detail

// Parameter construction order is fixed; checkpoints serialize in this order.
template <typename T>
ParamStore<T> init_unet_params(const ArchConfig& cfg, Rng& rng) {
    using namespace detail;
    if (cfg.base_width < 2) throw std::invalid_argument("base_width must be >= 2");
    const int64_t w = cfg.base_width;
    ParamStore<T> p;
    if (cfg.embed_dim > 0) {
        add_linear<T>(p, "emb.fc1", cfg.embed_dim, 1, &rng);
        add_linear<T>(p, "emb.fc2", cfg.embed_dim, cfg.embed_dim, &rng);
    }
    add_conv<T>(p, "stem", w, cfg.in_channels, 3, &rng);
    add_resblock<T>(p, "enc1", w, cfg.embed_dim, &rng);
    add_conv<T>(p, "down1", 2 * w, w, 3, &rng);
    add_resblock<T>(p, "enc2", 2 * w, cfg.embed_dim, &rng);
    add_conv<T>(p, "down2", 4 * w, 2 * w, 3, &rng);
    add_resblock<T>(p, "mid", 4 * w, cfg.embed_dim, &rng);
    if (cfg.attention) {
        add_norm<T>(p, "attn.gn", 4 * w);
        const double std = 1.0 / std::sqrt(static_cast<double>(4 * w));
        for (const char* n : {"attn.wq", "attn.wk", "attn.wv"}) {
            Tensor<T>& m = p.add(n, {4 * w, 4 * w});
            for (int64_t i = 0; i < m.numel(); ++i) m[i] = static_cast<T>(rng.normal(0.0, std));
        }
        p.add("attn.wo", {4 * w, 4 * w});  // zero-init: attention starts as identity
    }
    add_conv<T>(p, "up1", 2 * w, 4 * w, 3, &rng);
    add_conv<T>(p, "merge1", 2 * w, 4 * w, 1, &rng);
    add_conv<T>(p, "up2", w, 2 * w, 3, &rng);
    add_conv<T>(p, "merge2", w, 2 * w, 1, &rng);
    add_norm<T>(p, "head.gn", w);
    add_conv<T>(p, "head", 1, w, 3, nullptr);  // zero-init: untrained net outputs 0
    return p;
}

template <typename T>
struct Planted {
    std::vector<typename Tape<T>::Id> ids;  // aligned with ParamStore order
};

template <typename T>
Planted<T> plant_params(Tape<T>& tape, const ParamStore<T>& store, bool requires_grad) {
    Planted<T> out;
    out.ids.reserve(store.size());
    for (const auto& t : store.tensors) out.ids.push_back(tape.leaf(t, requires_grad));
    return out;
}

// Network output F for input [B,Cin,L] (or [Cin,L]) and, when embed_dim > 0,
// an embedding input [B,1] of c_noise values.
template <typename T>
typename Tape<T>::Id unet_forward(Tape<T>& tape, const ParamStore<T>& store,
                                  const Planted<T>& planted, const ArchConfig& cfg,
                                  typename Tape<T>::Id input, typename Tape<T>::Id embed_in) {
    using Id = typename Tape<T>::Id;
    auto pid = [&](const std::string& name) -> Id {
        auto it = store.index.find(name);
        if (it == store.index.end()) throw std::out_of_range("unet_forward: missing '" + name + "'");
        return planted.ids[it->second];
    };
    const bool conditioned = cfg.embed_dim > 0;
    if (conditioned && embed_in < 0)
        throw std::invalid_argument("unet_forward: embedding input required by this architecture");

    Id emb = -1;
    if (conditioned) {
        emb = tape.silu(tape.linear(embed_in, pid("emb.fc1.w"), pid("emb.fc1.b")));
        emb = tape.silu(tape.linear(emb, pid("emb.fc2.w"), pid("emb.fc2.b")));
    }
    const T eps = static_cast<T>(1e-5);
    auto resblock = [&](Id x, const std::string& name, int64_t c) -> Id {
        Id h = tape.group_norm(x, norm_groups_for(c, cfg.groups), pid(name + ".gn.g"),
                               pid(name + ".gn.b"), eps);
        if (conditioned) {
            Id ss = tape.linear(emb, pid(name + ".film.w"), pid(name + ".film.b"));
            h = tape.film(h, ss);
        }
        h = tape.conv1d(tape.silu(h), pid(name + ".conv.w"), pid(name + ".conv.b"), 1, 1);
        return tape.add(x, h);
    };

    const int64_t w = cfg.base_width;
    const int64_t l1 = cfg.length, l2 = down_len(l1);

    Id h = tape.conv1d(input, pid("stem.w"), pid("stem.b"), 1, 1);
    Id skip1 = resblock(h, "enc1", w);
    h = tape.conv1d(skip1, pid("down1.w"), pid("down1.b"), 2, 1);
    Id skip2 = resblock(h, "enc2", 2 * w);
    h = tape.conv1d(skip2, pid("down2.w"), pid("down2.b"), 2, 1);
    h = resblock(h, "mid", 4 * w);
    if (cfg.attention) {
        Id a = tape.group_norm(h, norm_groups_for(4 * w, cfg.groups), pid("attn.gn.g"),
                               pid("attn.gn.b"), eps);
        a = tape.self_attention(a, pid("attn.wq"), pid("attn.wk"), pid("attn.wv"), pid("attn.wo"));
        h = tape.add(h, a);
    }
    h = tape.conv1d(tape.upsample_nearest(h, l2), pid("up1.w"), pid("up1.b"), 1, 1);
    h = tape.conv1d(tape.concat_channels(h, skip2), pid("merge1.w"), pid("merge1.b"), 1, 0);
    h = tape.conv1d(tape.upsample_nearest(h, l1), pid("up2.w"), pid("up2.b"), 1, 1);
    h = tape.conv1d(tape.concat_channels(h, skip1), pid("merge2.w"), pid("merge2.b"), 1, 0);
    h = tape.group_norm(h, norm_groups_for(w, cfg.groups), pid("head.gn.g"), pid("head.gn.b"),
                        eps);
    return tape.conv1d(tape.silu(h), pid("head.w"), pid("head.b"), 1, 1);
}

}  // namespace cth
