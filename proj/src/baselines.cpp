#include "cth/baselines.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>

#include "cth/adam.hpp"
#include "cth/parallel.hpp"

namespace cth {

Tensor<float> DeterministicModel::forward(const Tensor<float>& cond) const {
    Tape<float> tape;
    Planted<float> planted = plant_params(tape, params, false);
    auto out = unet_forward(tape, params, planted, arch, tape.constant(cond), -1);
    return tape.val(out);
}

DeterministicModel train_deterministic(BaselineKind kind, const Cohort& train_split,
                                       const BaselineTrainOptions& opt) {
    if (train_split.subjects.empty())
        throw std::invalid_argument("train_deterministic: empty training cohort");
    if (opt.hyper.epochs < 1)
        throw std::invalid_argument("train_deterministic: epochs must be >= 1");

    ArchConfig arch = opt.arch;
    arch.in_channels = kCondChannels;
    arch.length = kNumRois;
    arch.embed_dim = 0;
    arch.attention = kind == BaselineKind::kUnetAttention;

    const NormalizationStats stats = compute_normalization(train_split);
    std::vector<TrainingPair> pairs = build_training_pairs(train_split, stats, opt.policy);
    if (pairs.empty())
        throw std::invalid_argument("train_deterministic: no usable visit pairs");

    Rng rng_init(substream(opt.seed, "init"));
    ParamStore<float> params = init_unet_params<float>(arch, rng_init);
    AdamState<float> adam = AdamState<float>::like(params.tensors);
    AdamConfig adam_cfg;
    adam_cfg.lr = opt.hyper.lr;

    std::ofstream log;
    if (!opt.loss_log_path.empty()) {
        log.open(opt.loss_log_path, std::ios::trunc);
        if (!log)
            throw std::runtime_error("train_deterministic: cannot open loss log '" +
                                     opt.loss_log_path + "'");
        log << "epoch,step,loss,sigma_mean,wallclock_ms\n";
    }

    // cache encoded conditions and targets once
    std::vector<Tensor<float>> conds;
    conds.reserve(pairs.size());
    for (const auto& p : pairs) conds.push_back(encode_condition(p.cond, stats).cast<float>());

    Rng rng_train(substream(opt.seed, "train"));
    std::vector<size_t> order(pairs.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    const auto t0 = std::chrono::steady_clock::now();
    int64_t step = 0;
    for (int epoch = 1; epoch <= opt.hyper.epochs; ++epoch) {
        rng_train.shuffle(order);
        for (size_t at = 0; at < order.size(); at += static_cast<size_t>(opt.hyper.batch_size)) {
            const size_t end =
                std::min(order.size(), at + static_cast<size_t>(opt.hyper.batch_size));
            const int64_t B = static_cast<int64_t>(end - at);
            Tensor<float> input({B, kCondChannels, kNumRois});
            Tensor<float> target({B, 1, kNumRois});
            for (int64_t b = 0; b < B; ++b) {
                const size_t pi = order[at + static_cast<size_t>(b)];
                const Tensor<float>& ct = conds[pi];
                for (int64_t c = 0; c < kCondChannels; ++c)
                    for (int64_t r = 0; r < kNumRois; ++r) input.at(b, c, r) = ct.at(c, r);
                for (int64_t r = 0; r < kNumRois; ++r)
                    target.at(b, 0, r) = static_cast<float>(pairs[pi].x0[static_cast<size_t>(r)]);
            }
            Tape<float> tape;
            Planted<float> planted = plant_params(tape, params, true);
            auto out = unet_forward(tape, params, planted, arch, tape.constant(std::move(input)), -1);
            auto loss = tape.weighted_sq_loss(out, target, std::vector<float>(static_cast<size_t>(B), 1.0f));
            const double loss_v = static_cast<double>(tape.val(loss)[0]);
            if (!std::isfinite(loss_v))
                throw std::runtime_error("train_deterministic: non-finite loss at step " +
                                         std::to_string(step + 1));
            tape.backward_scalar(loss);
            std::vector<Tensor<float>> grads;
            grads.reserve(params.size());
            for (auto id : planted.ids) grads.push_back(tape.grad(id));
            adam_step(params.tensors, grads, params.names, adam, adam_cfg);
            ++step;
            if (log) {
                const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                                    std::chrono::steady_clock::now() - t0)
                                    .count();
                log << epoch << "," << step << "," << loss_v << ",0," << ms << "\n";
            }
        }
    }

    DeterministicModel model;
    model.kind = kind;
    model.arch = arch;
    model.params = std::move(params);
    model.stats = stats;
    return model;
}

std::vector<Prediction> predict_deterministic(const DeterministicModel& model,
                                              const Cohort& subjects,
                                              const std::vector<int>& months) {
    std::vector<int> ms = months;
    std::sort(ms.begin(), ms.end());
    ms.erase(std::unique(ms.begin(), ms.end()), ms.end());
    if (ms.empty()) throw std::invalid_argument("predict_deterministic: no target months");
    for (int m : ms)
        if (m <= 0)
            throw std::invalid_argument("predict_deterministic: target months must be > 0");

    std::vector<const Subject*> order;
    for (const auto& s : subjects.subjects) {
        if (!s.visits.count(0))
            throw std::invalid_argument("predict_deterministic: subject '" + s.id +
                                        "' has no baseline visit");
        order.push_back(&s);
    }
    std::sort(order.begin(), order.end(),
              [](const Subject* a, const Subject* b) { return a->id < b->id; });

    const int64_t S = static_cast<int64_t>(order.size());
    const int64_t M = static_cast<int64_t>(ms.size());
    std::vector<Prediction> out(static_cast<size_t>(S * M));
    parallel_for(S * M, [&](int64_t task) {
        const int64_t si = task / M, mi = task % M;
        const Subject& s = *order[static_cast<size_t>(si)];
        ConditionRaw raw;
        raw.baseline_cth = s.visits.at(0);
        raw.age = s.age_bl;
        raw.sex = s.sex;
        raw.dx = s.dx_by_visit.at(0);
        raw.delta_months = ms[static_cast<size_t>(mi)];
        const Tensor<float> cond = encode_condition(raw, model.stats).cast<float>();
        const Tensor<float> res = model.forward(cond);
        Prediction& p = out[static_cast<size_t>(task)];
        p.subject_id = s.id;
        p.month = ms[static_cast<size_t>(mi)];
        p.realization = 0;
        const auto& bl = s.visits.at(0);
        for (int64_t r = 0; r < kNumRois; ++r)
            p.cth[static_cast<size_t>(r)] =
                bl[static_cast<size_t>(r)] +
                static_cast<double>(res[r]) * model.stats.res_std[static_cast<size_t>(r)] +
                model.stats.res_mean[static_cast<size_t>(r)];
    });
    return out;
}

}  // namespace cth
