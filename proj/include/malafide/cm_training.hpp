#pragma once

#include <cstdint>
#include <filesystem>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "malafide/adam.hpp"
#include "malafide/detector.hpp"
#include "malafide/error.hpp"
#include "malafide/io.hpp"
#include "malafide/metrics.hpp"
#include "malafide/parallel.hpp"
#include "malafide/random.hpp"
#include "malafide/waveform.hpp"

namespace malafide {

struct TrainConfig {
    int epochs = 30;
    int batch_size = 16;
    AdamParams adam{3e-3, 0.9, 0.999, 1e-8, 0.0};
    std::uint64_t seed = 0;
    double eer_threshold = 0.05;
    double holdout_fraction = 0.25; ///< used only when no explicit dev split is given

    void validate() const {
        detail::require(epochs >= 1, "CM training epochs must be >= 1");
        detail::require(batch_size >= 1, "CM training batch size must be >= 1");
        detail::require(adam.learning_rate > 0.0, "CM learning rate must be positive");
        detail::require(holdout_fraction > 0.0 && holdout_fraction < 1.0, "holdout fraction must lie in (0, 1)");
    }
};

struct TrainResult {
    ToyCmModel model;
    std::vector<double> loss_history; ///< mean training loss per epoch
    double dev_eer = 1.0;
    double dev_threshold = 0.0;
    bool undertrained = true; ///< dev EER did not fall below the configured threshold
};

/// Held-out EER of a scorer on bona fide vs spoof scores.
inline EerResult scorer_eer(const DifferentiableScorer& scorer, std::span<const Waveform> bona,
                            std::span<const Waveform> spoof) {
    std::vector<double> pos(bona.size()), neg(spoof.size());
    parallel_for(bona.size(), [&](std::size_t i) { pos[i] = cm_score(scorer, bona[i]); });
    parallel_for(spoof.size(), [&](std::size_t i) { neg[i] = cm_score(scorer, spoof[i]); });
    return compute_eer(pos, neg);
}

/// Cross-entropy training with Adam on mini-batches in seeded order.
inline TrainResult train_cm(const CmArchitecture& arch, std::span<const Waveform> train_bona,
                            std::span<const Waveform> train_spoof, std::span<const Waveform> dev_bona,
                            std::span<const Waveform> dev_spoof, const TrainConfig& config, std::string scorer_id) {
    config.validate();
    detail::require(!train_bona.empty() && !train_spoof.empty(), "CM training needs both bona fide and spoof data");
    detail::require(!dev_bona.empty() && !dev_spoof.empty(), "CM development split needs both classes");
    const int sr = train_bona.front().sample_rate();

    auto model = ToyCmModel::initialize(arch, derive_seed(config.seed, "cm-init"), sr, std::move(scorer_id));
    std::vector<double> params(model.parameters().begin(), model.parameters().end());
    AdamState state(params.size());

    struct Example {
        const Waveform* audio;
        int label;
    };
    std::vector<Example> examples;
    for (const auto& w : train_bona)
        examples.push_back({&w, 1});
    for (const auto& w : train_spoof)
        examples.push_back({&w, 0});

    Rng order_rng(derive_seed(config.seed, "cm-order"));
    std::vector<double> history;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        order_rng.shuffle(examples.begin(), examples.end());
        double loss_sum = 0.0;
        for (std::size_t from = 0; from < examples.size(); from += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t to = std::min(examples.size(), from + static_cast<std::size_t>(config.batch_size));
            const std::size_t n = to - from;
            std::vector<std::vector<double>> grads(n, std::vector<double>(params.size(), 0.0));
            std::vector<double> losses(n);
            parallel_for(n, [&](std::size_t i) {
                const auto& ex = examples[from + i];
                losses[i] = model.loss_and_gradient(ex.audio->samples(), ex.label, grads[i]);
            });
            std::vector<double> grad(params.size(), 0.0);
            for (std::size_t i = 0; i < n; ++i) {
                loss_sum += losses[i];
                for (std::size_t k = 0; k < grad.size(); ++k)
                    grad[k] += grads[i][k] / static_cast<double>(n);
            }
            adam_step(params, grad, state, config.adam);
            model = model.with_parameters(params);
        }
        history.push_back(loss_sum / static_cast<double>(examples.size()));
    }

    const auto eer = scorer_eer(model, dev_bona, dev_spoof);
    return {std::move(model), std::move(history), eer.eer, eer.threshold, !(eer.eer < config.eer_threshold)};
}

/// Convenience form holding out the tail of each class for development.
inline TrainResult train_cm(const CmArchitecture& arch, std::span<const Waveform> bona, std::span<const Waveform> spoof,
                            const TrainConfig& config, std::string scorer_id) {
    config.validate();
    auto split = [&](std::span<const Waveform> all) {
        const auto held = std::max<std::size_t>(1, static_cast<std::size_t>(config.holdout_fraction * all.size()));
        detail::require(all.size() > held, "too few utterances to hold out a development split");
        return std::pair{all.first(all.size() - held), all.last(held)};
    };
    const auto [tb, db] = split(bona);
    const auto [ts, ds] = split(spoof);
    return train_cm(arch, tb, ts, db, ds, config, std::move(scorer_id));
}

inline std::string model_to_json(const ToyCmModel& model) {
    const auto& a = model.architecture();
    const auto& l = model.layout();
    const auto p = model.parameters();
    auto slice = [&](std::size_t from, std::size_t to) { return format_array(p.subspan(from, to - from)); };
    std::string out = "{\n";
    out += "  \"format_version\": " + std::to_string(kFormatVersion) + ",\n";
    out += "  \"scorer_id\": " + json_quote(model.scorer_id()) + ",\n";
    out += "  \"sample_rate\": " + std::to_string(model.sample_rate()) + ",\n";
    out += "  \"architecture\": {\"input_length\": " + std::to_string(a.input_length) +
           ", \"conv1_channels\": " + std::to_string(a.conv1_channels) +
           ", \"conv1_kernel\": " + std::to_string(a.conv1_kernel) +
           ", \"conv1_stride\": " + std::to_string(a.conv1_stride) + ", \"pool\": " + std::to_string(a.pool) +
           ", \"conv2_channels\": " + std::to_string(a.conv2_channels) +
           ", \"conv2_kernel\": " + std::to_string(a.conv2_kernel) +
           ", \"conv2_stride\": " + std::to_string(a.conv2_stride) + "},\n";
    out += "  \"weights\": {\n";
    out += "    \"conv1.weight\": " + slice(l.w1, l.b1) + ",\n";
    out += "    \"conv1.bias\": " + slice(l.b1, l.w2) + ",\n";
    out += "    \"conv2.weight\": " + slice(l.w2, l.b2) + ",\n";
    out += "    \"conv2.bias\": " + slice(l.b2, l.w3) + ",\n";
    out += "    \"linear.weight\": " + slice(l.w3, l.b3) + ",\n";
    out += "    \"linear.bias\": " + slice(l.b3, l.total) + "\n";
    out += "  }\n}\n";
    return out;
}

inline ToyCmModel model_from_json(const nlohmann::json& j) {
    try {
        detail::require(j.at("format_version").get<int>() == kFormatVersion, "unsupported model format_version");
        const auto& ja = j.at("architecture");
        CmArchitecture a;
        a.input_length = ja.at("input_length").get<int>();
        a.conv1_channels = ja.at("conv1_channels").get<int>();
        a.conv1_kernel = ja.at("conv1_kernel").get<int>();
        a.conv1_stride = ja.at("conv1_stride").get<int>();
        a.pool = ja.at("pool").get<int>();
        a.conv2_channels = ja.at("conv2_channels").get<int>();
        a.conv2_kernel = ja.at("conv2_kernel").get<int>();
        a.conv2_stride = ja.at("conv2_stride").get<int>();
        a.validate();
        const auto& w = j.at("weights");
        std::vector<double> p;
        for (const char* name :
             {"conv1.weight", "conv1.bias", "conv2.weight", "conv2.bias", "linear.weight", "linear.bias"}) {
            const auto part = w.at(name).get<std::vector<double>>();
            p.insert(p.end(), part.begin(), part.end());
        }
        return ToyCmModel(a, std::move(p), j.at("sample_rate").get<int>(), j.at("scorer_id").get<std::string>());
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed model file: ") + e.what());
    }
}

inline void save_model(const std::filesystem::path& path, const ToyCmModel& model) {
    write_file_atomic(path, model_to_json(model));
}

inline ToyCmModel load_model(const std::filesystem::path& path) {
    try {
        return model_from_json(read_json(path));
    } catch (const ValidationError& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
}

} // namespace malafide
