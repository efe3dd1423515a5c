#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "malafide/adam.hpp"
#include "malafide/convolution.hpp"
#include "malafide/detector.hpp"
#include "malafide/error.hpp"
#include "malafide/filter.hpp"
#include "malafide/metrics.hpp"
#include "malafide/parallel.hpp"
#include "malafide/random.hpp"
#include "malafide/waveform.hpp"

namespace malafide {

struct AttackConfig {
    int filter_length = 257;
    int epochs = 15;
    int batch_size = 14;
    AdamParams adam{1e-3, 0.9, 0.999, 1e-8, 1e-4};
    std::uint64_t seed = 0;

    void validate() const {
        detail::require(filter_length >= 3 && filter_length % 2 == 1,
                        "filter length must be odd and >= 3, got " + std::to_string(filter_length));
        detail::require(epochs >= 1, "epochs must be >= 1, got " + std::to_string(epochs));
        detail::require(batch_size >= 1, "batch size must be >= 1, got " + std::to_string(batch_size));
        detail::require(adam.learning_rate > 0.0, "learning rate must be positive");
        detail::require(adam.weight_decay >= 0.0, "weight decay must be non-negative");
    }
};

namespace detail {

/// Uniform(-sqrt(3/L), +sqrt(3/L)) taps with the center pinned to 1. Any odd length.
inline MalafideFilter he_uniform_filter(int length, std::uint64_t seed, int sample_rate, std::string attack_id,
                                        std::string scorer_id) {
    require(length > 0 && length % 2 == 1, "filter length must be odd, got " + std::to_string(length));
    Rng rng(seed);
    const double bound = std::sqrt(3.0 / length);
    std::vector<double> c(static_cast<std::size_t>(length));
    for (double& v : c)
        v = rng.uniform(-bound, bound);
    project_dirac_inplace(c);
    return MalafideFilter(std::move(c), sample_rate, std::move(attack_id), std::move(scorer_id));
}

} // namespace detail

/// He initialization resembling a convolutive identity. Catalog lengths only.
inline MalafideFilter he_init_filter(int length, std::uint64_t seed, int sample_rate = kDefaultSampleRate,
                                     std::string attack_id = {}, std::string scorer_id = {}) {
    require_catalog_length(length);
    return detail::he_uniform_filter(length, seed, sample_rate, std::move(attack_id), std::move(scorer_id));
}

struct ObjectiveAndGradient {
    double objective = 0.0;            ///< sum of filtered CM scores over the batch
    std::vector<double> gradient;      ///< d(objective)/d(tap), length L
    std::vector<double> scores;        ///< per-utterance filtered scores
};

/// Objective sum_i CM(s_i * m) and its gradient with respect to the filter taps.
/// Per-utterance terms are computed independently and reduced in batch order.
inline ObjectiveAndGradient objective_and_gradient(const DifferentiableScorer& scorer, const MalafideFilter& filter,
                                                   std::span<const Waveform> batch) {
    detail::require(!batch.empty(), "objective needs a non-empty batch");
    for (const auto& s : batch)
        detail::require(s.sample_rate() == filter.sample_rate() && s.sample_rate() == scorer.sample_rate(),
                        "sample rate mismatch between batch, filter and scorer");
    const auto half = static_cast<std::size_t>(filter.center());
    std::vector<std::vector<double>> grads(batch.size());
    std::vector<double> scores(batch.size());
    parallel_for(batch.size(), [&](std::size_t i) {
        const auto filtered = convolve_same(batch[i].samples(), filter.coefficients());
        auto sg = scorer.score_and_gradient(filtered);
        scores[i] = sg.logits.score();
        grads[i] = correlate_lags(sg.gradient, batch[i].samples(), half);
    });
    ObjectiveAndGradient out;
    out.gradient.assign(static_cast<std::size_t>(filter.length()), 0.0);
    for (std::size_t i = 0; i < batch.size(); ++i) {
        out.objective += scores[i];
        for (std::size_t k = 0; k < out.gradient.size(); ++k)
            out.gradient[k] += grads[i][k];
    }
    out.scores = std::move(scores);
    return out;
}

inline double objective(const DifferentiableScorer& scorer, const MalafideFilter& filter,
                        std::span<const Waveform> batch) {
    detail::require(!batch.empty(), "objective needs a non-empty batch");
    std::vector<double> scores(batch.size());
    parallel_for(batch.size(), [&](std::size_t i) { scores[i] = cm_score(scorer, convolve_same(batch[i], filter)); });
    return std::accumulate(scores.begin(), scores.end(), 0.0);
}

inline std::vector<double> filter_gradient(const DifferentiableScorer& scorer, const MalafideFilter& filter,
                                           std::span<const Waveform> batch) {
    return objective_and_gradient(scorer, filter, batch).gradient;
}

/// Ascent step on the objective, run as Adam descent on its negation, followed
/// by the Dirac projection.
inline std::pair<MalafideFilter, AdamState> adam_step(const MalafideFilter& filter,
                                                      std::span<const double> objective_gradient, AdamState state,
                                                      const AttackConfig& config) {
    detail::require(objective_gradient.size() == static_cast<std::size_t>(filter.length()),
                    "gradient length does not match filter length");
    std::vector<double> descent(objective_gradient.size());
    for (std::size_t i = 0; i < descent.size(); ++i)
        descent[i] = -objective_gradient[i];
    std::vector<double> c(filter.coefficients().begin(), filter.coefficients().end());
    if (state.first_moment.empty())
        state = AdamState(c.size());
    malafide::adam_step(c, descent, state, config.adam);
    project_dirac_inplace(c);
    return {filter.with_coefficients(std::move(c)), std::move(state)};
}

struct EpochRecord {
    int epoch = 0;
    double mean_objective = 0.0;     ///< mean filtered score over the epoch's batches, before each update
    double part1_success_rate = 0.0; ///< end-of-epoch filter on all Part-1 spoofs
};

struct OptimizationReport {
    std::string attack_id;
    std::string scorer_id;
    int filter_length = 0;
    double baseline_mean_objective = 0.0; ///< pure Dirac filter
    double baseline_success_rate = 0.0;
    std::vector<EpochRecord> epochs;
    double duration_s = 0.0;
};

struct BatchEvent {
    int epoch = 0;
    int batch = 0;
    const MalafideFilter* filter = nullptr;
};

struct OptimizationResult {
    MalafideFilter filter;
    OptimizationReport report;
};

/// Trains one attack-specific filter on Part-1 spoofs against a frozen scorer.
/// Returns the final-epoch filter. `on_batch` observes the filter after every update.
inline OptimizationResult optimize_filter(const DifferentiableScorer& scorer, std::span<const Waveform> part1_spoofs,
                                          const std::string& attack_id, const AttackConfig& config,
                                          const std::function<void(const BatchEvent&)>& on_batch = {}) {
    config.validate();
    detail::require(!part1_spoofs.empty(), "attack " + attack_id + ": no Part-1 spoofed utterances");
    const auto start = std::chrono::steady_clock::now();
    const int sr = part1_spoofs.front().sample_rate();

    OptimizationReport report;
    report.attack_id = attack_id;
    report.scorer_id = scorer.scorer_id();
    report.filter_length = config.filter_length;
    const auto identity = MalafideFilter::dirac(config.filter_length, sr, attack_id, scorer.scorer_id());
    report.baseline_mean_objective =
        objective(scorer, identity, part1_spoofs) / static_cast<double>(part1_spoofs.size());
    report.baseline_success_rate = success_rate(scorer, identity, part1_spoofs);

    auto filter = detail::he_uniform_filter(config.filter_length, derive_seed(config.seed, "he-init/" + attack_id), sr,
                                            attack_id, scorer.scorer_id());
    AdamState state(static_cast<std::size_t>(config.filter_length));
    Rng order_rng(derive_seed(config.seed, "batch-order/" + attack_id));
    std::vector<std::size_t> order(part1_spoofs.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        order_rng.shuffle(order.begin(), order.end());
        double objective_sum = 0.0;
        int batch_index = 0;
        for (std::size_t from = 0; from < order.size(); from += static_cast<std::size_t>(config.batch_size), ++batch_index) {
            const std::size_t to = std::min(order.size(), from + static_cast<std::size_t>(config.batch_size));
            std::vector<Waveform> batch;
            batch.reserve(to - from);
            for (std::size_t i = from; i < to; ++i)
                batch.push_back(part1_spoofs[order[i]]);

            const std::string where = "attack " + attack_id + ", epoch " + std::to_string(epoch + 1) + ", batch " +
                                      std::to_string(batch_index + 1);
            auto og = objective_and_gradient(scorer, filter, batch);
            if (!std::isfinite(og.objective))
                throw NumericalError("non-finite objective at " + where);
            objective_sum += og.objective;
            try {
                std::tie(filter, state) = adam_step(filter, og.gradient, std::move(state), config);
            } catch (const NumericalError& e) {
                throw NumericalError(std::string(e.what()) + " at " + where);
            }
            if (!filter.is_projected())
                throw NumericalError("Dirac center lost at " + where);
            if (on_batch)
                on_batch({epoch + 1, batch_index + 1, &filter});
        }
        report.epochs.push_back({epoch + 1, objective_sum / static_cast<double>(order.size()),
                                 success_rate(scorer, filter, part1_spoofs)});
    }
    report.duration_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return {std::move(filter), std::move(report)};
}

struct FilterCandidate {
    MalafideFilter filter;
    double success_rate = 0.0;
};

/// Highest Part-1 success rate wins; ties go to the shorter filter.
inline const MalafideFilter& select_filter(std::span<const FilterCandidate> candidates) {
    detail::require(!candidates.empty(), "filter selection needs at least one candidate");
    const FilterCandidate* best = &candidates.front();
    for (const auto& c : candidates.subspan(1))
        if (c.success_rate > best->success_rate ||
            (c.success_rate == best->success_rate && c.filter.length() < best->filter.length()))
            best = &c;
    return best->filter;
}

} // namespace malafide
