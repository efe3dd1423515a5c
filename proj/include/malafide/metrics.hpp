#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "malafide/convolution.hpp"
#include "malafide/detector.hpp"
#include "malafide/error.hpp"
#include "malafide/filter.hpp"
#include "malafide/waveform.hpp"

namespace malafide {

/// Softmax probability of the bona fide class, computed with the max logit subtracted.
inline double normalize_scores(double logit_spoof, double logit_bonafide) {
    const double hi = std::max(logit_spoof, logit_bonafide);
    const double es = std::exp(logit_spoof - hi);
    const double eb = std::exp(logit_bonafide - hi);
    return eb / (es + eb);
}

/// Fraction of utterances whose filtered, softmax-normalized score is strictly above 0.5.
inline double success_rate(const DifferentiableScorer& scorer, const MalafideFilter& filter,
                           std::span<const Waveform> spoofs) {
    detail::require(!spoofs.empty(), "success rate needs at least one utterance");
    std::size_t hits = 0;
    for (const auto& s : spoofs) {
        const auto logits = score_logits(scorer, convolve_same(s, filter));
        if (normalize_scores(logits.spoof, logits.bonafide) > 0.5)
            ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(spoofs.size());
}

struct EerResult {
    double eer = 0.0;
    double threshold = 0.0;
};

/// Equal error rate. Positives are accepted when score >= threshold:
///   FAR(th) = #{negatives >= th} / |negatives|,  FRR(th) = #{positives < th} / |positives|.
/// Thresholds sweep the distinct scores, their midpoints and one point above the
/// maximum. The EER is read at the FAR/FRR crossing, linearly interpolated
/// between the two adjacent operating points that bracket it.
inline EerResult compute_eer(std::span<const double> positives, std::span<const double> negatives) {
    detail::require(!positives.empty(), "EER needs at least one positive score");
    detail::require(!negatives.empty(), "EER needs at least one negative score");
    for (double s : positives)
        detail::require(std::isfinite(s), "EER scores must be finite");
    for (double s : negatives)
        detail::require(std::isfinite(s), "EER scores must be finite");

    std::vector<double> pos(positives.begin(), positives.end());
    std::vector<double> neg(negatives.begin(), negatives.end());
    std::sort(pos.begin(), pos.end());
    std::sort(neg.begin(), neg.end());

    std::vector<double> distinct;
    distinct.reserve(pos.size() + neg.size());
    std::merge(pos.begin(), pos.end(), neg.begin(), neg.end(), std::back_inserter(distinct));
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());

    std::vector<double> thresholds;
    thresholds.reserve(2 * distinct.size() + 1);
    for (std::size_t i = 0; i < distinct.size(); ++i) {
        thresholds.push_back(distinct[i]);
        if (i + 1 < distinct.size())
            thresholds.push_back(0.5 * (distinct[i] + distinct[i + 1]));
    }
    thresholds.push_back(distinct.back() + 1.0);

    const double np = static_cast<double>(pos.size());
    const double nn = static_cast<double>(neg.size());
    auto far_at = [&](double th) {
        const auto below = std::lower_bound(neg.begin(), neg.end(), th) - neg.begin();
        return static_cast<double>(neg.size() - static_cast<std::size_t>(below)) / nn;
    };
    auto frr_at = [&](double th) {
        const auto below = std::lower_bound(pos.begin(), pos.end(), th) - pos.begin();
        return static_cast<double>(below) / np;
    };

    // FAR is non-increasing and FRR non-decreasing along the sweep; at the
    // lowest threshold FAR = 1 and FRR = 0, so a crossing always exists.
    double prev_far = far_at(thresholds.front());
    double prev_frr = frr_at(thresholds.front());
    if (prev_far == prev_frr)
        return {prev_far, thresholds.front()};
    for (std::size_t i = 1; i < thresholds.size(); ++i) {
        const double far = far_at(thresholds[i]);
        const double frr = frr_at(thresholds[i]);
        if (frr == far)
            return {far, thresholds[i]};
        if (frr > far) {
            const double d0 = prev_far - prev_frr;
            const double d1 = far - frr;
            const double alpha = d0 / (d0 - d1);
            return {prev_far + alpha * (far - prev_far),
                    thresholds[i - 1] + alpha * (thresholds[i] - thresholds[i - 1])};
        }
        prev_far = far;
        prev_frr = frr;
    }
    return {prev_far, thresholds.back()}; // unreachable: FRR reaches 1 at the top threshold
}

struct FusionResult {
    std::vector<double> scores;
    std::vector<std::string> warnings;
};

/// Per-system min-max normalization to [0, 1] over the full trial set, then a
/// weighted sum. A constant system contributes 0.5 on every trial.
inline FusionResult fuse_scores(std::span<const double> cm_scores, std::span<const double> asv_scores,
                                double cm_weight = 1.0, double asv_weight = 1.0) {
    detail::require(cm_scores.size() == asv_scores.size(),
                    "fusion inputs differ in length (" + std::to_string(cm_scores.size()) + " CM vs " +
                        std::to_string(asv_scores.size()) + " ASV)");
    detail::require(!cm_scores.empty(), "fusion needs at least one trial");
    FusionResult out;
    out.scores.assign(cm_scores.size(), 0.0);
    auto accumulate = [&](std::span<const double> s, double weight, const char* name) {
        const auto [lo, hi] = std::minmax_element(s.begin(), s.end());
        const double range = *hi - *lo;
        if (!(range > 0.0))
            out.warnings.push_back(std::string(name) + " scores are constant; contributing 0.5 per trial");
        for (std::size_t i = 0; i < s.size(); ++i)
            out.scores[i] += weight * (range > 0.0 ? (s[i] - *lo) / range : 0.5);
    };
    accumulate(cm_scores, cm_weight, "CM");
    accumulate(asv_scores, asv_weight, "ASV");
    return out;
}

/// Target trials are positive; non-target and spoofed trials together are negative.
inline EerResult compute_sasv_eer(std::span<const double> target, std::span<const double> nontarget,
                                  std::span<const double> spoof) {
    std::vector<double> negatives(nontarget.begin(), nontarget.end());
    negatives.insert(negatives.end(), spoof.begin(), spoof.end());
    detail::require(!negatives.empty(), "SASV-EER needs at least one non-target or spoof trial");
    return compute_eer(target, negatives);
}

} // namespace malafide
