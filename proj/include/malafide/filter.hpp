#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "malafide/error.hpp"
#include "malafide/waveform.hpp"

namespace malafide {

/// Filter lengths explored by the attack (2^k + 1 taps).
inline constexpr std::array<int, 7> kFilterLengthCatalog{65, 129, 257, 513, 1025, 2049, 4097};

inline bool is_catalog_length(int length) {
    return std::find(kFilterLengthCatalog.begin(), kFilterLengthCatalog.end(), length) != kFilterLengthCatalog.end();
}

inline void require_catalog_length(int length) {
    detail::require(length % 2 == 1 && is_catalog_length(length),
                    "filter length must be odd and in catalog, got " + std::to_string(length));
}

/// Odd-length, non-causal FIR filter. Tap i acts at lag i - center().
///
/// Construction accepts any odd length so small filters can be used in tests;
/// the attack itself only produces catalog lengths. The Dirac invariant
/// (center tap == 1) is not enforced here because unprojected filters are a
/// legitimate intermediate; see project_dirac() and is_projected().
class MalafideFilter {
public:
    MalafideFilter(std::vector<double> coefficients, int sample_rate, std::string attack_id = {},
                   std::string scorer_id = {})
        : coefficients_(std::move(coefficients)),
          sample_rate_(sample_rate),
          attack_id_(std::move(attack_id)),
          scorer_id_(std::move(scorer_id)) {
        detail::require(!coefficients_.empty() && coefficients_.size() % 2 == 1,
                        "filter length must be odd, got " + std::to_string(coefficients_.size()));
        detail::require(sample_rate_ > 0, "filter sample rate must be positive");
        for (std::size_t i = 0; i < coefficients_.size(); ++i)
            detail::require(std::isfinite(coefficients_[i]), "filter coefficient " + std::to_string(i) + " is not finite");
    }

    /// Pure delta of the given length.
    static MalafideFilter dirac(int length, int sample_rate, std::string attack_id = {}, std::string scorer_id = {}) {
        detail::require(length > 0 && length % 2 == 1, "filter length must be odd, got " + std::to_string(length));
        std::vector<double> c(static_cast<std::size_t>(length), 0.0);
        c[static_cast<std::size_t>(length / 2)] = 1.0;
        return MalafideFilter(std::move(c), sample_rate, std::move(attack_id), std::move(scorer_id));
    }

    std::span<const double> coefficients() const noexcept { return coefficients_; }
    int length() const noexcept { return static_cast<int>(coefficients_.size()); }
    int center() const noexcept { return length() / 2; }
    int sample_rate() const noexcept { return sample_rate_; }
    const std::string& attack_id() const noexcept { return attack_id_; }
    const std::string& scorer_id() const noexcept { return scorer_id_; }

    bool is_projected() const noexcept { return coefficients_[static_cast<std::size_t>(center())] == 1.0; }

    MalafideFilter with_coefficients(std::vector<double> coefficients) const {
        return MalafideFilter(std::move(coefficients), sample_rate_, attack_id_, scorer_id_);
    }

    friend bool operator==(const MalafideFilter&, const MalafideFilter&) = default;

private:
    std::vector<double> coefficients_;
    int sample_rate_;
    std::string attack_id_;
    std::string scorer_id_;
};

/// Pins the center tap to exactly 1, leaving every other tap untouched.
inline MalafideFilter project_dirac(const MalafideFilter& filter) {
    std::vector<double> c(filter.coefficients().begin(), filter.coefficients().end());
    c[static_cast<std::size_t>(filter.center())] = 1.0;
    return filter.with_coefficients(std::move(c));
}

inline void project_dirac_inplace(std::span<double> coefficients) {
    coefficients[coefficients.size() / 2] = 1.0;
}

} // namespace malafide
