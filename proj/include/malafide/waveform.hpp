#pragma once

#include <cmath>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "malafide/error.hpp"

namespace malafide {

inline constexpr int kDefaultSampleRate = 16000;

/// Mono real-valued signal. Immutable once constructed.
class Waveform {
public:
    Waveform(std::vector<double> samples, int sample_rate)
        : samples_(std::move(samples)), sample_rate_(sample_rate) {
        detail::require(!samples_.empty(), "waveform must contain at least one sample");
        detail::require(sample_rate_ > 0, "sample rate must be positive, got " + std::to_string(sample_rate_));
        for (std::size_t i = 0; i < samples_.size(); ++i)
            detail::require(std::isfinite(samples_[i]), "waveform sample " + std::to_string(i) + " is not finite");
    }

    std::span<const double> samples() const noexcept { return samples_; }
    const std::vector<double>& data() const noexcept { return samples_; }
    std::size_t size() const noexcept { return samples_.size(); }
    int sample_rate() const noexcept { return sample_rate_; }
    double duration_seconds() const noexcept { return static_cast<double>(samples_.size()) / sample_rate_; }

    double rms() const noexcept {
        double acc = 0.0;
        for (double x : samples_)
            acc += x * x;
        return std::sqrt(acc / static_cast<double>(samples_.size()));
    }

    friend bool operator==(const Waveform&, const Waveform&) = default;

private:
    std::vector<double> samples_;
    int sample_rate_;
};

} // namespace malafide
