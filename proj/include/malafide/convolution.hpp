#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "malafide/error.hpp"
#include "malafide/filter.hpp"
#include "malafide/waveform.hpp"

namespace malafide {

/// Zero-padded "same" convolution with a centered kernel of odd length:
///   out[t] = sum_{k=-c..c} kernel[k + c] * signal[t - k]
/// Output length equals signal length.
inline std::vector<double> convolve_same(std::span<const double> signal, std::span<const double> kernel) {
    detail::require(kernel.size() % 2 == 1, "kernel length must be odd");
    const auto n = static_cast<std::ptrdiff_t>(signal.size());
    const auto c = static_cast<std::ptrdiff_t>(kernel.size() / 2);
    std::vector<double> out(signal.size(), 0.0);
    // Loop over taps so the inner loop is a contiguous axpy.
    for (std::ptrdiff_t k = -c; k <= c; ++k) {
        const double w = kernel[static_cast<std::size_t>(k + c)];
        if (w == 0.0)
            continue;
        const std::ptrdiff_t t_begin = std::max<std::ptrdiff_t>(0, k);
        const std::ptrdiff_t t_end = std::min<std::ptrdiff_t>(n, n + k);
        const double* src = signal.data() + (t_begin - k);
        double* dst = out.data() + t_begin;
        for (std::ptrdiff_t i = 0; i < t_end - t_begin; ++i)
            dst[i] += w * src[i];
    }
    return out;
}

inline Waveform convolve_same(const Waveform& signal, const MalafideFilter& filter) {
    if (signal.sample_rate() != filter.sample_rate())
        throw ValidationError("sample rate mismatch: signal is " + std::to_string(signal.sample_rate()) +
                              " Hz but filter is " + std::to_string(filter.sample_rate()) + " Hz");
    return Waveform(convolve_same(signal.samples(), filter.coefficients()), signal.sample_rate());
}

/// Lagged cross-correlation restricted to lags -half..half:
///   out[k + half] = sum_t upstream[t] * signal[t - k]
/// This is the gradient of sum_t upstream[t] * convolve_same(signal, m)[t]
/// with respect to the kernel taps m.
inline std::vector<double> correlate_lags(std::span<const double> upstream, std::span<const double> signal,
                                          std::size_t half) {
    detail::require(upstream.size() == signal.size(), "correlation inputs must have equal length");
    const auto n = static_cast<std::ptrdiff_t>(signal.size());
    const auto c = static_cast<std::ptrdiff_t>(half);
    std::vector<double> out(2 * half + 1, 0.0);
    for (std::ptrdiff_t k = -c; k <= c; ++k) {
        const std::ptrdiff_t t_begin = std::max<std::ptrdiff_t>(0, k);
        const std::ptrdiff_t t_end = std::min<std::ptrdiff_t>(n, n + k);
        const double* src = signal.data() + (t_begin - k);
        const double* up = upstream.data() + t_begin;
        double acc = 0.0;
        for (std::ptrdiff_t i = 0; i < t_end - t_begin; ++i)
            acc += up[i] * src[i];
        out[static_cast<std::size_t>(k + c)] = acc;
    }
    return out;
}

} // namespace malafide
