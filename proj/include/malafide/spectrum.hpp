#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <complex>
#include <cstddef>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "malafide/error.hpp"
#include "malafide/filter.hpp"

namespace malafide {

/// In-place iterative radix-2 FFT. Size must be a power of two.
inline void fft_inplace(std::vector<std::complex<double>>& a) {
    const std::size_t n = a.size();
    detail::require(n > 0 && std::has_single_bit(n), "FFT size must be a power of two");
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1)
            j ^= bit;
        j ^= bit;
        if (i < j)
            std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double angle = -2.0 * std::numbers::pi / static_cast<double>(len);
        for (std::size_t start = 0; start < n; start += len) {
            for (std::size_t k = 0; k < len / 2; ++k) {
                // Twiddles evaluated directly; recurrences drift for long transforms.
                const std::complex<double> w(std::cos(angle * static_cast<double>(k)),
                                             std::sin(angle * static_cast<double>(k)));
                const auto u = a[start + k];
                const auto v = a[start + k + len / 2] * w;
                a[start + k] = u + v;
                a[start + k + len / 2] = u - v;
            }
        }
    }
}

/// Magnitude of the DFT of `x` zero-padded to n_fft, bins 0..n_fft/2.
inline std::vector<double> magnitude_spectrum(std::span<const double> x, std::size_t n_fft) {
    detail::require(x.size() <= n_fft, "input longer than FFT size");
    std::vector<std::complex<double>> buf(n_fft);
    std::copy(x.begin(), x.end(), buf.begin());
    fft_inplace(buf);
    std::vector<double> mag(n_fft / 2 + 1);
    for (std::size_t i = 0; i < mag.size(); ++i)
        mag[i] = std::abs(buf[i]);
    return mag;
}

struct FrequencyResponse {
    std::vector<double> frequencies_hz;
    std::vector<double> magnitude_db; ///< peak normalized to 0 dB; exact zeros map to -inf
    std::size_t n_fft = 0;

    /// Index of the bin closest to `hz`.
    std::size_t bin_of(double hz) const {
        const double spacing = frequencies_hz.size() > 1 ? frequencies_hz[1] : 1.0;
        const auto idx = static_cast<std::size_t>(std::lround(hz / spacing));
        return std::min(idx, frequencies_hz.size() - 1);
    }
};

inline FrequencyResponse frequency_response(const MalafideFilter& filter, std::size_t n_fft) {
    detail::require(std::has_single_bit(n_fft), "n_fft must be a power of two, got " + std::to_string(n_fft));
    detail::require(n_fft >= static_cast<std::size_t>(filter.length()),
                    "n_fft (" + std::to_string(n_fft) + ") must be at least the filter length (" +
                        std::to_string(filter.length()) + ")");
    const auto mag = magnitude_spectrum(filter.coefficients(), n_fft);
    const double peak = *std::max_element(mag.begin(), mag.end());

    FrequencyResponse out;
    out.n_fft = n_fft;
    out.frequencies_hz.resize(mag.size());
    out.magnitude_db.resize(mag.size());
    for (std::size_t i = 0; i < mag.size(); ++i) {
        out.frequencies_hz[i] = static_cast<double>(i) * filter.sample_rate() / static_cast<double>(n_fft);
        // Ratio first so the peak bin is exactly 0 dB.
        out.magnitude_db[i] = peak > 0.0 ? 20.0 * std::log10(mag[i] / peak) : -std::numeric_limits<double>::infinity();
    }
    return out;
}

/// Median of the normalized response minus the response at `hz`; positive means attenuation.
inline double attenuation_below_median_db(const FrequencyResponse& response, double hz) {
    std::vector<double> sorted = response.magnitude_db;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t n = sorted.size();
    const double median = n % 2 == 1 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
    return median - response.magnitude_db[response.bin_of(hz)];
}

} // namespace malafide
