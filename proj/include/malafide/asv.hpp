#pragma once

#include <cmath>
#include <complex>
#include <numbers>
#include <span>
#include <vector>

#include "malafide/error.hpp"
#include "malafide/spectrum.hpp"
#include "malafide/waveform.hpp"

namespace malafide {

struct AsvEmbeddingConfig {
    std::size_t frame = 512;
    std::size_t hop = 256;
    int n_bands = 40;
    double max_hz = 8000.0;
};

namespace detail {

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

} // namespace detail

/// Time-averaged log band energies from triangular mel-spaced bands over 0..max_hz.
inline std::vector<double> asv_embedding(const Waveform& w, const AsvEmbeddingConfig& cfg = {}) {
    const std::size_t frame = cfg.frame;
    const int sr = w.sample_rate();
    const std::size_t bins = frame / 2 + 1;
    const double top = std::min(cfg.max_hz, sr / 2.0);

    // Band edges equally spaced on the mel scale.
    std::vector<double> edges(static_cast<std::size_t>(cfg.n_bands) + 2);
    const double mel_top = detail::hz_to_mel(top);
    for (std::size_t i = 0; i < edges.size(); ++i)
        edges[i] = detail::mel_to_hz(mel_top * static_cast<double>(i) / static_cast<double>(edges.size() - 1));

    std::vector<std::vector<double>> bank(static_cast<std::size_t>(cfg.n_bands), std::vector<double>(bins, 0.0));
    for (std::size_t b = 0; b < bank.size(); ++b) {
        const double lo = edges[b], mid = edges[b + 1], hi = edges[b + 2];
        for (std::size_t k = 0; k < bins; ++k) {
            const double f = static_cast<double>(k) * sr / static_cast<double>(frame);
            if (f > lo && f < hi)
                bank[b][k] = f <= mid ? (f - lo) / (mid - lo) : (hi - f) / (hi - mid);
        }
    }

    std::vector<double> window(frame);
    for (std::size_t i = 0; i < frame; ++i)
        window[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(frame));

    const auto x = w.samples();
    std::vector<double> embedding(bank.size(), 0.0);
    std::size_t frames = 0;
    std::vector<double> buf(frame);
    for (std::size_t start = 0; start == 0 || start + frame <= x.size(); start += cfg.hop) {
        for (std::size_t i = 0; i < frame; ++i)
            buf[i] = start + i < x.size() ? x[start + i] * window[i] : 0.0;
        const auto mag = magnitude_spectrum(buf, frame);
        for (std::size_t b = 0; b < bank.size(); ++b) {
            double e = 0.0;
            for (std::size_t k = 0; k < bins; ++k)
                e += bank[b][k] * mag[k] * mag[k];
            embedding[b] += std::log(e + 1e-10);
        }
        ++frames;
        if (start + frame >= x.size())
            break;
    }
    for (double& v : embedding)
        v /= static_cast<double>(frames);
    return embedding;
}

inline double cosine_similarity(std::span<const double> a, std::span<const double> b) {
    detail::require(a.size() == b.size(), "cosine similarity inputs differ in length");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0)
        return 0.0;
    return dot / std::sqrt(na * nb);
}

/// Toy speaker verification: cosine similarity of the test embedding to the mean enrollment embedding.
inline double toy_asv_score(std::span<const Waveform> enrollment, const Waveform& test) {
    detail::require(!enrollment.empty(), "ASV enrollment must contain at least one utterance");
    std::vector<double> mean;
    for (const auto& e : enrollment) {
        const auto emb = asv_embedding(e);
        if (mean.empty())
            mean.assign(emb.size(), 0.0);
        for (std::size_t i = 0; i < emb.size(); ++i)
            mean[i] += emb[i] / static_cast<double>(enrollment.size());
    }
    return cosine_similarity(mean, asv_embedding(test));
}

} // namespace malafide
