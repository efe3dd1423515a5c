#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include <gtest/gtest.h>

#include "malafide/convolution.hpp"
#include "malafide/filter.hpp"
#include "malafide/spectrum.hpp"
#include "test_helpers.hpp"

using namespace malafide;
using malafide::testing::random_vector;

namespace {

// Independent O(N*L) reference: out[t] = sum_j m[j] * s[t - (j - c)].
std::vector<double> naive_convolve(const std::vector<double>& s, const std::vector<double>& m) {
    const int n = static_cast<int>(s.size());
    const int c = static_cast<int>(m.size()) / 2;
    std::vector<double> out(s.size(), 0.0);
    for (int t = 0; t < n; ++t)
        for (int j = 0; j < static_cast<int>(m.size()); ++j) {
            const int idx = t - (j - c);
            if (idx >= 0 && idx < n)
                out[static_cast<std::size_t>(t)] += m[static_cast<std::size_t>(j)] * s[static_cast<std::size_t>(idx)];
        }
    return out;
}

std::vector<std::complex<double>> naive_dft(const std::vector<double>& x, std::size_t n) {
    std::vector<std::complex<double>> out(n);
    for (std::size_t k = 0; k < n; ++k)
        for (std::size_t t = 0; t < x.size(); ++t)
            out[k] += x[t] * std::polar(1.0, -2.0 * std::numbers::pi * double(k * t) / double(n));
    return out;
}

} // namespace

TEST(ConvolveSame, DiracFilterIsIdentity) {
    const Waveform w({1.0, 2.0, 3.0}, 16000);
    const auto out = convolve_same(w, MalafideFilter::dirac(65, 16000));
    EXPECT_EQ(out.data(), (std::vector<double>{1.0, 2.0, 3.0}));
    EXPECT_EQ(out.sample_rate(), 16000);
}

TEST(ConvolveSame, DiracIdentityIsExactOnRandomSignals) {
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        const Waveform w(random_vector(rng, 1 + rng.below(300)), 16000);
        for (int len : {1, 3, 65, 257})
            EXPECT_EQ(convolve_same(w, MalafideFilter::dirac(len, 16000)), w);
    }
}

TEST(ConvolveSame, ThreeTapLeadingEdge) {
    const auto out = convolve_same(std::vector<double>{1, 0, 0, 0}, std::vector<double>{0.5, 1.0, 0.25});
    EXPECT_EQ(out, (std::vector<double>{1.0, 0.25, 0.0, 0.0}));
    EXPECT_EQ(out, naive_convolve({1, 0, 0, 0}, {0.5, 1.0, 0.25}));
}

TEST(ConvolveSame, MatchesBruteForceOnSmallInstances) {
    Rng rng(11);
    for (int trial = 0; trial < 500; ++trial) {
        const auto s = random_vector(rng, 1 + rng.below(64));
        const auto m = random_vector(rng, 2 * rng.below(5) + 1);
        const auto fast = convolve_same(s, m);
        const auto ref = naive_convolve(s, m);
        ASSERT_EQ(fast.size(), s.size());
        for (std::size_t i = 0; i < s.size(); ++i)
            ASSERT_NEAR(fast[i], ref[i], 1e-12);
    }
}

TEST(ConvolveSame, Linearity) {
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        const auto x = random_vector(rng, 16), y = random_vector(rng, 16), m = random_vector(rng, 5);
        const double a = rng.uniform(-2, 2), b = rng.uniform(-2, 2);
        std::vector<double> mix(16);
        for (std::size_t i = 0; i < 16; ++i)
            mix[i] = a * x[i] + b * y[i];
        const auto lhs = convolve_same(mix, m);
        const auto cx = convolve_same(x, m), cy = convolve_same(y, m);
        for (std::size_t i = 0; i < 16; ++i)
            EXPECT_NEAR(lhs[i], a * cx[i] + b * cy[i], 1e-12);
    }
}

TEST(ConvolveSame, ShiftCovarianceOnOverlap) {
    Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 32;
        const auto x = random_vector(rng, n);
        const auto m = random_vector(rng, 2 * rng.below(4) + 1);
        const std::size_t half = m.size() / 2;
        const std::size_t shift = 1 + rng.below(6);
        std::vector<double> delayed(n, 0.0);
        for (std::size_t t = shift; t < n; ++t)
            delayed[t] = x[t - shift];
        const auto conv_then_delay = convolve_same(x, m);
        const auto delay_then_conv = convolve_same(delayed, m);
        // Away from both edges neither zero-fill nor truncation is visible.
        for (std::size_t t = shift + half; t + half < n; ++t)
            EXPECT_NEAR(delay_then_conv[t], conv_then_delay[t - shift], 1e-12);
    }
}

TEST(ConvolveSame, RejectsSampleRateMismatch) {
    const Waveform w({1.0, 2.0}, 16000);
    try {
        convolve_same(w, MalafideFilter::dirac(3, 8000));
        FAIL() << "expected a sample-rate error";
    } catch (const ValidationError& e) {
        EXPECT_NE(std::string(e.what()).find("sample rate mismatch"), std::string::npos);
    }
}

TEST(CorrelateLags, MatchesDirectSum) {
    Rng rng(17);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 1 + rng.below(40);
        const auto g = random_vector(rng, n), s = random_vector(rng, n);
        const std::size_t half = rng.below(5);
        const auto out = correlate_lags(g, s, half);
        for (int k = -int(half); k <= int(half); ++k) {
            double ref = 0.0;
            for (int t = 0; t < int(n); ++t)
                if (t - k >= 0 && t - k < int(n))
                    ref += g[std::size_t(t)] * s[std::size_t(t - k)];
            EXPECT_NEAR(out[std::size_t(k + int(half))], ref, 1e-12);
        }
    }
}

TEST(MalafideFilter, RejectsEvenLengthAndNonFinite) {
    EXPECT_THROW(MalafideFilter({1.0, 0.0}, 16000), ValidationError);
    EXPECT_THROW(MalafideFilter({}, 16000), ValidationError);
    EXPECT_THROW(MalafideFilter({0.0, 1.0, NAN}, 16000), ValidationError);
    EXPECT_THROW(MalafideFilter::dirac(64, 16000), ValidationError);
}

TEST(MalafideFilter, CatalogMembership) {
    for (int l : kFilterLengthCatalog)
        EXPECT_NO_THROW(require_catalog_length(l));
    for (int l : {1, 3, 63, 64, 100, 256, 8193})
        EXPECT_THROW(require_catalog_length(l), ValidationError);
}

TEST(Waveform, Invariants) {
    EXPECT_THROW(Waveform({}, 16000), ValidationError);
    EXPECT_THROW(Waveform({0.0}, 0), ValidationError);
    EXPECT_THROW(Waveform({0.0, INFINITY}, 16000), ValidationError);
}

TEST(Fft, MatchesNaiveDft) {
    Rng rng(23);
    for (std::size_t n : {1u, 2u, 8u, 64u, 256u}) {
        const auto x = random_vector(rng, n);
        std::vector<std::complex<double>> buf(x.begin(), x.end());
        fft_inplace(buf);
        const auto ref = naive_dft(x, n);
        for (std::size_t k = 0; k < n; ++k)
            EXPECT_LT(std::abs(buf[k] - ref[k]), 1e-10);
    }
}

TEST(FrequencyResponse, DiracIsFlat) {
    for (int len : {65, 257, 1025}) {
        const auto r = frequency_response(MalafideFilter::dirac(len, 16000), 2048);
        ASSERT_EQ(r.magnitude_db.size(), 1025u);
        for (double db : r.magnitude_db)
            EXPECT_NEAR(db, 0.0, 1e-9);
    }
}

TEST(FrequencyResponse, TwoPointFilterClosedForm) {
    // |1 + e^{-jw}| = 2|cos(w/2)|: 0 dB at DC, -3.0103 dB at w = pi/2, a null at Nyquist.
    const MalafideFilter f({0.0, 1.0, 1.0}, 16000);
    const auto r = frequency_response(f, 1024);
    EXPECT_NEAR(r.magnitude_db.front(), 0.0, 1e-9);
    EXPECT_NEAR(r.magnitude_db[256], -3.0102999566398116, 1e-9);
    EXPECT_LT(r.magnitude_db.back(), -200.0);
    EXPECT_DOUBLE_EQ(r.frequencies_hz.front(), 0.0);
    EXPECT_DOUBLE_EQ(r.frequencies_hz.back(), 8000.0);
    EXPECT_EQ(r.bin_of(4000.0), 256u);
}

TEST(FrequencyResponse, GainInvariant) {
    Rng rng(29);
    const auto c = random_vector(rng, 65);
    std::vector<double> scaled = c;
    for (double& v : scaled)
        v *= -3.7;
    const auto a = frequency_response(MalafideFilter(c, 16000), 256);
    const auto b = frequency_response(MalafideFilter(scaled, 16000), 256);
    for (std::size_t i = 0; i < a.magnitude_db.size(); ++i)
        EXPECT_NEAR(a.magnitude_db[i], b.magnitude_db[i], 1e-9);
    EXPECT_NEAR(*std::max_element(a.magnitude_db.begin(), a.magnitude_db.end()), 0.0, 1e-9);
}

TEST(FrequencyResponse, RejectsShortOrNonPowerOfTwoFft) {
    const auto f = MalafideFilter::dirac(257, 16000);
    EXPECT_THROW(frequency_response(f, 128), ValidationError);
    EXPECT_THROW(frequency_response(f, 300), ValidationError);
}

TEST(FrequencyResponse, AttenuationBelowMedian) {
    const MalafideFilter f({0.0, 1.0, 1.0}, 16000);
    const auto r = frequency_response(f, 64);
    // Median bin of a monotone response sits at fs/4 (-3 dB); DC is 3 dB above it.
    EXPECT_NEAR(attenuation_below_median_db(r, 0.0), -3.0102999566398116, 1e-9);
}
