#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "malafide/attack.hpp"
#include "malafide/detector.hpp"
#include "test_helpers.hpp"

using namespace malafide;
using malafide::testing::random_vector;
using malafide::testing::relative_error;

namespace {

CmArchitecture small_arch() {
    CmArchitecture a;
    a.input_length = 256;
    a.conv1_channels = 4;
    a.conv1_kernel = 8;
    a.conv1_stride = 2;
    a.pool = 2;
    a.conv2_channels = 6;
    a.conv2_kernel = 4;
    a.conv2_stride = 2;
    return a;
}

ToyCmModel small_model(std::uint64_t seed) {
    const auto base = ToyCmModel::initialize(small_arch(), seed, 16000, "small");
    std::vector<double> p(base.parameters().begin(), base.parameters().end());
    const CmLayout l(small_arch());
    for (std::size_t i = l.b1; i < l.w2; ++i)
        p[i] = 0.1;
    for (std::size_t i = l.b2; i < l.w3; ++i)
        p[i] = 0.1;
    return base.with_parameters(std::move(p));
}

std::vector<Waveform> random_batch(Rng& rng, std::size_t count, std::size_t n) {
    std::vector<Waveform> out;
    for (std::size_t i = 0; i < count; ++i)
        out.emplace_back(random_vector(rng, n), 16000);
    return out;
}

} // namespace

TEST(HeInit, BoundsForEveryCatalogLength) {
    for (int len : kFilterLengthCatalog) {
        const auto f = he_init_filter(len, 42);
        const double bound = std::sqrt(3.0 / len);
        ASSERT_EQ(f.length(), len);
        EXPECT_EQ(f.coefficients()[static_cast<std::size_t>(f.center())], 1.0);
        for (int i = 0; i < len; ++i) {
            if (i != f.center()) {
                EXPECT_LE(std::abs(f.coefficients()[static_cast<std::size_t>(i)]), bound);
            }
        }
    }
}

TEST(HeInit, Determinism) {
    EXPECT_EQ(he_init_filter(65, 1), he_init_filter(65, 1));
    EXPECT_NE(he_init_filter(65, 1), he_init_filter(65, 2));
}

TEST(HeInit, MeanWithinStandardErrorBound) {
    const int len = 4097;
    const double sigma = std::sqrt(3.0 / len) / std::sqrt(3.0 * (len - 1));
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto f = he_init_filter(len, seed);
        double sum = 0.0;
        for (int i = 0; i < len; ++i)
            if (i != f.center())
                sum += f.coefficients()[static_cast<std::size_t>(i)];
        EXPECT_LE(std::abs(sum / (len - 1)), 3.0 * sigma);
    }
}

TEST(HeInit, RejectsNonCatalogLength) {
    try {
        he_init_filter(100, 1);
        FAIL();
    } catch (const ValidationError& e) {
        EXPECT_NE(std::string(e.what()).find("filter length must be odd and in catalog"), std::string::npos);
    }
}

TEST(ProjectDirac, ExamplesAndIdempotence) {
    const MalafideFilter f({0.3, 0.7, -0.1}, 16000);
    const auto p = project_dirac(f);
    EXPECT_EQ(std::vector<double>(p.coefficients().begin(), p.coefficients().end()), (std::vector<double>{0.3, 1.0, -0.1}));
    EXPECT_EQ(project_dirac(p), p);
    Rng rng(4);
    for (int i = 0; i < 20; ++i) {
        const MalafideFilter r(random_vector(rng, 9), 16000);
        EXPECT_EQ(project_dirac(project_dirac(r)), project_dirac(r));
        EXPECT_TRUE(project_dirac(r).is_projected());
    }
}

TEST(Objective, DiracEqualsUnfilteredSum) {
    const auto model = small_model(1);
    Rng rng(2);
    const auto batch = random_batch(rng, 3, 256);
    double sum = 0.0;
    for (const auto& w : batch)
        sum += cm_score(model, w);
    EXPECT_EQ(objective(model, MalafideFilter::dirac(9, 16000), batch), sum);
    const auto f = MalafideFilter(random_vector(rng, 9), 16000);
    EXPECT_EQ(objective(model, f, std::span(batch).first(1)), cm_score(model, convolve_same(batch[0], f)));
}

TEST(Objective, ZeroScorer) {
    const auto model = ToyCmModel::zeros(small_arch(), 16000);
    Rng rng(3);
    const auto batch = random_batch(rng, 2, 256);
    const MalafideFilter f(random_vector(rng, 9), 16000);
    EXPECT_EQ(objective(model, f, batch), 0.0);
    const auto g = filter_gradient(model, f, batch);
    EXPECT_TRUE(std::all_of(g.begin(), g.end(), [](double v) { return v == 0.0; }));
}

TEST(FilterGradient, MatchesFiniteDifferences) {
    for (std::uint64_t seed : {5u, 6u}) {
        const auto model = small_model(seed);
        Rng rng(seed + 50);
        const auto batch = random_batch(rng, 3, 256);
        auto c = random_vector(rng, 9, 0.5);
        c[4] = 1.0;
        const MalafideFilter f(c, 16000);
        const auto g = filter_gradient(model, f, batch);
        const double h = 1e-5;
        for (std::size_t k = 0; k < 9; ++k) {
            auto cp = c, cm = c;
            cp[k] += h;
            cm[k] -= h;
            const double fd =
                (objective(model, MalafideFilter(cp, 16000), batch) - objective(model, MalafideFilter(cm, 16000), batch)) /
                (2 * h);
            EXPECT_LE(relative_error(g[k], fd), 1e-5) << "tap " << k;
        }
    }
}

TEST(FilterGradient, ImpulseInputPicksShiftedWeights) {
    Rng rng(8);
    const auto w = random_vector(rng, 8);
    const LinearScorer scorer(w, 0.0, 16000);
    const auto f = MalafideFilter(random_vector(rng, 5), 16000);
    for (int p = 0; p < 8; ++p) {
        std::vector<double> s(8, 0.0);
        s[static_cast<std::size_t>(p)] = 1.0;
        const std::vector<Waveform> batch{Waveform(s, 16000)};
        const auto g = filter_gradient(scorer, f, batch);
        for (int k = -2; k <= 2; ++k) {
            const int t = p + k;
            const double expect = (t >= 0 && t < 8) ? w[static_cast<std::size_t>(t)] : 0.0;
            EXPECT_EQ(g[static_cast<std::size_t>(k + 2)], expect);
        }
    }
}

TEST(AdamStep, HandComputedUpdate) {
    const MalafideFilter f({0.2, 1.0, -0.3}, 16000);
    AdamState state(3);
    state.first_moment = {0.01, 0.02, -0.01};
    state.second_moment = {1e-4, 2e-4, 5e-5};
    state.step_count = 1;
    AttackConfig cfg;
    cfg.adam = {1e-2, 0.9, 0.999, 1e-8, 0.0};
    const std::vector<double> grad{0.5, -0.2, 0.1};
    const auto [next, s] = adam_step(f, grad, state, cfg);
    EXPECT_EQ(s.step_count, 2);
    EXPECT_NEAR(s.first_moment[0], -0.04099999999999999, 1e-15);
    EXPECT_NEAR(s.first_moment[1], 0.038, 1e-15);
    EXPECT_NEAR(s.first_moment[2], -0.019, 1e-15);
    EXPECT_NEAR(s.second_moment[0], 0.0003499000000000002, 1e-17);
    EXPECT_NEAR(s.second_moment[1], 0.00023980000000000006, 1e-17);
    EXPECT_NEAR(s.second_moment[2], 5.9950000000000014e-05, 1e-17);
    EXPECT_NEAR(next.coefficients()[0], 0.20515780205904946, 1e-14);
    EXPECT_EQ(next.coefficients()[1], 1.0);
    EXPECT_NEAR(next.coefficients()[2], -0.2942255346688634, 1e-14);
}

TEST(AdamStep, ZeroGradientIsNullUpdate) {
    const MalafideFilter f({0.2, 0.7, -0.3, 0.05, 0.4}, 16000);
    AttackConfig cfg;
    cfg.adam.weight_decay = 0.0;
    const auto [next, s] = adam_step(f, std::vector<double>(5, 0.0), AdamState(5), cfg);
    EXPECT_EQ(std::vector<double>(next.coefficients().begin(), next.coefficients().end()),
              (std::vector<double>{0.2, 0.7, 1.0, 0.05, 0.4}));
}

TEST(AdamStep, WeightDecayShrinksMonotonically) {
    MalafideFilter f({0.2, -0.4, 1.0, 0.3, -0.05}, 16000);
    AttackConfig cfg;
    cfg.adam.learning_rate = 1e-3;
    cfg.adam.weight_decay = 0.1;
    AdamState state(5);
    for (int step = 0; step < 50; ++step) {
        auto [next, s] = adam_step(f, std::vector<double>(5, 0.0), std::move(state), cfg);
        for (std::size_t i : {0u, 1u, 3u, 4u}) {
            EXPECT_LT(std::abs(next.coefficients()[i]), std::abs(f.coefficients()[i]));
            EXPECT_EQ(std::signbit(next.coefficients()[i]), std::signbit(f.coefficients()[i]));
        }
        EXPECT_EQ(next.coefficients()[2], 1.0);
        f = next;
        state = std::move(s);
    }
}

TEST(AdamStep, NonFiniteGradientRaises) {
    const MalafideFilter f({0.0, 1.0, 0.0}, 16000);
    EXPECT_THROW(adam_step(f, std::vector<double>{0.0, NAN, 0.0}, AdamState(3), AttackConfig{}), NumericalError);
}

TEST(OptimizeFilter, RejectsBadConfig) {
    const auto model = small_model(9);
    Rng rng(9);
    const auto spoofs = random_batch(rng, 4, 256);
    AttackConfig cfg;
    cfg.filter_length = 9;
    cfg.epochs = 0;
    EXPECT_THROW(optimize_filter(model, spoofs, "SA1", cfg), ValidationError);
    cfg.epochs = 1;
    cfg.filter_length = 8;
    EXPECT_THROW(optimize_filter(model, spoofs, "SA1", cfg), ValidationError);
    cfg.filter_length = 9;
    EXPECT_THROW(optimize_filter(model, std::vector<Waveform>{}, "SA1", cfg), ValidationError);
}

TEST(OptimizeFilter, DiracCenterHeldAfterEveryBatchAndDeterministic) {
    const auto model = small_model(10);
    Rng rng(10);
    const auto spoofs = random_batch(rng, 20, 256);
    AttackConfig cfg;
    cfg.filter_length = 9;
    cfg.epochs = 3;
    cfg.batch_size = 6;
    cfg.adam.learning_rate = 1e-2;
    cfg.seed = 77;
    int batches = 0;
    const auto a = optimize_filter(model, spoofs, "SA1", cfg, [&](const BatchEvent& e) {
        ++batches;
        EXPECT_EQ(e.filter->coefficients()[4], 1.0);
    });
    EXPECT_EQ(batches, 3 * 4);
    const auto b = optimize_filter(model, spoofs, "SA1", cfg);
    EXPECT_EQ(a.filter, b.filter);
    ASSERT_EQ(a.report.epochs.size(), 3u);
    EXPECT_EQ(a.report.epochs.back().mean_objective, b.report.epochs.back().mean_objective);
    EXPECT_NE(a.filter, optimize_filter(model, spoofs, "SA2", cfg).filter);
}

TEST(OptimizeFilter, RaisesScoreOfLinearScorer) {
    // Filtered score is linear in the taps, so ascent must increase it.
    Rng rng(12);
    const auto w = random_vector(rng, 64);
    const LinearScorer scorer(w, -5.0, 16000);
    const auto spoofs = random_batch(rng, 14, 64);
    AttackConfig cfg;
    cfg.filter_length = 9;
    cfg.epochs = 15;
    cfg.adam.learning_rate = 1e-2;
    const auto r = optimize_filter(scorer, spoofs, "SA1", cfg);
    EXPECT_GT(r.report.epochs.back().mean_objective, r.report.baseline_mean_objective);
    EXPECT_GE(r.report.epochs.back().part1_success_rate, r.report.baseline_success_rate);
}

TEST(SelectFilter, ArgmaxWithShortestTieBreak) {
    auto cand = [](int len, double rate) { return FilterCandidate{MalafideFilter::dirac(len, 16000), rate}; };
    const std::vector<FilterCandidate> c1{cand(65, 0.4), cand(257, 0.9), cand(1025, 0.7)};
    EXPECT_EQ(select_filter(c1).length(), 257);
    const std::vector<FilterCandidate> c2{cand(1025, 0.5), cand(257, 0.5), cand(65, 0.5)};
    EXPECT_EQ(select_filter(c2).length(), 65);
    const std::vector<FilterCandidate> c3{cand(513, 0.1)};
    EXPECT_EQ(select_filter(c3).length(), 513);
    EXPECT_THROW(select_filter(std::vector<FilterCandidate>{}), ValidationError);
}
