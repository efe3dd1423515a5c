#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "malafide/error.hpp"
#include "malafide/random.hpp"
#include "malafide/waveform.hpp"

namespace malafide {

/// Two-class CM output. Higher score() means more bona fide.
struct Logits {
    double spoof = 0.0;
    double bonafide = 0.0;

    double score() const noexcept { return bonafide - spoof; }
};

struct ScoreGradient {
    Logits logits;
    std::vector<double> gradient; ///< d(score)/d(input[t]), same length as the input
};

/// Countermeasure contract: score a signal and differentiate the scalar score
/// (bona fide logit minus spoof logit) with respect to every input sample.
/// Implementations are immutable and safe to call concurrently.
class DifferentiableScorer {
public:
    virtual ~DifferentiableScorer() = default;

    virtual const std::string& scorer_id() const = 0;
    virtual int sample_rate() const = 0;
    virtual Logits score_logits(std::span<const double> signal) const = 0;
    virtual ScoreGradient score_and_gradient(std::span<const double> signal) const = 0;
};

namespace detail {

inline void require_finite_input(std::span<const double> signal) {
    require(!signal.empty(), "scorer input is empty");
    for (std::size_t i = 0; i < signal.size(); ++i)
        require(std::isfinite(signal[i]), "scorer input sample " + std::to_string(i) + " is not finite");
}

inline void require_rate(const DifferentiableScorer& scorer, const Waveform& w) {
    require(w.sample_rate() == scorer.sample_rate(),
            "sample rate mismatch: scorer " + scorer.scorer_id() + " expects " + std::to_string(scorer.sample_rate()) +
                " Hz, got " + std::to_string(w.sample_rate()) + " Hz");
}

} // namespace detail

inline Logits score_logits(const DifferentiableScorer& scorer, const Waveform& signal) {
    detail::require_rate(scorer, signal);
    return scorer.score_logits(signal.samples());
}

inline double cm_score(const DifferentiableScorer& scorer, const Waveform& signal) {
    return score_logits(scorer, signal).score();
}

inline std::vector<double> input_gradient(const DifferentiableScorer& scorer, const Waveform& signal) {
    detail::require_rate(scorer, signal);
    return scorer.score_and_gradient(signal.samples()).gradient;
}

/// Affine scorer on raw samples: logits (0, w.x + b). Input length must equal w.
class LinearScorer final : public DifferentiableScorer {
public:
    LinearScorer(std::vector<double> weights, double bias, int sample_rate, std::string id = "linear")
        : weights_(std::move(weights)), bias_(bias), sample_rate_(sample_rate), id_(std::move(id)) {}

    const std::string& scorer_id() const override { return id_; }
    int sample_rate() const override { return sample_rate_; }

    Logits score_logits(std::span<const double> signal) const override {
        detail::require_finite_input(signal);
        detail::require(signal.size() == weights_.size(), "linear scorer input length mismatch");
        double acc = bias_;
        for (std::size_t i = 0; i < signal.size(); ++i)
            acc += weights_[i] * signal[i];
        return {0.0, acc};
    }

    ScoreGradient score_and_gradient(std::span<const double> signal) const override {
        return {score_logits(signal), weights_};
    }

private:
    std::vector<double> weights_;
    double bias_;
    int sample_rate_;
    std::string id_;
};

/// Layer shapes of the toy CM: conv -> relu -> maxpool -> conv -> relu ->
/// global average pool -> linear(2).
struct CmArchitecture {
    int input_length = 16000;
    int conv1_channels = 8;
    int conv1_kernel = 64;
    int conv1_stride = 8;
    int pool = 4;
    int conv2_channels = 16;
    int conv2_kernel = 32;
    int conv2_stride = 4;

    int conv1_steps() const { return (input_length - conv1_kernel) / conv1_stride + 1; }
    int pooled_steps() const { return conv1_steps() / pool; }
    int conv2_steps() const { return (pooled_steps() - conv2_kernel) / conv2_stride + 1; }

    void validate() const {
        detail::require(input_length > 0 && conv1_channels > 0 && conv1_kernel > 0 && conv1_stride > 0 && pool > 0 &&
                            conv2_channels > 0 && conv2_kernel > 0 && conv2_stride > 0,
                        "CM architecture sizes must be positive");
        detail::require(input_length >= conv1_kernel, "CM input shorter than first kernel");
        detail::require(conv1_steps() / pool >= conv2_kernel, "CM pooled sequence shorter than second kernel");
    }

    /// Variant "a": kernels 64/32. Variant "b": kernels 48/24.
    static CmArchitecture variant(char v) {
        CmArchitecture a;
        if (v == 'b') {
            a.conv1_kernel = 48;
            a.conv2_kernel = 24;
        } else {
            detail::require(v == 'a', std::string("unknown CM variant '") + v + "' (expected a or b)");
        }
        return a;
    }

    friend bool operator==(const CmArchitecture&, const CmArchitecture&) = default;
};

/// Offsets of each tensor inside the flat parameter vector.
struct CmLayout {
    std::size_t w1, b1, w2, b2, w3, b3, total;

    explicit CmLayout(const CmArchitecture& a) {
        const auto c1 = static_cast<std::size_t>(a.conv1_channels);
        const auto c2 = static_cast<std::size_t>(a.conv2_channels);
        w1 = 0;
        b1 = w1 + c1 * static_cast<std::size_t>(a.conv1_kernel);
        w2 = b1 + c1;
        b2 = w2 + c2 * c1 * static_cast<std::size_t>(a.conv2_kernel);
        w3 = b2 + c2;
        b3 = w3 + 2 * c2;
        total = b3 + 2;
    }
};

/// Desk-scale convolutional countermeasure operating on raw samples.
class ToyCmModel final : public DifferentiableScorer {
public:
    ToyCmModel(CmArchitecture arch, std::vector<double> params, int sample_rate, std::string id)
        : arch_(arch), layout_(arch), params_(std::move(params)), sample_rate_(sample_rate), id_(std::move(id)) {
        arch_.validate();
        detail::require(params_.size() == layout_.total, "CM parameter count " + std::to_string(params_.size()) +
                                                             " does not match architecture (" +
                                                             std::to_string(layout_.total) + ")");
        for (double p : params_)
            detail::require(std::isfinite(p), "CM parameters must be finite");
    }

    /// He-uniform weights, zero biases.
    static ToyCmModel initialize(const CmArchitecture& arch, std::uint64_t seed, int sample_rate, std::string id) {
        arch.validate();
        const CmLayout layout(arch);
        std::vector<double> p(layout.total, 0.0);
        Rng rng(seed);
        auto fill = [&](std::size_t from, std::size_t to, double fan_in) {
            const double bound = std::sqrt(6.0 / fan_in);
            for (std::size_t i = from; i < to; ++i)
                p[i] = rng.uniform(-bound, bound);
        };
        fill(layout.w1, layout.b1, arch.conv1_kernel);
        fill(layout.w2, layout.b2, static_cast<double>(arch.conv1_channels) * arch.conv2_kernel);
        fill(layout.w3, layout.b3, arch.conv2_channels);
        return ToyCmModel(arch, std::move(p), sample_rate, std::move(id));
    }

    static ToyCmModel zeros(const CmArchitecture& arch, int sample_rate, std::string id = "zero") {
        return ToyCmModel(arch, std::vector<double>(CmLayout(arch).total, 0.0), sample_rate, std::move(id));
    }

    const std::string& scorer_id() const override { return id_; }
    int sample_rate() const override { return sample_rate_; }
    const CmArchitecture& architecture() const noexcept { return arch_; }
    const CmLayout& layout() const noexcept { return layout_; }
    std::span<const double> parameters() const noexcept { return params_; }

    ToyCmModel with_parameters(std::vector<double> params) const {
        return ToyCmModel(arch_, std::move(params), sample_rate_, id_);
    }

    Logits score_logits(std::span<const double> signal) const override {
        detail::require_finite_input(signal);
        Activations act;
        forward(fit_input(signal), act);
        return act.logits;
    }

    ScoreGradient score_and_gradient(std::span<const double> signal) const override {
        detail::require_finite_input(signal);
        Activations act;
        forward(fit_input(signal), act);
        std::vector<double> dx(act.x.size(), 0.0);
        backward(act, {-1.0, 1.0}, nullptr, dx);
        return {act.logits, unfit_gradient(dx, signal.size())};
    }

    /// Cross-entropy on the softmax of the logits; label 1 = bona fide, 0 = spoof.
    /// Accumulates d(loss)/d(params) into `param_grad` and returns the loss.
    double loss_and_gradient(std::span<const double> signal, int label, std::span<double> param_grad) const {
        detail::require(param_grad.size() == params_.size(), "parameter gradient size mismatch");
        Activations act;
        forward(fit_input(signal), act);
        const double hi = std::max(act.logits.spoof, act.logits.bonafide);
        const double es = std::exp(act.logits.spoof - hi);
        const double eb = std::exp(act.logits.bonafide - hi);
        const double ps = es / (es + eb);
        const double pb = eb / (es + eb);
        const double loss = -(label == 1 ? act.logits.bonafide : act.logits.spoof) + hi + std::log(es + eb);
        const Logits dlogits{ps - (label == 0 ? 1.0 : 0.0), pb - (label == 1 ? 1.0 : 0.0)};
        std::vector<double> unused;
        backward(act, dlogits, param_grad.data(), unused);
        return loss;
    }

private:
    struct Activations {
        std::vector<double> x;       // fitted input
        std::vector<double> z1;      // conv1 pre-activation, [c1][t1]
        std::vector<double> pooled;  // [c1][tp]
        std::vector<int> pool_index; // argmax t1 per pooled cell
        std::vector<double> z2;      // conv2 pre-activation, [c2][t2]
        std::vector<double> gap;     // [c2]
        Logits logits;
    };

    /// Zero-pad at the end or center-crop to the expected input length.
    std::vector<double> fit_input(std::span<const double> signal) const {
        const auto n = static_cast<std::size_t>(arch_.input_length);
        std::vector<double> x(n, 0.0);
        if (signal.size() <= n) {
            std::copy(signal.begin(), signal.end(), x.begin());
        } else {
            const std::size_t start = (signal.size() - n) / 2;
            std::copy_n(signal.begin() + static_cast<std::ptrdiff_t>(start), n, x.begin());
        }
        return x;
    }

    std::vector<double> unfit_gradient(const std::vector<double>& dx, std::size_t original) const {
        const std::size_t n = dx.size();
        std::vector<double> g(original, 0.0);
        if (original <= n) {
            std::copy_n(dx.begin(), original, g.begin());
        } else {
            const std::size_t start = (original - n) / 2;
            std::copy(dx.begin(), dx.end(), g.begin() + static_cast<std::ptrdiff_t>(start));
        }
        return g;
    }

    void forward(std::vector<double> x, Activations& act) const {
        const auto& a = arch_;
        const auto c1 = static_cast<std::size_t>(a.conv1_channels);
        const auto c2 = static_cast<std::size_t>(a.conv2_channels);
        const auto k1 = static_cast<std::size_t>(a.conv1_kernel);
        const auto k2 = static_cast<std::size_t>(a.conv2_kernel);
        const auto t1 = static_cast<std::size_t>(a.conv1_steps());
        const auto tp = static_cast<std::size_t>(a.pooled_steps());
        const auto t2 = static_cast<std::size_t>(a.conv2_steps());
        const auto s1 = static_cast<std::size_t>(a.conv1_stride);
        const auto s2 = static_cast<std::size_t>(a.conv2_stride);
        const auto pool = static_cast<std::size_t>(a.pool);
        const double* p = params_.data();

        act.x = std::move(x);
        act.z1.assign(c1 * t1, 0.0);
        for (std::size_t c = 0; c < c1; ++c) {
            const double* w = p + layout_.w1 + c * k1;
            const double bias = p[layout_.b1 + c];
            for (std::size_t t = 0; t < t1; ++t) {
                const double* xs = act.x.data() + t * s1;
                double acc = bias;
                for (std::size_t k = 0; k < k1; ++k)
                    acc += w[k] * xs[k];
                act.z1[c * t1 + t] = acc;
            }
        }

        act.pooled.assign(c1 * tp, 0.0);
        act.pool_index.assign(c1 * tp, 0);
        for (std::size_t c = 0; c < c1; ++c) {
            for (std::size_t u = 0; u < tp; ++u) {
                std::size_t best = u * pool;
                double best_v = std::max(0.0, act.z1[c * t1 + best]);
                for (std::size_t j = 1; j < pool; ++j) {
                    const double v = std::max(0.0, act.z1[c * t1 + u * pool + j]);
                    if (v > best_v) { // strict: first maximum wins ties
                        best_v = v;
                        best = u * pool + j;
                    }
                }
                act.pooled[c * tp + u] = best_v;
                act.pool_index[c * tp + u] = static_cast<int>(best);
            }
        }

        act.z2.assign(c2 * t2, 0.0);
        act.gap.assign(c2, 0.0);
        for (std::size_t o = 0; o < c2; ++o) {
            const double bias = p[layout_.b2 + o];
            double sum = 0.0;
            for (std::size_t t = 0; t < t2; ++t) {
                double acc = bias;
                for (std::size_t i = 0; i < c1; ++i) {
                    const double* w = p + layout_.w2 + (o * c1 + i) * k2;
                    const double* xs = act.pooled.data() + i * tp + t * s2;
                    for (std::size_t k = 0; k < k2; ++k)
                        acc += w[k] * xs[k];
                }
                act.z2[o * t2 + t] = acc;
                sum += std::max(0.0, acc);
            }
            act.gap[o] = sum / static_cast<double>(t2);
        }

        double out[2];
        for (std::size_t j = 0; j < 2; ++j) {
            double acc = p[layout_.b3 + j];
            for (std::size_t o = 0; o < c2; ++o)
                acc += p[layout_.w3 + j * c2 + o] * act.gap[o];
            out[j] = acc;
        }
        act.logits = {out[0], out[1]};
    }

    /// Reverse pass. Writes parameter gradients when `dparams` is non-null and
    /// input gradients when `dx` is non-empty.
    void backward(const Activations& act, Logits dlogits, double* dparams, std::vector<double>& dx) const {
        const auto& a = arch_;
        const auto c1 = static_cast<std::size_t>(a.conv1_channels);
        const auto c2 = static_cast<std::size_t>(a.conv2_channels);
        const auto k1 = static_cast<std::size_t>(a.conv1_kernel);
        const auto k2 = static_cast<std::size_t>(a.conv2_kernel);
        const auto t1 = static_cast<std::size_t>(a.conv1_steps());
        const auto tp = static_cast<std::size_t>(a.pooled_steps());
        const auto t2 = static_cast<std::size_t>(a.conv2_steps());
        const auto s1 = static_cast<std::size_t>(a.conv1_stride);
        const auto s2 = static_cast<std::size_t>(a.conv2_stride);
        const double* p = params_.data();
        const double dl[2] = {dlogits.spoof, dlogits.bonafide};

        std::vector<double> dgap(c2, 0.0);
        for (std::size_t j = 0; j < 2; ++j) {
            for (std::size_t o = 0; o < c2; ++o) {
                dgap[o] += dl[j] * p[layout_.w3 + j * c2 + o];
                if (dparams)
                    dparams[layout_.w3 + j * c2 + o] += dl[j] * act.gap[o];
            }
            if (dparams)
                dparams[layout_.b3 + j] += dl[j];
        }

        std::vector<double> dpooled(c1 * tp, 0.0);
        for (std::size_t o = 0; o < c2; ++o) {
            const double d_avg = dgap[o] / static_cast<double>(t2);
            for (std::size_t t = 0; t < t2; ++t) {
                if (!(act.z2[o * t2 + t] > 0.0))
                    continue;
                if (dparams)
                    dparams[layout_.b2 + o] += d_avg;
                for (std::size_t i = 0; i < c1; ++i) {
                    const std::size_t w_off = layout_.w2 + (o * c1 + i) * k2;
                    const double* xs = act.pooled.data() + i * tp + t * s2;
                    double* dxs = dpooled.data() + i * tp + t * s2;
                    if (dparams)
                        for (std::size_t k = 0; k < k2; ++k)
                            dparams[w_off + k] += d_avg * xs[k];
                    for (std::size_t k = 0; k < k2; ++k)
                        dxs[k] += d_avg * p[w_off + k];
                }
            }
        }

        std::vector<double> dz1(c1 * t1, 0.0);
        for (std::size_t c = 0; c < c1; ++c) {
            for (std::size_t u = 0; u < tp; ++u) {
                const auto idx = static_cast<std::size_t>(act.pool_index[c * tp + u]);
                if (act.z1[c * t1 + idx] > 0.0)
                    dz1[c * t1 + idx] += dpooled[c * tp + u];
            }
        }

        for (std::size_t c = 0; c < c1; ++c) {
            const std::size_t w_off = layout_.w1 + c * k1;
            for (std::size_t t = 0; t < t1; ++t) {
                const double d = dz1[c * t1 + t];
                if (d == 0.0)
                    continue;
                if (dparams) {
                    dparams[layout_.b1 + c] += d;
                    const double* xs = act.x.data() + t * s1;
                    for (std::size_t k = 0; k < k1; ++k)
                        dparams[w_off + k] += d * xs[k];
                }
                if (!dx.empty()) {
                    double* dxs = dx.data() + t * s1;
                    for (std::size_t k = 0; k < k1; ++k)
                        dxs[k] += d * p[w_off + k];
                }
            }
        }
    }

    CmArchitecture arch_;
    CmLayout layout_;
    std::vector<double> params_;
    int sample_rate_;
    std::string id_;
};

} // namespace malafide
