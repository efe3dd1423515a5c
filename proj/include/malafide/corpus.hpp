#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <set>
#include <string>
#include <vector>

#include "malafide/error.hpp"
#include "malafide/random.hpp"
#include "malafide/waveform.hpp"

namespace malafide {

/// Synthetic spoofing attack: an additive amplitude-modulated tone.
struct SpoofAttackSpec {
    std::string attack_id;
    double artifact_frequency_hz = 1000.0;
    double artifact_amplitude = 0.5;  ///< tone RMS relative to speech RMS

    void validate(int sample_rate) const {
        detail::require(!attack_id.empty(), "attack id must be non-empty");
        detail::require(artifact_frequency_hz > 0.0 && artifact_frequency_hz < sample_rate / 2.0,
                        "attack " + attack_id + ": artifact frequency must lie in (0, Nyquist)");
        detail::require(artifact_amplitude >= 0.0, "attack " + attack_id + ": artifact amplitude must be >= 0");
    }
};

inline constexpr double kArtifactModulationHz = 4.0;
inline constexpr double kArtifactModulationDepth = 0.5;

/// Default attack catalog; artifact frequencies are pairwise >= 500 Hz apart.
inline std::vector<SpoofAttackSpec> default_attack_catalog(double amplitude = 0.5) {
    return {{"SA1", 1000.0, amplitude}, {"SA2", 2500.0, amplitude}, {"SA3", 4000.0, amplitude},
            {"SA4", 5500.0, amplitude}};
}

struct SpeakerSpec {
    std::string speaker_id;
    double f0_hz = 120.0;
    std::vector<double> formants_hz{500.0, 1500.0, 2500.0};
    std::uint64_t seed = 0;

    void validate(int sample_rate) const {
        detail::require(f0_hz >= 80.0 && f0_hz <= 300.0, "speaker " + speaker_id + ": f0 must lie in [80, 300] Hz");
        detail::require(formants_hz.size() >= 2 && formants_hz.size() <= 3,
                        "speaker " + speaker_id + ": expected 2-3 resonances");
        for (double f : formants_hz)
            detail::require(f > 0.0 && f < sample_rate / 2.0,
                            "speaker " + speaker_id + ": resonance must lie below Nyquist");
    }
};

inline SpeakerSpec random_speaker(std::string id, std::uint64_t seed) {
    Rng rng(seed);
    SpeakerSpec s;
    s.speaker_id = std::move(id);
    s.f0_hz = rng.uniform(80.0, 300.0);
    s.formants_hz = {rng.uniform(300.0, 900.0), rng.uniform(900.0, 2400.0), rng.uniform(2400.0, 3500.0)};
    s.seed = rng.next_u64();
    return s;
}

namespace detail {

inline void scale_to_rms(std::vector<double>& x, double target) {
    double acc = 0.0;
    for (double v : x)
        acc += v * v;
    const double rms = std::sqrt(acc / static_cast<double>(x.size()));
    if (rms > 0.0)
        for (double& v : x)
            v *= target / rms;
}

/// Two-pole resonator with unit gain at its center frequency.
inline void resonate(std::vector<double>& x, double freq_hz, double bandwidth_hz, int sample_rate) {
    const double r = std::exp(-std::numbers::pi * bandwidth_hz / sample_rate);
    const double theta = 2.0 * std::numbers::pi * freq_hz / sample_rate;
    const double a1 = 2.0 * r * std::cos(theta);
    const double a2 = -r * r;
    const double gain = (1.0 - r) * std::sqrt(1.0 - 2.0 * r * std::cos(2.0 * theta) + r * r);
    double y1 = 0.0, y2 = 0.0;
    for (double& v : x) {
        const double y = gain * v + a1 * y1 + a2 * y2;
        y2 = y1;
        y1 = y;
        v = y;
    }
}

} // namespace detail

inline constexpr double kBonafideRms = 0.1;

/// Harmonic source (10 harmonics, 1/k roll-off) at a per-utterance jittered f0,
/// shaped by resonators at the speaker's formants, plus noise at -30 dB.
inline Waveform generate_bonafide(const SpeakerSpec& speaker, double duration_s, std::uint64_t seed,
                                  int sample_rate = kDefaultSampleRate) {
    detail::require(duration_s >= 0.5, "bona fide duration must be at least 0.5 s");
    speaker.validate(sample_rate);
    Rng rng(seed);
    const auto n = static_cast<std::size_t>(std::lround(duration_s * sample_rate));
    const std::size_t preroll = static_cast<std::size_t>(sample_rate / 20); // resonator settling
    const double f0 = speaker.f0_hz * rng.uniform(0.97, 1.03);

    std::vector<double> x(n + preroll, 0.0);
    for (int k = 1; k <= 10; ++k) {
        const double f = k * f0;
        if (f >= sample_rate / 2.0)
            break;
        const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
        const double w = 2.0 * std::numbers::pi * f / sample_rate;
        for (std::size_t t = 0; t < x.size(); ++t)
            x[t] += std::sin(w * static_cast<double>(t) + phase) / k;
    }
    for (double f : speaker.formants_hz)
        detail::resonate(x, f, 80.0 + 0.05 * f, sample_rate);
    std::vector<double> out(x.begin() + static_cast<std::ptrdiff_t>(preroll), x.end());

    detail::scale_to_rms(out, 1.0);
    const double noise_rms = std::pow(10.0, -30.0 / 20.0);
    for (double& v : out)
        v += noise_rms * rng.normal();
    detail::scale_to_rms(out, kBonafideRms);
    return Waveform(std::move(out), sample_rate);
}

/// Unit-RMS amplitude-modulated tone.
inline std::vector<double> artifact_tone(std::size_t n, double freq_hz, int sample_rate, std::uint64_t seed) {
    Rng rng(seed);
    const double carrier_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double mod_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double wc = 2.0 * std::numbers::pi * freq_hz / sample_rate;
    const double wm = 2.0 * std::numbers::pi * kArtifactModulationHz / sample_rate;
    std::vector<double> tone(n);
    for (std::size_t t = 0; t < n; ++t) {
        const double tt = static_cast<double>(t);
        tone[t] = (1.0 + kArtifactModulationDepth * std::sin(wm * tt + mod_phase)) * std::sin(wc * tt + carrier_phase);
    }
    detail::scale_to_rms(tone, 1.0);
    return tone;
}

inline Waveform generate_spoof(const Waveform& bona, const SpoofAttackSpec& attack, std::uint64_t seed) {
    attack.validate(bona.sample_rate());
    const auto tone = artifact_tone(bona.size(), attack.artifact_frequency_hz, bona.sample_rate(), seed);
    const double gain = attack.artifact_amplitude * bona.rms();
    std::vector<double> out(bona.samples().begin(), bona.samples().end());
    for (std::size_t t = 0; t < out.size(); ++t)
        out[t] += gain * tone[t];
    return Waveform(std::move(out), bona.sample_rate());
}

namespace partition {
inline const std::string kCmTrain = "cm-train";
inline const std::string kCmDev = "cm-dev";
inline const std::string kPart1 = "part1";
inline const std::string kPart2 = "part2";
} // namespace partition

namespace label {
inline const std::string kBonafide = "bonafide";
inline const std::string kSpoof = "spoof";
} // namespace label

struct CorpusConfig {
    int sample_rate = kDefaultSampleRate;
    double duration_s = 1.0;
    int n_speakers = 10;
    int bona_cm_train = 80;
    int bona_cm_dev = 40;
    int bona_eval = 80; ///< split evenly into Part-1 and Part-2
    int spoofs_per_attack = 40; ///< attacker side, split evenly into Part-1 and Part-2
    int cm_train_spoofs_per_attack = 20;
    int cm_dev_spoofs_per_attack = 10;
    std::vector<SpoofAttackSpec> attacks = default_attack_catalog();
    std::uint64_t seed = 1;

    void validate() const {
        detail::require(sample_rate > 0, "sample rate must be positive");
        detail::require(n_speakers >= 2, "need at least two speakers");
        detail::require(bona_cm_train > 0 && bona_cm_dev > 0 && bona_eval > 0, "bona fide counts must be positive");
        detail::require(spoofs_per_attack > 0 && spoofs_per_attack % 2 == 0,
                        "spoofs per attack must be even so Part-1 and Part-2 are equal, got " +
                            std::to_string(spoofs_per_attack));
        detail::require(bona_eval % 2 == 0, "bona fide evaluation count must be even, got " + std::to_string(bona_eval));
        detail::require(cm_train_spoofs_per_attack > 0 && cm_dev_spoofs_per_attack > 0,
                        "defender spoof counts must be positive");
        detail::require(!attacks.empty(), "at least one attack is required");
        std::set<std::string> ids;
        for (const auto& a : attacks) {
            a.validate(sample_rate);
            detail::require(ids.insert(a.attack_id).second, "duplicate attack id " + a.attack_id);
        }
    }
};

struct Utterance {
    std::string utterance_id;
    std::string speaker_id;
    std::string label;     ///< bonafide | spoof
    std::string attack_id; ///< "-" for bona fide
    std::string partition; ///< cm-train | cm-dev | part1 | part2
    Waveform audio;
};

/// Attacker-side view of one attack: S^(a) split into two equal halves.
struct AttackDataset {
    std::string attack_id;
    std::vector<Waveform> part1;
    std::vector<Waveform> part2;
    std::vector<Waveform> bona_part1;
    std::vector<Waveform> bona_part2;
};

struct Corpus {
    CorpusConfig config;
    std::vector<SpeakerSpec> speakers;
    std::vector<Utterance> utterances;

    std::vector<Waveform> select(const std::string& label_value, const std::string& partition_value,
                                 const std::string& attack_id = {}) const {
        std::vector<Waveform> out;
        for (const auto& u : utterances)
            if (u.label == label_value && u.partition == partition_value && (attack_id.empty() || u.attack_id == attack_id))
                out.push_back(u.audio);
        return out;
    }

    AttackDataset attack_dataset(const std::string& attack_id) const {
        AttackDataset d{attack_id, select(label::kSpoof, partition::kPart1, attack_id),
                        select(label::kSpoof, partition::kPart2, attack_id), select(label::kBonafide, partition::kPart1),
                        select(label::kBonafide, partition::kPart2)};
        detail::require(!d.part1.empty(), "no Part-1 spoofs for attack " + attack_id);
        return d;
    }
};

inline std::string speaker_name(int index) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "spk%02d", index);
    return buf;
}

/// Builds the defender partition (cm-train, cm-dev) and the attacker partition
/// (part1, part2 per attack). The corpus is a pure function of the config.
inline Corpus build_protocol(const CorpusConfig& config) {
    config.validate();
    Corpus corpus;
    corpus.config = config;
    for (int s = 0; s < config.n_speakers; ++s) {
        auto spec = random_speaker(speaker_name(s), derive_seed(config.seed, "speaker/" + std::to_string(s)));
        spec.validate(config.sample_rate);
        corpus.speakers.push_back(std::move(spec));
    }
    auto speaker_for = [&](int i) -> const SpeakerSpec& {
        return corpus.speakers[static_cast<std::size_t>(i % config.n_speakers)];
    };
    auto make_id = [](const std::string& prefix, int i) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%s_%04d", prefix.c_str(), i);
        return std::string(buf);
    };

    const int bona_total = config.bona_cm_train + config.bona_cm_dev + config.bona_eval;
    for (int i = 0; i < bona_total; ++i) {
        const std::string part = i < config.bona_cm_train                       ? partition::kCmTrain
                                 : i < config.bona_cm_train + config.bona_cm_dev ? partition::kCmDev
                                 : i < config.bona_cm_train + config.bona_cm_dev + config.bona_eval / 2
                                     ? partition::kPart1
                                     : partition::kPart2;
        const auto id = make_id("bona", i);
        const auto& spk = speaker_for(i);
        corpus.utterances.push_back({id, spk.speaker_id, label::kBonafide, "-", part,
                                     generate_bonafide(spk, config.duration_s, derive_seed(config.seed, "audio/" + id),
                                                       config.sample_rate)});
    }

    for (const auto& attack : config.attacks) {
        const int n_def = config.cm_train_spoofs_per_attack + config.cm_dev_spoofs_per_attack;
        const int n_total = n_def + config.spoofs_per_attack;
        for (int j = 0; j < n_total; ++j) {
            const std::string part = j < config.cm_train_spoofs_per_attack ? partition::kCmTrain
                                     : j < n_def                           ? partition::kCmDev
                                     : j < n_def + config.spoofs_per_attack / 2 ? partition::kPart1
                                                                                : partition::kPart2;
            const auto id = make_id("spoof_" + attack.attack_id, j);
            const auto& spk = speaker_for(j);
            // The spoof imitates a fresh utterance of the speaker that is not itself in the corpus.
            const auto source =
                generate_bonafide(spk, config.duration_s, derive_seed(config.seed, "source/" + id), config.sample_rate);
            corpus.utterances.push_back({id, spk.speaker_id, label::kSpoof, attack.attack_id, part,
                                         generate_spoof(source, attack, derive_seed(config.seed, "artifact/" + id))});
        }
    }
    return corpus;
}

} // namespace malafide
