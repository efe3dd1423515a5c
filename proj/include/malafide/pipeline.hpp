#pragma once

// Run-directory stages shared by the command-line tool and the acceptance
// suite. Every path is relative to a run directory:
//
//   config.json                       resolved configuration (gen-corpus)
//   corpus/manifest.csv, corpus/wav/  generated audio
//   models/cm_<v>.json                trained countermeasures (+ .report.json, .config.json)
//   filters/<scorer>/<attack>/        L<len>.json, L<len>.report.json, L<len>.epochs.csv,
//                                     selection.json, selected.json
//   eval/<name>/                      metrics.json, scores.csv, sasv_scores.csv

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "malafide/asv.hpp"
#include "malafide/attack.hpp"
#include "malafide/cm_training.hpp"
#include "malafide/corpus.hpp"
#include "malafide/error.hpp"
#include "malafide/io.hpp"
#include "malafide/metrics.hpp"
#include "malafide/wav_io.hpp"

namespace malafide {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration

inline json default_run_config() {
    json attacks = json::array();
    for (const auto& a : default_attack_catalog())
        attacks.push_back({{"attack_id", a.attack_id},
                           {"artifact_frequency_hz", a.artifact_frequency_hz},
                           {"artifact_amplitude", a.artifact_amplitude}});
    const CorpusConfig cc;
    const TrainConfig tc;
    const AttackConfig ac;
    return {
        {"seed", 1},
        {"corpus",
         {{"sample_rate", cc.sample_rate},
          {"duration_s", cc.duration_s},
          {"n_speakers", cc.n_speakers},
          {"bona_cm_train", cc.bona_cm_train},
          {"bona_cm_dev", cc.bona_cm_dev},
          {"bona_eval", cc.bona_eval},
          {"spoofs_per_attack", cc.spoofs_per_attack},
          {"cm_train_spoofs_per_attack", cc.cm_train_spoofs_per_attack},
          {"cm_dev_spoofs_per_attack", cc.cm_dev_spoofs_per_attack},
          {"attacks", attacks}}},
        {"cm",
         {{"epochs", tc.epochs},
          {"batch_size", tc.batch_size},
          {"learning_rate", tc.adam.learning_rate},
          {"weight_decay", tc.adam.weight_decay},
          {"eer_threshold", tc.eer_threshold}}},
        {"attack",
         {{"lengths", {65, 257, 1025}},
          {"epochs", ac.epochs},
          {"batch_size", ac.batch_size},
          {"learning_rate", ac.adam.learning_rate},
          {"weight_decay", ac.adam.weight_decay},
          {"beta1", ac.adam.beta1},
          {"beta2", ac.adam.beta2},
          {"epsilon", ac.adam.epsilon}}},
        {"evaluation",
         {{"sasv_filter_length", 257},
          {"enroll_per_speaker", 3},
          {"nontarget_claims_per_utterance", 1},
          {"fusion_cm_weight", 1.0},
          {"fusion_asv_weight", 1.0}}},
        {"pipeline", {{"variants", {"a", "b"}}}},
    };
}

namespace detail {

inline void check_known_keys(const json& user, const json& reference, const std::string& prefix) {
    if (!user.is_object() || !reference.is_object())
        return;
    for (const auto& [key, value] : user.items()) {
        const std::string path = prefix.empty() ? key : prefix + "." + key;
        if (!reference.contains(key))
            throw ValidationError("unknown configuration key '" + path + "'");
        check_known_keys(value, reference.at(key), path);
    }
}

} // namespace detail

/// Defaults overlaid with a user patch (RFC 7386 merge; arrays replace wholesale).
inline json resolve_config(const json& user) {
    json resolved = default_run_config();
    if (user.is_null())
        return resolved;
    detail::require(user.is_object(), "configuration must be a JSON object");
    detail::check_known_keys(user, resolved, "");
    resolved.merge_patch(user);
    return resolved;
}

/// Applies "a.b.c=value" where value is parsed as JSON if possible, else taken as a string.
inline void apply_override(json& config, const std::string& assignment) {
    const auto eq = assignment.find('=');
    detail::require(eq != std::string::npos && eq > 0, "override must look like key.path=value, got '" + assignment + "'");
    const std::string key = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);
    json value;
    try {
        value = json::parse(raw);
    } catch (const json::parse_error&) {
        value = raw;
    }
    std::string pointer = "/";
    for (char ch : key)
        pointer += ch == '.' ? '/' : ch;
    const json::json_pointer ptr(pointer);
    detail::require(default_run_config().contains(ptr), "unknown configuration key '" + key + "'");
    config[ptr] = value;
}

inline std::uint64_t master_seed(const json& cfg) { return cfg.at("seed").get<std::uint64_t>(); }

inline CorpusConfig corpus_config(const json& cfg) {
    try {
        const auto& c = cfg.at("corpus");
        CorpusConfig out;
        out.sample_rate = c.at("sample_rate").get<int>();
        out.duration_s = c.at("duration_s").get<double>();
        out.n_speakers = c.at("n_speakers").get<int>();
        out.bona_cm_train = c.at("bona_cm_train").get<int>();
        out.bona_cm_dev = c.at("bona_cm_dev").get<int>();
        out.bona_eval = c.at("bona_eval").get<int>();
        out.spoofs_per_attack = c.at("spoofs_per_attack").get<int>();
        out.cm_train_spoofs_per_attack = c.at("cm_train_spoofs_per_attack").get<int>();
        out.cm_dev_spoofs_per_attack = c.at("cm_dev_spoofs_per_attack").get<int>();
        out.attacks.clear();
        for (const auto& a : c.at("attacks"))
            out.attacks.push_back({a.at("attack_id").get<std::string>(), a.at("artifact_frequency_hz").get<double>(),
                                   a.at("artifact_amplitude").get<double>()});
        out.seed = derive_seed(master_seed(cfg), "corpus");
        out.validate();
        return out;
    } catch (const json::exception& e) {
        throw ValidationError(std::string("invalid corpus configuration: ") + e.what());
    }
}

inline TrainConfig train_config(const json& cfg, char variant) {
    try {
        const auto& c = cfg.at("cm");
        TrainConfig out;
        out.epochs = c.at("epochs").get<int>();
        out.batch_size = c.at("batch_size").get<int>();
        out.adam.learning_rate = c.at("learning_rate").get<double>();
        out.adam.weight_decay = c.at("weight_decay").get<double>();
        out.eer_threshold = c.at("eer_threshold").get<double>();
        out.seed = derive_seed(master_seed(cfg), std::string("cm/") + variant);
        out.validate();
        return out;
    } catch (const json::exception& e) {
        throw ValidationError(std::string("invalid cm configuration: ") + e.what());
    }
}

inline std::vector<int> attack_lengths(const json& cfg) {
    try {
        auto lengths = cfg.at("attack").at("lengths").get<std::vector<int>>();
        detail::require(!lengths.empty(), "attack.lengths must not be empty");
        for (int l : lengths)
            require_catalog_length(l);
        return lengths;
    } catch (const json::exception& e) {
        throw ValidationError(std::string("invalid attack.lengths: ") + e.what());
    }
}

inline AttackConfig attack_config(const json& cfg, int length) {
    try {
        const auto& c = cfg.at("attack");
        AttackConfig out;
        out.filter_length = length;
        out.epochs = c.at("epochs").get<int>();
        out.batch_size = c.at("batch_size").get<int>();
        out.adam.learning_rate = c.at("learning_rate").get<double>();
        out.adam.weight_decay = c.at("weight_decay").get<double>();
        out.adam.beta1 = c.at("beta1").get<double>();
        out.adam.beta2 = c.at("beta2").get<double>();
        out.adam.epsilon = c.at("epsilon").get<double>();
        out.seed = derive_seed(master_seed(cfg), "attack/L" + std::to_string(length));
        out.validate();
        return out;
    } catch (const json::exception& e) {
        throw ValidationError(std::string("invalid attack configuration: ") + e.what());
    }
}

inline std::string dump_json(const json& j) { return j.dump(2) + "\n"; }

inline json load_run_config(const fs::path& run_dir) {
    const auto path = run_dir / "config.json";
    detail::require(fs::exists(path), "run directory has no config.json (run gen-corpus first): " + path.string());
    return resolve_config(read_json(path));
}

// ---------------------------------------------------------------------------
// Corpus on disk

inline constexpr const char* kManifestHeader = "utterance_id,speaker_id,label,attack_id,partition,wav_path";

inline void ensure_writable_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec)
        throw ValidationError("cannot create directory " + dir.string() + ": " + ec.message());
    const auto probe = dir / ".write_probe";
    {
        std::ofstream out(probe);
        if (!out)
            throw ValidationError("directory is not writable: " + dir.string());
    }
    fs::remove(probe, ec);
}

/// Writes WAVs and the manifest, plus the resolved config at the run-directory root.
inline Corpus gen_corpus_stage(const fs::path& run_dir, const json& cfg) {
    const auto corpus_cfg = corpus_config(cfg);
    ensure_writable_dir(run_dir);
    ensure_writable_dir(run_dir / "corpus" / "wav");
    auto corpus = build_protocol(corpus_cfg);
    std::string manifest = std::string(kManifestHeader) + "\n";
    for (const auto& u : corpus.utterances) {
        const std::string rel = "wav/" + u.utterance_id + ".wav";
        write_wav(run_dir / "corpus" / rel, u.audio);
        manifest += u.utterance_id + "," + u.speaker_id + "," + u.label + "," + u.attack_id + "," + u.partition + "," +
                    rel + "\n";
    }
    write_file_atomic(run_dir / "corpus" / "manifest.csv", manifest);
    write_file_atomic(run_dir / "config.json", dump_json(cfg));
    return corpus;
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ','))
        out.push_back(field);
    if (!line.empty() && line.back() == ',')
        out.emplace_back();
    return out;
}

} // namespace detail

/// Reads manifest rows and their WAVs back into memory.
inline Corpus load_corpus(const fs::path& run_dir, const json& cfg) {
    Corpus corpus;
    corpus.config = corpus_config(cfg);
    const auto manifest_path = run_dir / "corpus" / "manifest.csv";
    std::ifstream in(manifest_path);
    detail::require(static_cast<bool>(in), "cannot open manifest " + manifest_path.string());
    std::string line;
    std::getline(in, line);
    detail::require(line == kManifestHeader, manifest_path.string() + ": unexpected manifest header");
    int row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty())
            continue;
        const auto f = detail::split_csv_line(line);
        detail::require(f.size() == 6, manifest_path.string() + ": row " + std::to_string(row) + " has " +
                                           std::to_string(f.size()) + " fields, expected 6");
        corpus.utterances.push_back({f[0], f[1], f[2], f[3], f[4], read_wav(run_dir / "corpus" / f[5])});
    }
    return corpus;
}

// ---------------------------------------------------------------------------
// CM training

struct TrainStageResult {
    TrainResult result;
    fs::path model_path;
};

inline std::string cm_id(char variant) { return std::string("cm_") + variant; }

inline TrainStageResult train_cm_stage(const fs::path& run_dir, const json& cfg, const Corpus& corpus, char variant) {
    const auto arch = CmArchitecture::variant(variant);
    const auto tc = train_config(cfg, variant);
    const auto start = std::chrono::steady_clock::now();
    auto result = train_cm(arch, corpus.select(label::kBonafide, partition::kCmTrain),
                           corpus.select(label::kSpoof, partition::kCmTrain),
                           corpus.select(label::kBonafide, partition::kCmDev),
                           corpus.select(label::kSpoof, partition::kCmDev), tc, cm_id(variant));
    std::cerr << "[train-cm] variant " << variant << ": dev EER " << result.dev_eer << " in "
              << std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() << " s\n";

    const auto dir = run_dir / "models";
    const auto model_path = dir / (cm_id(variant) + ".json");
    save_model(model_path, result.model);
    const json report{{"scorer_id", cm_id(variant)},
                      {"variant", std::string(1, variant)},
                      {"loss_per_epoch", result.loss_history},
                      {"dev_eer", result.dev_eer},
                      {"dev_threshold", result.dev_threshold},
                      {"eer_threshold", tc.eer_threshold},
                      {"undertrained", result.undertrained}};
    write_file_atomic(dir / (cm_id(variant) + ".report.json"), dump_json(report));
    write_file_atomic(dir / (cm_id(variant) + ".config.json"), dump_json(cfg));
    return {std::move(result), model_path};
}

// ---------------------------------------------------------------------------
// Filter optimization

struct AttackStageResult {
    std::vector<OptimizationResult> runs; ///< one per length, in the requested order
    std::vector<FilterCandidate> candidates;
    MalafideFilter selected;
    fs::path selected_path;
};

inline std::string length_tag(int length) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "L%04d", length);
    return buf;
}

inline json report_to_json(const OptimizationReport& r) {
    json epochs = json::array();
    for (const auto& e : r.epochs)
        epochs.push_back({{"epoch", e.epoch}, {"mean_objective", e.mean_objective}, {"part1_success_rate", e.part1_success_rate}});
    // Wall-clock duration is logged, not stored, so reports stay byte-reproducible.
    return {{"attack_id", r.attack_id},
            {"scorer_id", r.scorer_id},
            {"filter_length", r.filter_length},
            {"baseline_mean_objective", r.baseline_mean_objective},
            {"baseline_success_rate", r.baseline_success_rate},
            {"epochs", epochs}};
}

inline std::string report_to_csv(const OptimizationReport& r) {
    std::string out = "epoch,mean_objective,part1_success_rate\n";
    for (const auto& e : r.epochs)
        out += std::to_string(e.epoch) + "," + format_double(e.mean_objective) + "," +
               format_double(e.part1_success_rate) + "\n";
    return out;
}

inline fs::path filter_dir(const fs::path& run_dir, const std::string& scorer_id, const std::string& attack_id) {
    return run_dir / "filters" / scorer_id / attack_id;
}

/// Optimizes one filter per length, writes them with reports into `dir` and
/// records the Part-1 selection.
inline AttackStageResult optimize_into(const fs::path& dir, const json& cfg, const Corpus& corpus,
                                       const std::string& attack_id, const DifferentiableScorer& scorer,
                                       const std::vector<int>& lengths) {
    detail::require(!lengths.empty(), "at least one filter length is required");
    for (int l : lengths)
        require_catalog_length(l);
    const auto data = corpus.attack_dataset(attack_id);

    AttackStageResult out{{}, {}, MalafideFilter::dirac(1, corpus.config.sample_rate), {}};
    for (int length : lengths) {
        auto run = optimize_filter(scorer, data.part1, attack_id, attack_config(cfg, length));
        std::cerr << "[optimize-filter] " << scorer.scorer_id() << " " << attack_id << " L=" << length
                  << ": Part-1 success " << run.report.baseline_success_rate << " -> "
                  << run.report.epochs.back().part1_success_rate << " in " << run.report.duration_s << " s\n";
        const auto tag = length_tag(length);
        save_filter(dir / (tag + ".json"), run.filter);
        write_file_atomic(dir / (tag + ".report.json"), dump_json(report_to_json(run.report)));
        write_file_atomic(dir / (tag + ".epochs.csv"), report_to_csv(run.report));
        out.candidates.push_back({run.filter, run.report.epochs.back().part1_success_rate});
        out.runs.push_back(std::move(run));
    }
    out.selected = select_filter(out.candidates);
    json cands = json::array();
    for (const auto& c : out.candidates)
        cands.push_back({{"filter_length", c.filter.length()},
                         {"part1_success_rate", c.success_rate},
                         {"file", length_tag(c.filter.length()) + ".json"}});
    const json selection{{"attack_id", attack_id},
                         {"scorer_id", scorer.scorer_id()},
                         {"rule", "max Part-1 success rate, ties to shorter filter"},
                         {"candidates", cands},
                         {"selected_length", out.selected.length()},
                         {"selected_file", length_tag(out.selected.length()) + ".json"}};
    write_file_atomic(dir / "selection.json", dump_json(selection));
    out.selected_path = dir / "selected.json";
    save_filter(out.selected_path, out.selected);
    write_file_atomic(dir / "config.json", dump_json(cfg));
    return out;
}

inline AttackStageResult optimize_stage(const fs::path& run_dir, const json& cfg, const Corpus& corpus,
                                        const std::string& attack_id, const DifferentiableScorer& scorer,
                                        const std::vector<int>& lengths) {
    return optimize_into(filter_dir(run_dir, scorer.scorer_id(), attack_id), cfg, corpus, attack_id, scorer, lengths);
}

// ---------------------------------------------------------------------------
// Evaluation

using FilterSet = std::map<std::string, MalafideFilter>; ///< keyed by attack id

struct TrialScore {
    std::string trial_id;
    std::string label;     ///< bonafide | spoof | target | nontarget
    std::string attack_id; ///< "-" when not a spoof
    double score = 0.0;
};

struct MetricRecord {
    std::string metric;
    double value = 0.0;
    double threshold = 0.0;
    std::map<std::string, std::size_t> n_trials;
};

struct EvaluationResult {
    std::string scorer_id;
    std::vector<TrialScore> cm_trials;
    std::vector<TrialScore> sasv_trials; ///< fused scores
    std::vector<MetricRecord> metrics;
    std::vector<std::string> warnings;

    const MetricRecord& metric(const std::string& name) const {
        for (const auto& m : metrics)
            if (m.metric == name)
                return m;
        throw ValidationError("no metric named " + name);
    }
};

struct SasvOptions {
    int enroll_per_speaker = 3;
    int nontarget_claims_per_utterance = 1;
    double cm_weight = 1.0;
    double asv_weight = 1.0;
};

inline SasvOptions sasv_options(const json& cfg) {
    const auto& e = cfg.at("evaluation");
    SasvOptions o;
    o.enroll_per_speaker = e.at("enroll_per_speaker").get<int>();
    o.nontarget_claims_per_utterance = e.at("nontarget_claims_per_utterance").get<int>();
    o.cm_weight = e.at("fusion_cm_weight").get<double>();
    o.asv_weight = e.at("fusion_asv_weight").get<double>();
    detail::require(o.enroll_per_speaker >= 1, "evaluation.enroll_per_speaker must be >= 1");
    detail::require(o.nontarget_claims_per_utterance >= 0, "evaluation.nontarget_claims_per_utterance must be >= 0");
    return o;
}

/// Part-2 evaluation: bona fide vs spoofs, each spoof convolved with the filter
/// of its attack when one is given. Optionally adds the fused CM+ASV protocol.
inline EvaluationResult evaluate_corpus(const DifferentiableScorer& scorer, const Corpus& corpus,
                                        const FilterSet& filters, bool with_sasv, const SasvOptions& options = {}) {
    EvaluationResult out;
    out.scorer_id = scorer.scorer_id();

    struct Item {
        const Utterance* utt;
        Waveform audio;
    };
    std::vector<Item> items;
    for (const auto& u : corpus.utterances) {
        if (u.partition != partition::kPart2)
            continue;
        if (u.label == label::kSpoof) {
            const auto it = filters.find(u.attack_id);
            items.push_back({&u, it == filters.end() ? u.audio : convolve_same(u.audio, it->second)});
        } else {
            items.push_back({&u, u.audio});
        }
    }
    detail::require(!items.empty(), "corpus has no Part-2 utterances");

    std::vector<double> cm(items.size());
    parallel_for(items.size(), [&](std::size_t i) { cm[i] = cm_score(scorer, items[i].audio); });

    std::vector<double> bona, spoof;
    std::map<std::string, std::vector<double>> spoof_by_attack;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < items.size(); ++i) {
        const auto& u = *items[i].utt;
        out.cm_trials.push_back({u.utterance_id, u.label, u.attack_id, cm[i]});
        if (u.label == label::kBonafide) {
            bona.push_back(cm[i]);
        } else {
            spoof.push_back(cm[i]);
            spoof_by_attack[u.attack_id].push_back(cm[i]);
            const auto logits = score_logits(scorer, items[i].audio);
            if (normalize_scores(logits.spoof, logits.bonafide) > 0.5)
                ++hits;
        }
    }
    const auto pooled = compute_eer(bona, spoof);
    out.metrics.push_back({"cm_eer", pooled.eer, pooled.threshold, {{"bonafide", bona.size()}, {"spoof", spoof.size()}}});
    for (const auto& [attack, scores] : spoof_by_attack) {
        const auto r = compute_eer(bona, scores);
        out.metrics.push_back({"cm_eer/" + attack, r.eer, r.threshold, {{"bonafide", bona.size()}, {"spoof", scores.size()}}});
    }
    out.metrics.push_back({"success_rate", static_cast<double>(hits) / static_cast<double>(spoof.size()), 0.5,
                           {{"spoof", spoof.size()}}});

    if (!with_sasv)
        return out;

    // Enrollment: the first bona fide cm-train utterances of each speaker.
    std::map<std::string, std::vector<Waveform>> enroll_audio;
    std::vector<std::string> speakers;
    for (const auto& u : corpus.utterances) {
        if (u.label != label::kBonafide || u.partition != partition::kCmTrain)
            continue;
        auto& list = enroll_audio[u.speaker_id];
        if (list.empty())
            speakers.push_back(u.speaker_id);
        if (static_cast<int>(list.size()) < options.enroll_per_speaker)
            list.push_back(u.audio);
    }
    detail::require(speakers.size() >= 2, "SASV evaluation needs enrollment audio for at least two speakers");
    std::sort(speakers.begin(), speakers.end());
    std::map<std::string, std::vector<double>> enroll_embedding;
    for (const auto& s : speakers) {
        std::vector<double> mean;
        for (const auto& w : enroll_audio[s]) {
            const auto e = asv_embedding(w);
            if (mean.empty())
                mean.assign(e.size(), 0.0);
            for (std::size_t k = 0; k < e.size(); ++k)
                mean[k] += e[k] / static_cast<double>(enroll_audio[s].size());
        }
        enroll_embedding[s] = std::move(mean);
    }

    struct Trial {
        std::size_t item;
        std::string claim;
        std::string label;
    };
    std::vector<Trial> trials;
    for (std::size_t i = 0; i < items.size(); ++i) {
        const auto& u = *items[i].utt;
        if (!enroll_embedding.count(u.speaker_id))
            continue;
        if (u.label == label::kSpoof) {
            trials.push_back({i, u.speaker_id, label::kSpoof});
            continue;
        }
        trials.push_back({i, u.speaker_id, "target"});
        const auto self = std::find(speakers.begin(), speakers.end(), u.speaker_id) - speakers.begin();
        for (int j = 1; j <= options.nontarget_claims_per_utterance && j < static_cast<int>(speakers.size()); ++j)
            trials.push_back({i, speakers[static_cast<std::size_t>(self + j) % speakers.size()], "nontarget"});
    }

    std::vector<std::vector<double>> test_embedding(items.size());
    parallel_for(items.size(), [&](std::size_t i) { test_embedding[i] = asv_embedding(items[i].audio); });
    std::vector<double> cm_trial(trials.size()), asv_trial(trials.size());
    for (std::size_t t = 0; t < trials.size(); ++t) {
        cm_trial[t] = cm[trials[t].item];
        asv_trial[t] = cosine_similarity(enroll_embedding[trials[t].claim], test_embedding[trials[t].item]);
    }
    auto fused = fuse_scores(cm_trial, asv_trial, options.cm_weight, options.asv_weight);
    out.warnings = fused.warnings;

    std::vector<double> target, nontarget, spoofed, asv_target, asv_nontarget;
    for (std::size_t t = 0; t < trials.size(); ++t) {
        const auto& u = *items[trials[t].item].utt;
        out.sasv_trials.push_back({u.utterance_id + ":" + trials[t].claim, trials[t].label, u.attack_id, fused.scores[t]});
        if (trials[t].label == "target") {
            target.push_back(fused.scores[t]);
            asv_target.push_back(asv_trial[t]);
        } else if (trials[t].label == "nontarget") {
            nontarget.push_back(fused.scores[t]);
            asv_nontarget.push_back(asv_trial[t]);
        } else {
            spoofed.push_back(fused.scores[t]);
        }
    }
    const auto sasv = compute_sasv_eer(target, nontarget, spoofed);
    out.metrics.push_back({"sasv_eer", sasv.eer, sasv.threshold,
                           {{"target", target.size()}, {"nontarget", nontarget.size()}, {"spoof", spoofed.size()}}});
    if (!asv_nontarget.empty()) {
        const auto asv = compute_eer(asv_target, asv_nontarget);
        out.metrics.push_back(
            {"asv_eer", asv.eer, asv.threshold, {{"target", asv_target.size()}, {"nontarget", asv_nontarget.size()}}});
    }
    return out;
}

inline std::string trials_to_csv(const std::vector<TrialScore>& trials) {
    std::string out = "trial_id,label,attack_id,score\n";
    for (const auto& t : trials)
        out += t.trial_id + "," + t.label + "," + t.attack_id + "," + format_double(t.score) + "\n";
    return out;
}

inline json metrics_to_json(const EvaluationResult& r, const std::vector<std::string>& filter_files) {
    json metrics = json::array();
    for (const auto& m : r.metrics)
        metrics.push_back({{"metric", m.metric}, {"value", m.value}, {"threshold", m.threshold}, {"n_trials", m.n_trials}});
    return {{"scorer_id", r.scorer_id}, {"filters", filter_files}, {"metrics", metrics}, {"warnings", r.warnings}};
}

inline EvaluationResult evaluate_stage(const fs::path& run_dir, const json& cfg, const Corpus& corpus,
                                       const DifferentiableScorer& scorer, const std::vector<fs::path>& filter_paths,
                                       bool with_sasv, const std::string& name) {
    FilterSet filters;
    std::vector<std::string> files;
    for (const auto& p : filter_paths) {
        auto f = load_filter(p.is_absolute() ? p : run_dir / p);
        detail::require(f.sample_rate() == corpus.config.sample_rate,
                        p.string() + ": filter sample rate does not match the corpus");
        detail::require(!filters.count(f.attack_id()), "two filters given for attack " + f.attack_id());
        // Recorded relative to the run directory so relocated runs produce identical metrics files.
        const auto rel = p.is_absolute() ? p.lexically_relative(run_dir) : p;
        files.push_back(rel.empty() || *rel.begin() == ".." ? p.string() : rel.string());
        filters.emplace(f.attack_id(), std::move(f));
    }
    auto result = evaluate_corpus(scorer, corpus, filters, with_sasv, sasv_options(cfg));
    for (const auto& w : result.warnings)
        std::cerr << "[evaluate] warning: " << w << "\n";
    const auto dir = run_dir / "eval" / name;
    write_file_atomic(dir / "metrics.json", dump_json(metrics_to_json(result, files)));
    write_file_atomic(dir / "scores.csv", trials_to_csv(result.cm_trials));
    if (with_sasv)
        write_file_atomic(dir / "sasv_scores.csv", trials_to_csv(result.sasv_trials));
    write_file_atomic(dir / "config.json", dump_json(cfg));
    return result;
}

// ---------------------------------------------------------------------------
// Whole pipeline

struct TransferCell {
    std::string row;           ///< "none", "L0065", ..., "selected"
    std::string train_scorer;  ///< scorer the filters were optimized against ("-" for none)
    std::string eval_scorer;
    double cm_eer = 0.0;
    double success_rate = 0.0;
    double sasv_eer = -1.0;    ///< only for "none" and the SASV filter length
    double asv_eer = -1.0;
};

struct PipelineResult {
    std::map<std::string, TrainResult> models;                               ///< by scorer id
    std::map<std::string, std::map<std::string, AttackStageResult>> attacks; ///< scorer -> attack -> result
    std::vector<TransferCell> cells;
    double duration_s = 0.0;

    const TransferCell& cell(const std::string& row, const std::string& train, const std::string& eval) const {
        for (const auto& c : cells)
            if (c.row == row && c.train_scorer == train && c.eval_scorer == eval)
                return c;
        throw ValidationError("no transfer cell " + row + "/" + train + "/" + eval);
    }
};

inline std::string transfer_to_csv(const std::vector<TransferCell>& cells) {
    std::string out = "filter,train_scorer,eval_scorer,cm_eer_percent,success_rate,sasv_eer_percent,asv_eer_percent\n";
    auto pct = [](double v) { return v < 0.0 ? std::string("-") : format_double(100.0 * v); };
    for (const auto& c : cells)
        out += c.row + "," + c.train_scorer + "," + c.eval_scorer + "," + pct(c.cm_eer) + "," +
               format_double(c.success_rate) + "," + pct(c.sasv_eer) + "," + pct(c.asv_eer) + "\n";
    return out;
}

/// gen-corpus -> train each CM variant -> optimize every attack and length
/// against each CM -> evaluate white-box and black-box cells with and without
/// filtering (SASV for no filter and the configured SASV length).
inline PipelineResult run_pipeline(const fs::path& run_dir, const json& cfg) {
    const auto start = std::chrono::steady_clock::now();
    PipelineResult out;
    gen_corpus_stage(run_dir, cfg);
    // Work from the quantized audio on disk so every stage sees what the CLI sees.
    const auto corpus = load_corpus(run_dir, cfg);
    const auto lengths = attack_lengths(cfg);
    const int sasv_length = cfg.at("evaluation").at("sasv_filter_length").get<int>();
    const auto sasv = sasv_options(cfg);

    std::vector<char> variants;
    for (const auto& v : cfg.at("pipeline").at("variants")) {
        const auto s = v.get<std::string>();
        detail::require(s == "a" || s == "b", "pipeline.variants entries must be \"a\" or \"b\"");
        variants.push_back(s[0]);
    }
    detail::require(!variants.empty(), "pipeline.variants must not be empty");

    std::map<std::string, ToyCmModel> models;
    for (char v : variants) {
        auto trained = train_cm_stage(run_dir, cfg, corpus, v);
        if (trained.result.undertrained)
            throw NumericalError("CM " + cm_id(v) + " undertrained: dev EER " + format_double(trained.result.dev_eer));
        models.emplace(cm_id(v), trained.result.model);
        out.models.emplace(cm_id(v), std::move(trained.result));
    }

    for (const auto& [id, model] : models)
        for (const auto& attack : corpus.config.attacks)
            out.attacks[id].insert_or_assign(attack.attack_id,
                                                optimize_stage(run_dir, cfg, corpus, attack.attack_id, model, lengths));

    auto evaluate_cell = [&](const std::string& row, const std::string& train, const std::string& eval,
                             const FilterSet& filters, bool with_sasv) {
        const auto name = row + "__" + train + "__" + eval;
        const auto r = evaluate_corpus(models.at(eval), corpus, filters, with_sasv, sasv);
        std::vector<std::string> files;
        for (const auto& [attack, f] : filters)
            files.push_back(attack + ":" + length_tag(f.length()));
        write_file_atomic(run_dir / "eval" / name / "metrics.json", dump_json(metrics_to_json(r, files)));
        write_file_atomic(run_dir / "eval" / name / "scores.csv", trials_to_csv(r.cm_trials));
        if (with_sasv)
            write_file_atomic(run_dir / "eval" / name / "sasv_scores.csv", trials_to_csv(r.sasv_trials));
        TransferCell c{row, train, eval, r.metric("cm_eer").value, r.metric("success_rate").value};
        if (with_sasv) {
            c.sasv_eer = r.metric("sasv_eer").value;
            c.asv_eer = r.metric("asv_eer").value;
        }
        out.cells.push_back(c);
    };

    const bool sasv_length_trained = std::find(lengths.begin(), lengths.end(), sasv_length) != lengths.end();
    for (const auto& [eval_id, model] : models)
        evaluate_cell("none", "-", eval_id, {}, true);
    for (const auto& [train_id, per_attack] : out.attacks) {
        for (const auto& [eval_id, model] : models) {
            for (std::size_t li = 0; li < lengths.size(); ++li) {
                FilterSet filters;
                for (const auto& [attack, res] : per_attack)
                    filters.emplace(attack, res.runs[li].filter);
                evaluate_cell(length_tag(lengths[li]), train_id, eval_id, filters,
                              sasv_length_trained && lengths[li] == sasv_length);
            }
            FilterSet selected;
            for (const auto& [attack, res] : per_attack)
                selected.emplace(attack, res.selected);
            evaluate_cell("selected", train_id, eval_id, selected, false);
        }
    }
    write_file_atomic(run_dir / "transfer_matrix.csv", transfer_to_csv(out.cells));
    out.duration_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::cerr << "[pipeline] finished in " << out.duration_s << " s\n";
    return out;
}

} // namespace malafide
