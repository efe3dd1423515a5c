// Command-line driver: corpus generation, CM training, filter optimization,
// filtering, evaluation and filter analysis over a run directory.
//
// Exit codes: 0 success, 1 validation error, 2 runtime/numerical failure.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "malafide/malafide.hpp"

namespace fs = std::filesystem;
using namespace malafide;

namespace {

constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

struct ConfigOptions {
    std::string config_file;
    std::vector<std::string> overrides;
    long long seed = -1;
};

void add_config_options(CLI::App* cmd, ConfigOptions& opts, bool with_file) {
    if (with_file)
        cmd->add_option("--config", opts.config_file, "JSON configuration overlaid on the defaults");
    cmd->add_option("--set", opts.overrides, "Override a configuration value, e.g. --set attack.epochs=5");
    cmd->add_option("--seed", opts.seed, "Master seed (overrides the configuration)");
}

nlohmann::json apply_options(nlohmann::json cfg, const ConfigOptions& opts) {
    for (const auto& o : opts.overrides)
        apply_override(cfg, o);
    if (opts.seed >= 0)
        cfg["seed"] = opts.seed;
    return resolve_config(cfg);
}

nlohmann::json fresh_config(const ConfigOptions& opts) {
    nlohmann::json base = opts.config_file.empty() ? nlohmann::json(nullptr) : read_json(opts.config_file);
    return apply_options(resolve_config(base), opts);
}

fs::path in_run_dir(const fs::path& run_dir, const fs::path& p) { return p.is_absolute() ? p : run_dir / p; }

std::vector<int> parse_lengths(const std::string& csv) {
    std::vector<int> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            const int v = std::stoi(item, &used);
            if (used != item.size())
                throw std::invalid_argument(item);
            out.push_back(v);
        } catch (const std::exception&) {
            throw ValidationError("filter length must be odd and in catalog, got '" + item + "'");
        }
    }
    if (out.empty())
        throw ValidationError("no filter lengths given");
    for (int l : out)
        require_catalog_length(l);
    return out;
}

std::string lr_tag(double lr) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "lr%.0e", lr);
    return buf;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Malafide adversarial filter toolkit"};
    app.require_subcommand(1);

    std::string run_dir;
    ConfigOptions cfg_opts;

    auto* gen = app.add_subcommand("gen-corpus", "Generate the synthetic corpus and manifest");
    gen->add_option("--run-dir", run_dir, "Run directory")->required();
    add_config_options(gen, cfg_opts, true);

    std::string variant = "a";
    auto* train = app.add_subcommand("train-cm", "Train a toy countermeasure on the defender partition");
    train->add_option("--run-dir", run_dir, "Run directory")->required();
    train->add_option("--variant", variant, "Architecture variant: a (kernels 64/32) or b (48/24)")
        ->check(CLI::IsMember({"a", "b"}));
    add_config_options(train, cfg_opts, false);

    std::string attack, scorer_path, lengths_csv;
    bool lr_grid = false;
    auto* opt = app.add_subcommand("optimize-filter", "Optimize Malafide filters for one attack");
    opt->add_option("--run-dir", run_dir, "Run directory")->required();
    opt->add_option("--attack", attack, "Attack id, e.g. SA1")->required();
    opt->add_option("--scorer", scorer_path, "Model file of the (frozen) countermeasure")->required();
    opt->add_option("--lengths", lengths_csv, "Comma-separated filter lengths (default from config)");
    opt->add_flag("--lr-grid", lr_grid, "Also sweep learning rates 1e-2, 1e-3, 1e-4 into lr* subdirectories");
    add_config_options(opt, cfg_opts, false);

    std::string filter_path, in_wav, out_wav;
    auto* apply = app.add_subcommand("apply-filter", "Convolve a WAV file with a filter");
    apply->add_option("--filter", filter_path, "Filter file")->required();
    apply->add_option("--in", in_wav, "Input WAV")->required();
    apply->add_option("--out", out_wav, "Output WAV")->required();

    std::vector<std::string> filter_paths;
    bool sasv = false;
    std::string eval_name;
    auto* eval = app.add_subcommand("evaluate", "Evaluate a CM on Part-2, optionally under Malafide filtering");
    eval->add_option("--run-dir", run_dir, "Run directory")->required();
    eval->add_option("--scorer", scorer_path, "Model file of the evaluated countermeasure")->required();
    eval->add_option("--filter", filter_paths, "Filter file(s); each applies to spoofs of its attack id");
    eval->add_flag("--sasv", sasv, "Also compute the fused CM+ASV SASV-EER");
    eval->add_option("--name", eval_name, "Output subdirectory under eval/ (default derived from inputs)");
    add_config_options(eval, cfg_opts, false);

    std::size_t nfft = 8192;
    std::string out_dir = ".";
    auto* analyze = app.add_subcommand("analyze-filter", "Export impulse and normalized magnitude responses");
    analyze->add_option("--filter", filter_path, "Filter file")->required();
    analyze->add_option("--nfft", nfft, "FFT size (power of two, >= filter length)");
    analyze->add_option("--out-dir", out_dir, "Directory for impulse.csv and response.csv");

    auto* pipe = app.add_subcommand("pipeline", "Run every stage and write the transfer matrix");
    pipe->add_option("--run-dir", run_dir, "Run directory")->required();
    add_config_options(pipe, cfg_opts, true);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitValidation;
    }

    try {
        const fs::path run(run_dir);
        if (*gen) {
            const auto cfg = fresh_config(cfg_opts);
            const auto corpus = gen_corpus_stage(run, cfg);
            std::size_t bona = 0, spoof = 0;
            for (const auto& u : corpus.utterances)
                (u.label == label::kBonafide ? bona : spoof)++;
            std::cout << "wrote " << corpus.utterances.size() << " utterances (" << bona << " bona fide, " << spoof
                      << " spoof) to " << (run / "corpus").string() << "\n";
        } else if (*train) {
            const auto cfg = apply_options(load_run_config(run), cfg_opts);
            const auto corpus = load_corpus(run, cfg);
            const auto r = train_cm_stage(run, cfg, corpus, variant[0]);
            std::cout << "model " << r.model_path.string() << ": dev EER " << r.result.dev_eer << "\n";
            if (r.result.undertrained) {
                std::cerr << "error: CM undertrained, held-out EER " << r.result.dev_eer << " >= threshold "
                          << train_config(cfg, variant[0]).eer_threshold << "\n";
                return kExitRuntime;
            }
        } else if (*opt) {
            const auto cfg = apply_options(load_run_config(run), cfg_opts);
            const auto lengths = lengths_csv.empty() ? attack_lengths(cfg) : parse_lengths(lengths_csv);
            const auto corpus = load_corpus(run, cfg);
            const auto model = load_model(in_run_dir(run, scorer_path));
            const auto r = optimize_stage(run, cfg, corpus, attack, model, lengths);
            std::cout << "selected " << r.selected.length() << "-tap filter: " << r.selected_path.string() << "\n";
            if (lr_grid) {
                nlohmann::json grid = nlohmann::json::array();
                for (double lr : {1e-2, 1e-3, 1e-4}) {
                    auto lr_cfg = cfg;
                    lr_cfg["attack"]["learning_rate"] = lr;
                    const auto sub = filter_dir(run, model.scorer_id(), attack) / lr_tag(lr);
                    const auto g = optimize_into(sub, lr_cfg, corpus, attack, model, lengths);
                    double best = 0.0;
                    for (const auto& c : g.candidates)
                        best = std::max(best, c.success_rate);
                    grid.push_back({{"learning_rate", lr},
                                    {"selected_length", g.selected.length()},
                                    {"part1_success_rate", best},
                                    {"selected_file", fs::relative(g.selected_path, run).string()}});
                }
                write_file_atomic(filter_dir(run, model.scorer_id(), attack) / "lr_grid.json", dump_json(grid));
                std::cout << "learning-rate grid summary: "
                          << (filter_dir(run, model.scorer_id(), attack) / "lr_grid.json").string() << "\n";
            }
        } else if (*apply) {
            const auto filter = load_filter(filter_path);
            write_wav(out_wav, convolve_same(read_wav(in_wav), filter));
            std::cout << "wrote " << out_wav << "\n";
        } else if (*eval) {
            const auto cfg = apply_options(load_run_config(run), cfg_opts);
            const auto corpus = load_corpus(run, cfg);
            const auto model = load_model(in_run_dir(run, scorer_path));
            std::vector<fs::path> paths(filter_paths.begin(), filter_paths.end());
            if (eval_name.empty())
                eval_name = model.scorer_id() + (paths.empty() ? "__nofilter" : "__filtered") + (sasv ? "__sasv" : "");
            const auto r = evaluate_stage(run, cfg, corpus, model, paths, sasv, eval_name);
            for (const auto& m : r.metrics)
                std::cout << m.metric << " = " << m.value << "\n";
        } else if (*analyze) {
            const auto filter = load_filter(filter_path);
            const auto response = frequency_response(filter, nfft);
            std::string impulse = "tap_index,coefficient\n";
            for (int i = 0; i < filter.length(); ++i)
                impulse += std::to_string(i) + "," + format_double(filter.coefficients()[static_cast<std::size_t>(i)]) + "\n";
            std::string resp = "freq_hz,magnitude_db\n";
            for (std::size_t i = 0; i < response.frequencies_hz.size(); ++i)
                resp += format_double(response.frequencies_hz[i]) + "," + format_double(response.magnitude_db[i]) + "\n";
            write_file_atomic(fs::path(out_dir) / "impulse.csv", impulse);
            write_file_atomic(fs::path(out_dir) / "response.csv", resp);
            std::cout << "wrote impulse.csv and response.csv to " << out_dir << "\n";
        } else if (*pipe) {
            const auto cfg = fresh_config(cfg_opts);
            const auto r = run_pipeline(run, cfg);
            std::cout << transfer_to_csv(r.cells);
        }
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return 0;
}
