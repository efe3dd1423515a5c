#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <sys/wait.h>

#include <gtest/gtest.h>

#include "malafide/malafide.hpp"

using namespace malafide;
namespace fs = std::filesystem;

namespace {

struct CliResult {
    int exit_code = -1;
    std::string output;
};

const fs::path& work_root() {
    static const fs::path root = [] {
        const auto p = fs::temp_directory_path() / "malafide_cli_tests";
        fs::remove_all(p);
        fs::create_directories(p);
        return p;
    }();
    return root;
}

CliResult run_cli(const std::string& args) {
    const auto log = work_root() / "last_output.txt";
    const std::string cmd = std::string("\"") + MALAFIDE_CLI_PATH + "\" " + args + " > \"" + log.string() + "\" 2>&1";
    const int status = std::system(cmd.c_str());
    CliResult r;
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.output = read_file(log);
    return r;
}

std::size_t count_lines(const std::string& text) { return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')); }

// Small but learnable protocol shared by every test in this file.
fs::path small_config_file() {
    const auto path = work_root() / "small_config.json";
    auto cfg = default_run_config();
    cfg["seed"] = 4;
    cfg["corpus"]["bona_cm_train"] = 24;
    cfg["corpus"]["bona_cm_dev"] = 12;
    cfg["corpus"]["bona_eval"] = 8;
    cfg["corpus"]["spoofs_per_attack"] = 8;
    cfg["corpus"]["cm_train_spoofs_per_attack"] = 6;
    cfg["corpus"]["cm_dev_spoofs_per_attack"] = 3;
    cfg["corpus"]["duration_s"] = 0.5;
    cfg["cm"]["epochs"] = 10;
    cfg["cm"]["eer_threshold"] = 0.5;
    cfg["attack"]["epochs"] = 2;
    cfg["attack"]["lengths"] = {65, 129};
    write_file_atomic(path, dump_json(cfg));
    return path;
}

class CliPipeline : public ::testing::Test {
protected:
    static fs::path run;

    static void SetUpTestSuite() {
        run = work_root() / "run";
        const auto g = run_cli("gen-corpus --run-dir \"" + run.string() + "\" --config \"" + small_config_file().string() + "\"");
        ASSERT_EQ(g.exit_code, 0) << g.output;
        const auto t = run_cli("train-cm --run-dir \"" + run.string() + "\" --variant a");
        ASSERT_EQ(t.exit_code, 0) << t.output;
    }

    static std::string run_arg() { return "--run-dir \"" + run.string() + "\""; }
};

fs::path CliPipeline::run;

} // namespace

TEST_F(CliPipeline, GenCorpusWritesManifestAndConfig) {
    const auto manifest = read_file(run / "corpus" / "manifest.csv");
    EXPECT_EQ(manifest.substr(0, manifest.find('\n')), kManifestHeader);
    // 44 bona fide + 4 attacks x (8 + 6 + 3) spoofs, plus the header.
    EXPECT_EQ(count_lines(manifest), 1u + 44u + 4u * 17u);
    EXPECT_TRUE(fs::exists(run / "config.json"));
    EXPECT_TRUE(fs::exists(run / "corpus" / "wav" / "bona_0000.wav"));
}

TEST_F(CliPipeline, GenCorpusIsReproducible) {
    const auto other = work_root() / "run_again";
    const auto g = run_cli("gen-corpus --run-dir \"" + other.string() + "\" --config \"" + small_config_file().string() + "\"");
    ASSERT_EQ(g.exit_code, 0) << g.output;
    EXPECT_EQ(read_file(other / "corpus" / "manifest.csv"), read_file(run / "corpus" / "manifest.csv"));
    EXPECT_EQ(read_file(other / "corpus" / "wav" / "spoof_SA2_0003.wav"), read_file(run / "corpus" / "wav" / "spoof_SA2_0003.wav"));
}

TEST_F(CliPipeline, GenCorpusRejectsUnusableDirectory) {
    const auto blocker = work_root() / "plain_file";
    write_file_atomic(blocker, "x");
    const auto r = run_cli("gen-corpus --run-dir \"" + (blocker / "sub").string() + "\" --config \"" +
                           small_config_file().string() + "\"");
    EXPECT_EQ(r.exit_code, 1);
    EXPECT_NE(r.output.find((blocker / "sub").string()), std::string::npos) << r.output;
}

TEST_F(CliPipeline, UnknownConfigKeyIsValidationError) {
    const auto r = run_cli("gen-corpus --run-dir \"" + (work_root() / "bad").string() + "\" --set corpus.speakers=3");
    EXPECT_EQ(r.exit_code, 1);
    EXPECT_NE(r.output.find("speakers"), std::string::npos) << r.output;
}

TEST_F(CliPipeline, TrainCmWritesModelAndReport) {
    const auto report = read_json(run / "models" / "cm_a.report.json");
    EXPECT_LT(report.at("dev_eer").get<double>(), 0.5);
    EXPECT_FALSE(report.at("undertrained").get<bool>());
    EXPECT_NO_THROW(load_model(run / "models" / "cm_a.json"));
}

TEST_F(CliPipeline, TrainCmVariantB) {
    const auto r = run_cli("train-cm " + run_arg() + " --variant b");
    ASSERT_EQ(r.exit_code, 0) << r.output;
    const auto model = load_model(run / "models" / "cm_b.json");
    EXPECT_EQ(model.architecture(), CmArchitecture::variant('b'));
}

TEST_F(CliPipeline, UndertrainedExitsNonzeroWithEer) {
    const auto copy = work_root() / "undertrained";
    fs::remove_all(copy);
    fs::copy(run, copy, fs::copy_options::recursive);
    const auto r = run_cli("train-cm --run-dir \"" + copy.string() + "\" --variant a --set cm.epochs=1 --set cm.eer_threshold=0");
    EXPECT_EQ(r.exit_code, 2);
    EXPECT_NE(r.output.find("undertrained"), std::string::npos) << r.output;
    EXPECT_NE(r.output.find("EER"), std::string::npos);
}

TEST_F(CliPipeline, OptimizeFilterWritesCandidatesAndSelection) {
    const auto r = run_cli("optimize-filter " + run_arg() + " --attack SA1 --scorer models/cm_a.json --lengths 65,129");
    ASSERT_EQ(r.exit_code, 0) << r.output;
    const auto dir = filter_dir(run, "cm_a", "SA1");
    EXPECT_EQ(load_filter(dir / "L0065.json").length(), 65);
    EXPECT_EQ(load_filter(dir / "L0129.json").length(), 129);
    const auto selection = read_json(dir / "selection.json");
    EXPECT_EQ(selection.at("candidates").size(), 2u);
    EXPECT_EQ(load_filter(dir / "selected.json").length(), selection.at("selected_length").get<int>());
    EXPECT_EQ(count_lines(read_file(dir / "L0065.epochs.csv")), 3u);

    const auto first = read_file(dir / "L0129.json");
    const auto again = run_cli("optimize-filter " + run_arg() + " --attack SA1 --scorer models/cm_a.json --lengths 65,129");
    ASSERT_EQ(again.exit_code, 0);
    EXPECT_EQ(read_file(dir / "L0129.json"), first);
}

TEST_F(CliPipeline, OptimizeFilterRejectsNonCatalogLength) {
    const auto r = run_cli("optimize-filter " + run_arg() + " --attack SA1 --scorer models/cm_a.json --lengths 100");
    EXPECT_EQ(r.exit_code, 1);
    EXPECT_NE(r.output.find("filter length must be odd and in catalog"), std::string::npos) << r.output;
}

TEST_F(CliPipeline, OptimizeFilterUnknownAttack) {
    const auto r = run_cli("optimize-filter " + run_arg() + " --attack SA9 --scorer models/cm_a.json --lengths 65");
    EXPECT_EQ(r.exit_code, 1);
}

TEST_F(CliPipeline, EvaluateWithAndWithoutFilter) {
    const auto base = run_cli("evaluate " + run_arg() + " --scorer models/cm_a.json --sasv --name base");
    ASSERT_EQ(base.exit_code, 0) << base.output;
    const auto metrics = read_json(run / "eval" / "base" / "metrics.json");
    bool saw_sasv = false;
    for (const auto& m : metrics.at("metrics"))
        saw_sasv = saw_sasv || m.at("metric") == "sasv_eer";
    EXPECT_TRUE(saw_sasv);
    EXPECT_TRUE(fs::exists(run / "eval" / "base" / "scores.csv"));
    EXPECT_TRUE(fs::exists(run / "eval" / "base" / "sasv_scores.csv"));

    const auto opt = run_cli("optimize-filter " + run_arg() + " --attack SA2 --scorer models/cm_a.json --lengths 65");
    ASSERT_EQ(opt.exit_code, 0) << opt.output;
    const auto filtered = run_cli("evaluate " + run_arg() + " --scorer models/cm_a.json --filter filters/cm_a/SA2/selected.json --name filt");
    ASSERT_EQ(filtered.exit_code, 0) << filtered.output;
    const auto fm = read_json(run / "eval" / "filt" / "metrics.json");
    EXPECT_EQ(fm.at("filters").at(0), "filters/cm_a/SA2/selected.json");
}

TEST_F(CliPipeline, ApplyDiracFilterPreservesWav) {
    const auto filter = work_root() / "dirac.json";
    save_filter(filter, MalafideFilter::dirac(65, 16000));
    const auto in = run / "corpus" / "wav" / "bona_0001.wav";
    const auto out = work_root() / "applied.wav";
    const auto r = run_cli("apply-filter --filter \"" + filter.string() + "\" --in \"" + in.string() + "\" --out \"" + out.string() + "\"");
    ASSERT_EQ(r.exit_code, 0) << r.output;
    EXPECT_EQ(read_file(out), read_file(in));
}

TEST_F(CliPipeline, ApplyFilterRateMismatch) {
    const auto filter = work_root() / "dirac8k.json";
    save_filter(filter, MalafideFilter::dirac(65, 8000));
    const auto r = run_cli("apply-filter --filter \"" + filter.string() + "\" --in \"" +
                           (run / "corpus" / "wav" / "bona_0001.wav").string() + "\" --out \"" +
                           (work_root() / "x.wav").string() + "\"");
    EXPECT_EQ(r.exit_code, 1);
    EXPECT_NE(r.output.find("sample rate mismatch"), std::string::npos);
}

TEST_F(CliPipeline, AnalyzeDiracFilter) {
    const auto filter = work_root() / "dirac_an.json";
    save_filter(filter, MalafideFilter::dirac(65, 16000));
    const auto out = work_root() / "analysis";
    const auto r = run_cli("analyze-filter --filter \"" + filter.string() + "\" --nfft 1024 --out-dir \"" + out.string() + "\"");
    ASSERT_EQ(r.exit_code, 0) << r.output;
    std::istringstream impulse(read_file(out / "impulse.csv"));
    std::string line;
    std::getline(impulse, line);
    EXPECT_EQ(line, "tap_index,coefficient");
    int ones = 0, rows = 0;
    while (std::getline(impulse, line)) {
        ++rows;
        if (line == "32,1")
            ++ones;
        else
            EXPECT_EQ(line.substr(line.find(',') + 1), "0");
    }
    EXPECT_EQ(rows, 65);
    EXPECT_EQ(ones, 1);
    std::istringstream response(read_file(out / "response.csv"));
    std::getline(response, line);
    EXPECT_EQ(line, "freq_hz,magnitude_db");
    rows = 0;
    while (std::getline(response, line)) {
        ++rows;
        EXPECT_EQ(std::stod(line.substr(line.find(',') + 1)), 0.0);
    }
    EXPECT_EQ(rows, 513);
}

TEST_F(CliPipeline, AnalyzeRejectsShortFft) {
    const auto filter = work_root() / "dirac_short.json";
    save_filter(filter, MalafideFilter::dirac(257, 16000));
    const auto r = run_cli("analyze-filter --filter \"" + filter.string() + "\" --nfft 128 --out-dir \"" +
                           (work_root() / "a2").string() + "\"");
    EXPECT_EQ(r.exit_code, 1);
}

TEST(CliMisc, MissingSubcommandIsUsageError) { EXPECT_EQ(run_cli("").exit_code, 1); }

TEST(RunConfig, OverridesAndValidation) {
    auto cfg = default_run_config();
    apply_override(cfg, "attack.epochs=3");
    apply_override(cfg, "attack.lengths=[65,129]");
    cfg = resolve_config(cfg);
    EXPECT_EQ(attack_config(cfg, 65).epochs, 3);
    EXPECT_EQ(attack_lengths(cfg), (std::vector<int>{65, 129}));
    EXPECT_THROW(apply_override(cfg, "no_equals_sign"), ValidationError);
    auto bad = default_run_config();
    bad["attack"]["lengths"] = {100};
    EXPECT_THROW(attack_lengths(resolve_config(bad)), ValidationError);
    EXPECT_THROW(resolve_config(nlohmann::json{{"bogus", 1}}), ValidationError);
}

TEST(RunConfig, DerivedSeedsDifferPerStage) {
    const auto cfg = resolve_config(default_run_config());
    EXPECT_NE(train_config(cfg, 'a').seed, train_config(cfg, 'b').seed);
    EXPECT_NE(attack_config(cfg, 65).seed, attack_config(cfg, 257).seed);
    EXPECT_EQ(attack_config(cfg, 257).filter_length, 257);
}
