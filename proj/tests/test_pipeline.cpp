#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <sys/wait.h>

#include "hsd/augment.hpp"
#include "hsd/config.hpp"
#include "hsd/corpus.hpp"
#include "support/synthetic.hpp"

using namespace hsd;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("hsd_pipeline_" + std::to_string(Catch::rngSeed()) + "_" +
                std::to_string(reinterpret_cast<std::uintptr_t>(this)));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

// Runs the CLI binary, returns its exit code; stdout/stderr land in log_file.
int run_cli(const std::string& args, const fs::path& log_file) {
    std::string cmd = std::string(HSD_CLI_PATH) + " " + args + " > " +
                      log_file.string() + " 2>&1";
    int rc = std::system(cmd.c_str());
    REQUIRE(rc != -1);
    REQUIRE(WIFEXITED(rc));
    return WEXITSTATUS(rc);
}

std::string slurp(const fs::path& p) { return read_file(p); }

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream out(p);
    out << text;
}

// Small separable corpus plus a fast schedule: round-trip tests check the
// artifact plumbing, not model quality.
fs::path write_smoke_config(const fs::path& dir, const fs::path& data, int epochs = 8) {
    nlohmann::json j{
        {"data", data.string()},
        {"classifiers", 3},
        {"vocab_caps", {{"1", 200}}},
        {"bank",
         {{"sequence_length", 12},
          {"embedding_dim", 10},
          {"recurrent_units", 10},
          {"dense_units", 10},
          {"per_member_rates", false},
          {"validation_fraction", 0.35},
          {"schedule",
           {{"initial_rate", 0.4},
            {"decay_rate", 0.02},
            {"initial_patience", epochs},
            {"max_epochs", epochs},
            {"batch_size", 8}}}}},
        {"folds", 2},
        {"repetitions", 1},
        {"seed", 17},
        {"jobs", 2}};
    fs::path p = dir / "config.json";
    write_text(p, j.dump(2));
    return p;
}

fs::path write_corpus(const fs::path& dir) {
    synth::FamilyCorpusConfig cc;
    cc.per_class = 20;   // 60 samples
    cc.min_fillers = 0;
    cc.max_fillers = 4;
    cc.seed = 3;
    auto corpus = synth::family_corpus(cc);
    fs::path p = dir / "data.tsv";
    save_corpus(corpus, p, CorpusFormat::Tsv);
    return p;
}

}  // namespace

TEST_CASE("run config defaults mirror the published constants") {
    RunConfig config = run_config_from_json(nlohmann::json::object());
    CHECK(config.bank.classifier_count == 3);
    CHECK(config.bank.sequence_length == 30);
    CHECK(config.bank.embedding_dim == 30);
    CHECK(config.bank.recurrent_units == 30);
    CHECK(config.bank.dense_units == 30);
    CHECK(config.bank.schedule.initial_patience == 40);
    CHECK(config.bank.schedule.max_epochs == 200);
    CHECK(config.bank.schedule.rate_floor == 0.01);
    CHECK(config.bank.schedule.batch_size == 1024);
    CHECK(config.stacked.recurrent_units == 100);
    CHECK(config.stacked.significance_digits == 2);
    CHECK(config.stacked.schedule.batch_size == 8192);
    CHECK(config.augment.mdv == 0.02);
    CHECK(config.folds == 10);
    CHECK(config.repetitions == 10);
    CHECK(config.stage2_kind() == CombinerKind::FixedCriteriaUnigram);
    CHECK(default_vocab_cap(1) == 25000);
    CHECK(default_vocab_cap(2) == 120000);
    CHECK(default_vocab_cap(3) == 180000);
}

TEST_CASE("run config parsing reports field names") {
    CHECK_THROWS_WITH(run_config_from_json({{"bogus", 1}}),
                      Catch::Matchers::ContainsSubstring("bogus"));
    CHECK_THROWS_WITH(run_config_from_json({{"bank", {{"sequence_length", "x"}}}}),
                      Catch::Matchers::ContainsSubstring("bank.sequence_length"));
    CHECK_THROWS_WITH(run_config_from_json({{"classifiers", 4}}),
                      Catch::Matchers::ContainsSubstring("classifiers"));
    CHECK_THROWS_WITH(run_config_from_json({{"stage2", "perceptron"}}),
                      Catch::Matchers::ContainsSubstring("stage2"));
    CHECK_THROWS_WITH(run_config_from_json({{"vocab_caps", {{"9", 10}}}}),
                      Catch::Matchers::ContainsSubstring("vocab_caps"));
    CHECK_THROWS_WITH(run_config_from_json({{"labels", {{"ok", "NotALabel"}}}}),
                      Catch::Matchers::ContainsSubstring("labels.ok"));
}

TEST_CASE("run config round-trips through json") {
    RunConfig config;
    config.data = "somewhere.tsv";
    config.stage2 = "gb";
    config.hyper = {{"trees", {20.0, 60.0}}};
    config.vocab_caps = {{1, 500}, {2, 900}};
    config.labels = {{"abusive", Label::Hate}, {"fine", Label::NonHate}};
    config.bank.classifier_count = 5;
    config.augment.n_samples = 7;
    config.seed = 99;

    RunConfig copy = run_config_from_json(run_config_to_json(config));
    CHECK(run_config_to_json(copy) == run_config_to_json(config));
    CHECK(copy.stage2_kind() == CombinerKind::GradientBoosting);
    CHECK(copy.labels == config.labels);
    CHECK(copy.vocab_caps == config.vocab_caps);
}

TEST_CASE("the fixed alias resolves against the classifier count") {
    RunConfig config;
    CHECK(config.stage2_kind() == CombinerKind::FixedCriteriaUnigram);
    config.bank.classifier_count = 5;
    CHECK(config.stage2_kind() == CombinerKind::FixedCriteriaNgram);
    config.stage2 = "xgb";
    CHECK(config.stage2_kind() == CombinerKind::SecondOrderBoosting);
}

TEST_CASE("cli round-trips artifacts across the full pipeline") {
    TempDir tmp;
    fs::path data = write_corpus(tmp.path);
    fs::path config = write_smoke_config(tmp.path, data);
    fs::path log = tmp.path / "log.txt";

    // vocab
    fs::path vocab_out = tmp.path / "vocab";
    REQUIRE(run_cli("vocab --config " + config.string() + " --order 1 --cap 200 --out " +
                        vocab_out.string(),
                    log) == 0);
    auto vocab = NGramVocabulary::load(vocab_out / "vocab_1.jsonl", 1, 200);
    CHECK(vocab.size() > 10);
    CHECK(nlohmann::json::parse(slurp(vocab_out / "manifest.json"))["command"] == "vocab");

    // train
    fs::path train_out = tmp.path / "train";
    REQUIRE(run_cli("train --config " + config.string() + " --out " + train_out.string(),
                    log) == 0);
    REQUIRE(fs::exists(train_out / "model" / "manifest.json"));
    REQUIRE(fs::exists(train_out / "model" / "stage2.json"));

    // predict consumes the trained model
    fs::path texts = tmp.path / "texts.txt";
    write_text(texts, "sunny picnic coffee\nborder invader deport\nkitchen gossip\n");
    fs::path predict_out = tmp.path / "predict";
    REQUIRE(run_cli("predict --model " + (train_out / "model").string() + " --in " +
                        texts.string() + " --out " + predict_out.string(),
                    log) == 0);
    auto lines = split(slurp(predict_out / "predictions.txt"), '\n');
    if (!lines.empty() && lines.back().empty()) lines.pop_back();
    REQUIRE(lines.size() == 3);
    for (const auto& line : lines) {
        auto label = label_from_name(line);
        REQUIRE(label.has_value());
        CHECK(space_of(*label) == LabelSpace::ThreeClass);
    }

    // evaluate emits a report consumable as JSON + CSV
    fs::path eval_out = tmp.path / "eval";
    REQUIRE(run_cli("evaluate --config " + config.string() + " --out " + eval_out.string(),
                    log) == 0);
    auto report = nlohmann::json::parse(slurp(eval_out / "report.json"));
    REQUIRE(report["fold_scores"].size() == 2);
    CHECK(report["fold_scores"][0]["metrics"]["total"].contains("f_score"));
    CHECK(report["averages"]["total_f"].contains("mean"));
    CHECK(slurp(eval_out / "report.csv").rfind("repetition,fold,", 0) == 0);

    // generalize consumes the trained model against a binary corpus
    LabeledCorpus binary;
    binary.space = LabelSpace::Binary;
    binary.samples = {{"h1", "kitchen sandwich gossip", Label::Hate},
                      {"h2", "border deport invader", Label::Hate},
                      {"n1", "sunny picnic garden", Label::NonHate},
                      {"n2", "coffee museum cycling", Label::NonHate}};
    fs::path binary_path = tmp.path / "binary.tsv";
    save_corpus(binary, binary_path, CorpusFormat::Tsv);
    fs::path gen_out = tmp.path / "gen";
    REQUIRE(run_cli("generalize --model " + (train_out / "model").string() + " --test " +
                        binary_path.string() + " --rule three --filtered --out " +
                        gen_out.string(),
                    log) == 0);
    auto gen = nlohmann::json::parse(slurp(gen_out / "generalize.json"));
    CHECK(gen["rule"] == "three");
    CHECK(gen["filtered"] == true);
    CHECK(gen["metrics"]["per_class"][0]["label"] == "Hate");
    CHECK(gen["metrics"]["total"]["population"] == 4);

    // augment consumes and emits the feature csv format
    std::vector<FeatureRow> rows;
    for (int i = 0; i < 9; ++i) {
        double p = 0.1 + 0.08 * static_cast<double>(i);
        rows.push_back(attach_label({p, 1.0 - p, 0.3, 0.7, 0.6, 0.4},
                                    stage2_label(i % kStage2Classes)));
    }
    fs::path rows_path = tmp.path / "rows.csv";
    write_text(rows_path, feature_rows_to_csv(rows));
    fs::path aug_out = tmp.path / "aug";
    REQUIRE(run_cli("augment --in " + rows_path.string() +
                        " --per-class 10 --seed 9 --out " + aug_out.string(),
                    log) == 0);
    auto augmented = feature_rows_from_csv(slurp(aug_out / "augmented.csv"));
    CHECK(augmented.size() == 9 + 30);

    // byte-identical rerun with the same seed
    fs::path aug_out2 = tmp.path / "aug2";
    REQUIRE(run_cli("augment --in " + rows_path.string() +
                        " --per-class 10 --seed 9 --out " + aug_out2.string(),
                    log) == 0);
    CHECK(slurp(aug_out / "augmented.csv") == slurp(aug_out2 / "augmented.csv"));
}

TEST_CASE("identical config and seeds produce identical report files") {
    TempDir tmp;
    fs::path data = write_corpus(tmp.path);
    fs::path config = write_smoke_config(tmp.path, data, 4);
    fs::path log = tmp.path / "log.txt";

    fs::path a = tmp.path / "a";
    fs::path b = tmp.path / "b";
    REQUIRE(run_cli("evaluate --config " + config.string() + " --out " + a.string(), log) == 0);
    REQUIRE(run_cli("evaluate --config " + config.string() + " --out " + b.string(), log) == 0);
    CHECK(slurp(a / "report.json") == slurp(b / "report.json"));
    CHECK(slurp(a / "report.csv") == slurp(b / "report.csv"));

    // The manifest echoes the full configuration and the seed.
    auto manifest = nlohmann::json::parse(slurp(a / "manifest.json"));
    CHECK(manifest["command"] == "evaluate");
    CHECK(manifest["seed"] == 17);
    CHECK(manifest["config"]["folds"] == 2);
}

TEST_CASE("cli maps error families to exit codes") {
    TempDir tmp;
    fs::path log = tmp.path / "log.txt";

    SECTION("usage errors exit 1") {
        CHECK(run_cli("evaluate --data " + (tmp.path / "missing.tsv").string(), log) == 1);
        CHECK(slurp(log).find("config field 'data'") != std::string::npos);

        fs::path bad = tmp.path / "bad.json";
        write_text(bad, "{\"bogus_field\": 1}");
        CHECK(run_cli("evaluate --config " + bad.string(), log) == 1);
        CHECK(slurp(log).find("bogus_field") != std::string::npos);

        CHECK(run_cli("evaluate --classifiers 4", log) == 1);
        CHECK(run_cli("", log) == 1);
    }

    SECTION("data errors exit 2") {
        fs::path bad = tmp.path / "bad.tsv";
        write_text(bad, "id\ttext\tlabel\nx1\thello\tweirdlabel\n");
        CHECK(run_cli("evaluate --data " + bad.string() + " --folds 2", log) == 2);
        CHECK(slurp(log).find("weirdlabel") != std::string::npos);
    }

    SECTION("version-mismatched containers are refused with both versions") {
        fs::path data = write_corpus(tmp.path);
        fs::path config = write_smoke_config(tmp.path, data, 2);
        fs::path train_out = tmp.path / "train";
        REQUIRE(run_cli("train --config " + config.string() + " --out " + train_out.string(),
                        log) == 0);
        fs::path manifest_path = train_out / "model" / "manifest.json";
        auto manifest = nlohmann::json::parse(slurp(manifest_path));
        manifest["format_version"] = 99;
        write_text(manifest_path, manifest.dump(2));

        fs::path texts = tmp.path / "texts.txt";
        write_text(texts, "sunny day\n");
        CHECK(run_cli("predict --model " + (train_out / "model").string() + " --in " +
                          texts.string() + " --out " + (tmp.path / "p").string(),
                      log) == 2);
        std::string err = slurp(log);
        CHECK(err.find("99") != std::string::npos);
        CHECK(err.find("version 1") != std::string::npos);
    }
}
