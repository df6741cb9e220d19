#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <set>

#include "hsd/stage1.hpp"

using namespace hsd;

namespace {

LabeledCorpus tiny_corpus() {
    LabeledCorpus c;
    c.space = LabelSpace::ThreeClass;
    c.samples = {{"t1", "you lot are awful", Label::Racism},
                 {"t2", "women cannot drive", Label::Sexism},
                 {"t3", "nice weather today", Label::Neutral},
                 {"t4", "lovely game last night", Label::Neutral},
                 {"t5", "go back home now", Label::Racism}};
    return c;
}

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        path = std::filesystem::temp_directory_path() /
               ("hsd_stage1_" + std::to_string(Catch::rngSeed()) + "_" +
                std::to_string(reinterpret_cast<std::uintptr_t>(this)));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
};

// Small bank trained just enough to be usable in predict/persistence tests.
std::pair<TrainedBank, VocabularySet> trained_tiny_bank(int classifiers) {
    LabeledCorpus c;
    c.space = LabelSpace::ThreeClass;
    for (int i = 0; i < 12; ++i) {
        std::string n = std::to_string(i);
        c.samples.push_back({"r" + n, "slur group hate " + n, Label::Racism});
        c.samples.push_back({"s" + n, "kitchen woman joke " + n, Label::Sexism});
        c.samples.push_back({"n" + n, "sunny park walk " + n, Label::Neutral});
    }
    VocabularySet vocabs;
    vocabs.emplace(1, NGramVocabulary::build(c, 1, 100));
    if (classifiers == 5) {
        vocabs.emplace(2, NGramVocabulary::build(c, 2, 200));
        vocabs.emplace(3, NGramVocabulary::build(c, 3, 300));
    }
    BankTrainConfig cfg;
    cfg.classifier_count = classifiers;
    cfg.sequence_length = 8;
    cfg.embedding_dim = 6;
    cfg.recurrent_units = 6;
    cfg.dense_units = 6;
    cfg.schedule.max_epochs = 3;
    cfg.schedule.initial_patience = 3;
    cfg.schedule.batch_size = 36;
    return {train_bank(c, vocabs, cfg, 99), std::move(vocabs)};
}

}  // namespace

TEST_CASE("bank member order is fixed") {
    auto three = bank_members(3);
    REQUIRE(three.size() == 3);
    CHECK(three[0].target == Label::Neutral);
    CHECK(three[0].order == 1);
    CHECK(three[1].target == Label::Sexism);
    CHECK(three[2].target == Label::Racism);

    auto five = bank_members(5);
    REQUIRE(five.size() == 5);
    CHECK(five[3].target == Label::Racism);
    CHECK(five[3].order == 2);
    CHECK(five[4].target == Label::Racism);
    CHECK(five[4].order == 3);
    CHECK(five[4].name == "racism-3");

    CHECK_THROWS_AS(bank_members(4), ConfigError);
}

TEST_CASE("default member rates match the tuned table") {
    CHECK(default_member_rates(Label::Neutral, 1).initial_rate == 0.08);
    CHECK(default_member_rates(Label::Neutral, 1).decay_rate == 0.15);
    CHECK(default_member_rates(Label::Sexism, 1).initial_rate == 0.10);
    CHECK(default_member_rates(Label::Sexism, 1).decay_rate == 0.20);
    CHECK(default_member_rates(Label::Racism, 1).initial_rate == 0.08);
    CHECK(default_member_rates(Label::Racism, 1).decay_rate == 0.15);
    CHECK(default_member_rates(Label::Racism, 2).initial_rate == 0.05);
    CHECK(default_member_rates(Label::Racism, 2).decay_rate == 0.20);
    CHECK(default_member_rates(Label::Racism, 3).initial_rate == 0.05);
    CHECK(default_member_rates(Label::Racism, 3).decay_rate == 0.18);
}

TEST_CASE("binarize_labels keeps size and maps target to the positive class") {
    auto c = tiny_corpus();
    auto classes = binarize_labels(c, Label::Racism);
    REQUIRE(classes.size() == c.size());
    CHECK(classes == std::vector<int>{kPositiveClass, kNegativeClass, kNegativeClass,
                                      kNegativeClass, kPositiveClass});
    auto neutral = binarize_labels(c, Label::Neutral);
    CHECK(std::count(neutral.begin(), neutral.end(), kPositiveClass) == 2);

    CHECK_THROWS_AS(binarize_labels(c, Label::Hate), ConfigError);
    LabeledCorpus unlabeled = c;
    unlabeled.samples[1].label.reset();
    CHECK_THROWS_AS(binarize_labels(unlabeled, Label::Racism), DataError);
}

TEST_CASE("replicate_oversample appends full passes after the originals") {
    auto c = tiny_corpus();
    auto out = replicate_oversample(c, Label::Racism, 3);
    REQUIRE(out.size() == c.size() + 4);
    for (std::size_t i = 0; i < c.size(); ++i) CHECK(out.samples[i].id == c.samples[i].id);
    CHECK(out.samples[5].id == "t1");
    CHECK(out.samples[6].id == "t5");
    CHECK(out.samples[7].id == "t1");
    CHECK(out.samples[8].id == "t5");
    CHECK(out.count_label(Label::Racism) == 6);
    CHECK(out.count_label(Label::Sexism) == 1);

    CHECK(replicate_oversample(c, Label::Sexism, 1).size() == c.size());
    CHECK_THROWS_AS(replicate_oversample(c, Label::Racism, 0), ConfigError);
    LabeledCorpus no_sexism;
    no_sexism.space = LabelSpace::ThreeClass;
    no_sexism.samples = {{"a", "x", Label::Neutral}};
    CHECK_THROWS_AS(replicate_oversample(no_sexism, Label::Sexism, 2), DataError);
}

TEST_CASE("replicate_oversample reproduces the published class balance") {
    // 1943 racism / 3166 sexism / 10889 neutral; sexism doubled and racism
    // tripled gives 6332 and 5829 in a 23050-row training set.
    LabeledCorpus c;
    c.space = LabelSpace::ThreeClass;
    c.samples.reserve(15998);
    auto add = [&](int n, Label l, const char* prefix) {
        for (int i = 0; i < n; ++i)
            c.samples.push_back({std::string(prefix) + std::to_string(i), "text", l});
    };
    add(1943, Label::Racism, "r");
    add(3166, Label::Sexism, "s");
    add(10889, Label::Neutral, "n");
    REQUIRE(c.size() == 15998);

    auto out = replicate_oversample(replicate_oversample(c, Label::Sexism, 2), Label::Racism, 3);
    CHECK(out.count_label(Label::Sexism) == 6332);
    CHECK(out.count_label(Label::Racism) == 5829);
    CHECK(out.count_label(Label::Neutral) == 10889);
    CHECK(out.size() == 23050);
}

TEST_CASE("attach_label appends the one-hot triple") {
    std::vector<double> f = {0.1, 0.9, 0.2, 0.8, 0.3, 0.7};
    auto row = attach_label(f, Label::Sexism);
    REQUIRE(row.values.size() == 9);
    CHECK(row.values[6] == 1.0);
    CHECK(row.values[7] == 0.0);
    CHECK(row.values[8] == 0.0);
    CHECK(row.label == Label::Sexism);

    auto racism = attach_label(f, Label::Racism);
    CHECK(racism.values[7] == 1.0);
    auto neutral = attach_label(f, Label::Neutral);
    CHECK(neutral.values[8] == 1.0);

    CHECK_THROWS_AS(attach_label(f, Label::Hate), ConfigError);
}

TEST_CASE("predict_bank emits complementary pairs in bank order") {
    auto [trained, vocabs] = trained_tiny_bank(3);
    auto features = predict_bank(trained.bank, "kitchen woman joke 3", vocabs);
    REQUIRE(features.size() == 6);
    for (std::size_t i = 0; i < features.size(); i += 2) {
        CHECK(features[i] >= 0.0);
        CHECK(features[i] <= 1.0);
        CHECK(features[i] + features[i + 1] == Catch::Approx(1.0).margin(1e-12));
    }
    // deterministic
    CHECK(predict_bank(trained.bank, "kitchen woman joke 3", vocabs) == features);
}

TEST_CASE("predict_bank with five classifiers yields a ten-wide row") {
    auto [trained, vocabs] = trained_tiny_bank(5);
    auto features = predict_bank(trained.bank, "slur group hate 1", vocabs);
    REQUIRE(features.size() == 10);
    for (std::size_t i = 0; i < features.size(); i += 2)
        CHECK(features[i] + features[i + 1] == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("predict_bank rejects untrained members and missing vocabularies") {
    OvrBank bank;
    for (const auto& spec : bank_members(3))
        bank.members.push_back({spec.target, spec.order, spec.name, SequenceClassifier{}, {}});
    VocabularySet vocabs;
    vocabs.emplace(1, NGramVocabulary(1, 10));
    CHECK_THROWS_WITH(predict_bank(bank, "hello", vocabs),
                      Catch::Matchers::ContainsSubstring("untrained"));

    auto [trained, trained_vocabs] = trained_tiny_bank(3);
    VocabularySet empty;
    CHECK_THROWS_AS(predict_bank(trained.bank, "hello", empty), ConfigError);
}

TEST_CASE("train_bank holds out validation rows and trains every member") {
    auto [trained, vocabs] = trained_tiny_bank(3);
    REQUIRE(trained.bank.classifier_count() == 3);
    for (const auto& m : trained.bank.members) {
        CHECK(m.trained());
        CHECK(m.metadata.epochs_run >= 1);
    }
    CHECK(!trained.validation_indices.empty());
    CHECK(trained.validation_indices.size() < 36);
    CHECK(std::is_sorted(trained.validation_indices.begin(), trained.validation_indices.end()));
}

TEST_CASE("train_bank is reproducible and job-count independent") {
    LabeledCorpus c;
    c.space = LabelSpace::ThreeClass;
    for (int i = 0; i < 10; ++i) {
        std::string n = std::to_string(i);
        c.samples.push_back({"r" + n, "bad group " + n, Label::Racism});
        c.samples.push_back({"s" + n, "bad joke " + n, Label::Sexism});
        c.samples.push_back({"n" + n, "fine day " + n, Label::Neutral});
    }
    VocabularySet vocabs;
    vocabs.emplace(1, NGramVocabulary::build(c, 1, 64));
    BankTrainConfig cfg;
    cfg.classifier_count = 3;
    cfg.sequence_length = 6;
    cfg.embedding_dim = 4;
    cfg.recurrent_units = 4;
    cfg.dense_units = 4;
    cfg.schedule.max_epochs = 2;
    cfg.schedule.batch_size = 30;

    auto serial = train_bank(c, vocabs, cfg, 7);
    cfg.jobs = 3;
    auto parallel = train_bank(c, vocabs, cfg, 7);
    REQUIRE(serial.validation_indices == parallel.validation_indices);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(serial.bank.members[i].model == parallel.bank.members[i].model);
        CHECK(serial.bank.members[i].metadata.best_val_error ==
              parallel.bank.members[i].metadata.best_val_error);
    }
}

TEST_CASE("make_stage2_rows labels every validation sample") {
    auto [trained, vocabs] = trained_tiny_bank(3);
    LabeledCorpus holdout;
    holdout.space = LabelSpace::ThreeClass;
    holdout.samples = {{"a", "sunny park walk 1", Label::Neutral},
                       {"b", "kitchen woman joke 2", Label::Sexism}};
    auto rows = make_stage2_rows(trained.bank, vocabs, holdout);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].values.size() == 9);
    CHECK(rows[0].label == Label::Neutral);
    CHECK(rows[1].label == Label::Sexism);
    CHECK(rows[1].values[6] == 1.0);
}

TEST_CASE("bank round-trips through a directory") {
    auto [trained, vocabs] = trained_tiny_bank(3);
    TempDir tmp;
    save_bank(trained.bank, vocabs, tmp.path, 99);
    CHECK(std::filesystem::exists(tmp.path / "manifest.json"));
    CHECK(std::filesystem::exists(tmp.path / "model_neutral-1.json"));
    CHECK(std::filesystem::exists(tmp.path / "vocab_1.jsonl"));

    auto [loaded, loaded_vocabs] = load_bank(tmp.path);
    REQUIRE(loaded.classifier_count() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(loaded.members[i].name == trained.bank.members[i].name);
        CHECK(loaded.members[i].target == trained.bank.members[i].target);
        CHECK(loaded.members[i].order == trained.bank.members[i].order);
        CHECK(loaded.members[i].model == trained.bank.members[i].model);
    }
    REQUIRE(loaded_vocabs.count(1) == 1);
    CHECK(loaded_vocabs.at(1).size() == vocabs.at(1).size());

    auto before = predict_bank(trained.bank, "slur group hate 7", vocabs);
    auto after = predict_bank(loaded, "slur group hate 7", loaded_vocabs);
    CHECK(before == after);
}

TEST_CASE("bank manifest version mismatch is refused") {
    auto [trained, vocabs] = trained_tiny_bank(3);
    TempDir tmp;
    save_bank(trained.bank, vocabs, tmp.path, 1);
    auto manifest_path = tmp.path / "manifest.json";
    auto j = nlohmann::json::parse(read_file(manifest_path));
    j["format_version"] = 999;
    write_file_atomic(manifest_path, j.dump(2));
    CHECK_THROWS_WITH(load_bank(tmp.path), Catch::Matchers::ContainsSubstring("999"));
}

TEST_CASE("feature rows round-trip through CSV") {
    std::vector<FeatureRow> rows;
    rows.push_back(attach_label({0.125, 0.875, 0.5, 0.5, 0.25, 0.75}, Label::Racism));
    rows.push_back(attach_label({0.9, 0.1, 0.3, 0.7, 1.0 / 3.0, 2.0 / 3.0}, Label::Neutral));
    TempDir tmp;
    auto path = tmp.path / "rows.csv";
    save_feature_rows(rows, path);

    std::string content = read_file(path);
    CHECK(content.rfind("p_neutral-1,not_neutral-1,p_sexism-1,not_sexism-1,"
                        "p_racism-1,not_racism-1,b_sexism,b_racism,b_neutral\n", 0) == 0);

    auto loaded = load_feature_rows(path);
    REQUIRE(loaded.size() == 2);
    CHECK(loaded[0].values == rows[0].values);   // bitwise via round-trip formatting
    CHECK(loaded[1].values == rows[1].values);
    CHECK(loaded[0].label == Label::Racism);
    CHECK(loaded[1].label == Label::Neutral);
}

TEST_CASE("unlabeled feature rows use the short header") {
    std::vector<FeatureRow> rows(2);
    rows[0].values = {0.1, 0.9, 0.2, 0.8, 0.3, 0.7, 0.4, 0.6, 0.55, 0.45};
    rows[1].values = {0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5};
    TempDir tmp;
    auto path = tmp.path / "rows.csv";
    save_feature_rows(rows, path);
    auto loaded = load_feature_rows(path);
    REQUIRE(loaded.size() == 2);
    CHECK(loaded[0].values.size() == 10);
    CHECK(!loaded[0].label.has_value());
}

TEST_CASE("feature row file errors are specific") {
    TempDir tmp;
    auto path = tmp.path / "rows.csv";

    std::vector<FeatureRow> mixed(2);
    mixed[0].values = {0.1, 0.9, 0.2, 0.8, 0.3, 0.7};
    mixed[1] = attach_label({0.1, 0.9, 0.2, 0.8, 0.3, 0.7}, Label::Neutral);
    CHECK_THROWS_AS(save_feature_rows(mixed, path), DataError);
    CHECK_THROWS_AS(save_feature_rows({}, path), DataError);

    write_file_atomic(path, "p_neutral-1,not_neutral-1\n0.5,0.5\n");
    CHECK_THROWS_WITH(load_feature_rows(path),
                      Catch::Matchers::ContainsSubstring("header"));

    write_file_atomic(path,
                      "p_neutral-1,not_neutral-1,p_sexism-1,not_sexism-1,p_racism-1,"
                      "not_racism-1\n0.5,0.5\n");
    CHECK_THROWS_WITH(load_feature_rows(path), Catch::Matchers::ContainsSubstring("line 2"));

    write_file_atomic(path,
                      "p_neutral-1,not_neutral-1,p_sexism-1,not_sexism-1,p_racism-1,"
                      "not_racism-1\n0.5,0.5,0.5,0.5,zz,0.5\n");
    CHECK_THROWS_WITH(load_feature_rows(path), Catch::Matchers::ContainsSubstring("zz"));
}
