// Command-line surface for the two-stage hate-speech pipeline: vocabulary
// building, bank + combiner training, prediction, cross-validation,
// cross-dataset generalization, and feature-row augmentation.

#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "hsd/config.hpp"

namespace fs = std::filesystem;
using namespace hsd;

namespace {

// Flags the user actually passed; they override the config file afterwards.
struct CliArgs {
    std::string config_path;
    std::optional<std::string> data, test, input, model, format, stage2, rule, out;
    std::optional<int> classifiers, order, folds, repetitions, jobs, stacked_instances;
    std::optional<std::size_t> cap, per_class;
    std::optional<std::uint64_t> seed;
    std::optional<double> mdv;
    bool filtered = false;
    bool no_filter = false;
    bool lowercase = false;
};

void add_common_options(CLI::App* cmd, CliArgs& args) {
    cmd->add_option("--config", args.config_path, "JSON run configuration; flags override");
    cmd->add_option("--data", args.data, "labeled corpus path");
    cmd->add_option("--test", args.test, "binary-labeled corpus path");
    cmd->add_option("--in,--input", args.input, "input file (text lines or feature csv)");
    cmd->add_option("--model", args.model, "model directory");
    cmd->add_option("--format", args.format, "corpus format: tsv, csv or jsonl");
    cmd->add_option("--order", args.order, "n-gram order (1-3)");
    cmd->add_option("--cap", args.cap, "vocabulary cap for --order");
    cmd->add_option("--classifiers", args.classifiers, "bank size: 3 or 5")
        ->check(CLI::IsMember({3, 5}));
    cmd->add_option("--stage2", args.stage2,
                    "combiner: fixed, stacked, lr, rf, ada, gb or xgb");
    cmd->add_option("--rule", args.rule, "generalization rule: single, three or five");
    cmd->add_flag("--filtered", args.filtered, "preprocess the generalization corpus");
    cmd->add_flag("--no-filter", args.no_filter, "skip text preprocessing");
    cmd->add_flag("--lowercase", args.lowercase, "fold case during preprocessing");
    cmd->add_option("--folds", args.folds, "cross-validation folds");
    cmd->add_option("--repetitions", args.repetitions, "cross-validation repetitions");
    cmd->add_option("--stacked-instances", args.stacked_instances, "stacked combiner size");
    cmd->add_option("--mdv", args.mdv, "augmentation: maximum relative divergence");
    cmd->add_option("--per-class", args.per_class, "augmentation: rows per class");
    cmd->add_option("--jobs", args.jobs, "worker threads");
    cmd->add_option("--seed", args.seed, "master random seed");
    cmd->add_option("--out", args.out, "output directory");
}

RunConfig assemble_config(const CliArgs& args) {
    RunConfig config;
    if (!args.config_path.empty()) {
        if (!fs::exists(args.config_path))
            throw ConfigError("config field 'config': path does not exist: " +
                              args.config_path);
        config = load_run_config(args.config_path);
    }
    if (args.data) config.data = *args.data;
    if (args.test) config.test = *args.test;
    if (args.input) config.input = *args.input;
    if (args.model) config.model = *args.model;
    if (args.format) config.format = *args.format;
    if (args.order) config.order = *args.order;
    if (args.classifiers) config.bank.classifier_count = *args.classifiers;
    if (args.stage2) config.stage2 = *args.stage2;
    if (args.rule) config.rule = *args.rule;
    if (args.filtered) config.filtered = true;
    if (args.no_filter) config.filter = false;
    if (args.lowercase) config.lowercase = true;
    if (args.folds) config.folds = *args.folds;
    if (args.repetitions) config.repetitions = *args.repetitions;
    if (args.stacked_instances) config.stacked_instances = *args.stacked_instances;
    if (args.mdv) config.augment.mdv = *args.mdv;
    if (args.per_class) config.augment.n_samples = *args.per_class;
    if (args.jobs) config.jobs = *args.jobs;
    if (args.seed) config.seed = *args.seed;
    if (args.out) config.out = *args.out;
    if (args.cap) config.vocab_caps[config.order] = *args.cap;
    // Round-trip through the JSON schema so flag values face the same
    // validation as file values.
    return run_config_from_json(run_config_to_json(config));
}

const fs::path& require_path(const fs::path& path, const char* field) {
    if (path.empty())
        throw ConfigError(std::string("config field '") + field +
                          "': required by this command");
    if (!fs::exists(path))
        throw ConfigError(std::string("config field '") + field +
                          "': path does not exist: " + path.string());
    return path;
}

LabeledCorpus load_data(const RunConfig& config, const fs::path& path) {
    return load_corpus(path, resolve_format(config, path), config.labels);
}

void apply_filter(const RunConfig& config, LabeledCorpus& corpus) {
    if (!config.filter) return;
    for (auto& s : corpus.samples) s.text = filter_text(s.text, config.lowercase);
}

void write_manifest(const RunConfig& config, const std::string& command,
                    const std::vector<std::string>& artifacts) {
    nlohmann::json m{{"command", command},
                     {"seed", config.seed},
                     {"config", run_config_to_json(config)},
                     {"artifacts", artifacts}};
    write_file_atomic(config.out / "manifest.json", m.dump(2) + "\n");
}

std::size_t cap_for_order(const RunConfig& config, int order) {
    auto it = config.vocab_caps.find(order);
    return it == config.vocab_caps.end() ? default_vocab_cap(order) : it->second;
}

// Shares the per-unit seed substreams with the experiment driver, so a
// standalone training run behaves like one cross-validation unit.
Stage2Model train_stage2(const RunConfig& config, std::vector<FeatureRow> rows,
                         const TrainedBank& trained) {
    if (config.augment.n_samples > 0) {
        std::vector<FeatureRow> augmented = rows;
        for (int k = 0; k < kStage2Classes; ++k) {
            Label cls = stage2_label(k);
            std::vector<FeatureRow> class_rows;
            for (const auto& row : rows)
                if (row.label == cls) class_rows.push_back(row);
            if (class_rows.empty()) continue;
            AugmentConfig ac = config.augment;
            ac.seed = sub_seed(config.seed, 0xA0 + static_cast<std::uint64_t>(k));
            auto extra = generate_samples(class_rows, ac);
            augmented.insert(augmented.end(), extra.begin(), extra.end());
        }
        rows = std::move(augmented);
    }

    Stage2Model model;
    std::uint64_t stage2_seed = sub_seed(config.seed, 0x52);
    switch (config.stage2_kind()) {
        case CombinerKind::FixedCriteriaUnigram:
        case CombinerKind::FixedCriteriaNgram:
            model.kind = config.stage2_kind();
            model.feature_width = trained.bank.feature_width();
            break;
        case CombinerKind::StackedDeep: {
            StackedTrainConfig sc = config.stacked;
            sc.seed = stage2_seed;
            sc.jobs = config.jobs;
            model.kind = CombinerKind::StackedDeep;
            model.feature_width = trained.bank.feature_width();
            model.stacked = train_stacked(rows, config.stacked_instances, sc);
            break;
        }
        default: {
            Stage2TrainOptions options = config.stage2_options;
            options.seed = stage2_seed;
            model = train_combiner(config.stage2_kind(), rows, config.hyper, options);
            break;
        }
    }
    return model;
}

int cmd_vocab(const RunConfig& config) {
    LabeledCorpus corpus = load_data(config, require_path(config.data, "data"));
    apply_filter(config, corpus);
    std::size_t cap = cap_for_order(config, config.order);
    NGramVocabulary vocab = NGramVocabulary::build(corpus, config.order, cap);
    std::string name = "vocab_" + std::to_string(config.order) + ".jsonl";
    vocab.save(config.out / name);
    write_manifest(config, "vocab", {name});
    std::printf("vocabulary order %d: %zu of cap %zu n-grams -> %s\n", config.order,
                vocab.size(), cap, (config.out / name).string().c_str());
    return 0;
}

int cmd_train(const RunConfig& config) {
    LabeledCorpus corpus = load_data(config, require_path(config.data, "data"));
    corpus.require_labels();
    apply_filter(config, corpus);

    VocabularySet vocabs;
    for (const auto& member : bank_members(config.bank.classifier_count)) {
        if (vocabs.count(member.order)) continue;
        vocabs.emplace(member.order, NGramVocabulary::build(corpus, member.order,
                                                            cap_for_order(config, member.order)));
    }

    BankTrainConfig bank_config = config.bank;
    bank_config.jobs = config.jobs;
    TrainedBank trained = train_bank(corpus, vocabs, bank_config, sub_seed(config.seed, 0xB1));

    LabeledCorpus holdout;
    holdout.space = corpus.space;
    for (std::size_t i : trained.validation_indices)
        holdout.samples.push_back(corpus.samples[i]);
    Stage2Model model =
        train_stage2(config, make_stage2_rows(trained.bank, vocabs, holdout), trained);

    fs::path model_dir = config.out / "model";
    save_bank(trained.bank, vocabs, model_dir, config.seed);
    save_stage2(model, model_dir / "stage2.json");
    write_manifest(config, "train", {"model"});
    for (const auto& m : trained.bank.members)
        std::printf("%s: best epoch %d of %d, validation accuracy %.4f\n", m.name.c_str(),
                    m.metadata.best_epoch, m.metadata.epochs_run,
                    m.metadata.best_val_accuracy);
    std::printf("model -> %s (stage2: %s)\n", model_dir.string().c_str(),
                to_string(model.kind).c_str());
    return 0;
}

int cmd_predict(const RunConfig& config) {
    auto [bank, vocabs] = load_bank(require_path(config.model, "model"));
    Stage2Model model = load_stage2(config.model / "stage2.json");

    std::string content = read_file(require_path(config.input, "input"));
    std::vector<std::string> lines = split(content, '\n');
    if (!lines.empty() && lines.back().empty()) lines.pop_back();

    std::string out_text;
    for (const auto& line : lines) {
        std::string text = config.filter ? filter_text(line, config.lowercase) : line;
        Label label = combiner_predict(model, predict_bank(bank, text, vocabs));
        out_text += to_string(label) + "\n";
        std::printf("%s\n", to_string(label).c_str());
    }
    write_file_atomic(config.out / "predictions.txt", out_text);
    write_manifest(config, "predict", {"predictions.txt"});
    return 0;
}

int cmd_evaluate(const RunConfig& config) {
    LabeledCorpus corpus = load_data(config, require_path(config.data, "data"));
    ExperimentReport report = run_experiment(corpus, experiment_config(config));

    write_file_atomic(config.out / "report.json",
                      experiment_report_to_json(report).dump(2) + "\n");
    write_file_atomic(config.out / "report.csv", experiment_report_to_csv(report));
    write_manifest(config, "evaluate", {"report.json", "report.csv"});

    for (const auto& c : report.per_class)
        std::printf("%-7s F %.4f (std %.4f)\n", to_string(c.label).c_str(), c.f_score.mean,
                    c.f_score.stddev);
    std::printf("total   F %.4f (std %.4f), accuracy %.4f\n", report.total_f.mean,
                report.total_f.stddev, report.accuracy.mean);
    return 0;
}

int cmd_generalize(const RunConfig& config) {
    auto [bank, vocabs] = load_bank(require_path(config.model, "model"));
    LabeledCorpus test = load_data(config, require_path(config.test, "test"));
    GeneralizeResult result = generalize(bank, vocabs, test, config.generalize_rule(),
                                         config.filtered, config.lowercase);

    write_file_atomic(config.out / "generalize.json",
                      generalize_result_to_json(result).dump(2) + "\n");
    write_manifest(config, "generalize", {"generalize.json"});

    for (const auto& c : result.report.per_class)
        std::printf("%-7s P %.4f R %.4f F %.4f\n", to_string(c.label).c_str(), c.precision,
                    c.recall, c.f_score);
    std::printf("total   F %.4f, accuracy %.4f (rule %s%s)\n", result.report.total_f,
                result.report.accuracy, to_string(result.rule).c_str(),
                result.filtered ? ", filtered" : "");
    return 0;
}

int cmd_augment(const RunConfig& config) {
    std::string content = read_file(require_path(config.input, "input"));
    std::vector<FeatureRow> rows = feature_rows_from_csv(content, config.labels);
    for (const auto& row : rows)
        if (!row.label) throw DataError("unlabeled feature rows cannot be augmented");
    if (config.augment.n_samples == 0)
        throw ConfigError("config field 'augment.n_samples': must be positive "
                          "(set --per-class)");

    std::vector<FeatureRow> out_rows = rows;
    std::size_t generated = 0;
    for (int k = 0; k < kStage2Classes; ++k) {
        Label cls = stage2_label(k);
        std::vector<FeatureRow> class_rows;
        for (const auto& row : rows)
            if (row.label == cls) class_rows.push_back(row);
        if (class_rows.empty()) continue;
        AugmentConfig ac = config.augment;
        ac.seed = sub_seed(config.seed, 0xA0 + static_cast<std::uint64_t>(k));
        auto extra = generate_samples(class_rows, ac);
        generated += extra.size();
        out_rows.insert(out_rows.end(), extra.begin(), extra.end());
    }

    write_file_atomic(config.out / "augmented.csv", feature_rows_to_csv(out_rows));
    write_manifest(config, "augment", {"augmented.csv"});
    std::printf("augmented %zu source rows with %zu generated rows -> %s\n", rows.size(),
                generated, (config.out / "augmented.csv").string().c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Two-stage one-vs-rest hate-speech classification pipeline"};
    app.require_subcommand(1);
    CliArgs args;
    auto* train = app.add_subcommand("train", "train a classifier bank and combiner");
    auto* predict = app.add_subcommand("predict", "classify text lines with a saved model");
    auto* evaluate = app.add_subcommand("evaluate", "cross-validate the full pipeline");
    auto* generalize =
        app.add_subcommand("generalize", "score a saved bank on a binary corpus");
    auto* augment = app.add_subcommand("augment", "synthesize feature rows per class");
    auto* vocab = app.add_subcommand("vocab", "build an n-gram vocabulary");
    for (auto* cmd : {train, predict, evaluate, generalize, augment, vocab})
        add_common_options(cmd, args);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        RunConfig config = assemble_config(args);
        if (train->parsed()) return cmd_train(config);
        if (predict->parsed()) return cmd_predict(config);
        if (evaluate->parsed()) return cmd_evaluate(config);
        if (generalize->parsed()) return cmd_generalize(config);
        if (augment->parsed()) return cmd_augment(config);
        if (vocab->parsed()) return cmd_vocab(config);
        std::fprintf(stderr, "usage error: no command\n");
        return 1;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return 1;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numeric error: %s\n", e.what());
        return 3;
    } catch (const DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 2;
    }
}
