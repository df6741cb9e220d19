#pragma once

// Run configuration for the command-line tools. One self-describing JSON
// document covers every subcommand; command-line flags override single
// fields. Defaults come from the struct initializers of the stages they
// configure (schedules, caps, dimensions, mdv), so the CLI cannot drift
// from the library's published constants.

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "hsd/augment.hpp"
#include "hsd/common.hpp"
#include "hsd/corpus.hpp"
#include "hsd/eval.hpp"
#include "hsd/labels.hpp"
#include "hsd/stage1.hpp"
#include "hsd/stage2.hpp"

namespace hsd {

struct RunConfig {
    // Inputs. Which ones must exist depends on the subcommand.
    std::filesystem::path data;    // labeled corpus: train, evaluate, vocab
    std::filesystem::path test;    // binary-labeled corpus: generalize
    std::filesystem::path input;   // text lines (predict) or feature csv (augment)
    std::filesystem::path model;   // bank + combiner directory: predict, generalize
    std::string format;            // tsv | csv | jsonl; empty infers from extension
    LabelMap labels = default_label_map();

    // Text preprocessing.
    bool filter = true;
    bool lowercase = false;

    // Vocabulary.
    std::map<int, std::size_t> vocab_caps;   // by order; missing -> default cap
    int order = 1;                           // vocab subcommand

    // First stage.
    BankTrainConfig bank;

    // Second stage. The kind is kept by name because the "fixed" alias
    // resolves against the classifier count.
    std::string stage2 = "fixed";
    HyperGrid hyper;
    Stage2TrainOptions stage2_options;
    int stacked_instances = 5;
    StackedTrainConfig stacked;

    // Cross-validation.
    int folds = 10;
    int repetitions = 10;

    // Cross-dataset generalization.
    std::string rule = "single";
    bool filtered = false;

    // Augmentation.
    AugmentConfig augment;

    // Run controls.
    std::uint64_t seed = 0;
    int jobs = 1;
    std::filesystem::path out = "out";

    CombinerKind stage2_kind() const {
        if (to_lower(stage2) == "fixed")
            return bank.classifier_count == 5 ? CombinerKind::FixedCriteriaNgram
                                              : CombinerKind::FixedCriteriaUnigram;
        auto kind = combiner_kind_from_name(stage2);
        if (!kind) throw ConfigError("config field 'stage2': unknown combiner '" + stage2 + "'");
        return *kind;
    }

    GeneralizeRule generalize_rule() const {
        auto r = rule_from_name(rule);
        if (!r) throw ConfigError("config field 'rule': unknown rule '" + rule + "'");
        return *r;
    }
};

namespace detail {

// Strict object reader: every recognized key is consumed through get(),
// anything left over is reported by name.
class JsonFields {
public:
    JsonFields(const nlohmann::json& j, std::string scope) : j_(j), scope_(std::move(scope)) {
        if (!j_.is_object())
            throw ConfigError("config field '" + scope_ + "': expected an object");
    }

    bool has(const char* name) const { return j_.contains(name); }

    const nlohmann::json& raw(const char* name) {
        seen_.insert(name);
        return j_.at(name);
    }

    template <typename T>
    void get(const char* name, T& out) {
        if (!j_.contains(name)) return;
        seen_.insert(name);
        try {
            out = j_.at(name).get<T>();
        } catch (const nlohmann::json::exception&) {
            throw ConfigError("config field '" + qualify(name) + "': wrong type");
        }
    }

    void finish() const {
        for (const auto& [key, value] : j_.items())
            if (!seen_.count(key))
                throw ConfigError("unknown config field '" + qualify(key) + "'");
    }

    std::string qualify(const std::string& name) const {
        return scope_.empty() ? name : scope_ + "." + name;
    }

private:
    const nlohmann::json& j_;
    std::string scope_;
    std::set<std::string> seen_;
};

inline Label label_from_any_case(const std::string& name, const std::string& field) {
    for (LabelSpace space : {LabelSpace::ThreeClass, LabelSpace::Binary})
        for (Label l : labels_of(space))
            if (to_lower(name) == to_lower(to_string(l))) return l;
    throw ConfigError("config field '" + field + "': unknown label '" + name + "'");
}

inline void schedule_from_json(const nlohmann::json& j, const std::string& scope,
                               TrainingSchedule& s) {
    JsonFields f(j, scope);
    f.get("initial_rate", s.initial_rate);
    f.get("decay_rate", s.decay_rate);
    f.get("rate_floor", s.rate_floor);
    f.get("initial_patience", s.initial_patience);
    f.get("max_epochs", s.max_epochs);
    f.get("batch_size", s.batch_size);
    f.finish();
}

inline nlohmann::json schedule_to_json(const TrainingSchedule& s) {
    return {{"initial_rate", s.initial_rate},   {"decay_rate", s.decay_rate},
            {"rate_floor", s.rate_floor},       {"initial_patience", s.initial_patience},
            {"max_epochs", s.max_epochs},       {"batch_size", s.batch_size}};
}

}  // namespace detail

inline RunConfig run_config_from_json(const nlohmann::json& j) {
    RunConfig config;
    detail::JsonFields f(j, "");

    auto get_path = [&](const char* name, std::filesystem::path& out) {
        std::string s;
        f.get(name, s);
        if (!s.empty()) out = s;
    };
    get_path("data", config.data);
    get_path("test", config.test);
    get_path("input", config.input);
    get_path("model", config.model);
    get_path("out", config.out);
    f.get("format", config.format);

    if (f.has("labels")) {
        if (!f.raw("labels").is_object())
            throw ConfigError("config field 'labels': expected an object");
        config.labels.clear();
        for (const auto& [token, value] : f.raw("labels").items()) {
            if (!value.is_string())
                throw ConfigError("config field 'labels." + token + "': expected a label name");
            config.labels[to_lower(token)] =
                detail::label_from_any_case(value.get<std::string>(), "labels." + token);
        }
    }

    f.get("filter", config.filter);
    f.get("lowercase", config.lowercase);

    if (f.has("vocab_caps")) {
        if (!f.raw("vocab_caps").is_object())
            throw ConfigError("config field 'vocab_caps': expected an object");
        for (const auto& [key, value] : f.raw("vocab_caps").items()) {
            int order = 0;
            try {
                order = std::stoi(key);
            } catch (const std::exception&) {
                order = 0;
            }
            if (order < 1 || order > 3)
                throw ConfigError("config field 'vocab_caps." + key +
                                  "': order must be 1, 2 or 3");
            if (!value.is_number_unsigned() || value.get<std::size_t>() == 0)
                throw ConfigError("config field 'vocab_caps." + key +
                                  "': cap must be a positive integer");
            config.vocab_caps[order] = value.get<std::size_t>();
        }
    }
    f.get("order", config.order);

    f.get("classifiers", config.bank.classifier_count);
    if (f.has("bank")) {
        detail::JsonFields bf(f.raw("bank"), "bank");
        bf.get("sequence_length", config.bank.sequence_length);
        bf.get("embedding_dim", config.bank.embedding_dim);
        bf.get("recurrent_units", config.bank.recurrent_units);
        bf.get("dense_units", config.bank.dense_units);
        bf.get("per_member_rates", config.bank.per_member_rates);
        bf.get("validation_fraction", config.bank.validation_fraction);
        bf.get("sexism_factor", config.bank.sexism_factor);
        bf.get("racism_factor", config.bank.racism_factor);
        if (bf.has("schedule"))
            detail::schedule_from_json(bf.raw("schedule"), "bank.schedule",
                                       config.bank.schedule);
        bf.finish();
    }

    f.get("stage2", config.stage2);
    if (f.has("hyper")) {
        if (!f.raw("hyper").is_object())
            throw ConfigError("config field 'hyper': expected an object");
        for (const auto& [key, value] : f.raw("hyper").items()) {
            if (!value.is_array())
                throw ConfigError("config field 'hyper." + key + "': expected an array");
            std::vector<double> values;
            for (const auto& v : value) {
                if (!v.is_number())
                    throw ConfigError("config field 'hyper." + key + "': expected numbers");
                values.push_back(v.get<double>());
            }
            config.hyper[key] = std::move(values);
        }
    }
    if (f.has("stage2_options")) {
        detail::JsonFields sf(f.raw("stage2_options"), "stage2_options");
        sf.get("holdout_fraction", config.stage2_options.holdout_fraction);
        sf.get("bootstrap", config.stage2_options.bootstrap);
        sf.get("lambda", config.stage2_options.lambda);
        sf.finish();
    }
    f.get("stacked_instances", config.stacked_instances);
    if (f.has("stacked")) {
        detail::JsonFields sf(f.raw("stacked"), "stacked");
        sf.get("significance_digits", config.stacked.significance_digits);
        sf.get("embedding_dim", config.stacked.embedding_dim);
        sf.get("recurrent_units", config.stacked.recurrent_units);
        sf.get("validation_fraction", config.stacked.validation_fraction);
        if (sf.has("schedule"))
            detail::schedule_from_json(sf.raw("schedule"), "stacked.schedule",
                                       config.stacked.schedule);
        sf.finish();
    }

    f.get("folds", config.folds);
    f.get("repetitions", config.repetitions);
    f.get("rule", config.rule);
    f.get("filtered", config.filtered);

    if (f.has("augment")) {
        detail::JsonFields af(f.raw("augment"), "augment");
        af.get("mdv", config.augment.mdv);
        af.get("n_samples", config.augment.n_samples);
        af.finish();
    }

    f.get("seed", config.seed);
    f.get("jobs", config.jobs);
    f.finish();

    if (config.bank.classifier_count != 3 && config.bank.classifier_count != 5)
        throw ConfigError("config field 'classifiers': must be 3 or 5");
    if (config.jobs < 1) throw ConfigError("config field 'jobs': must be positive");
    if (config.order < 1 || config.order > 3)
        throw ConfigError("config field 'order': must be 1, 2 or 3");
    config.stage2_kind();         // resolves; throws with the field name
    config.generalize_rule();
    if (!config.format.empty()) corpus_format_from_name(config.format);
    return config;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
    nlohmann::json j = nlohmann::json::parse(read_file(path), nullptr, false);
    if (j.is_discarded()) throw ConfigError("config file " + path.string() + ": not valid JSON");
    return run_config_from_json(j);
}

inline nlohmann::json run_config_to_json(const RunConfig& config) {
    nlohmann::json labels = nlohmann::json::object();
    for (const auto& [token, label] : config.labels) labels[token] = to_string(label);
    nlohmann::json caps = nlohmann::json::object();
    for (const auto& [order, cap] : config.vocab_caps) caps[std::to_string(order)] = cap;
    nlohmann::json hyper = nlohmann::json::object();
    for (const auto& [key, values] : config.hyper) hyper[key] = values;
    return {{"data", config.data.string()},
            {"test", config.test.string()},
            {"input", config.input.string()},
            {"model", config.model.string()},
            {"format", config.format},
            {"labels", std::move(labels)},
            {"filter", config.filter},
            {"lowercase", config.lowercase},
            {"vocab_caps", std::move(caps)},
            {"order", config.order},
            {"classifiers", config.bank.classifier_count},
            {"bank",
             {{"sequence_length", config.bank.sequence_length},
              {"embedding_dim", config.bank.embedding_dim},
              {"recurrent_units", config.bank.recurrent_units},
              {"dense_units", config.bank.dense_units},
              {"per_member_rates", config.bank.per_member_rates},
              {"validation_fraction", config.bank.validation_fraction},
              {"sexism_factor", config.bank.sexism_factor},
              {"racism_factor", config.bank.racism_factor},
              {"schedule", detail::schedule_to_json(config.bank.schedule)}}},
            {"stage2", config.stage2},
            {"hyper", std::move(hyper)},
            {"stage2_options",
             {{"holdout_fraction", config.stage2_options.holdout_fraction},
              {"bootstrap", config.stage2_options.bootstrap},
              {"lambda", config.stage2_options.lambda}}},
            {"stacked_instances", config.stacked_instances},
            {"stacked",
             {{"significance_digits", config.stacked.significance_digits},
              {"embedding_dim", config.stacked.embedding_dim},
              {"recurrent_units", config.stacked.recurrent_units},
              {"validation_fraction", config.stacked.validation_fraction},
              {"schedule", detail::schedule_to_json(config.stacked.schedule)}}},
            {"folds", config.folds},
            {"repetitions", config.repetitions},
            {"rule", config.rule},
            {"filtered", config.filtered},
            {"augment", {{"mdv", config.augment.mdv}, {"n_samples", config.augment.n_samples}}},
            {"seed", config.seed},
            {"jobs", config.jobs},
            {"out", config.out.string()}};
}

// The experiment driver view of a run configuration.
inline ExperimentConfig experiment_config(const RunConfig& config) {
    ExperimentConfig ec;
    ec.folds = config.folds;
    ec.repetitions = config.repetitions;
    ec.stage2 = config.stage2_kind();
    ec.bank = config.bank;
    ec.vocab_caps = config.vocab_caps;
    ec.filter = config.filter;
    ec.lowercase = config.lowercase;
    ec.stacked_instances = config.stacked_instances;
    ec.stacked = config.stacked;
    ec.hyper = config.hyper;
    ec.stage2_options = config.stage2_options;
    ec.augment = config.augment;
    ec.seed = config.seed;
    ec.jobs = config.jobs;
    return ec;
}

inline CorpusFormat resolve_format(const RunConfig& config, const std::filesystem::path& path) {
    return config.format.empty() ? corpus_format_from_path(path)
                                 : corpus_format_from_name(config.format);
}

}  // namespace hsd
