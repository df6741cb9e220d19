#pragma once

// Evaluation: confusion-matrix metrics, k-fold plans, the cross-validation
// experiment driver, and the cross-dataset generalization rules.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "hsd/augment.hpp"
#include "hsd/corpus.hpp"
#include "hsd/stage1.hpp"
#include "hsd/stage2.hpp"
#include "hsd/text.hpp"

namespace hsd {

// ---------------------------------------------------------------------------
// Confusion matrix and metrics

class ConfusionMatrix {
public:
    explicit ConfusionMatrix(LabelSpace space)
        : space_(space),
          classes_(labels_of(space)),
          counts_(classes_.size() * classes_.size(), 0) {}

    LabelSpace space() const { return space_; }
    const std::vector<Label>& classes() const { return classes_; }

    void add(Label gold, Label predicted) { ++counts_[index(gold) * classes_.size() + index(predicted)]; }

    long long count(Label gold, Label predicted) const {
        return counts_[index(gold) * classes_.size() + index(predicted)];
    }

    long long total() const { return std::accumulate(counts_.begin(), counts_.end(), 0LL); }

private:
    std::size_t index(Label l) const {
        for (std::size_t i = 0; i < classes_.size(); ++i)
            if (classes_[i] == l) return i;
        throw DataError("label " + to_string(l) + " is outside the active label space");
    }

    LabelSpace space_;
    std::vector<Label> classes_;
    std::vector<long long> counts_;
};

struct ClassMetrics {
    Label label = Label::Neutral;
    long long population = 0;        // gold count, TP + FN
    long long true_positives = 0;
    long long false_positives = 0;
    long long false_negatives = 0;
    double precision = 0.0;
    double recall = 0.0;
    double f_score = 0.0;
};

struct MetricsReport {
    std::vector<ClassMetrics> per_class;
    long long total_population = 0;
    double total_precision = 0.0;    // population-weighted means of the per-class values
    double total_recall = 0.0;
    double total_f = 0.0;
    double accuracy = 0.0;           // micro average: in single-label data micro P=R=F
};

// 0 whenever the denominator vanishes; keeps every metric defined.
inline double safe_ratio(double numerator, double denominator) {
    return denominator == 0.0 ? 0.0 : numerator / denominator;
}

// Population-weighted mean of per-class values. Totals weight each class by
// its gold count because the flat per-class sum is not comparable across
// corpora with different class balances.
inline double weighted_mean(const std::vector<double>& values,
                            const std::vector<long long>& weights) {
    if (values.size() != weights.size())
        throw ConfigError("weighted mean needs one weight per value");
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
        num += values[i] * static_cast<double>(weights[i]);
        den += static_cast<double>(weights[i]);
    }
    return safe_ratio(num, den);
}

inline MetricsReport metrics(const ConfusionMatrix& cm) {
    MetricsReport report;
    const auto& classes = cm.classes();
    std::vector<double> ps, rs, fs;
    std::vector<long long> ns;
    long long correct = 0;
    for (Label c : classes) {
        ClassMetrics m;
        m.label = c;
        m.true_positives = cm.count(c, c);
        for (Label other : classes) {
            if (other == c) continue;
            m.false_positives += cm.count(other, c);
            m.false_negatives += cm.count(c, other);
        }
        m.population = m.true_positives + m.false_negatives;
        auto tp = static_cast<double>(m.true_positives);
        m.precision = safe_ratio(tp, tp + static_cast<double>(m.false_positives));
        m.recall = safe_ratio(tp, tp + static_cast<double>(m.false_negatives));
        m.f_score = safe_ratio(2.0 * m.precision * m.recall, m.precision + m.recall);
        ps.push_back(m.precision);
        rs.push_back(m.recall);
        fs.push_back(m.f_score);
        ns.push_back(m.population);
        correct += m.true_positives;
        report.per_class.push_back(m);
    }
    report.total_population = std::accumulate(ns.begin(), ns.end(), 0LL);
    report.total_precision = weighted_mean(ps, ns);
    report.total_recall = weighted_mean(rs, ns);
    report.total_f = weighted_mean(fs, ns);
    report.accuracy = safe_ratio(static_cast<double>(correct),
                                 static_cast<double>(report.total_population));
    return report;
}

inline nlohmann::json metrics_to_json(const MetricsReport& report) {
    nlohmann::json per_class = nlohmann::json::array();
    for (const auto& m : report.per_class)
        per_class.push_back({{"label", to_string(m.label)},
                             {"population", m.population},
                             {"true_positives", m.true_positives},
                             {"false_positives", m.false_positives},
                             {"false_negatives", m.false_negatives},
                             {"precision", m.precision},
                             {"recall", m.recall},
                             {"f_score", m.f_score}});
    return {{"per_class", std::move(per_class)},
            {"total", {{"population", report.total_population},
                       {"precision", report.total_precision},
                       {"recall", report.total_recall},
                       {"f_score", report.total_f},
                       {"accuracy", report.accuracy}}}};
}

// ---------------------------------------------------------------------------
// Fold plans

struct FoldPlan {
    int k = 0;
    std::uint64_t seed = 0;
    std::vector<std::vector<std::size_t>> folds;       // disjoint corpus indices
    std::vector<std::vector<std::string>> fold_ids;    // matching sample ids

    // Complement of fold `f`, in corpus order.
    std::vector<std::size_t> train_indices(int f) const {
        std::vector<bool> held(size(), false);
        for (std::size_t i : folds.at(static_cast<std::size_t>(f))) held[i] = true;
        std::vector<std::size_t> out;
        out.reserve(size() - folds[static_cast<std::size_t>(f)].size());
        for (std::size_t i = 0; i < held.size(); ++i)
            if (!held[i]) out.push_back(i);
        return out;
    }

    std::size_t size() const {
        std::size_t n = 0;
        for (const auto& f : folds) n += f.size();
        return n;
    }
};

// Seeded shuffle followed by a contiguous partition; the first (n mod k)
// folds take the extra sample, so sizes differ by at most one.
inline FoldPlan kfold(const LabeledCorpus& corpus, int k = 10, std::uint64_t seed = 0) {
    if (k < 2) throw ConfigError("fold count must be at least 2");
    if (static_cast<std::size_t>(k) > corpus.size())
        throw DataError("fold count " + std::to_string(k) + " exceeds corpus size " +
                        std::to_string(corpus.size()));

    std::vector<std::size_t> order(corpus.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);

    FoldPlan plan;
    plan.k = k;
    plan.seed = seed;
    std::size_t base = corpus.size() / static_cast<std::size_t>(k);
    std::size_t extra = corpus.size() % static_cast<std::size_t>(k);
    std::size_t pos = 0;
    for (int f = 0; f < k; ++f) {
        std::size_t take = base + (static_cast<std::size_t>(f) < extra ? 1 : 0);
        std::vector<std::size_t> fold(order.begin() + static_cast<std::ptrdiff_t>(pos),
                                      order.begin() + static_cast<std::ptrdiff_t>(pos + take));
        std::sort(fold.begin(), fold.end());
        std::vector<std::string> ids;
        ids.reserve(fold.size());
        for (std::size_t i : fold) ids.push_back(corpus.samples[i].id);
        plan.folds.push_back(std::move(fold));
        plan.fold_ids.push_back(std::move(ids));
        pos += take;
    }
    return plan;
}

// ---------------------------------------------------------------------------
// Cross-validation experiment driver

struct ExperimentConfig {
    int folds = 10;
    int repetitions = 10;
    CombinerKind stage2 = CombinerKind::FixedCriteriaUnigram;
    BankTrainConfig bank;                    // carries the classifier count
    std::map<int, std::size_t> vocab_caps;   // by n-gram order; missing -> default cap
    bool filter = true;                      // text preprocessing before tokenization
    bool lowercase = false;                  // fold case during that preprocessing
    int stacked_instances = 5;
    StackedTrainConfig stacked;
    HyperGrid hyper;                         // classic learners; empty -> default grid
    Stage2TrainOptions stage2_options;
    AugmentConfig augment;                   // n_samples per class; 0 disables
    std::uint64_t seed = 0;
    int jobs = 1;
};

namespace detail {

inline void validate_experiment(const ExperimentConfig& config) {
    if (config.folds < 2) throw ConfigError("fold count must be at least 2");
    if (config.repetitions < 1) throw ConfigError("repetition count must be positive");
    int c = config.bank.classifier_count;
    if (config.stage2 == CombinerKind::FixedCriteriaUnigram && c != 3)
        throw ConfigError("fixed-criteria-unigram needs a 3-classifier bank, got " +
                          std::to_string(c));
    if (config.stage2 == CombinerKind::FixedCriteriaNgram && c != 5)
        throw ConfigError("fixed-criteria-ngram needs a 5-classifier bank, got " +
                          std::to_string(c));
    if (config.stage2 == CombinerKind::StackedDeep && config.stacked_instances < 1)
        throw ConfigError("stacked combiner needs at least one instance");
    config.augment.validate();
}

inline LabeledCorpus subset(const LabeledCorpus& corpus, const std::vector<std::size_t>& idx) {
    LabeledCorpus out;
    out.space = corpus.space;
    out.samples.reserve(idx.size());
    for (std::size_t i : idx) out.samples.push_back(corpus.samples[i]);
    return out;
}

}  // namespace detail

struct FoldScore {
    int repetition = 0;   // 1-based, as reported
    int fold = 0;         // 0-based fold number within the plan
    MetricsReport report;
    nlohmann::json stage2_hyper = nlohmann::json::object();
};

struct Aggregate {
    double mean = 0.0;
    double stddev = 0.0;   // population form; a single fold reports 0
};

inline Aggregate aggregate(const std::vector<double>& values) {
    if (values.empty()) return {};
    double mean = std::accumulate(values.begin(), values.end(), 0.0) /
                  static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    var /= static_cast<double>(values.size());
    return {mean, std::sqrt(var)};
}

struct ClassAggregate {
    Label label = Label::Neutral;
    Aggregate precision, recall, f_score;
};

struct ExperimentReport {
    int folds = 0;
    int repetitions = 0;
    std::uint64_t seed = 0;
    std::vector<FoldScore> fold_scores;      // repetition-major, fold-minor
    std::vector<ClassAggregate> per_class;
    Aggregate total_precision, total_recall, total_f, accuracy;
    nlohmann::json config_echo = nlohmann::json::object();
};

inline nlohmann::json experiment_config_to_json(const ExperimentConfig& config) {
    nlohmann::json caps = nlohmann::json::object();
    for (const auto& [order, cap] : config.vocab_caps) caps[std::to_string(order)] = cap;
    nlohmann::json grid = nlohmann::json::object();
    for (const auto& [key, values] : config.hyper) grid[key] = values;
    const TrainingSchedule& s = config.bank.schedule;
    return {{"folds", config.folds},
            {"repetitions", config.repetitions},
            {"stage2", to_string(config.stage2)},
            {"classifiers", config.bank.classifier_count},
            {"sequence_length", config.bank.sequence_length},
            {"embedding_dim", config.bank.embedding_dim},
            {"recurrent_units", config.bank.recurrent_units},
            {"dense_units", config.bank.dense_units},
            {"schedule",
             {{"initial_rate", s.initial_rate},
              {"decay_rate", s.decay_rate},
              {"rate_floor", s.rate_floor},
              {"initial_patience", s.initial_patience},
              {"max_epochs", s.max_epochs},
              {"batch_size", s.batch_size}}},
            {"per_member_rates", config.bank.per_member_rates},
            {"validation_fraction", config.bank.validation_fraction},
            {"sexism_factor", config.bank.sexism_factor},
            {"racism_factor", config.bank.racism_factor},
            {"vocab_caps", std::move(caps)},
            {"filter", config.filter},
            {"lowercase", config.lowercase},
            {"stacked_instances", config.stacked_instances},
            {"significance_digits", config.stacked.significance_digits},
            {"hyper_grid", std::move(grid)},
            {"augment", {{"mdv", config.augment.mdv}, {"n_samples", config.augment.n_samples}}},
            {"seed", config.seed},
            {"jobs", config.jobs}};
}

namespace detail {

// One repetition × fold unit: split, build vocabularies on the training part,
// train the bank, derive second-stage rows from the bank's holdout, train the
// combiner, and score the held-out test fold.
inline FoldScore run_fold(const LabeledCorpus& corpus, const FoldPlan& plan, int repetition,
                          int fold, const ExperimentConfig& config, std::uint64_t unit_seed) {
    LabeledCorpus train_corpus = subset(corpus, plan.train_indices(fold));
    LabeledCorpus test_corpus = subset(corpus, plan.folds[static_cast<std::size_t>(fold)]);

    std::set<std::string> test_ids;
    for (const auto& s : test_corpus.samples) test_ids.insert(s.id);
    for (const auto& s : train_corpus.samples)
        if (test_ids.count(s.id))
            throw DataError("sample id '" + s.id + "' appears in both fold parts");

    VocabularySet vocabs;
    for (const auto& member : bank_members(config.bank.classifier_count)) {
        if (vocabs.count(member.order)) continue;
        auto it = config.vocab_caps.find(member.order);
        std::size_t cap = it == config.vocab_caps.end() ? default_vocab_cap(member.order)
                                                        : it->second;
        vocabs.emplace(member.order,
                       NGramVocabulary::build(train_corpus, member.order, cap));
    }

    BankTrainConfig bank_config = config.bank;
    bank_config.jobs = 1;   // parallelism is spent on the fold units
    TrainedBank trained =
        train_bank(train_corpus, vocabs, bank_config, sub_seed(unit_seed, 0xB1));

    LabeledCorpus holdout = subset(train_corpus, trained.validation_indices);
    std::vector<FeatureRow> rows = make_stage2_rows(trained.bank, vocabs, holdout);

    if (config.augment.n_samples > 0) {
        std::vector<FeatureRow> augmented = rows;
        for (int k = 0; k < kStage2Classes; ++k) {
            Label cls = stage2_label(k);
            std::vector<FeatureRow> class_rows;
            for (const auto& row : rows)
                if (row.label == cls) class_rows.push_back(row);
            if (class_rows.empty()) continue;   // nothing to perturb for this class
            AugmentConfig ac = config.augment;
            ac.seed = sub_seed(unit_seed, 0xA0 + static_cast<std::uint64_t>(k));
            auto extra = generate_samples(class_rows, ac);
            augmented.insert(augmented.end(), extra.begin(), extra.end());
        }
        rows = std::move(augmented);
    }

    Stage2Model model;
    std::uint64_t stage2_seed = sub_seed(unit_seed, 0x52);
    switch (config.stage2) {
        case CombinerKind::FixedCriteriaUnigram:
        case CombinerKind::FixedCriteriaNgram:
            model.kind = config.stage2;
            model.feature_width = trained.bank.feature_width();
            break;
        case CombinerKind::StackedDeep: {
            StackedTrainConfig sc = config.stacked;
            sc.seed = stage2_seed;
            sc.jobs = 1;
            model.kind = CombinerKind::StackedDeep;
            model.feature_width = trained.bank.feature_width();
            model.stacked = train_stacked(rows, config.stacked_instances, sc);
            break;
        }
        default: {
            Stage2TrainOptions options = config.stage2_options;
            options.seed = stage2_seed;
            model = train_combiner(config.stage2, rows, config.hyper, options);
            break;
        }
    }

    ConfusionMatrix cm(LabelSpace::ThreeClass);
    for (const auto& s : test_corpus.samples)
        cm.add(*s.label, combiner_predict(model, predict_bank(trained.bank, s.text, vocabs)));

    FoldScore score;
    score.repetition = repetition;
    score.fold = fold;
    score.report = metrics(cm);
    score.stage2_hyper = model.hyper;
    return score;
}

}  // namespace detail

// Runs folds × repetitions of the full two-stage pipeline and averages the
// fold reports. Units are independent (per-unit seeds) and may run in
// parallel; any stage failure is rethrown with its repetition/fold context.
inline ExperimentReport run_experiment(const LabeledCorpus& corpus,
                                       const ExperimentConfig& config) {
    detail::validate_experiment(config);
    corpus.require_labels();

    LabeledCorpus prepared = corpus;
    if (config.filter)
        for (auto& s : prepared.samples) s.text = filter_text(s.text, config.lowercase);

    struct Unit {
        int repetition;
        int fold;
        std::uint64_t seed;
    };
    std::vector<Unit> units;
    std::vector<FoldPlan> plans;
    plans.reserve(static_cast<std::size_t>(config.repetitions));
    for (int r = 1; r <= config.repetitions; ++r) {
        std::uint64_t rep_seed = sub_seed(config.seed, 0xE0 + static_cast<std::uint64_t>(r));
        plans.push_back(kfold(prepared, config.folds, sub_seed(rep_seed, 0xF01D)));
        for (int f = 0; f < config.folds; ++f)
            units.push_back({r, f, sub_seed(rep_seed, static_cast<std::uint64_t>(f) + 1)});
    }

    std::vector<FoldScore> scores(units.size());
    run_indexed_jobs(units.size(), config.jobs, [&](std::size_t u) {
        const Unit& unit = units[u];
        std::string context = "repetition " + std::to_string(unit.repetition) + " fold " +
                              std::to_string(unit.fold) + ": ";
        try {
            scores[u] = detail::run_fold(prepared,
                                         plans[static_cast<std::size_t>(unit.repetition - 1)],
                                         unit.repetition, unit.fold, config, unit.seed);
        } catch (const ConfigError& e) {
            throw ConfigError(context + e.what());
        } catch (const NumericError& e) {
            throw NumericError(context + e.what());
        } catch (const DataError& e) {
            throw DataError(context + e.what());
        } catch (const std::exception& e) {
            throw DataError(context + e.what());
        }
    });

    ExperimentReport report;
    report.folds = config.folds;
    report.repetitions = config.repetitions;
    report.seed = config.seed;
    report.fold_scores = std::move(scores);
    report.config_echo = experiment_config_to_json(config);

    const auto& classes = labels_of(LabelSpace::ThreeClass);
    for (std::size_t c = 0; c < classes.size(); ++c) {
        std::vector<double> ps, rs, fs;
        for (const auto& s : report.fold_scores) {
            ps.push_back(s.report.per_class[c].precision);
            rs.push_back(s.report.per_class[c].recall);
            fs.push_back(s.report.per_class[c].f_score);
        }
        report.per_class.push_back({classes[c], aggregate(ps), aggregate(rs), aggregate(fs)});
    }
    std::vector<double> tp, tr, tf, acc;
    for (const auto& s : report.fold_scores) {
        tp.push_back(s.report.total_precision);
        tr.push_back(s.report.total_recall);
        tf.push_back(s.report.total_f);
        acc.push_back(s.report.accuracy);
    }
    report.total_precision = aggregate(tp);
    report.total_recall = aggregate(tr);
    report.total_f = aggregate(tf);
    report.accuracy = aggregate(acc);
    return report;
}

inline nlohmann::json experiment_report_to_json(const ExperimentReport& report) {
    nlohmann::json folds = nlohmann::json::array();
    for (const auto& s : report.fold_scores) {
        nlohmann::json entry = {{"repetition", s.repetition},
                                {"fold", s.fold},
                                {"metrics", metrics_to_json(s.report)}};
        if (!s.stage2_hyper.empty()) entry["stage2_hyper"] = s.stage2_hyper;
        folds.push_back(std::move(entry));
    }
    auto agg = [](const Aggregate& a) {
        return nlohmann::json{{"mean", a.mean}, {"stddev", a.stddev}};
    };
    nlohmann::json per_class = nlohmann::json::array();
    for (const auto& c : report.per_class)
        per_class.push_back({{"label", to_string(c.label)},
                             {"precision", agg(c.precision)},
                             {"recall", agg(c.recall)},
                             {"f_score", agg(c.f_score)}});
    return {{"config", report.config_echo},
            {"seed", report.seed},
            {"fold_scores", std::move(folds)},
            {"averages", {{"per_class", std::move(per_class)},
                          {"total_precision", agg(report.total_precision)},
                          {"total_recall", agg(report.total_recall)},
                          {"total_f", agg(report.total_f)},
                          {"accuracy", agg(report.accuracy)}}}};
}

// Flat summary table: one row per fold per class, one total row per fold,
// then mean/stddev rows over all folds.
inline std::string experiment_report_to_csv(const ExperimentReport& report) {
    std::string out = "repetition,fold,class,population,precision,recall,f_score\n";
    auto row = [&](const std::string& rep, const std::string& fold, const std::string& cls,
                   const std::string& pop, double p, double r, double f) {
        out += rep + ',' + fold + ',' + cls + ',' + pop + ',' + format_double(p) + ',' +
               format_double(r) + ',' + format_double(f) + '\n';
    };
    for (const auto& s : report.fold_scores) {
        std::string rep = std::to_string(s.repetition);
        std::string fold = std::to_string(s.fold);
        for (const auto& m : s.report.per_class)
            row(rep, fold, to_string(m.label), std::to_string(m.population), m.precision,
                m.recall, m.f_score);
        row(rep, fold, "total", std::to_string(s.report.total_population),
            s.report.total_precision, s.report.total_recall, s.report.total_f);
    }
    for (const auto& c : report.per_class) {
        row("mean", "", to_string(c.label), "", c.precision.mean, c.recall.mean,
            c.f_score.mean);
        row("stddev", "", to_string(c.label), "", c.precision.stddev, c.recall.stddev,
            c.f_score.stddev);
    }
    row("mean", "", "total", "", report.total_precision.mean, report.total_recall.mean,
        report.total_f.mean);
    row("stddev", "", "total", "", report.total_precision.stddev, report.total_recall.stddev,
        report.total_f.stddev);
    return out;
}

// ---------------------------------------------------------------------------
// Cross-dataset generalization

enum class GeneralizeRule { Single, Three, Five };

inline std::string to_string(GeneralizeRule rule) {
    switch (rule) {
        case GeneralizeRule::Single: return "single";
        case GeneralizeRule::Three: return "three";
        case GeneralizeRule::Five: return "five";
    }
    throw ConfigError("unknown generalization rule");
}

inline std::optional<GeneralizeRule> rule_from_name(const std::string& name) {
    std::string n = to_lower(name);
    if (n == "single") return GeneralizeRule::Single;
    if (n == "three") return GeneralizeRule::Three;
    if (n == "five") return GeneralizeRule::Five;
    return std::nullopt;
}

// Maps one bank feature row to the binary space. All three rules compare the
// neutral probability with strict '<'; equality keeps the sample NonHate.
inline Label generalize_decision(GeneralizeRule rule, const std::vector<double>& features) {
    if (features.size() != 6 && features.size() != 10)
        throw DataError("generalization needs bank feature width 6 or 10, got " +
                        std::to_string(features.size()));
    if (rule == GeneralizeRule::Five && features.size() != 10)
        throw ConfigError("rule five needs a 5-classifier bank");
    double p_neutral = features[0];
    double threshold = 0.5;
    switch (rule) {
        case GeneralizeRule::Single:
            threshold = 0.5;
            break;
        case GeneralizeRule::Three:
            threshold = std::max(features[2], features[4]);
            break;
        case GeneralizeRule::Five:
            threshold = std::max({features[2], features[4], features[6], features[8]});
            break;
    }
    return p_neutral < threshold ? Label::Hate : Label::NonHate;
}

struct GeneralizeResult {
    GeneralizeRule rule = GeneralizeRule::Single;
    bool filtered = false;
    ConfusionMatrix matrix{LabelSpace::Binary};
    MetricsReport report;
};

// Scores a three-class bank against a binary-labeled corpus by collapsing
// the bank outputs through one of the neutral-vs-rest rules.
inline GeneralizeResult generalize(const OvrBank& bank, const VocabularySet& vocabs,
                                   const LabeledCorpus& test, GeneralizeRule rule,
                                   bool filtered = false, bool lowercase = false) {
    test.require_labels();
    for (const auto& s : test.samples)
        if (space_of(*s.label) != LabelSpace::Binary)
            throw DataError("sample '" + s.id + "' is not binary-labeled");
    if (rule == GeneralizeRule::Five && bank.classifier_count() != 5)
        throw ConfigError("rule five needs a 5-classifier bank, got " +
                          std::to_string(bank.classifier_count()));

    GeneralizeResult result;
    result.rule = rule;
    result.filtered = filtered;
    for (const auto& s : test.samples) {
        std::string text = filtered ? filter_text(s.text, lowercase) : s.text;
        Label pred = generalize_decision(rule, predict_bank(bank, text, vocabs));
        result.matrix.add(*s.label, pred);
    }
    result.report = metrics(result.matrix);
    return result;
}

inline nlohmann::json generalize_result_to_json(const GeneralizeResult& result) {
    return {{"rule", to_string(result.rule)},
            {"filtered", result.filtered},
            {"metrics", metrics_to_json(result.report)}};
}

}  // namespace hsd
