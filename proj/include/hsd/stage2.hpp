#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

#include "hsd/augment.hpp"
#include "hsd/common.hpp"
#include "hsd/labels.hpp"
#include "hsd/neural.hpp"
#include "hsd/stage1.hpp"
#include "hsd/tree.hpp"

namespace hsd {

// Canonical class indexing for second-stage learners. Index order doubles as
// the tie-break order: lowest index wins.
inline constexpr int kStage2Classes = 3;

inline int stage2_index(Label l) {
    switch (l) {
        case Label::Neutral: return 0;
        case Label::Sexism: return 1;
        case Label::Racism: return 2;
        default: throw ConfigError("second stage predicts only the three-class space");
    }
}

inline Label stage2_label(int index) {
    switch (index) {
        case 0: return Label::Neutral;
        case 1: return Label::Sexism;
        case 2: return Label::Racism;
        default: throw ConfigError("class index out of range: " + std::to_string(index));
    }
}

inline Label argmax_label(const std::array<double, 3>& scores) {
    return ClassScores{scores[0], scores[1], scores[2]}.argmax();
}

enum class CombinerKind {
    FixedCriteriaUnigram,
    FixedCriteriaNgram,
    StackedDeep,
    LogisticRegression,
    RandomForest,
    AdaBoost,
    GradientBoosting,
    SecondOrderBoosting,
};

inline std::string to_string(CombinerKind kind) {
    switch (kind) {
        case CombinerKind::FixedCriteriaUnigram: return "fixed-criteria-unigram";
        case CombinerKind::FixedCriteriaNgram: return "fixed-criteria-ngram";
        case CombinerKind::StackedDeep: return "stacked-deep";
        case CombinerKind::LogisticRegression: return "logistic-regression";
        case CombinerKind::RandomForest: return "random-forest";
        case CombinerKind::AdaBoost: return "adaboost";
        case CombinerKind::GradientBoosting: return "gradient-boosting";
        case CombinerKind::SecondOrderBoosting: return "second-order-boosting";
    }
    throw ConfigError("unknown combiner kind");
}

// Accepts the container names plus the short command-line aliases.
inline std::optional<CombinerKind> combiner_kind_from_name(const std::string& name) {
    static const std::map<std::string, CombinerKind> names = {
        {"fixed-criteria-unigram", CombinerKind::FixedCriteriaUnigram},
        {"fixed", CombinerKind::FixedCriteriaUnigram},
        {"fixed-criteria-ngram", CombinerKind::FixedCriteriaNgram},
        {"fixed-ngram", CombinerKind::FixedCriteriaNgram},
        {"stacked-deep", CombinerKind::StackedDeep},
        {"stacked", CombinerKind::StackedDeep},
        {"logistic-regression", CombinerKind::LogisticRegression},
        {"lr", CombinerKind::LogisticRegression},
        {"random-forest", CombinerKind::RandomForest},
        {"rf", CombinerKind::RandomForest},
        {"adaboost", CombinerKind::AdaBoost},
        {"ada", CombinerKind::AdaBoost},
        {"gradient-boosting", CombinerKind::GradientBoosting},
        {"gb", CombinerKind::GradientBoosting},
        {"second-order-boosting", CombinerKind::SecondOrderBoosting},
        {"xgb", CombinerKind::SecondOrderBoosting},
    };
    auto it = names.find(to_lower(name));
    if (it == names.end()) return std::nullopt;
    return it->second;
}

// Strips the trailing one-hot block when the row carries a label.
inline std::vector<double> probability_part(const FeatureRow& row) {
    std::vector<double> out = row.values;
    if (row.label.has_value()) {
        if (out.size() < 3) throw DataError("labeled feature row too narrow");
        out.resize(out.size() - 3);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Fixed-criteria rules

inline Label fixed_criteria_unigram(const std::vector<double>& features) {
    if (features.size() != 6)
        throw DataError("fixed-criteria-unigram needs width 6, got " +
                        std::to_string(features.size()));
    return ClassScores{features[0], features[2], features[4]}.argmax();
}

inline Label fixed_criteria_ngram(const std::vector<double>& features) {
    if (features.size() != 10)
        throw DataError("fixed-criteria-ngram needs width 10, got " +
                        std::to_string(features.size()));
    double racism = (features[4] + features[6] + features[8]) / 3.0;
    return ClassScores{features[0], features[2], racism}.argmax();
}

// ---------------------------------------------------------------------------
// Stacked deep ensemble

inline int pow10_int(int m) {
    int v = 1;
    for (int i = 0; i < m; ++i) v *= 10;
    return v;
}

inline int stacked_vocab_size(int classifier_count, int significance_digits) {
    return classifier_count * 2 * pow10_int(significance_digits);
}

// Each tuple component is quantized into its own band of the vocabulary, so
// a width-2c row becomes a 2c-token sequence over c*2*10^m states.
inline std::vector<int> stacked_tokens(const std::vector<double>& features,
                                       int significance_digits) {
    if (features.empty() || features.size() % 2 != 0)
        throw DataError("stacked encoding needs an even, non-zero feature width");
    int scale = pow10_int(significance_digits);
    std::vector<int> tokens(features.size());
    for (std::size_t j = 0; j < features.size(); ++j)
        tokens[j] = static_cast<int>(j) * scale + quantize(features[j], significance_digits);
    return tokens;
}

inline TrainingSchedule default_stacked_schedule() {
    TrainingSchedule s;
    s.batch_size = 8192;
    return s;
}

struct StackedTrainConfig {
    int significance_digits = 2;
    int embedding_dim = 30;
    int recurrent_units = 100;
    TrainingSchedule schedule = default_stacked_schedule();
    double validation_fraction = 0.1;   // early-stopping holdout, shared by instances
    std::uint64_t seed = 0;
    int jobs = 1;
};

struct StackedCombiner {
    int feature_width = 0;
    int significance_digits = 2;
    std::vector<SequenceClassifier> instances;
    std::vector<TrainingMetadata> metadata;

    bool trained() const { return !instances.empty(); }
};

// Trains `instances` identical three-class networks, differing only in their
// seeds. Every instance sees exactly the same rows and the same
// early-stopping holdout, which is carved out of the rows once up front.
inline StackedCombiner train_stacked(const std::vector<FeatureRow>& rows, int instances,
                                     const StackedTrainConfig& config) {
    if (instances < 1) throw ConfigError("stacked ensemble needs at least one instance");
    if (rows.size() < 2) throw DataError("too few rows to train the stacked ensemble on");

    StackedCombiner out;
    out.feature_width = static_cast<int>(probability_part(rows.front()).size());
    out.significance_digits = config.significance_digits;

    std::vector<std::vector<int>> sequences;
    std::vector<int> labels;
    sequences.reserve(rows.size());
    labels.reserve(rows.size());
    for (const auto& row : rows) {
        if (!row.label.has_value()) throw DataError("stacked training rows must be labeled");
        auto features = probability_part(row);
        if (static_cast<int>(features.size()) != out.feature_width)
            throw DataError("stacked training rows must share one width");
        sequences.push_back(stacked_tokens(features, config.significance_digits));
        labels.push_back(stage2_index(*row.label));
    }

    auto val_idx = detail::validation_split(rows.size(), config.validation_fraction,
                                            sub_seed(config.seed, 0xA11D));
    std::vector<bool> in_val(rows.size(), false);
    for (std::size_t i : val_idx) in_val[i] = true;
    NeuralDataset train_set, val_set;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        auto& part = in_val[i] ? val_set : train_set;
        part.sequences.push_back(sequences[i]);
        part.labels.push_back(labels[i]);
    }

    SequenceClassifierConfig mc;
    mc.vocab_size = stacked_vocab_size(out.feature_width / 2, config.significance_digits);
    mc.sequence_length = out.feature_width;
    mc.embedding_dim = config.embedding_dim;
    mc.recurrent_units = config.recurrent_units;
    mc.dense_units = 0;
    mc.output_classes = 3;

    out.instances.resize(static_cast<std::size_t>(instances));
    out.metadata.resize(static_cast<std::size_t>(instances));
    run_indexed_jobs(static_cast<std::size_t>(instances), config.jobs, [&](std::size_t i) {
        std::uint64_t seed = sub_seed(config.seed, i + 1);
        SequenceClassifier model(mc);
        model.init_weights(seed);
        TrainResult trained = train(std::move(model), train_set, val_set, config.schedule, seed);
        out.instances[i] = std::move(trained.model);
        out.metadata[i] = trained.metadata;
    });
    return out;
}

// Element-wise sum of per-instance class scores.
inline std::array<double, 3> combine_scores(
    const std::vector<std::array<double, 3>>& instance_scores) {
    std::array<double, 3> sums{0.0, 0.0, 0.0};
    for (const auto& s : instance_scores)
        for (std::size_t j = 0; j < 3; ++j) sums[j] += s[j];
    return sums;
}

inline Label stacked_predict(const StackedCombiner& combiner,
                             const std::vector<double>& features) {
    if (!combiner.trained()) throw DataError("stacked ensemble is untrained");
    if (static_cast<int>(features.size()) != combiner.feature_width)
        throw DataError("stacked ensemble expects width " +
                        std::to_string(combiner.feature_width) + ", got " +
                        std::to_string(features.size()));
    auto tokens = stacked_tokens(features, combiner.significance_digits);
    std::vector<std::array<double, 3>> scores;
    scores.reserve(combiner.instances.size());
    for (const auto& model : combiner.instances) {
        auto p = model.forward(tokens);
        scores.push_back({p[0], p[1], p[2]});
    }
    return argmax_label(combine_scores(scores));
}

// ---------------------------------------------------------------------------
// Classic learners

struct LogisticRegressionModel {
    Eigen::MatrixXd weights;   // 3 x d
    Eigen::VectorXd bias;      // 3

    bool trained() const { return weights.size() > 0; }
};

struct LogisticProblem {
    const std::vector<std::vector<double>>& rows;
    const std::vector<int>& labels;
    double l2 = 0.0;
    int iterations = 800;
    double rate = 0.5;
};

using LogisticSolver = std::function<void(LogisticRegressionModel&, const LogisticProblem&)>;

// Full-batch gradient descent on softmax cross-entropy with optional L2.
inline void logistic_gradient_descent(LogisticRegressionModel& model,
                                      const LogisticProblem& p) {
    auto n = static_cast<Eigen::Index>(p.rows.size());
    auto d = static_cast<Eigen::Index>(p.rows.front().size());
    Eigen::MatrixXd X(d, n);
    Eigen::MatrixXd Y = Eigen::MatrixXd::Zero(3, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < d; ++j) X(j, i) = p.rows[static_cast<std::size_t>(i)]
                                                             [static_cast<std::size_t>(j)];
        Y(p.labels[static_cast<std::size_t>(i)], i) = 1.0;
    }
    Eigen::MatrixXd W = Eigen::MatrixXd::Zero(3, d);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(3);
    for (int it = 0; it < p.iterations; ++it) {
        Eigen::MatrixXd Z = (W * X).colwise() + b;
        Eigen::RowVectorXd zmax = Z.colwise().maxCoeff();
        Eigen::MatrixXd P = (Z.rowwise() - zmax).array().exp();
        Eigen::RowVectorXd sums = P.colwise().sum();
        P.array().rowwise() /= sums.array();
        Eigen::MatrixXd G = (P - Y) / static_cast<double>(n);
        W -= p.rate * (G * X.transpose() + p.l2 * W);
        b -= p.rate * G.rowwise().sum();
    }
    model.weights = std::move(W);
    model.bias = std::move(b);
}

struct ForestModel {
    std::vector<DecisionTree> trees;
    bool bootstrap = true;

    bool trained() const { return !trees.empty(); }
};

struct AdaBoostClassModel {
    std::vector<DecisionTree> trees;
    std::vector<double> alphas;
    std::vector<double> round_errors;   // weighted error of each added round
};

struct AdaBoostModel {
    std::array<AdaBoostClassModel, 3> per_class;
    double learning_rate = 0.1;
    int tree_depth = 1;

    bool trained() const {
        for (const auto& c : per_class)
            if (!c.trees.empty()) return true;
        return false;
    }
};

struct BoostRound {
    std::array<DecisionTree, 3> trees;
};

struct BoostModel {
    std::array<double, 3> priors{0.0, 0.0, 0.0};   // log class priors
    std::vector<BoostRound> rounds;
    double learning_rate = 0.1;
    bool second_order = false;
    bool fitted = false;

    bool trained() const { return fitted; }
};

inline std::array<double, 3> class_log_priors(const std::vector<int>& labels) {
    std::array<double, 3> counts{0.0, 0.0, 0.0};
    for (int y : labels) counts[static_cast<std::size_t>(y)] += 1.0;
    std::array<double, 3> priors;
    for (std::size_t k = 0; k < 3; ++k) {
        double pi = counts[k] / static_cast<double>(labels.size());
        priors[k] = std::log(std::max(pi, 1e-12));
    }
    return priors;
}

namespace detail {

inline ForestModel train_forest(const Rows& X, const std::vector<int>& y, int n_trees,
                                int depth, bool bootstrap, std::uint64_t seed) {
    ForestModel model;
    model.bootstrap = bootstrap;
    auto n = X.size();
    auto d = static_cast<int>(X.front().size());
    int max_features = std::max(1, static_cast<int>(std::sqrt(static_cast<double>(d))));
    model.trees.resize(static_cast<std::size_t>(n_trees));
    for (int t = 0; t < n_trees; ++t) {
        std::mt19937_64 rng(sub_seed(seed, static_cast<std::uint64_t>(t) + 1));
        Rows bx;
        std::vector<int> by;
        const Rows* px = &X;
        const std::vector<int>* py = &y;
        if (bootstrap) {
            bx.reserve(n);
            by.reserve(n);
            for (std::size_t i = 0; i < n; ++i) {
                auto pick = std::min(n - 1, static_cast<std::size_t>(unit_uniform(rng) *
                                                                     static_cast<double>(n)));
                bx.push_back(X[pick]);
                by.push_back(y[pick]);
            }
            px = &bx;
            py = &by;
        }
        TreeOptions opt;
        opt.max_depth = depth;
        opt.max_features = max_features;
        opt.rng = &rng;
        model.trees[static_cast<std::size_t>(t)] =
            fit_classification_tree(*px, *py, std::vector<double>(px->size(), 1.0), 3, opt);
    }
    return model;
}

// One-vs-rest discrete boosting with depth-limited weak trees. Rounds whose
// weak learner is no better than chance are not added; a perfect round is
// added and ends the loop for that class.
inline AdaBoostModel train_adaboost(const Rows& X, const std::vector<int>& y, int n_rounds,
                                    double learning_rate, int depth) {
    AdaBoostModel model;
    model.learning_rate = learning_rate;
    model.tree_depth = depth;
    auto n = X.size();
    for (int k = 0; k < 3; ++k) {
        std::vector<int> yk(n);
        for (std::size_t i = 0; i < n; ++i) yk[i] = y[i] == k ? 1 : 0;
        std::vector<double> w(n, 1.0 / static_cast<double>(n));
        auto& cls = model.per_class[static_cast<std::size_t>(k)];
        for (int t = 0; t < n_rounds; ++t) {
            TreeOptions opt;
            opt.max_depth = depth;
            DecisionTree tree = fit_classification_tree(X, yk, w, 2, opt);
            double err = 0.0;
            std::vector<int> pred(n);
            for (std::size_t i = 0; i < n; ++i) {
                pred[i] = static_cast<int>(tree.predict(X[i]));
                if (pred[i] != yk[i]) err += w[i];
            }
            if (err >= 0.5) break;
            double bounded = std::max(err, 1e-12);
            double alpha = learning_rate * 0.5 * std::log((1.0 - bounded) / bounded);
            cls.trees.push_back(std::move(tree));
            cls.alphas.push_back(alpha);
            cls.round_errors.push_back(err);
            if (err == 0.0) break;
            double total = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                w[i] *= std::exp(pred[i] == yk[i] ? -alpha : alpha);
                total += w[i];
            }
            for (auto& wi : w) wi /= total;
        }
    }
    return model;
}

// Multinomial-deviance boosting: one regression tree per class per round on
// the residuals y - p. First-order leaves use the Friedman estimate; the
// second-order variant replaces them with -sum(g)/(sum(h) + lambda).
inline BoostModel train_boost(const Rows& X, const std::vector<int>& y, int n_rounds,
                              double learning_rate, int depth, bool second_order,
                              double lambda) {
    BoostModel model;
    model.learning_rate = learning_rate;
    model.second_order = second_order;
    model.fitted = true;
    model.priors = class_log_priors(y);

    auto n = X.size();
    std::array<std::vector<double>, 3> F;
    for (int k = 0; k < 3; ++k)
        F[static_cast<std::size_t>(k)].assign(n, model.priors[static_cast<std::size_t>(k)]);

    std::array<std::vector<double>, 3> P;
    for (auto& p : P) p.resize(n);

    for (int round = 0; round < n_rounds; ++round) {
        for (std::size_t i = 0; i < n; ++i) {
            double m = std::max({F[0][i], F[1][i], F[2][i]});
            double z = 0.0;
            for (std::size_t k = 0; k < 3; ++k) z += std::exp(F[k][i] - m);
            for (std::size_t k = 0; k < 3; ++k) P[k][i] = std::exp(F[k][i] - m) / z;
        }
        BoostRound current;
        for (int k = 0; k < 3; ++k) {
            std::vector<double> r(n), h(n);
            for (std::size_t i = 0; i < n; ++i) {
                double target = y[i] == k ? 1.0 : 0.0;
                r[i] = target - P[static_cast<std::size_t>(k)][i];
                h[i] = P[static_cast<std::size_t>(k)][i] *
                       (1.0 - P[static_cast<std::size_t>(k)][i]);
            }
            auto leaf_value = [&](const std::vector<std::size_t>& idx) -> double {
                if (second_order) {
                    double num = 0.0, den = lambda;
                    for (std::size_t i : idx) {
                        num += r[i];
                        den += h[i];
                    }
                    return num / den;
                }
                double num = 0.0, den = 0.0;
                for (std::size_t i : idx) {
                    num += r[i];
                    den += std::abs(r[i]) * (1.0 - std::abs(r[i]));
                }
                if (den <= 1e-12) return 0.0;
                return (2.0 / 3.0) * num / den;   // (K-1)/K with K = 3
            };
            TreeOptions opt;
            opt.max_depth = depth;
            current.trees[static_cast<std::size_t>(k)] =
                fit_regression_tree(X, r, opt, leaf_value);
        }
        for (std::size_t k = 0; k < 3; ++k)
            for (std::size_t i = 0; i < n; ++i)
                F[k][i] += learning_rate * current.trees[k].predict(X[i]);
        model.rounds.push_back(std::move(current));
    }
    return model;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Unified container and prediction

struct Stage2Model {
    CombinerKind kind = CombinerKind::FixedCriteriaUnigram;
    int feature_width = 6;
    StackedCombiner stacked;
    LogisticRegressionModel lr;
    ForestModel forest;
    AdaBoostModel ada;
    BoostModel boost;
    nlohmann::json hyper = nlohmann::json::object();
};

inline Label combiner_predict(const Stage2Model& model, const std::vector<double>& features) {
    if (static_cast<int>(features.size()) != model.feature_width)
        throw DataError("combiner expects width " + std::to_string(model.feature_width) +
                        ", got " + std::to_string(features.size()));
    switch (model.kind) {
        case CombinerKind::FixedCriteriaUnigram:
            return fixed_criteria_unigram(features);
        case CombinerKind::FixedCriteriaNgram:
            return fixed_criteria_ngram(features);
        case CombinerKind::StackedDeep:
            return stacked_predict(model.stacked, features);
        case CombinerKind::LogisticRegression: {
            if (!model.lr.trained()) throw DataError("logistic regression is untrained");
            Eigen::Map<const Eigen::VectorXd> x(features.data(),
                                                static_cast<Eigen::Index>(features.size()));
            Eigen::VectorXd s = model.lr.weights * x + model.lr.bias;
            return argmax_label({s(0), s(1), s(2)});
        }
        case CombinerKind::RandomForest: {
            if (!model.forest.trained()) throw DataError("random forest is untrained");
            std::array<double, 3> votes{0.0, 0.0, 0.0};
            for (const auto& tree : model.forest.trees)
                votes[static_cast<std::size_t>(tree.predict(features))] += 1.0;
            return argmax_label(votes);
        }
        case CombinerKind::AdaBoost: {
            if (!model.ada.trained()) throw DataError("boosted ensemble is untrained");
            std::array<double, 3> margins{0.0, 0.0, 0.0};
            for (std::size_t k = 0; k < 3; ++k) {
                const auto& cls = model.ada.per_class[k];
                for (std::size_t t = 0; t < cls.trees.size(); ++t) {
                    double h = cls.trees[t].predict(features) > 0.5 ? 1.0 : -1.0;
                    margins[k] += cls.alphas[t] * h;
                }
            }
            return argmax_label(margins);
        }
        case CombinerKind::GradientBoosting:
        case CombinerKind::SecondOrderBoosting: {
            if (!model.boost.trained()) throw DataError("boosting model is untrained");
            std::array<double, 3> scores = model.boost.priors;
            for (const auto& round : model.boost.rounds)
                for (std::size_t k = 0; k < 3; ++k)
                    scores[k] += model.boost.learning_rate * round.trees[k].predict(features);
            return argmax_label(scores);
        }
    }
    throw ConfigError("unknown combiner kind");
}

// ---------------------------------------------------------------------------
// Hyperparameter grids

using HyperGrid = std::map<std::string, std::vector<double>>;
using HyperChoice = std::map<std::string, double>;

// Cartesian product in sorted-key order; an empty grid yields one empty choice.
inline std::vector<HyperChoice> grid_combinations(const HyperGrid& grid) {
    std::vector<HyperChoice> out{{}};
    for (const auto& [key, values] : grid) {
        if (values.empty()) throw ConfigError("hyperparameter '" + key + "' has no values");
        std::vector<HyperChoice> next;
        next.reserve(out.size() * values.size());
        for (const auto& base : out)
            for (double v : values) {
                HyperChoice c = base;
                c[key] = v;
                next.push_back(std::move(c));
            }
        out = std::move(next);
    }
    return out;
}

inline HyperGrid default_hyper_grid(CombinerKind kind) {
    switch (kind) {
        case CombinerKind::LogisticRegression:
            return {{"l2", {0.0, 0.01}}};
        case CombinerKind::RandomForest:
            return {{"trees", {20, 60}}, {"depth", {10, 30}}};
        case CombinerKind::AdaBoost:
            return {{"rate", {0.05, 0.10}}, {"trees", {25, 50}}};
        case CombinerKind::GradientBoosting:
            return {{"rate", {0.10, 0.20}}, {"trees", {50}}, {"depth", {2, 4}}};
        case CombinerKind::SecondOrderBoosting:
            return {{"rate", {0.10, 0.20}}, {"trees", {20, 30}}, {"depth", {2}}};
        default:
            throw ConfigError("no hyperparameter grid for " + to_string(kind));
    }
}

namespace detail {

struct HyperRange {
    double lo;
    double hi;
};

inline void check_hyper_range(CombinerKind kind, const std::string& key, double v,
                              const HyperRange& range) {
    if (v < range.lo || v > range.hi)
        throw ConfigError(to_string(kind) + ": " + key + "=" + format_double(v) +
                          " outside the supported range [" + format_double(range.lo) + ", " +
                          format_double(range.hi) + "]");
}

}  // namespace detail

inline void validate_hyper_grid(CombinerKind kind, const HyperGrid& grid) {
    using detail::check_hyper_range;
    std::map<std::string, detail::HyperRange> ranges;
    switch (kind) {
        case CombinerKind::LogisticRegression:
            ranges = {{"l2", {0.0, 1e9}}, {"iterations", {1, 1e6}}, {"rate", {1e-9, 1e3}}};
            break;
        case CombinerKind::RandomForest:
            ranges = {{"trees", {1, 100}}, {"depth", {10, 30}}};
            break;
        case CombinerKind::AdaBoost:
            ranges = {{"rate", {0.01, 0.14}}, {"trees", {5, 50}}, {"depth", {1, 10}}};
            break;
        case CombinerKind::GradientBoosting:
            ranges = {{"rate", {0.10, 0.20}}, {"trees", {20, 100}}, {"depth", {2, 4}}};
            break;
        case CombinerKind::SecondOrderBoosting:
            ranges = {{"rate", {0.10, 0.22}}, {"trees", {20, 30}}, {"depth", {2, 2}}};
            break;
        default:
            throw ConfigError(to_string(kind) + " takes no hyperparameter grid");
    }
    for (const auto& [key, values] : grid) {
        auto it = ranges.find(key);
        if (it == ranges.end())
            throw ConfigError(to_string(kind) + ": unknown hyperparameter '" + key + "'");
        for (double v : values) check_hyper_range(kind, key, v, it->second);
    }
    if (kind == CombinerKind::GradientBoosting && grid.count("depth"))
        for (double v : grid.at("depth"))
            if (v != 2.0 && v != 4.0)
                throw ConfigError("gradient-boosting: depth must be 2 or 4, got " +
                                  format_double(v));
}

struct Stage2TrainOptions {
    std::uint64_t seed = 0;
    double holdout_fraction = 0.2;   // grid-selection split
    bool bootstrap = true;           // random forest resampling
    double lambda = 1.0;             // second-order leaf regularization
    LogisticSolver solver;           // defaults to full-batch gradient descent
};

namespace detail {

inline double choice_value(const HyperChoice& choice, const std::string& key, double fallback) {
    auto it = choice.find(key);
    return it == choice.end() ? fallback : it->second;
}

inline Stage2Model fit_classic(CombinerKind kind, const Rows& X, const std::vector<int>& y,
                               const HyperChoice& choice, const Stage2TrainOptions& options) {
    Stage2Model model;
    model.kind = kind;
    model.feature_width = static_cast<int>(X.front().size());
    switch (kind) {
        case CombinerKind::LogisticRegression: {
            LogisticProblem problem{X, y};
            problem.l2 = choice_value(choice, "l2", 0.0);
            problem.iterations = static_cast<int>(choice_value(choice, "iterations", 800));
            problem.rate = choice_value(choice, "rate", 0.5);
            if (options.solver)
                options.solver(model.lr, problem);
            else
                logistic_gradient_descent(model.lr, problem);
            break;
        }
        case CombinerKind::RandomForest:
            model.forest = train_forest(X, y, static_cast<int>(choice_value(choice, "trees", 60)),
                                        static_cast<int>(choice_value(choice, "depth", 10)),
                                        options.bootstrap, options.seed);
            break;
        case CombinerKind::AdaBoost:
            model.ada = train_adaboost(X, y, static_cast<int>(choice_value(choice, "trees", 50)),
                                       choice_value(choice, "rate", 0.10),
                                       static_cast<int>(choice_value(choice, "depth", 1)));
            break;
        case CombinerKind::GradientBoosting:
            model.boost = train_boost(X, y, static_cast<int>(choice_value(choice, "trees", 50)),
                                      choice_value(choice, "rate", 0.10),
                                      static_cast<int>(choice_value(choice, "depth", 2)), false,
                                      options.lambda);
            break;
        case CombinerKind::SecondOrderBoosting:
            model.boost = train_boost(X, y, static_cast<int>(choice_value(choice, "trees", 20)),
                                      choice_value(choice, "rate", 0.10),
                                      static_cast<int>(choice_value(choice, "depth", 2)), true,
                                      options.lambda);
            break;
        default:
            throw ConfigError(to_string(kind) + " is not one of the classic learners");
    }
    return model;
}

}  // namespace detail

// Fits one of the five classic learners on labeled feature rows. Grids with
// more than one combination are resolved by held-out accuracy on a seeded
// split, then the winner is refit on all rows; the chosen combination and
// the trial scores are recorded on the model.
inline Stage2Model train_combiner(CombinerKind kind, const std::vector<FeatureRow>& rows,
                                  const HyperGrid& grid = {},
                                  const Stage2TrainOptions& options = {}) {
    if (kind != CombinerKind::LogisticRegression && kind != CombinerKind::RandomForest &&
        kind != CombinerKind::AdaBoost && kind != CombinerKind::GradientBoosting &&
        kind != CombinerKind::SecondOrderBoosting)
        throw ConfigError(to_string(kind) +
                          " is not trained by train_combiner; use the fixed rules or "
                          "train_stacked");
    if (rows.empty()) throw DataError("no rows to train the combiner on");

    detail::Rows X;
    std::vector<int> y;
    X.reserve(rows.size());
    y.reserve(rows.size());
    for (const auto& row : rows) {
        if (!row.label.has_value()) throw DataError("combiner training rows must be labeled");
        X.push_back(probability_part(row));
        if (X.back().size() != X.front().size())
            throw DataError("combiner training rows must share one width");
        y.push_back(stage2_index(*row.label));
    }
    if (std::count(y.begin(), y.end(), y.front()) == static_cast<long>(y.size()))
        throw DataError("combiner training rows contain a single class");

    HyperGrid effective = grid.empty() ? default_hyper_grid(kind) : grid;
    validate_hyper_grid(kind, effective);
    auto combos = grid_combinations(effective);

    HyperChoice chosen = combos.front();
    nlohmann::json trials = nlohmann::json::array();
    if (combos.size() > 1) {
        auto holdout = detail::validation_split(X.size(), options.holdout_fraction,
                                                sub_seed(options.seed, 0x5E1));
        std::vector<bool> held(X.size(), false);
        for (std::size_t i : holdout) held[i] = true;
        detail::Rows fit_x, val_x;
        std::vector<int> fit_y, val_y;
        for (std::size_t i = 0; i < X.size(); ++i) {
            (held[i] ? val_x : fit_x).push_back(X[i]);
            (held[i] ? val_y : fit_y).push_back(y[i]);
        }
        double best_acc = -1.0;
        for (const auto& combo : combos) {
            Stage2Model candidate = detail::fit_classic(kind, fit_x, fit_y, combo, options);
            std::size_t hits = 0;
            for (std::size_t i = 0; i < val_x.size(); ++i)
                if (stage2_index(combiner_predict(candidate, val_x[i])) == val_y[i]) ++hits;
            double acc = static_cast<double>(hits) / static_cast<double>(val_x.size());
            nlohmann::json trial;
            for (const auto& [k, v] : combo) trial[k] = v;
            trial["holdout_accuracy"] = acc;
            trials.push_back(std::move(trial));
            if (acc > best_acc) {
                best_acc = acc;
                chosen = combo;
            }
        }
    }

    Stage2Model model = detail::fit_classic(kind, X, y, chosen, options);
    nlohmann::json hyper;
    for (const auto& [k, v] : chosen) hyper[k] = v;
    model.hyper = {{"chosen", hyper}, {"trials", trials}};
    return model;
}

// ---------------------------------------------------------------------------
// Serialization

namespace detail {

inline nlohmann::json tree_to_json(const DecisionTree& tree) {
    nlohmann::json nodes = nlohmann::json::array();
    for (const auto& n : tree.nodes)
        nodes.push_back({{"f", n.feature},
                         {"t", n.threshold},
                         {"l", n.left},
                         {"r", n.right},
                         {"v", n.value}});
    return nodes;
}

inline DecisionTree tree_from_json(const nlohmann::json& j) {
    DecisionTree tree;
    for (const auto& n : j) {
        DecisionTree::Node node;
        node.feature = n.at("f").get<int>();
        node.threshold = n.at("t").get<double>();
        node.left = n.at("l").get<int>();
        node.right = n.at("r").get<int>();
        node.value = n.at("v").get<double>();
        tree.nodes.push_back(node);
    }
    return tree;
}

}  // namespace detail

inline void save_stage2(const Stage2Model& model, const std::filesystem::path& path) {
    nlohmann::json j;
    j["format_version"] = kModelFormatVersion;
    j["kind"] = to_string(model.kind);
    j["feature_width"] = model.feature_width;
    j["hyper"] = model.hyper;
    switch (model.kind) {
        case CombinerKind::FixedCriteriaUnigram:
        case CombinerKind::FixedCriteriaNgram:
            break;
        case CombinerKind::StackedDeep: {
            nlohmann::json instances = nlohmann::json::array();
            for (std::size_t i = 0; i < model.stacked.instances.size(); ++i) {
                nlohmann::json inst = model_to_json(model.stacked.instances[i]);
                inst["training"] = metadata_to_json(model.stacked.metadata[i]);
                instances.push_back(std::move(inst));
            }
            j["stacked"] = {{"significance_digits", model.stacked.significance_digits},
                            {"instances", std::move(instances)}};
            break;
        }
        case CombinerKind::LogisticRegression: {
            std::vector<double> w(model.lr.weights.data(),
                                  model.lr.weights.data() + model.lr.weights.size());
            std::vector<double> b(model.lr.bias.data(),
                                  model.lr.bias.data() + model.lr.bias.size());
            j["logistic"] = {{"d", model.lr.weights.cols()}, {"weights", w}, {"bias", b}};
            break;
        }
        case CombinerKind::RandomForest: {
            nlohmann::json trees = nlohmann::json::array();
            for (const auto& t : model.forest.trees) trees.push_back(detail::tree_to_json(t));
            j["forest"] = {{"bootstrap", model.forest.bootstrap}, {"trees", std::move(trees)}};
            break;
        }
        case CombinerKind::AdaBoost: {
            nlohmann::json per_class = nlohmann::json::array();
            for (const auto& cls : model.ada.per_class) {
                nlohmann::json trees = nlohmann::json::array();
                for (const auto& t : cls.trees) trees.push_back(detail::tree_to_json(t));
                per_class.push_back({{"alphas", cls.alphas},
                                     {"round_errors", cls.round_errors},
                                     {"trees", std::move(trees)}});
            }
            j["adaboost"] = {{"learning_rate", model.ada.learning_rate},
                             {"tree_depth", model.ada.tree_depth},
                             {"per_class", std::move(per_class)}};
            break;
        }
        case CombinerKind::GradientBoosting:
        case CombinerKind::SecondOrderBoosting: {
            nlohmann::json rounds = nlohmann::json::array();
            for (const auto& round : model.boost.rounds) {
                nlohmann::json trees = nlohmann::json::array();
                for (const auto& t : round.trees) trees.push_back(detail::tree_to_json(t));
                rounds.push_back(std::move(trees));
            }
            j["boost"] = {{"priors", model.boost.priors},
                          {"learning_rate", model.boost.learning_rate},
                          {"second_order", model.boost.second_order},
                          {"rounds", std::move(rounds)}};
            break;
        }
    }
    write_file_atomic(path, j.dump(2) + "\n");
}

inline Stage2Model load_stage2(const std::filesystem::path& path) {
    nlohmann::json j = nlohmann::json::parse(read_file(path), nullptr, false);
    if (j.is_discarded()) throw DataError(path.string() + ": not valid JSON");
    check_format_version(j, path.string());

    Stage2Model model;
    auto kind = combiner_kind_from_name(j.at("kind").get<std::string>());
    if (!kind)
        throw DataError(path.string() + ": unknown combiner kind '" +
                        j.at("kind").get<std::string>() + "'");
    model.kind = *kind;
    model.feature_width = j.at("feature_width").get<int>();
    model.hyper = j.value("hyper", nlohmann::json::object());

    switch (model.kind) {
        case CombinerKind::FixedCriteriaUnigram:
        case CombinerKind::FixedCriteriaNgram:
            break;
        case CombinerKind::StackedDeep: {
            const auto& s = j.at("stacked");
            model.stacked.feature_width = model.feature_width;
            model.stacked.significance_digits = s.at("significance_digits").get<int>();
            for (const auto& inst : s.at("instances")) {
                SequenceClassifierConfig config = config_from_json(inst.at("config"));
                model.stacked.instances.push_back(model_from_json_params(inst, config));
                TrainingMetadata meta;
                if (inst.contains("training")) meta = metadata_from_json(inst["training"]);
                model.stacked.metadata.push_back(meta);
            }
            break;
        }
        case CombinerKind::LogisticRegression: {
            const auto& s = j.at("logistic");
            auto d = s.at("d").get<Eigen::Index>();
            auto w = s.at("weights").get<std::vector<double>>();
            auto b = s.at("bias").get<std::vector<double>>();
            if (static_cast<Eigen::Index>(w.size()) != 3 * d || b.size() != 3)
                throw DataError(path.string() + ": malformed logistic parameters");
            model.lr.weights = Eigen::Map<const Eigen::MatrixXd>(w.data(), 3, d);
            model.lr.bias = Eigen::Map<const Eigen::VectorXd>(b.data(), 3);
            break;
        }
        case CombinerKind::RandomForest: {
            const auto& s = j.at("forest");
            model.forest.bootstrap = s.at("bootstrap").get<bool>();
            for (const auto& t : s.at("trees"))
                model.forest.trees.push_back(detail::tree_from_json(t));
            break;
        }
        case CombinerKind::AdaBoost: {
            const auto& s = j.at("adaboost");
            model.ada.learning_rate = s.at("learning_rate").get<double>();
            model.ada.tree_depth = s.at("tree_depth").get<int>();
            std::size_t k = 0;
            for (const auto& cls : s.at("per_class")) {
                if (k >= 3) throw DataError(path.string() + ": too many boosted classes");
                model.ada.per_class[k].alphas = cls.at("alphas").get<std::vector<double>>();
                model.ada.per_class[k].round_errors =
                    cls.at("round_errors").get<std::vector<double>>();
                for (const auto& t : cls.at("trees"))
                    model.ada.per_class[k].trees.push_back(detail::tree_from_json(t));
                ++k;
            }
            break;
        }
        case CombinerKind::GradientBoosting:
        case CombinerKind::SecondOrderBoosting: {
            const auto& s = j.at("boost");
            auto priors = s.at("priors").get<std::vector<double>>();
            if (priors.size() != 3) throw DataError(path.string() + ": malformed priors");
            std::copy(priors.begin(), priors.end(), model.boost.priors.begin());
            model.boost.learning_rate = s.at("learning_rate").get<double>();
            model.boost.second_order = s.at("second_order").get<bool>();
            model.boost.fitted = true;
            for (const auto& round_json : s.at("rounds")) {
                BoostRound round;
                std::size_t k = 0;
                for (const auto& t : round_json) {
                    if (k >= 3) throw DataError(path.string() + ": malformed boosting round");
                    round.trees[k++] = detail::tree_from_json(t);
                }
                model.boost.rounds.push_back(std::move(round));
            }
            break;
        }
    }
    return model;
}

}  // namespace hsd
