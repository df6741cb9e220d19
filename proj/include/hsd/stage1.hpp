#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"

#include "hsd/common.hpp"
#include "hsd/corpus.hpp"
#include "hsd/labels.hpp"
#include "hsd/neural.hpp"
#include "hsd/vectorizer.hpp"

namespace hsd {

// Canonical bank order. The first three members run on unigrams; the last
// two re-target racism on bigram and trigram encodings of the same samples.
struct BankMemberSpec {
    Label target;
    int order;
    std::string name;
};

inline std::vector<BankMemberSpec> bank_members(int classifier_count) {
    if (classifier_count != 3 && classifier_count != 5)
        throw ConfigError("classifier count must be 3 or 5");
    std::vector<BankMemberSpec> members = {{Label::Neutral, 1, "neutral-1"},
                                           {Label::Sexism, 1, "sexism-1"},
                                           {Label::Racism, 1, "racism-1"}};
    if (classifier_count == 5) {
        members.push_back({Label::Racism, 2, "racism-2"});
        members.push_back({Label::Racism, 3, "racism-3"});
    }
    return members;
}

// Rates found by trial and error for each first-stage classifier; defaults
// for the corresponding schedule fields.
struct MemberRates {
    double initial_rate;
    double decay_rate;
};

inline MemberRates default_member_rates(Label target, int order) {
    if (order == 2) return {0.05, 0.20};
    if (order == 3) return {0.05, 0.18};
    switch (target) {
        case Label::Neutral: return {0.08, 0.15};
        case Label::Sexism: return {0.10, 0.20};
        case Label::Racism: return {0.08, 0.15};
        default: throw ConfigError("no first-stage classifier for label " + to_string(target));
    }
}

// Positive class sits on output neuron 0, the rest on neuron 1, so the
// first softmax component is the positive-class probability p.
inline constexpr int kPositiveClass = 0;
inline constexpr int kNegativeClass = 1;

inline std::vector<int> binarize_labels(const LabeledCorpus& corpus, Label target) {
    if (space_of(target) != LabelSpace::ThreeClass)
        throw ConfigError("bank targets live in the three-class space");
    corpus.require_labels();
    std::vector<int> classes;
    classes.reserve(corpus.size());
    for (const auto& s : corpus.samples)
        classes.push_back(*s.label == target ? kPositiveClass : kNegativeClass);
    return classes;
}

// Replication oversampling for minority classes on training data: samples of
// `cls` appear `factor` times. Originals keep corpus order; the extra
// factor-1 passes over the class samples are appended, so the result is
// deterministic. Replicas keep their source id.
inline LabeledCorpus replicate_oversample(const LabeledCorpus& corpus, Label cls, int factor) {
    if (factor < 1) throw ConfigError("oversampling factor must be at least 1");
    if (corpus.count_label(cls) == 0)
        throw DataError("no samples of class " + to_string(cls) + " to oversample");
    LabeledCorpus out = corpus;
    for (int pass = 1; pass < factor; ++pass)
        for (const auto& s : corpus.samples)
            if (s.label == cls) out.samples.push_back(s);
    return out;
}

// ---------------------------------------------------------------------------
// Bank

struct BankClassifier {
    Label target = Label::Neutral;
    int order = 1;
    std::string name;
    SequenceClassifier model;
    TrainingMetadata metadata;

    bool trained() const { return model.config().vocab_size > 0; }
};

struct OvrBank {
    std::vector<BankClassifier> members;   // in bank_members order

    int classifier_count() const { return static_cast<int>(members.size()); }
    int feature_width() const { return 2 * classifier_count(); }
};

using VocabularySet = std::map<int, NGramVocabulary>;   // keyed by n-gram order

inline const NGramVocabulary& vocab_for_order(const VocabularySet& vocabs, int order) {
    auto it = vocabs.find(order);
    if (it == vocabs.end())
        throw ConfigError("no vocabulary for n-gram order " + std::to_string(order));
    return it->second;
}

// Concatenated two-tuple outputs in bank order; optionally a one-hot label
// triple (sexism, racism, neutral) appended by attach_label.
struct FeatureRow {
    std::vector<double> values;
    std::optional<Label> label;
};

// Encodes the text once per distinct order and emits (p, 1-p) per member.
inline std::vector<double> predict_bank(const OvrBank& bank, const std::string& text,
                                        const VocabularySet& vocabs) {
    std::vector<std::string> tokens = tokenize(text);
    std::map<int, EncodedSample> encoded;
    std::vector<double> features;
    features.reserve(static_cast<std::size_t>(bank.feature_width()));
    for (const auto& member : bank.members) {
        if (!member.trained())
            throw DataError("classifier '" + member.name + "' is untrained");
        auto it = encoded.find(member.order);
        if (it == encoded.end()) {
            const NGramVocabulary& vocab = vocab_for_order(vocabs, member.order);
            it = encoded
                     .emplace(member.order,
                              encode(tokens, vocab, member.model.config().sequence_length))
                     .first;
        }
        std::vector<double> p = member.model.forward(it->second);
        features.push_back(p[kPositiveClass]);
        features.push_back(p[kNegativeClass]);
    }
    return features;
}

inline FeatureRow attach_label(std::vector<double> features, Label label) {
    if (space_of(label) != LabelSpace::ThreeClass)
        throw ConfigError("stage-two rows carry three-class labels, got " + to_string(label));
    FeatureRow row;
    row.values = std::move(features);
    auto hot = one_hot_srn(label);
    row.values.insert(row.values.end(), hot.begin(), hot.end());
    row.label = label;
    return row;
}

// ---------------------------------------------------------------------------
// Training

struct BankTrainConfig {
    int classifier_count = 3;
    int sequence_length = 30;
    int embedding_dim = 30;
    int recurrent_units = 30;
    int dense_units = 30;
    TrainingSchedule schedule;            // rate fields are overridden per member
    bool per_member_rates = true;         // use default_member_rates unless disabled
    double validation_fraction = 0.1;     // held out before oversampling
    int sexism_factor = 2;
    int racism_factor = 3;
    int jobs = 1;
};

struct TrainedBank {
    OvrBank bank;
    std::vector<std::size_t> validation_indices;   // into the training corpus
};

namespace detail {

// One shuffle shared by all members: the holdout feeds second-stage rows.
inline std::vector<std::size_t> validation_split(std::size_t n, double fraction,
                                                 std::uint64_t seed) {
    if (fraction <= 0 || fraction >= 1)
        throw ConfigError("validation fraction must be in (0,1)");
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    auto val_count = static_cast<std::size_t>(fraction * static_cast<double>(n));
    val_count = std::max<std::size_t>(1, std::min(val_count, n - 1));
    idx.resize(val_count);
    std::sort(idx.begin(), idx.end());
    return idx;
}

}  // namespace detail

// Trains the c binary classifiers of a bank on one training corpus:
//   1. hold out a validation fraction of the corpus (shared by all members);
//   2. oversample minority classes in the remaining training part;
//   3. per member, binarize labels against its target and encode at its
//      n-gram order, then run the scheduled training.
// Vocabularies must already be built (on training data only). Members train
// independently, in parallel when jobs > 1, with per-member seeds, so the
// result does not depend on the job count.
inline TrainedBank train_bank(const LabeledCorpus& corpus, const VocabularySet& vocabs,
                              const BankTrainConfig& config, std::uint64_t seed) {
    corpus.require_labels();
    if (corpus.size() < 2) throw DataError("training corpus too small");

    std::vector<std::size_t> val_idx =
        detail::validation_split(corpus.size(), config.validation_fraction,
                                 sub_seed(seed, 0xA11D));
    std::vector<bool> in_val(corpus.size(), false);
    for (std::size_t i : val_idx) in_val[i] = true;

    LabeledCorpus train_part, val_part;
    train_part.space = val_part.space = corpus.space;
    for (std::size_t i = 0; i < corpus.size(); ++i)
        (in_val[i] ? val_part : train_part).samples.push_back(corpus.samples[i]);

    LabeledCorpus oversampled = train_part;
    if (config.sexism_factor > 1 && oversampled.count_label(Label::Sexism) > 0)
        oversampled = replicate_oversample(oversampled, Label::Sexism, config.sexism_factor);
    if (config.racism_factor > 1 && oversampled.count_label(Label::Racism) > 0)
        oversampled = replicate_oversample(oversampled, Label::Racism, config.racism_factor);

    auto members = bank_members(config.classifier_count);

    // token streams are shared across members with the same order
    std::map<int, std::vector<std::vector<int>>> train_enc, val_enc;
    for (const auto& m : members) {
        if (train_enc.count(m.order)) continue;
        const NGramVocabulary& vocab = vocab_for_order(vocabs, m.order);
        auto encode_all = [&](const LabeledCorpus& part) {
            std::vector<std::vector<int>> out;
            out.reserve(part.size());
            for (const auto& s : part.samples)
                out.push_back(encode_text(s.text, vocab, config.sequence_length).indices);
            return out;
        };
        train_enc[m.order] = encode_all(oversampled);
        val_enc[m.order] = encode_all(val_part);
    }

    TrainedBank result;
    result.validation_indices = val_idx;
    result.bank.members.resize(members.size());

    auto train_member = [&](std::size_t mi) {
        const auto& spec = members[mi];
        const NGramVocabulary& vocab = vocab_for_order(vocabs, spec.order);

        SequenceClassifierConfig mc;
        mc.vocab_size = static_cast<int>(vocab.size()) + 1;   // index 0 is pad/unknown
        mc.sequence_length = config.sequence_length;
        mc.embedding_dim = config.embedding_dim;
        mc.recurrent_units = config.recurrent_units;
        mc.dense_units = config.dense_units;
        mc.output_classes = 2;

        TrainingSchedule schedule = config.schedule;
        if (config.per_member_rates) {
            MemberRates rates = default_member_rates(spec.target, spec.order);
            schedule.initial_rate = rates.initial_rate;
            schedule.decay_rate = rates.decay_rate;
        }

        NeuralDataset train_set{train_enc[spec.order], binarize_labels(oversampled, spec.target)};
        NeuralDataset val_set{val_enc[spec.order], binarize_labels(val_part, spec.target)};

        std::uint64_t member_seed = sub_seed(seed, mi + 1);
        SequenceClassifier model(mc);
        model.init_weights(member_seed);
        TrainResult trained = train(std::move(model), train_set, val_set, schedule, member_seed);

        result.bank.members[mi] = {spec.target, spec.order, spec.name,
                                   std::move(trained.model), trained.metadata};
    };

    run_indexed_jobs(members.size(), config.jobs, train_member);
    return result;
}

// Labeled second-stage rows for a corpus: bank outputs plus the gold one-hot.
inline std::vector<FeatureRow> make_stage2_rows(const OvrBank& bank,
                                                const VocabularySet& vocabs,
                                                const LabeledCorpus& corpus) {
    corpus.require_labels();
    std::vector<FeatureRow> rows;
    rows.reserve(corpus.size());
    for (const auto& s : corpus.samples)
        rows.push_back(attach_label(predict_bank(bank, s.text, vocabs), *s.label));
    return rows;
}

// ---------------------------------------------------------------------------
// Persistence: a bank directory holds a manifest, one model container per
// member, and one vocabulary file per n-gram order.

inline constexpr int kBankFormatVersion = 1;

inline void save_bank(const OvrBank& bank, const VocabularySet& vocabs,
                      const std::filesystem::path& dir, std::uint64_t seed) {
    std::filesystem::create_directories(dir);
    nlohmann::json manifest;
    manifest["format_version"] = kBankFormatVersion;
    manifest["kind"] = "classifier-bank";
    manifest["classifier_count"] = bank.classifier_count();
    manifest["seed"] = seed;
    nlohmann::json members = nlohmann::json::array();
    for (const auto& m : bank.members) {
        std::string model_file = "model_" + m.name + ".json";
        save_model(m.model, m.metadata, dir / model_file);
        members.push_back({{"name", m.name},
                           {"target", to_string(m.target)},
                           {"order", m.order},
                           {"model_file", model_file},
                           {"vocab_file", "vocab_" + std::to_string(m.order) + ".jsonl"}});
    }
    manifest["members"] = std::move(members);
    nlohmann::json vocab_meta = nlohmann::json::array();
    for (const auto& [order, vocab] : vocabs) {
        vocab.save(dir / ("vocab_" + std::to_string(order) + ".jsonl"));
        vocab_meta.push_back({{"order", order}, {"cap", vocab.cap()}, {"size", vocab.size()}});
    }
    manifest["vocabularies"] = std::move(vocab_meta);
    write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

inline std::pair<OvrBank, VocabularySet> load_bank(const std::filesystem::path& dir) {
    nlohmann::json manifest =
        nlohmann::json::parse(read_file(dir / "manifest.json"), nullptr, false);
    if (manifest.is_discarded())
        throw DataError((dir / "manifest.json").string() + ": not valid JSON");
    check_format_version(manifest, (dir / "manifest.json").string(), kBankFormatVersion);

    VocabularySet vocabs;
    for (const auto& v : manifest.at("vocabularies")) {
        int order = v.at("order").get<int>();
        vocabs.emplace(order, NGramVocabulary::load(
                                  dir / ("vocab_" + std::to_string(order) + ".jsonl"), order,
                                  v.at("cap").get<std::size_t>()));
    }

    OvrBank bank;
    for (const auto& m : manifest.at("members")) {
        BankClassifier member;
        member.name = m.at("name").get<std::string>();
        auto target = label_from_name(m.at("target").get<std::string>());
        if (!target)
            throw DataError(dir.string() + ": unknown member target '" +
                            m.at("target").get<std::string>() + "'");
        member.target = *target;
        member.order = m.at("order").get<int>();
        auto [model, metadata] = load_model(dir / m.at("model_file").get<std::string>());
        member.model = std::move(model);
        member.metadata = metadata;
        bank.members.push_back(std::move(member));
    }
    if (bank.classifier_count() != manifest.at("classifier_count").get<int>())
        throw DataError(dir.string() + ": member list does not match classifier_count");
    return {std::move(bank), std::move(vocabs)};
}

// ---------------------------------------------------------------------------
// Feature-row CSV. Fixed header; width follows the bank size and whether
// rows carry the one-hot label triple.

inline std::vector<std::string> feature_columns(int classifier_count, bool labeled) {
    std::vector<std::string> cols;
    for (const auto& m : bank_members(classifier_count)) {
        cols.push_back("p_" + m.name);
        cols.push_back("not_" + m.name);
    }
    if (labeled) {
        cols.push_back("b_sexism");
        cols.push_back("b_racism");
        cols.push_back("b_neutral");
    }
    return cols;
}

inline void save_feature_rows(const std::vector<FeatureRow>& rows,
                              const std::filesystem::path& path) {
    if (rows.empty()) throw DataError("no feature rows to write");
    bool labeled = rows.front().label.has_value();
    int c = static_cast<int>(rows.front().values.size() - (labeled ? 3 : 0)) / 2;
    auto cols = feature_columns(c, labeled);
    std::string out;
    for (std::size_t i = 0; i < cols.size(); ++i) {
        if (i) out += ',';
        out += cols[i];
    }
    out += '\n';
    for (const auto& row : rows) {
        if (row.values.size() != cols.size())
            throw DataError("feature row width " + std::to_string(row.values.size()) +
                            " does not match header width " + std::to_string(cols.size()));
        if (row.label.has_value() != labeled)
            throw DataError("cannot mix labeled and unlabeled feature rows in one file");
        for (std::size_t i = 0; i < row.values.size(); ++i) {
            if (i) out += ',';
            out += format_double(row.values[i]);
        }
        out += '\n';
    }
    write_file_atomic(path, out);
}

inline std::vector<FeatureRow> load_feature_rows(const std::filesystem::path& path) {
    std::string content = read_file(path);
    std::vector<FeatureRow> rows;
    std::size_t pos = 0, line_no = 0;
    std::vector<std::string> header;
    bool labeled = false;
    while (pos < content.size()) {
        std::size_t end = content.find('\n', pos);
        if (end == std::string::npos) end = content.size();
        std::string line = content.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        if (trim(line).empty()) continue;
        auto fields = split(line, ',');
        if (header.empty()) {
            header = fields;
            labeled = !header.empty() && header.back() == "b_neutral";
            std::size_t width = header.size() - (labeled ? 3 : 0);
            if ((width != 6 && width != 10) ||
                feature_columns(static_cast<int>(width) / 2, labeled) != header)
                throw DataError(path.string() + ": unrecognized feature-row header");
            continue;
        }
        if (fields.size() != header.size())
            throw DataError(path.string() + ": row at line " + std::to_string(line_no) +
                            " has " + std::to_string(fields.size()) + " fields, expected " +
                            std::to_string(header.size()));
        FeatureRow row;
        row.values.reserve(fields.size());
        for (const auto& f : fields) {
            try {
                row.values.push_back(std::stod(f));
            } catch (const std::exception&) {
                throw DataError(path.string() + ": bad number '" + f + "' at line " +
                                std::to_string(line_no));
            }
        }
        if (labeled)
            row.label = label_from_one_hot_srn(row.values[row.values.size() - 3],
                                               row.values[row.values.size() - 2],
                                               row.values[row.values.size() - 1]);
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw DataError(path.string() + ": no feature rows");
    return rows;
}

}  // namespace hsd
