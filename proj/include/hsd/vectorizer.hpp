#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"

#include "hsd/common.hpp"
#include "hsd/corpus.hpp"
#include "hsd/text.hpp"

namespace hsd {

inline constexpr int kSequenceLength = 30;

inline std::size_t default_vocab_cap(int order) {
    switch (order) {
        case 1: return 25000;
        case 2: return 120000;
        case 3: return 180000;
        default: throw ConfigError("n-gram order must be 1, 2 or 3");
    }
}

// n-grams are formed within one sample, over its token stream, and keyed by
// the tokens joined with single spaces.
inline std::vector<std::string> ngrams_of(const std::vector<std::string>& tokens, int order) {
    std::vector<std::string> grams;
    if (order < 1 || tokens.size() < static_cast<std::size_t>(order)) return grams;
    grams.reserve(tokens.size() - order + 1);
    for (std::size_t i = 0; i + order <= tokens.size(); ++i) {
        std::string g = tokens[i];
        for (int k = 1; k < order; ++k) {
            g += ' ';
            g += tokens[i + k];
        }
        grams.push_back(std::move(g));
    }
    return grams;
}

struct EncodedSample {
    std::vector<int> indices;  // exactly the configured sequence length
    int order = 1;
};

// Frequency-ranked n-gram index. Index 1 is the most frequent n-gram; ties
// are broken by first occurrence in the corpus so builds are reproducible.
// Index 0 is reserved for padding and out-of-vocabulary n-grams.
class NGramVocabulary {
public:
    struct Entry {
        std::string ngram;
        std::uint64_t frequency = 0;
    };

    NGramVocabulary() = default;
    NGramVocabulary(int order, std::size_t cap) : order_(order), cap_(cap) {}

    int order() const { return order_; }
    std::size_t cap() const { return cap_; }
    std::size_t size() const { return entries_.size(); }
    const std::vector<Entry>& entries() const { return entries_; }

    // 0 when the n-gram is unindexed.
    int index_of(const std::string& ngram) const {
        auto it = index_.find(ngram);
        return it == index_.end() ? 0 : it->second;
    }

    std::uint64_t frequency_at(int index) const {
        return entries_.at(static_cast<std::size_t>(index) - 1).frequency;
    }

    static NGramVocabulary build(const std::vector<std::vector<std::string>>& token_lists,
                                 int order, std::size_t cap) {
        if (order < 1 || order > 3) throw ConfigError("n-gram order must be 1, 2 or 3");
        if (cap < 1) throw ConfigError("vocabulary cap must be positive");
        if (token_lists.empty()) throw DataError("cannot build a vocabulary from an empty corpus");

        struct Count {
            std::uint64_t frequency = 0;
            std::uint64_t first_seen = 0;
        };
        std::unordered_map<std::string, Count> counts;
        std::uint64_t tick = 0;
        for (const auto& tokens : token_lists) {
            for (auto& gram : ngrams_of(tokens, order)) {
                auto [it, inserted] = counts.try_emplace(std::move(gram));
                if (inserted) it->second.first_seen = tick++;
                ++it->second.frequency;
            }
        }

        std::vector<std::pair<std::string, Count>> ranked(counts.begin(), counts.end());
        std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
            if (a.second.frequency != b.second.frequency)
                return a.second.frequency > b.second.frequency;
            return a.second.first_seen < b.second.first_seen;
        });
        if (ranked.size() > cap) ranked.resize(cap);

        NGramVocabulary vocab(order, cap);
        vocab.entries_.reserve(ranked.size());
        for (auto& [gram, count] : ranked) {
            vocab.index_.emplace(gram, static_cast<int>(vocab.entries_.size()) + 1);
            vocab.entries_.push_back({std::move(gram), count.frequency});
        }
        return vocab;
    }

    static NGramVocabulary build(const LabeledCorpus& corpus, int order, std::size_t cap) {
        std::vector<std::vector<std::string>> token_lists;
        token_lists.reserve(corpus.size());
        for (const auto& s : corpus.samples) token_lists.push_back(tokenize(s.text));
        return build(token_lists, order, cap);
    }

    // One JSON object per line, in index order.
    void save(const std::filesystem::path& path) const {
        std::string out;
        for (std::size_t i = 0; i < entries_.size(); ++i) {
            nlohmann::json j{{"ngram", entries_[i].ngram},
                             {"index", i + 1},
                             {"frequency", entries_[i].frequency}};
            out += j.dump();
            out += '\n';
        }
        write_file_atomic(path, out);
    }

    static NGramVocabulary load(const std::filesystem::path& path, int order, std::size_t cap) {
        NGramVocabulary vocab(order, cap);
        std::string content = read_file(path);
        std::size_t pos = 0, line_no = 0;
        while (pos < content.size()) {
            std::size_t end = content.find('\n', pos);
            if (end == std::string::npos) end = content.size();
            std::string line = content.substr(pos, end - pos);
            pos = end + 1;
            ++line_no;
            if (trim(line).empty()) continue;
            nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
            if (j.is_discarded() || !j.contains("ngram") || !j.contains("index") ||
                !j.contains("frequency"))
                throw DataError(path.string() + ": malformed vocabulary entry at line " +
                                std::to_string(line_no));
            if (j["index"].get<std::size_t>() != vocab.entries_.size() + 1)
                throw DataError(path.string() + ": non-dense index at line " +
                                std::to_string(line_no));
            std::uint64_t freq = j["frequency"].get<std::uint64_t>();
            if (!vocab.entries_.empty() && freq > vocab.entries_.back().frequency)
                throw DataError(path.string() + ": frequencies not non-increasing at line " +
                                std::to_string(line_no));
            std::string gram = j["ngram"].get<std::string>();
            if (!vocab.index_.emplace(gram, static_cast<int>(vocab.entries_.size()) + 1).second)
                throw DataError(path.string() + ": duplicate n-gram at line " +
                                std::to_string(line_no));
            vocab.entries_.push_back({std::move(gram), freq});
        }
        if (vocab.entries_.size() > cap)
            throw DataError(path.string() + ": vocabulary larger than its cap");
        return vocab;
    }

private:
    int order_ = 1;
    std::size_t cap_ = 0;
    std::unordered_map<std::string, int> index_;
    std::vector<Entry> entries_;
};

// Maps each n-gram of the token list through the vocabulary (missing -> 0),
// truncates to the sequence length, and zero-pads at the end.
inline EncodedSample encode(const std::vector<std::string>& tokens,
                            const NGramVocabulary& vocab,
                            int sequence_length = kSequenceLength) {
    EncodedSample enc;
    enc.order = vocab.order();
    enc.indices.assign(static_cast<std::size_t>(sequence_length), 0);
    std::size_t i = 0;
    for (const auto& gram : ngrams_of(tokens, vocab.order())) {
        if (i >= enc.indices.size()) break;
        enc.indices[i++] = vocab.index_of(gram);
    }
    return enc;
}

inline EncodedSample encode_text(const std::string& text, const NGramVocabulary& vocab,
                                 int sequence_length = kSequenceLength) {
    return encode(tokenize(text), vocab, sequence_length);
}

}  // namespace hsd
