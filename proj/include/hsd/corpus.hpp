#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "json.hpp"

#include "hsd/common.hpp"
#include "hsd/labels.hpp"

namespace hsd {

struct Sample {
    std::string id;
    std::string text;
    std::optional<Label> label;

    bool operator==(const Sample&) const = default;
};

struct LabeledCorpus {
    std::vector<Sample> samples;
    LabelSpace space = LabelSpace::ThreeClass;

    std::size_t size() const { return samples.size(); }

    std::size_t count_label(Label l) const {
        std::size_t n = 0;
        for (const auto& s : samples)
            if (s.label == l) ++n;
        return n;
    }

    // Some consumers (training, evaluation) need gold labels on every row.
    void require_labels() const {
        for (const auto& s : samples)
            if (!s.label) throw DataError("sample '" + s.id + "' has no label");
    }
};

enum class CorpusFormat { Tsv, Csv, JsonLines };

inline CorpusFormat corpus_format_from_name(std::string_view name) {
    if (name == "tsv") return CorpusFormat::Tsv;
    if (name == "csv") return CorpusFormat::Csv;
    if (name == "jsonl" || name == "json") return CorpusFormat::JsonLines;
    throw ConfigError("unknown corpus format '" + std::string(name) +
                      "' (expected tsv, csv or jsonl)");
}

inline CorpusFormat corpus_format_from_path(const std::filesystem::path& path) {
    std::string ext = path.extension().string();
    if (ext == ".tsv" || ext == ".txt") return CorpusFormat::Tsv;
    if (ext == ".csv") return CorpusFormat::Csv;
    if (ext == ".jsonl" || ext == ".json") return CorpusFormat::JsonLines;
    throw ConfigError("cannot infer corpus format from '" + path.string() +
                      "'; pass the format explicitly");
}

namespace detail {

inline Label parse_label(const std::string& raw, const LabelMap& map, std::size_t line_no) {
    auto it = map.find(to_lower(trim(raw)));
    if (it == map.end())
        throw DataError("unknown label '" + raw + "' at line " + std::to_string(line_no));
    return it->second;
}

// Splits one delimited record. CSV fields may be quoted with '"' ('""'
// escapes a quote); TSV fields are taken verbatim. Returns nullopt when an
// opening quote is never closed.
inline std::optional<std::vector<std::string>> split_record(const std::string& line,
                                                            char delim, bool quoting) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    bool cur_empty = true;
    for (std::size_t i = 0; i < line.size(); ++i) {
        char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur += c;
            }
        } else if (quoting && c == '"' && cur_empty) {
            quoted = true;
            cur_empty = false;
        } else if (c == delim) {
            fields.push_back(cur);
            cur.clear();
            cur_empty = true;
        } else {
            cur += c;
            cur_empty = false;
        }
    }
    if (quoted) return std::nullopt;
    fields.push_back(cur);
    return fields;
}

inline std::string csv_quote(const std::string& s) {
    if (s.find_first_of(",\"") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        else out += c;
    }
    out += '"';
    return out;
}

struct ColumnLayout {
    std::size_t id, text, label;
};

inline ColumnLayout parse_header(const std::vector<std::string>& fields,
                                 const std::filesystem::path& path) {
    ColumnLayout layout{fields.size(), fields.size(), fields.size()};
    for (std::size_t i = 0; i < fields.size(); ++i) {
        std::string name = to_lower(trim(fields[i]));
        if (name == "id") layout.id = i;
        else if (name == "text") layout.text = i;
        else if (name == "label") layout.label = i;
    }
    if (layout.id >= fields.size() || layout.text >= fields.size() ||
        layout.label >= fields.size())
        throw DataError(path.string() + ": header must name id, text and label columns");
    return layout;
}

}  // namespace detail

// Reads a labeled corpus. Record order is preserved; ids must be unique.
//   tsv / csv:  header line naming the id, text and label columns, then one
//               record per line (CSV fields may be double-quoted)
//   jsonl:      {"id": "...", "text": "...", "label": "..."} per line
// Label strings are normalized through `map`; an empty or missing label
// leaves the sample unlabeled. Mixing labels from the three-class and the
// binary space in one file is an error, as are malformed records (reported
// with their line number) and unknown label strings.
inline LabeledCorpus load_corpus(const std::filesystem::path& path, CorpusFormat format,
                                 const LabelMap& map = default_label_map()) {
    std::string content = read_file(path);
    LabeledCorpus corpus;
    std::optional<LabelSpace> seen_space;
    std::unordered_set<std::string> seen_ids;
    std::optional<detail::ColumnLayout> layout;
    const bool delimited = format != CorpusFormat::JsonLines;
    const char delim = format == CorpusFormat::Tsv ? '\t' : ',';

    auto add = [&](std::string id, std::string text, const std::string& raw_label,
                   std::size_t line_no) {
        if (!seen_ids.insert(id).second)
            throw DataError(path.string() + ": duplicate id '" + id + "' at line " +
                            std::to_string(line_no));
        std::optional<Label> label;
        if (!trim(raw_label).empty()) {
            label = detail::parse_label(raw_label, map, line_no);
            LabelSpace sp = space_of(*label);
            if (seen_space && *seen_space != sp)
                throw DataError(path.string() + ": line " + std::to_string(line_no) +
                                " mixes three-class and binary labels");
            seen_space = sp;
        }
        corpus.samples.push_back({std::move(id), std::move(text), label});
    };

    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= content.size()) {
        std::size_t end = content.find('\n', pos);
        std::string line = content.substr(
            pos, end == std::string::npos ? std::string::npos : end - pos);
        bool last = end == std::string::npos;
        pos = last ? content.size() + 1 : end + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() && last) break;
        if (trim(line).empty()) continue;

        if (delimited) {
            auto fields = detail::split_record(line, delim, format == CorpusFormat::Csv);
            if (!fields)
                throw DataError(path.string() + ": malformed record at line " +
                                std::to_string(line_no) + " (unterminated quote)");
            if (!layout) {
                layout = detail::parse_header(*fields, path);
                continue;
            }
            if (fields->size() <= std::max({layout->id, layout->text, layout->label}))
                throw DataError(path.string() + ": malformed record at line " +
                                std::to_string(line_no) + " (expected " +
                                std::to_string(std::max({layout->id, layout->text,
                                                         layout->label}) +
                                               1) +
                                "+ fields, got " + std::to_string(fields->size()) + ")");
            add((*fields)[layout->id], (*fields)[layout->text], (*fields)[layout->label],
                line_no);
        } else {
            nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
            if (j.is_discarded() || !j.is_object() || !j.contains("id") ||
                !j.contains("text") || !j["id"].is_string() || !j["text"].is_string())
                throw DataError(path.string() + ": malformed record at line " +
                                std::to_string(line_no) +
                                " (expected an object with id, text, label)");
            std::string raw_label;
            if (j.contains("label") && j["label"].is_string())
                raw_label = j["label"].get<std::string>();
            add(j["id"].get<std::string>(), j["text"].get<std::string>(), raw_label, line_no);
        }
    }
    if (delimited && !layout)
        throw DataError(path.string() + ": missing header line");
    if (seen_space) corpus.space = *seen_space;
    return corpus;
}

inline LabeledCorpus load_corpus(const std::filesystem::path& path,
                                 const LabelMap& map = default_label_map()) {
    return load_corpus(path, corpus_format_from_path(path), map);
}

// Writes in any of the three formats; load_corpus(save_corpus(c)) preserves
// every (id, text, label) triple. Texts that cannot survive the delimited
// formats (embedded newlines, or tabs under tsv) are rejected; jsonl always
// works.
inline void save_corpus(const LabeledCorpus& corpus, const std::filesystem::path& path,
                        CorpusFormat format) {
    std::string out;
    if (format != CorpusFormat::JsonLines) out = "id\ttext\tlabel\n";
    if (format == CorpusFormat::Csv) out = "id,text,label\n";
    for (const auto& s : corpus.samples) {
        std::string label = s.label ? to_string(*s.label) : "";
        switch (format) {
            case CorpusFormat::Tsv:
                for (const std::string* f : {&s.id, &s.text})
                    if (f->find_first_of("\t\n") != std::string::npos)
                        throw DataError("field with tab or newline cannot be written as tsv; "
                                        "use csv or jsonl");
                out += s.id + '\t' + s.text + '\t' + label;
                break;
            case CorpusFormat::Csv:
                for (const std::string* f : {&s.id, &s.text})
                    if (f->find('\n') != std::string::npos)
                        throw DataError(
                            "field with embedded newline cannot be written as csv; use jsonl");
                out += detail::csv_quote(s.id) + ',' + detail::csv_quote(s.text) + ',' + label;
                break;
            case CorpusFormat::JsonLines: {
                nlohmann::json j{{"id", s.id}, {"text", s.text}, {"label", label}};
                out += j.dump();
                break;
            }
        }
        out += '\n';
    }
    write_file_atomic(path, out);
}

}  // namespace hsd
