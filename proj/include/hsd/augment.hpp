#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "hsd/common.hpp"
#include "hsd/stage1.hpp"

namespace hsd {

struct AugmentConfig {
    double mdv = 0.02;        // maximum relative divergence per feature
    std::size_t n_samples = 0;
    std::uint64_t seed = 0;

    void validate() const {
        if (!(mdv > 0.0 && mdv < 1.0)) throw ConfigError("mdv must be in (0,1)");
    }
};

namespace detail {

// Fixed bit-to-double mapping keeps the stream identical across platforms.
inline double unit_uniform(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double sign_coin(std::mt19937_64& rng) { return (rng() & 1u) ? 1.0 : -1.0; }

}  // namespace detail

// Synthesizes rows near existing rows of a single class. Per generated row:
// pick a source uniformly, then nudge every probability feature by its own
// fair-coin relative step of size mdv, clamp to [0,1], and re-normalize each
// (p, not-p) pair so the tuples stay complementary. The one-hot label block,
// when present, is copied through untouched.
inline std::vector<FeatureRow> generate_samples(const std::vector<FeatureRow>& class_rows,
                                                const AugmentConfig& config) {
    config.validate();
    if (class_rows.empty()) throw DataError("cannot generate samples from an empty class");
    const bool labeled = class_rows.front().label.has_value();
    const std::size_t width = class_rows.front().values.size();
    const std::size_t prob_width = width - (labeled ? 3 : 0);
    if (prob_width == 0 || prob_width % 2 != 0)
        throw DataError("feature rows must hold two-tuple probabilities");
    for (const auto& row : class_rows) {
        if (row.values.size() != width || row.label != class_rows.front().label)
            throw DataError("class rows must share one width and one class label");
    }

    std::mt19937_64 rng(config.seed);
    std::vector<FeatureRow> out;
    out.reserve(config.n_samples);
    for (std::size_t k = 0; k < config.n_samples; ++k) {
        double a = detail::unit_uniform(rng);
        auto idx = static_cast<std::size_t>(a * static_cast<double>(class_rows.size()));
        idx = std::min(idx, class_rows.size() - 1);
        FeatureRow row = class_rows[idx];
        for (std::size_t j = 0; j < prob_width; ++j) {
            double v = row.values[j] * (1.0 + detail::sign_coin(rng) * config.mdv);
            row.values[j] = std::clamp(v, 0.0, 1.0);
        }
        for (std::size_t j = 0; j + 1 < prob_width; j += 2) {
            double s = row.values[j] + row.values[j + 1];
            if (s > 0.0) {
                row.values[j] /= s;
                row.values[j + 1] /= s;
            } else {
                row.values[j] = row.values[j + 1] = 0.5;
            }
        }
        out.push_back(std::move(row));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Stage-two feature CSV: header "f0,...,f{n-1},label", one probability column
// per bank output, label token optional per row. The one-hot block is not
// stored; attach_label rebuilds it on load.

inline std::string feature_rows_to_csv(const std::vector<FeatureRow>& rows) {
    std::string out;
    std::size_t width = 0;
    for (const auto& row : rows) {
        std::size_t w = row.values.size() - (row.label ? 3 : 0);
        if (width == 0) width = w;
        if (w != width || w == 0)
            throw DataError("feature rows must share one probability width");
    }
    if (width == 0) width = 6;   // empty set still gets a well-formed header
    for (std::size_t j = 0; j < width; ++j) out += "f" + std::to_string(j) + ",";
    out += "label\n";
    for (const auto& row : rows) {
        for (std::size_t j = 0; j < width; ++j) out += format_double(row.values[j]) + ",";
        if (row.label) out += to_string(*row.label);
        out += '\n';
    }
    return out;
}

inline std::vector<FeatureRow> feature_rows_from_csv(const std::string& text,
                                                     const LabelMap& map = default_label_map()) {
    std::vector<FeatureRow> rows;
    std::size_t width = 0;
    std::size_t line_no = 0;
    std::string line;
    std::istringstream in(text);
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto split = detail::split_record(line, ',', true);
        if (!split)
            throw DataError("feature csv line " + std::to_string(line_no) +
                            ": unterminated quote");
        auto& fields = *split;
        if (line_no == 1) {
            if (fields.size() < 2 || trim(fields.back()) != "label")
                throw DataError("feature csv needs a trailing 'label' header column");
            width = fields.size() - 1;
            continue;
        }
        if (fields.size() != width + 1)
            throw DataError("feature csv line " + std::to_string(line_no) + " has " +
                            std::to_string(fields.size()) + " columns, expected " +
                            std::to_string(width + 1));
        std::vector<double> values;
        values.reserve(width);
        for (std::size_t j = 0; j < width; ++j) {
            try {
                values.push_back(std::stod(fields[j]));
            } catch (const std::exception&) {
                throw DataError("feature csv line " + std::to_string(line_no) +
                                ": bad number '" + fields[j] + "'");
            }
        }
        std::string token = trim(fields[width]);
        if (token.empty()) {
            rows.push_back({std::move(values), std::nullopt});
        } else {
            rows.push_back(attach_label(std::move(values),
                                        detail::parse_label(token, map, line_no)));
        }
    }
    if (line_no == 0) throw DataError("feature csv is empty");
    return rows;
}

// Chance that two independently generated rows collide when every component
// is resolved to x significant digits across y classifiers.
inline double overlap_probability(int x, int y) {
    if (x < 1 || y < 1) throw ConfigError("overlap_probability needs x >= 1 and y >= 1");
    return 1.0 / std::pow(10.0, static_cast<double>(x) * static_cast<double>(y));
}

// Maps a probability to one of 10^m integer states.
inline int quantize(double p, int m) {
    if (m < 1) throw ConfigError("quantize needs at least one significance digit");
    double scale = std::pow(10.0, m);
    auto q = static_cast<long long>(std::floor(p * scale));
    long long hi = static_cast<long long>(scale) - 1;
    return static_cast<int>(std::clamp(q, 0LL, hi));
}

}  // namespace hsd
