#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hsd/common.hpp"

namespace hsd {

enum class Label : int { Sexism = 0, Racism = 1, Neutral = 2, Hate = 3, NonHate = 4 };

enum class LabelSpace { ThreeClass, Binary };

inline const std::vector<Label>& labels_of(LabelSpace space) {
    static const std::vector<Label> three = {Label::Sexism, Label::Racism, Label::Neutral};
    static const std::vector<Label> binary = {Label::Hate, Label::NonHate};
    return space == LabelSpace::ThreeClass ? three : binary;
}

inline std::string to_string(Label l) {
    switch (l) {
        case Label::Sexism: return "Sexism";
        case Label::Racism: return "Racism";
        case Label::Neutral: return "Neutral";
        case Label::Hate: return "Hate";
        case Label::NonHate: return "NonHate";
    }
    return "?";
}

inline std::optional<Label> label_from_name(const std::string& name) {
    if (name == "Sexism") return Label::Sexism;
    if (name == "Racism") return Label::Racism;
    if (name == "Neutral") return Label::Neutral;
    if (name == "Hate") return Label::Hate;
    if (name == "NonHate") return Label::NonHate;
    return std::nullopt;
}

inline LabelSpace space_of(Label l) {
    return (l == Label::Hate || l == Label::NonHate) ? LabelSpace::Binary
                                                     : LabelSpace::ThreeClass;
}

// Normalization table from raw label strings (lowercased) to canonical labels.
// Covers the common spellings of both the three-class and the binary corpora;
// extendable through configuration.
using LabelMap = std::map<std::string, Label>;

inline LabelMap default_label_map() {
    return LabelMap{
        {"sexism", Label::Sexism},   {"sexist", Label::Sexism},
        {"racism", Label::Racism},   {"racist", Label::Racism},
        {"none", Label::Neutral},    {"neutral", Label::Neutral},
        {"neither", Label::Neutral},
        {"hate", Label::Hate},       {"hateful", Label::Hate},
        {"off", Label::Hate},        {"offensive", Label::Hate},
        {"nonhate", Label::NonHate}, {"non-hate", Label::NonHate},
        {"not", Label::NonHate},     {"normal", Label::NonHate},
        {"nonhateful", Label::NonHate}, {"non-hateful", Label::NonHate},
    };
}

// Scores for the three-class decision, one slot per class.
struct ClassScores {
    double neutral = 0.0;
    double sexism = 0.0;
    double racism = 0.0;

    // Ties prefer Neutral, then Sexism, then Racism.
    Label argmax() const {
        Label best = Label::Neutral;
        double best_score = neutral;
        if (sexism > best_score) {
            best = Label::Sexism;
            best_score = sexism;
        }
        if (racism > best_score) {
            best = Label::Racism;
            best_score = racism;
        }
        return best;
    }
};

// One-hot rendering of a three-class label in (B_S, B_R, B_N) column order.
inline std::array<double, 3> one_hot_srn(Label l) {
    switch (l) {
        case Label::Sexism: return {1.0, 0.0, 0.0};
        case Label::Racism: return {0.0, 1.0, 0.0};
        case Label::Neutral: return {0.0, 0.0, 1.0};
        default:
            throw DataError("label outside the three-class space: " + to_string(l));
    }
}

inline Label label_from_one_hot_srn(double b_s, double b_r, double b_n) {
    if (b_s == 1.0 && b_r == 0.0 && b_n == 0.0) return Label::Sexism;
    if (b_s == 0.0 && b_r == 1.0 && b_n == 0.0) return Label::Racism;
    if (b_s == 0.0 && b_r == 0.0 && b_n == 1.0) return Label::Neutral;
    throw DataError("malformed one-hot label triple");
}

}  // namespace hsd
