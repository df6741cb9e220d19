#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "hsd/common.hpp"

namespace hsd {

inline bool is_ascii_punct(char c) {
    unsigned char u = static_cast<unsigned char>(c);
    return (u >= 0x21 && u <= 0x2f) || (u >= 0x3a && u <= 0x40) ||
           (u >= 0x5b && u <= 0x60) || (u >= 0x7b && u <= 0x7e);
}

inline bool is_space_char(char c) {
    return c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '\v' || c == '\f';
}

inline bool is_url_token(std::string_view s) {
    return s.starts_with("http://") || s.starts_with("https://");
}

inline std::vector<std::string> split_whitespace(std::string_view text) {
    std::vector<std::string> chunks;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && is_space_char(text[i])) ++i;
        std::size_t start = i;
        while (i < text.size() && !is_space_char(text[i])) ++i;
        if (i > start) chunks.emplace_back(text.substr(start, i - start));
    }
    return chunks;
}

// Tokenization rule set, version 1:
//   1. split on whitespace;
//   2. chunks beginning with http:// or https:// are emitted whole;
//   3. leading ASCII punctuation is detached one character per token, except
//      '@' and '#', which stay attached so handles and hashtags survive;
//   4. trailing ASCII punctuation is detached one character per token;
//   5. everything else (interior punctuation, emojis, non-ASCII bytes) is
//      kept inside the token.
// Empty input yields an empty list.
inline std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> tokens;
    for (const std::string& chunk : split_whitespace(text)) {
        std::string_view rest = chunk;
        if (is_url_token(rest)) {
            tokens.emplace_back(rest);
            continue;
        }
        while (!rest.empty() && is_ascii_punct(rest.front()) && rest.front() != '@' &&
               rest.front() != '#') {
            tokens.emplace_back(1, rest.front());
            rest.remove_prefix(1);
        }
        if (is_url_token(rest)) {
            tokens.emplace_back(rest);
            continue;
        }
        std::vector<char> trailing;
        while (!rest.empty() && is_ascii_punct(rest.back()) && rest.size() > 1) {
            trailing.push_back(rest.back());
            rest.remove_suffix(1);
        }
        if (rest.size() == 1 && is_ascii_punct(rest.front()) && rest.front() != '@' &&
            rest.front() != '#') {
            trailing.push_back(rest.front());
            rest.remove_prefix(1);
        }
        if (!rest.empty()) tokens.emplace_back(rest);
        for (auto it = trailing.rbegin(); it != trailing.rend(); ++it)
            tokens.emplace_back(1, *it);
    }
    return tokens;
}

inline std::string join_tokens(const std::vector<std::string>& tokens) {
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i > 0) out += ' ';
        out += tokens[i];
    }
    return out;
}

namespace detail {

inline std::string erase_chars(std::string_view s, std::string_view chars) {
    std::string out;
    out.reserve(s.size());
    for (char c : s)
        if (chars.find(c) == std::string_view::npos) out += c;
    return out;
}

template <class Pred>
std::string drop_chunks(std::string_view s, Pred drop) {
    std::string out;
    for (const std::string& chunk : split_whitespace(s)) {
        if (drop(chunk)) continue;
        if (!out.empty()) out += ' ';
        out += chunk;
    }
    return out;
}

template <class Fn>
std::string map_chunks(std::string_view s, Fn fn) {
    std::string out;
    for (const std::string& chunk : split_whitespace(s)) {
        std::string mapped = fn(chunk);
        if (mapped.empty()) continue;
        if (!out.empty()) out += ' ';
        out += mapped;
    }
    return out;
}

}  // namespace detail

namespace detail {

// One pass of the seven-step filtering scheme; see filter_text.
inline std::string filter_pass(std::string_view text) {
    std::string s = detail::erase_chars(text, "\"");
    s = detail::drop_chunks(s, [](const std::string& c) { return c.front() == '@'; });
    s = detail::drop_chunks(s, [](const std::string& c) { return is_url_token(c); });
    s = detail::erase_chars(s, ",:;");
    s = detail::map_chunks(s, [](const std::string& c) {
        std::size_t k = 0;
        while (k < c.size() && c[k] == '#') ++k;
        return c.substr(k);
    });
    s = detail::drop_chunks(s, [](const std::string& c) { return c == "RT"; });
    {
        std::string kept;
        kept.reserve(s.size());
        for (char c : s) {
            unsigned char u = static_cast<unsigned char>(c);
            if (u >= 0x20 && u <= 0x7e) kept += c;
        }
        s = std::move(kept);
    }
    return join_tokens(split_whitespace(s));
}

}  // namespace detail

// Test-set filtering scheme; seven steps applied in this exact order:
//   1. strip quote (") characters
//   2. remove @-prefixed username strings
//   3. remove http:// and https:// URL strings
//   4. remove comma, colon and semicolon characters
//   5. delete the '#' prefix of hashtags, keeping the tag word
//   6. remove retweet markers (the token "RT")
//   7. remove bytes outside printable ASCII 0x20..0x7E
// with whitespace normalized to single spaces. A deletion can expose a new
// marker (removing a stray byte may turn a chunk into "@user"), so the pass
// repeats until the text is stable; this makes the filter idempotent.
// Ordinary text needs a single pass. The optional lowercase switch is
// applied last; it is off by default.
inline std::string filter_text(std::string_view text, bool lowercase = false) {
    std::string s = detail::filter_pass(text);
    for (std::string next = detail::filter_pass(s); next != s;
         next = detail::filter_pass(s))
        s = std::move(next);
    if (lowercase) s = to_lower(s);
    return s;
}

}  // namespace hsd
