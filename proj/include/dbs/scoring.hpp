// Copyright (C) 2026 The dbs Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dbs/error.hpp"
#include "dbs/lm.hpp"
#include "dbs/stem.hpp"

namespace dbs {

struct QualityConfig {
    double alpha = 0.001;
    /// Occurrence count charged to a chunk that misses its guide word.
    double c_star = 2.0;

    void validate() const {
        if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw InvalidInput("alpha must be >= 0");
        if (!std::isfinite(c_star)) throw InvalidInput("c_star must be finite");
    }
};

/// Q = exp(-(c + alpha * PP)) when c > 0, exp(-(c_star + alpha * PP)) otherwise.
inline double quality_score(int occurrences, double perplexity, const QualityConfig& cfg = {}) {
    if (occurrences < 0) throw InvalidInput("quality_score: negative occurrence count");
    if (!(perplexity > 0.0)) throw InvalidInput("quality_score: perplexity must be > 0");
    const double c = occurrences > 0 ? static_cast<double>(occurrences) : cfg.c_star;
    return std::exp(-(c + cfg.alpha * perplexity));
}

/// One k-token expansion of a beam.
struct Chunk {
    TokenSeq tokens;
    int occurrences = 0;
    double perplexity = 1.0;
    double quality = 0.0;
};

inline double cumulative_score(std::span<const Chunk> chunks) {
    double sum = 0.0;
    for (const Chunk& c : chunks) sum += c.quality;
    return sum;
}

/// exp(mean NLL of `chunk` given `prefix`).
template <LanguageModel M>
double chunk_perplexity(const M& lm, std::span<const TokenId> prefix, std::span<const TokenId> chunk) {
    return std::exp(lm.sequence_nll(prefix, chunk));
}

/// Byte range of one word in a text.
struct WordSpan {
    std::size_t begin = 0;
    std::size_t end = 0;
};

namespace detail {

// Decodes one UTF-8 code point at `i`; malformed bytes decode as U+FFFD, length 1.
inline char32_t decode_utf8(std::string_view s, std::size_t i, std::size_t& len) {
    const auto b0 = static_cast<unsigned char>(s[i]);
    auto cont = [&](std::size_t k) {
        return i + k < s.size() && (static_cast<unsigned char>(s[i + k]) & 0xC0) == 0x80;
    };
    if (b0 < 0x80) {
        len = 1;
        return b0;
    }
    if ((b0 & 0xE0) == 0xC0 && cont(1)) {
        len = 2;
        return (char32_t(b0 & 0x1F) << 6) | (s[i + 1] & 0x3F);
    }
    if ((b0 & 0xF0) == 0xE0 && cont(1) && cont(2)) {
        len = 3;
        return (char32_t(b0 & 0x0F) << 12) | (char32_t(s[i + 1] & 0x3F) << 6) | (s[i + 2] & 0x3F);
    }
    if ((b0 & 0xF8) == 0xF0 && cont(1) && cont(2) && cont(3)) {
        len = 4;
        return (char32_t(b0 & 0x07) << 18) | (char32_t(s[i + 1] & 0x3F) << 12) |
               (char32_t(s[i + 2] & 0x3F) << 6) | (s[i + 3] & 0x3F);
    }
    len = 1;
    return 0xFFFD;
}

// Letters: ASCII, Latin-1/Latin Extended (minus x and ÷), and every script
// block above U+036F except general punctuation, symbols and CJK punctuation.
inline bool is_letter(char32_t cp) {
    if (cp < 0x80) return (cp >= 'a' && cp <= 'z') || (cp >= 'A' && cp <= 'Z');
    if (cp < 0xC0) return cp == 0xAA || cp == 0xB5 || cp == 0xBA;
    if (cp <= 0x24F) return cp != 0xD7 && cp != 0xF7;
    if (cp < 0x370) return false;  // IPA extensions, modifiers, combining marks
    if (cp >= 0x2000 && cp <= 0x2BFF) return false;
    if (cp >= 0x3000 && cp <= 0x303F) return false;
    if (cp >= 0xFE30 && cp <= 0xFE4F) return false;
    if (cp >= 0xFF00 && cp <= 0xFF20) return false;
    if (cp == 0xFFFD) return false;
    return true;
}

}  // namespace detail

/// Maximal runs of letters; everything else separates words.
inline std::vector<WordSpan> split_words(std::string_view text) {
    std::vector<WordSpan> words;
    std::size_t i = 0;
    bool in_word = false;
    std::size_t start = 0;
    while (i < text.size()) {
        std::size_t len = 1;
        const bool letter = detail::is_letter(detail::decode_utf8(text, i, len));
        if (letter && !in_word) {
            start = i;
            in_word = true;
        } else if (!letter && in_word) {
            words.push_back({start, i});
            in_word = false;
        }
        i += len;
    }
    if (in_word) words.push_back({start, text.size()});
    return words;
}

/// How far occurrence scanning has progressed through a beam's text.
struct OccurrenceScanState {
    std::size_t consumed_words = 0;
    /// Text of the unmatched word that ended the text at the last scan.
    std::string open_word;
    friend bool operator==(const OccurrenceScanState&, const OccurrenceScanState&) = default;
};

struct OccurrenceScan {
    int count = 0;
    OccurrenceScanState state;
    /// Byte offset of the last matching word, if any matched.
    std::optional<std::size_t> last_match;
};

/// Counts words at or past `state.consumed_words` whose stem equals the
/// guide word's stem, then marks them consumed.
///
/// A word that runs to the very end of `text` may still grow under a subword
/// tokenizer. It is counted (and consumed) as soon as it matches; otherwise
/// it stays open and is examined again only if it has grown by the next call.
/// A word therefore belongs to the scan in which its last character appeared.
inline OccurrenceScan count_new_occurrences(std::string_view text, OccurrenceScanState state,
                                            std::string_view guide_stem_or_word, bool already_stemmed = false) {
    const std::string target = already_stemmed ? std::string(guide_stem_or_word) : porter_stem(guide_stem_or_word);
    const auto words = split_words(text);
    OccurrenceScan out;
    out.state = state;
    for (std::size_t w = state.consumed_words; w < words.size(); ++w) {
        const std::string_view word = text.substr(words[w].begin, words[w].end - words[w].begin);
        const bool open = words[w].end == text.size() && w + 1 == words.size();
        const bool seen = w == state.consumed_words && !state.open_word.empty() && word == state.open_word;
        const bool match = !seen && porter_stem(word) == target;
        if (match) {
            ++out.count;
            out.last_match = words[w].begin;
        }
        if (open && !match) {
            out.state.open_word = std::string(word);
            break;
        }
        out.state.consumed_words = w + 1;
        out.state.open_word.clear();
    }
    return out;
}

/// True when some word of `text` shares the stem of `word`.
inline bool contains_stem(std::string_view text, std::string_view word) {
    const std::string target = porter_stem(word);
    for (const WordSpan& w : split_words(text)) {
        if (porter_stem(text.substr(w.begin, w.end - w.begin)) == target) return true;
    }
    return false;
}

}  // namespace dbs
