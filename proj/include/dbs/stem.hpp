// Copyright (C) 2026 The dbs Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cctype>
#include <string>
#include <string_view>

namespace dbs {

namespace detail {

// Porter (1980) suffix stripper over a lowercase ASCII word. Implements the
// published algorithm without the later departures of the reference C code.
class PorterStemmer {
public:
    explicit PorterStemmer(std::string word) : w_(std::move(word)) {}

    std::string run() && {
        step1a();
        step1b();
        step1c();
        step2();
        step3();
        step4();
        step5a();
        step5b();
        return std::move(w_);
    }

private:
    bool consonant(std::size_t i) const {
        switch (w_[i]) {
            case 'a': case 'e': case 'i': case 'o': case 'u':
                return false;
            case 'y':
                return i == 0 || !consonant(i - 1);
            default:
                return true;
        }
    }

    // m in [C](VC)^m[V] over w_[0, len).
    int measure(std::size_t len) const {
        int m = 0;
        std::size_t i = 0;
        while (i < len && consonant(i)) ++i;
        while (i < len) {
            while (i < len && !consonant(i)) ++i;
            if (i >= len) break;
            while (i < len && consonant(i)) ++i;
            ++m;
        }
        return m;
    }

    bool has_vowel(std::size_t len) const {
        for (std::size_t i = 0; i < len; ++i) {
            if (!consonant(i)) return true;
        }
        return false;
    }

    bool double_consonant(std::size_t len) const {
        return len >= 2 && w_[len - 1] == w_[len - 2] && consonant(len - 1);
    }

    // *o: stem ends cvc, where the final c is not w, x or y.
    bool cvc(std::size_t len) const {
        if (len < 3 || !consonant(len - 1) || consonant(len - 2) || !consonant(len - 3)) return false;
        const char c = w_[len - 1];
        return c != 'w' && c != 'x' && c != 'y';
    }

    bool ends(std::string_view suffix) const {
        return w_.size() >= suffix.size() && std::string_view(w_).substr(w_.size() - suffix.size()) == suffix;
    }

    std::size_t stem_len(std::string_view suffix) const { return w_.size() - suffix.size(); }

    void replace(std::string_view suffix, std::string_view with) {
        w_.erase(stem_len(suffix));
        w_ += with;
    }

    struct Rule {
        std::string_view suffix;
        std::string_view replacement;
    };

    // First rule whose suffix matches decides; it fires only if m(stem) > min_m.
    template <std::size_t N>
    void apply_first(const Rule (&rules)[N], int min_m) {
        for (const Rule& r : rules) {
            if (ends(r.suffix)) {
                if (measure(stem_len(r.suffix)) > min_m) replace(r.suffix, r.replacement);
                return;
            }
        }
    }

    void step1a() {
        if (ends("sses")) {
            replace("sses", "ss");
        } else if (ends("ies")) {
            replace("ies", "i");
        } else if (ends("ss")) {
            // unchanged
        } else if (ends("s")) {
            replace("s", "");
        }
    }

    void step1b() {
        if (ends("eed")) {
            if (measure(stem_len("eed")) > 0) replace("eed", "ee");
            return;
        }
        std::string_view suffix;
        if (ends("ed") && has_vowel(stem_len("ed"))) {
            suffix = "ed";
        } else if (ends("ing") && has_vowel(stem_len("ing"))) {
            suffix = "ing";
        } else {
            return;
        }
        replace(suffix, "");
        if (ends("at")) {
            w_ += 'e';
        } else if (ends("bl")) {
            w_ += 'e';
        } else if (ends("iz")) {
            w_ += 'e';
        } else if (double_consonant(w_.size())) {
            const char c = w_.back();
            if (c != 'l' && c != 's' && c != 'z') w_.pop_back();
        } else if (measure(w_.size()) == 1 && cvc(w_.size())) {
            w_ += 'e';
        }
    }

    void step1c() {
        if (ends("y") && has_vowel(stem_len("y"))) w_.back() = 'i';
    }

    void step2() {
        static constexpr Rule rules[] = {
            {"ational", "ate"}, {"tional", "tion"}, {"enci", "ence"},   {"anci", "ance"},  {"izer", "ize"},
            {"abli", "able"},   {"alli", "al"},     {"entli", "ent"},   {"eli", "e"},      {"ousli", "ous"},
            {"ization", "ize"}, {"ation", "ate"},   {"ator", "ate"},    {"alism", "al"},   {"iveness", "ive"},
            {"fulness", "ful"}, {"ousness", "ous"}, {"aliti", "al"},    {"iviti", "ive"},  {"biliti", "ble"},
        };
        apply_first(rules, 0);
    }

    void step3() {
        static constexpr Rule rules[] = {
            {"icate", "ic"}, {"ative", ""}, {"alize", "al"}, {"iciti", "ic"},
            {"ical", "ic"},  {"ful", ""},   {"ness", ""},
        };
        apply_first(rules, 0);
    }

    void step4() {
        static constexpr std::string_view suffixes[] = {
            "al",  "ance", "ence", "er",  "ic",  "able", "ible", "ant", "ement", "ment",
            "ent", "ion",  "ou",   "ism", "ate", "iti",  "ous",  "ive", "ize",
        };
        // Longest match first: "ement" must shadow "ment" and "ent".
        std::string_view best;
        for (std::string_view s : suffixes) {
            if (ends(s) && s.size() > best.size()) best = s;
        }
        if (best.empty()) return;
        const std::size_t len = stem_len(best);
        if (measure(len) <= 1) return;
        if (best == "ion" && (len == 0 || (w_[len - 1] != 's' && w_[len - 1] != 't'))) return;
        w_.resize(len);
    }

    void step5a() {
        if (!ends("e")) return;
        const std::size_t len = stem_len("e");
        const int m = measure(len);
        if (m > 1 || (m == 1 && !cvc(len))) w_.pop_back();
    }

    void step5b() {
        if (measure(w_.size()) > 1 && double_consonant(w_.size()) && w_.back() == 'l') w_.pop_back();
    }

    std::string w_;
};

}  // namespace detail

/// Porter stem of `word`, lowercased. Words containing anything other than
/// ASCII letters are returned lowercased and otherwise unchanged.
inline std::string porter_stem(std::string_view word) {
    std::string w(word);
    std::transform(w.begin(), w.end(), w.begin(), [](unsigned char c) { return std::tolower(c); });
    if (w.empty() || !std::all_of(w.begin(), w.end(), [](unsigned char c) { return c >= 'a' && c <= 'z'; })) {
        return w;
    }
    return detail::PorterStemmer(std::move(w)).run();
}

}  // namespace dbs
