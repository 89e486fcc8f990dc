// Copyright (C) 2026 The dbs Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <zlib.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dbs/error.hpp"
#include "dbs/lm.hpp"
#include "dbs/random.hpp"
#include "dbs/stem.hpp"

namespace dbs {

/// Static word vectors keyed by lowercased word.
class EmbeddingTable {
public:
    explicit EmbeddingTable(std::size_t dim = 300) : dim_(dim), zero_(dim, 0.0f) {
        if (dim == 0) throw InvalidInput("embedding dim must be >= 1");
    }

    std::size_t dim() const noexcept { return dim_; }
    std::size_t size() const noexcept { return vectors_.size(); }
    /// Lines dropped by the loader because they were not "word v1 ... v_dim".
    std::size_t skipped_lines() const noexcept { return skipped_; }

    void insert(std::string word, std::vector<float> v) {
        if (v.size() != dim_) throw InvalidInput("embedding for '" + word + "' has wrong length");
        for (float x : v) {
            if (!std::isfinite(x)) throw InvalidInput("embedding for '" + word + "' is not finite");
        }
        std::transform(word.begin(), word.end(), word.begin(), [](unsigned char c) { return std::tolower(c); });
        vectors_.insert_or_assign(std::move(word), std::move(v));
    }

    bool contains(std::string_view word) const { return vectors_.count(std::string(word)) != 0; }

    /// Stored vector, or the zero vector when the word is absent.
    std::span<const float> get(std::string_view word) const {
        auto it = vectors_.find(std::string(word));
        return it == vectors_.end() ? std::span<const float>(zero_) : std::span<const float>(it->second);
    }

private:
    friend EmbeddingTable load_embeddings(const std::string&, std::size_t);

    std::size_t dim_;
    std::vector<float> zero_;
    std::unordered_map<std::string, std::vector<float>> vectors_;
    std::size_t skipped_ = 0;
};

namespace detail {

inline bool parse_embedding_line(std::string_view line, std::size_t dim, std::string& word, std::vector<float>& v) {
    while (!line.empty() && (line.back() == '\n' || line.back() == '\r')) line.remove_suffix(1);
    const auto sp = line.find(' ');
    if (sp == std::string_view::npos || sp == 0) return false;
    word.assign(line.substr(0, sp));
    v.clear();
    const char* p = line.data() + sp;
    const char* end = line.data() + line.size();
    while (p < end) {
        while (p < end && *p == ' ') ++p;
        if (p == end) break;
        float x = 0.0f;
        auto [next, ec] = std::from_chars(p, end, x);
        if (ec != std::errc() || !std::isfinite(x)) return false;
        v.push_back(x);
        p = next;
        if (p < end && *p != ' ') return false;
    }
    return v.size() == dim;
}

inline bool ends_with(std::string_view s, std::string_view suffix) {
    return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

}  // namespace detail

/// Reads GloVe text format ("word v1 ... v_dim" per line); `.gz` files are
/// decompressed transparently. Malformed lines are skipped and counted.
inline EmbeddingTable load_embeddings(const std::string& path, std::size_t dim) {
    EmbeddingTable table(dim);
    gzFile f = gzopen(path.c_str(), "rb");  // reads plain files too
    if (f == nullptr) throw IoError("cannot open embeddings file: " + path);
    std::unique_ptr<gzFile_s, decltype(&gzclose)> guard(f, &gzclose);

    std::string word;
    std::vector<float> v;
    std::string line;
    std::vector<char> buf(1 << 16);
    bool partial = false;
    auto flush = [&] {
        if (line.empty() || line == "\n") {
            line.clear();
            return;
        }
        if (detail::parse_embedding_line(line, dim, word, v)) {
            table.insert(word, v);
        } else {
            ++table.skipped_;
        }
        line.clear();
    };
    while (gzgets(f, buf.data(), static_cast<int>(buf.size())) != nullptr) {
        std::string_view chunk(buf.data());
        line.append(chunk);
        partial = chunk.empty() || chunk.back() != '\n';
        if (!partial) flush();
    }
    int errnum = 0;
    gzerror(f, &errnum);
    if (errnum != Z_OK && errnum != Z_STREAM_END) throw IoError("error reading embeddings file: " + path);
    flush();
    if (table.size() == 0) throw InvalidInput("no well-formed embedding lines in " + path);
    return table;
}

/// Maps an LM vocabulary surface to the word it spells: strips surrounding
/// whitespace and the word-boundary markers of common subword vocabularies
/// ("Ġ", "▁", "##"), then lowercases ASCII letters.
inline std::string normalize_surface(std::string_view s) {
    auto strip_front = [&s] {
        for (;;) {
            if (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\n' || s.front() == '\r')) {
                s.remove_prefix(1);
            } else if (s.starts_with("\xC4\xA0") || s.starts_with("\xC4\x8A")) {  // Ġ, Ċ
                s.remove_prefix(2);
            } else if (s.starts_with("\xE2\x96\x81")) {  // ▁
                s.remove_prefix(3);
            } else if (s.starts_with("##")) {
                s.remove_prefix(2);
            } else {
                return;
            }
        }
    };
    strip_front();
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\n' || s.back() == '\r')) s.remove_suffix(1);
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
    return out;
}

inline std::span<const float> token_embedding(const EmbeddingTable& table, std::string_view surface) {
    return table.get(normalize_surface(surface));
}

/// Cosine similarity; 0 when either vector has zero norm.
inline double cosine(std::span<const float> u, std::span<const float> v) {
    if (u.size() != v.size()) throw InvalidInput("cosine: vector length mismatch");
    double dot = 0.0, nu = 0.0, nv = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        dot += static_cast<double>(u[i]) * v[i];
        nu += static_cast<double>(u[i]) * u[i];
        nv += static_cast<double>(v[i]) * v[i];
    }
    if (nu == 0.0 || nv == 0.0) return 0.0;
    return std::clamp(dot / (std::sqrt(nu) * std::sqrt(nv)), -1.0, 1.0);
}

/// Clip-then-square: max(0, cos)^2.
inline double steering_weight(double cos) {
    const double c = std::max(0.0, cos);
    return c * c;
}

/// Per-token steering weights for one guide word, each in [0, 1].
struct SimilarityTable {
    std::string guide_word;
    std::vector<double> entries;
    /// False when the guide word has no embedding; all entries are then 0.
    bool guide_found = false;
};

inline std::string checked_guide_word(std::string_view guide_word) {
    std::string w = normalize_surface(guide_word);
    if (w.empty()) throw InvalidInput("guide word is empty");
    if (w.find_first_of(" \t\r\n") != std::string::npos) {
        throw InvalidInput("guide word must be a single word: '" + std::string(guide_word) + "'");
    }
    return w;
}

inline SimilarityTable build_similarity_table(const Vocabulary& vocab, const EmbeddingTable& table,
                                              std::string_view guide_word) {
    SimilarityTable sim;
    sim.guide_word = checked_guide_word(guide_word);
    sim.entries.assign(vocab.size(), 0.0);
    sim.guide_found = table.contains(sim.guide_word);
    if (!sim.guide_found) return sim;

    const std::span<const float> g = table.get(sim.guide_word);
    for (TokenId id = 0; id < vocab.size(); ++id) {
        sim.entries[id] = steering_weight(cosine(token_embedding(table, vocab.surface(id)), g));
    }
    return sim;
}

/// Builds each guide word's table once; safe to share between threads.
class SimilarityCache {
public:
    SimilarityCache(const Vocabulary& vocab, const EmbeddingTable& table) : vocab_(&vocab), table_(&table) {}

    std::shared_ptr<const SimilarityTable> get(std::string_view guide_word) {
        const std::string key = checked_guide_word(guide_word);
        std::lock_guard lock(mu_);
        auto it = cache_.find(key);
        if (it != cache_.end()) return it->second;
        auto sim = std::make_shared<const SimilarityTable>(build_similarity_table(*vocab_, *table_, key));
        cache_.emplace(key, sim);
        return sim;
    }

private:
    const Vocabulary* vocab_;
    const EmbeddingTable* table_;
    std::mutex mu_;
    std::map<std::string, std::shared_ptr<const SimilarityTable>> cache_;
};

/// Stand-in for pretrained vectors when none are available: every word gets a
/// random unit direction shared by all words with the same Porter stem, plus a
/// smaller word-specific perturbation. Unrelated words are near-orthogonal in
/// high dimension; inflections of one stem are strongly aligned.
inline EmbeddingTable stem_cluster_embeddings(const Vocabulary& vocab, std::size_t dim, std::uint64_t seed,
                                              double word_noise = 0.3) {
    EmbeddingTable table(dim);
    auto direction = [&](std::string_view key) {
        RngStream rng(splitmix64(seed) ^ fnv1a(key));
        std::vector<double> v(dim);
        double norm = 0.0;
        for (double& x : v) {
            // Box-Muller; the cosine half is enough.
            const double u1 = 1.0 - rng.uniform();
            const double u2 = rng.uniform();
            x = std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
            norm += x * x;
        }
        for (double& x : v) x /= std::sqrt(norm);
        return v;
    };
    for (TokenId id = 0; id < vocab.size(); ++id) {
        const std::string word = normalize_surface(vocab.surface(id));
        if (word.empty() || table.contains(word)) continue;
        if (!std::all_of(word.begin(), word.end(), [](unsigned char c) { return std::isalpha(c) || c == '\''; })) {
            continue;
        }
        const auto base = direction("stem:" + porter_stem(word));
        const auto own = direction("word:" + word);
        std::vector<float> v(dim);
        for (std::size_t i = 0; i < dim; ++i) v[i] = static_cast<float>(base[i] + word_noise * own[i]);
        table.insert(word, std::move(v));
    }
    return table;
}

}  // namespace dbs
