// Copyright (C) 2026 The dbs Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dbs/error.hpp"
#include "dbs/lm.hpp"

namespace dbs {

/// Count-based word-level n-gram model with add-delta smoothing.
///
/// Tokens are whitespace-separated words, case preserved. Id 0 is reserved
/// for `<unk>`, which every out-of-vocabulary word maps to. Contexts shorter
/// than `order - 1` use the counts of the matching shorter history, so an
/// empty context yields the unigram distribution.
///
/// p(w | h) = (count(h, w) + delta) / (count(h) + delta * |V|)
class NgramModel {
public:
    static constexpr TokenId kUnk = 0;
    static constexpr std::string_view kUnkSurface = "<unk>";

    static NgramModel train(std::string_view corpus, int order, double delta) {
        if (order < 1) throw InvalidInput("n-gram order must be >= 1");
        if (!(delta > 0.0) || !std::isfinite(delta)) throw InvalidInput("smoothing delta must be > 0");

        NgramModel m;
        m.order_ = order;
        m.delta_ = delta;
        m.vocab_.add(std::string(kUnkSurface));

        TokenSeq stream;
        for_each_word(corpus, [&](std::string_view w) { stream.push_back(m.vocab_.add(std::string(w))); });
        if (stream.empty()) throw InvalidInput("n-gram corpus is empty");

        m.rows_.resize(static_cast<std::size_t>(order));
        for (std::size_t h = 0; h < m.rows_.size(); ++h) {
            auto& table = m.rows_[h];
            for (std::size_t i = h; i < stream.size(); ++i) {
                Row& row = table[key(std::span(stream).subspan(i - h, h))];
                ++row.total;
                ++row.next[stream[i]];
            }
        }
        return m;
    }

    static NgramModel train_file(const std::string& path, int order, double delta) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IoError("cannot open corpus file: " + path);
        std::ostringstream buf;
        buf << in.rdbuf();
        return train(buf.str(), order, delta);
    }

    int order() const noexcept { return order_; }
    double smoothing() const noexcept { return delta_; }
    const Vocabulary& vocabulary() const noexcept { return vocab_; }
    std::size_t vocab_size() const noexcept { return vocab_.size(); }
    bool concurrent() const noexcept { return true; }

    /// Raw count of `next` following the longest usable suffix of `ctx`.
    std::uint64_t count(std::span<const TokenId> ctx, TokenId next) const {
        const Row* row = find_row(ctx);
        if (row == nullptr) return 0;
        auto it = row->next.find(next);
        return it == row->next.end() ? 0 : it->second;
    }

    std::uint64_t context_count(std::span<const TokenId> ctx) const {
        const Row* row = find_row(ctx);
        return row == nullptr ? 0 : row->total;
    }

    double log_prob(std::span<const TokenId> ctx, TokenId next) const {
        check_ids(ctx, vocab_size());
        check_ids(std::span(&next, 1), vocab_size());
        const Row* row = find_row(ctx);
        const double total = row == nullptr ? 0.0 : static_cast<double>(row->total);
        double c = 0.0;
        if (row != nullptr) {
            auto it = row->next.find(next);
            if (it != row->next.end()) c = static_cast<double>(it->second);
        }
        return std::log(c + delta_) - std::log(total + delta_ * static_cast<double>(vocab_size()));
    }

    LogitVector next_logits(std::span<const TokenId> ctx) const {
        check_ids(ctx, vocab_size());
        const Row* row = find_row(ctx);
        const double total = row == nullptr ? 0.0 : static_cast<double>(row->total);
        const double denom = std::log(total + delta_ * static_cast<double>(vocab_size()));
        LogitVector logits(vocab_size(), std::log(delta_) - denom);
        if (row != nullptr) {
            for (const auto& [tok, c] : row->next) logits[tok] = std::log(static_cast<double>(c) + delta_) - denom;
        }
        return logits;
    }

    double sequence_nll(std::span<const TokenId> prefix, std::span<const TokenId> target) const {
        if (target.empty()) throw InvalidInput("sequence_nll: empty target");
        check_ids(prefix, vocab_size());
        check_ids(target, vocab_size());
        TokenSeq ctx(prefix.begin(), prefix.end());
        double total = 0.0;
        for (TokenId t : target) {
            total -= log_prob(ctx, t);
            ctx.push_back(t);
        }
        return total / static_cast<double>(target.size());
    }

    /// Whitespace split; runs of whitespace collapse, unknown words become `<unk>`.
    TokenSeq tokenize(std::string_view text) const {
        TokenSeq ids;
        for_each_word(text, [&](std::string_view w) { ids.push_back(vocab_.lookup(w).value_or(kUnk)); });
        return ids;
    }

    std::string detokenize(std::span<const TokenId> ids) const {
        check_ids(ids, vocab_size());
        std::string out;
        for (std::size_t i = 0; i < ids.size(); ++i) {
            if (i != 0) out.push_back(' ');
            out += vocab_.surface(ids[i]);
        }
        return out;
    }

private:
    struct Row {
        std::uint64_t total = 0;
        std::unordered_map<TokenId, std::uint64_t> next;
    };

    static std::string key(std::span<const TokenId> history) {
        std::string k(history.size() * sizeof(TokenId), '\0');
        if (!history.empty()) std::memcpy(k.data(), history.data(), k.size());
        return k;
    }

    template <class F>
    static void for_each_word(std::string_view text, F&& f) {
        auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; };
        std::size_t i = 0;
        while (i < text.size()) {
            while (i < text.size() && is_space(text[i])) ++i;
            std::size_t j = i;
            while (j < text.size() && !is_space(text[j])) ++j;
            if (j > i) f(text.substr(i, j - i));
            i = j;
        }
    }

    const Row* find_row(std::span<const TokenId> ctx) const {
        const std::size_t h = std::min(ctx.size(), static_cast<std::size_t>(order_ - 1));
        const auto& table = rows_[h];
        auto it = table.find(key(ctx.last(h)));
        return it == table.end() ? nullptr : &it->second;
    }

    int order_ = 1;
    double delta_ = 1.0;
    Vocabulary vocab_;
    std::vector<std::unordered_map<std::string, Row>> rows_;
};

static_assert(LanguageModel<NgramModel>);

}  // namespace dbs
