// Copyright (C) 2026 The dbs Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dbs/error.hpp"

namespace dbs {

using TokenId = std::uint32_t;
using TokenSeq = std::vector<TokenId>;

/// Unnormalized next-token scores on the natural-log scale, one per vocabulary entry.
using LogitVector = std::vector<double>;

/// Bidirectional map between token ids and their surface strings.
class Vocabulary {
public:
    Vocabulary() = default;

    explicit Vocabulary(std::vector<std::string> surfaces) : surfaces_(std::move(surfaces)) {
        lookup_.reserve(surfaces_.size());
        for (TokenId id = 0; id < surfaces_.size(); ++id) {
            // First occurrence wins when a backend lists a surface twice.
            lookup_.emplace(surfaces_[id], id);
        }
    }

    std::size_t size() const noexcept { return surfaces_.size(); }

    const std::string& surface(TokenId id) const {
        if (id >= surfaces_.size()) {
            throw InvalidInput("token id " + std::to_string(id) + " out of range for vocabulary of size " +
                               std::to_string(surfaces_.size()));
        }
        return surfaces_[id];
    }

    std::optional<TokenId> lookup(std::string_view text) const {
        auto it = lookup_.find(std::string(text));
        if (it == lookup_.end()) return std::nullopt;
        return it->second;
    }

    bool contains(TokenId id) const noexcept { return id < surfaces_.size(); }

    /// Appends a surface; returns the existing id if already present.
    TokenId add(std::string surface) {
        auto [it, inserted] = lookup_.emplace(surface, static_cast<TokenId>(surfaces_.size()));
        if (inserted) surfaces_.push_back(std::move(surface));
        return it->second;
    }

private:
    std::vector<std::string> surfaces_;
    std::unordered_map<std::string, TokenId> lookup_;
};

/// What the decoder needs from a language model.
///
/// `next_logits` returns |V| finite logits for the token following `ctx`.
/// `sequence_nll` returns the mean negative log-likelihood (nats/token) of
/// `target` given `prefix`. `concurrent` reports whether const member calls
/// may run from several threads at once.
template <class M>
concept LanguageModel = requires(const M& lm, std::span<const TokenId> ids, std::string_view text) {
    { lm.vocabulary() } -> std::same_as<const Vocabulary&>;
    { lm.vocab_size() } -> std::convertible_to<std::size_t>;
    { lm.next_logits(ids) } -> std::same_as<LogitVector>;
    { lm.tokenize(text) } -> std::same_as<TokenSeq>;
    { lm.detokenize(ids) } -> std::same_as<std::string>;
    { lm.sequence_nll(ids, ids) } -> std::convertible_to<double>;
    { lm.concurrent() } -> std::convertible_to<bool>;
};

inline void check_ids(std::span<const TokenId> ids, std::size_t vocab_size) {
    for (TokenId id : ids) {
        if (id >= vocab_size) {
            throw InvalidInput("token id " + std::to_string(id) + " out of range for vocabulary of size " +
                               std::to_string(vocab_size));
        }
    }
}

/// log(sum(exp(l))) with max subtraction.
inline double log_sum_exp(std::span<const double> logits) {
    if (logits.empty()) return -std::numeric_limits<double>::infinity();
    const double hi = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (double l : logits) sum += std::exp(l - hi);
    return hi + std::log(sum);
}

/// Mean NLL computed from `next_logits` alone. Backends without a cheaper
/// route delegate here.
template <class M>
double nll_from_logits(const M& lm, std::span<const TokenId> prefix, std::span<const TokenId> target) {
    if (target.empty()) throw InvalidInput("sequence_nll: empty target");
    TokenSeq ctx(prefix.begin(), prefix.end());
    ctx.reserve(prefix.size() + target.size());
    double total = 0.0;
    for (TokenId t : target) {
        const LogitVector logits = lm.next_logits(ctx);
        if (t >= logits.size()) throw InvalidInput("sequence_nll: target id out of range");
        total += log_sum_exp(logits) - logits[t];
        ctx.push_back(t);
    }
    return total / static_cast<double>(target.size());
}

}  // namespace dbs
