// Copyright (C) 2026 The dbs Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "dbs/embeddings.hpp"
#include "dbs/error.hpp"
#include "dbs/lm.hpp"
#include "dbs/random.hpp"

namespace dbs {

enum class SamplingMode { stochastic, greedy };

struct SamplingConfig {
    double top_p = 0.9;
    double temperature = 1.0;
    std::uint64_t seed = 0;
    /// Greedy ignores top_p and seed; it exists for exact, enumerable tests.
    SamplingMode mode = SamplingMode::stochastic;

    void validate() const {
        if (!(top_p > 0.0 && top_p <= 1.0)) throw InvalidInput("top_p must be in (0, 1]");
        if (!(temperature > 0.0) || !std::isfinite(temperature)) throw InvalidInput("temperature must be > 0");
    }
};

/// Probability vector over the vocabulary.
struct Distribution {
    std::vector<double> probs;

    std::vector<TokenId> support() const {
        std::vector<TokenId> s;
        for (TokenId i = 0; i < probs.size(); ++i) {
            if (probs[i] > 0.0) s.push_back(i);
        }
        return s;
    }
};

/// l'_i = l_i + lambda * sim_i.
inline LogitVector modify_logits(std::span<const double> logits, const SimilarityTable& sim, double lambda) {
    if (logits.size() != sim.entries.size()) throw InvalidInput("modify_logits: length mismatch");
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw InvalidInput("modify_logits: lambda must be >= 0");
    LogitVector out(logits.begin(), logits.end());
    if (lambda == 0.0) return out;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += lambda * sim.entries[i];
    return out;
}

inline Distribution softmax(std::span<const double> logits, double temperature = 1.0) {
    if (!(temperature > 0.0)) throw InvalidInput("softmax: temperature must be > 0");
    Distribution d;
    d.probs.resize(logits.size());
    if (logits.empty()) return d;
    const double hi = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        d.probs[i] = std::exp((logits[i] - hi) / temperature);
        sum += d.probs[i];
    }
    for (double& p : d.probs) p /= sum;
    return d;
}

/// Keeps the shortest run of tokens, ordered by probability descending and
/// then id ascending, whose mass reaches `p`; renormalizes over that run.
inline Distribution nucleus_filter(const Distribution& d, double p) {
    if (!(p > 0.0 && p <= 1.0)) throw InvalidInput("nucleus_filter: p must be in (0, 1]");
    if (p == 1.0) return d;

    std::vector<TokenId> order;
    order.reserve(d.probs.size());
    for (TokenId i = 0; i < d.probs.size(); ++i) {
        if (d.probs[i] > 0.0) order.push_back(i);
    }
    auto before = [&](TokenId a, TokenId b) {
        return d.probs[a] != d.probs[b] ? d.probs[a] > d.probs[b] : a < b;
    };

    // Grow a sorted prefix until it covers p; avoids sorting the whole tail.
    std::size_t sorted = 0;
    std::size_t keep = order.size();
    double cum = 0.0;
    for (std::size_t want = 64;; want *= 4) {
        const std::size_t upto = std::min(want, order.size());
        std::partial_sort(order.begin() + static_cast<std::ptrdiff_t>(sorted),
                          order.begin() + static_cast<std::ptrdiff_t>(upto), order.end(), before);
        for (std::size_t i = sorted; i < upto; ++i) {
            cum += d.probs[order[i]];
            if (cum >= p) {
                keep = i + 1;
                break;
            }
        }
        sorted = upto;
        if (keep != order.size() || upto == order.size()) break;
    }

    Distribution out;
    out.probs.assign(d.probs.size(), 0.0);
    double mass = 0.0;
    for (std::size_t i = 0; i < keep; ++i) mass += d.probs[order[i]];
    for (std::size_t i = 0; i < keep; ++i) out.probs[order[i]] = d.probs[order[i]] / mass;
    return out;
}

/// Argmax; ties go to the lowest id.
inline TokenId argmax_token(std::span<const double> values) {
    if (values.empty()) throw InvalidInput("argmax over empty vector");
    return static_cast<TokenId>(std::max_element(values.begin(), values.end()) - values.begin());
}

/// Inverse-CDF draw in ascending id order (stochastic) or argmax (greedy).
inline TokenId sample_token(const Distribution& d, RngStream& rng, SamplingMode mode = SamplingMode::stochastic) {
    if (d.probs.empty()) throw InvalidInput("sample_token: empty distribution");
    if (mode == SamplingMode::greedy) return argmax_token(d.probs);
    const double total = std::accumulate(d.probs.begin(), d.probs.end(), 0.0);
    const double u = rng.uniform() * total;
    double cum = 0.0;
    TokenId last = 0;
    for (TokenId i = 0; i < d.probs.size(); ++i) {
        if (d.probs[i] <= 0.0) continue;
        cum += d.probs[i];
        last = i;
        if (u < cum) return i;
    }
    return last;
}

/// Logits to token under `cfg`: temperature softmax, then nucleus filtering
/// and a draw, or argmax in greedy mode.
inline TokenId sample_from_logits(std::span<const double> logits, const SamplingConfig& cfg, RngStream& rng) {
    if (cfg.mode == SamplingMode::greedy) return argmax_token(logits);
    return sample_token(nucleus_filter(softmax(logits, cfg.temperature), cfg.top_p), rng, cfg.mode);
}

}  // namespace dbs
