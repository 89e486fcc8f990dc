// Copyright (C) 2026 The dbs Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <atomic>
#include <exception>
#include <functional>
#include <memory>
#include <mutex>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "dbs/embeddings.hpp"
#include "dbs/error.hpp"
#include "dbs/lm.hpp"
#include "dbs/random.hpp"
#include "dbs/sampling.hpp"
#include "dbs/scoring.hpp"
#include "dbs/stem.hpp"

namespace dbs {

struct GuidanceConfig {
    /// Ordered; guidance targets one word at a time.
    std::vector<std::string> guide_words;
    double lambda = 20.0;
    std::size_t k = 5;           ///< tokens per chunk
    std::size_t b = 7;           ///< surviving beams
    std::size_t s = 10;          ///< candidates per beam per step
    std::size_t max_tokens = 90;

    void validate() const {
        if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw InvalidInput("lambda must be >= 0");
        if (k < 1) throw InvalidInput("k must be >= 1");
        if (b < 1) throw InvalidInput("b must be >= 1");
        if (s < 1) throw InvalidInput("s must be >= 1");
        if (max_tokens < k) throw InvalidInput("max_tokens must be >= k");
        for (const auto& w : guide_words) checked_guide_word(w);
    }
};

/// One hypothesis: generated tokens (context excluded) and their scoring history.
struct Beam {
    TokenSeq tokens;
    std::vector<Chunk> chunks;
    double cumulative_q = 0.0;
    std::size_t guide_index = 0;
    bool guidance_active = true;
    OccurrenceScanState scan;
    /// found_at[j]: generated-token count at which guide word j was first matched.
    std::vector<std::size_t> found_at;
};

/// One scored candidate of one step.
struct TraceRecord {
    std::size_t step = 0;
    std::size_t parent = 0;
    std::size_t candidate = 0;
    std::size_t guide_index = 0;  ///< after the chunk
    int occurrences = 0;
    double perplexity = 0.0;
    double quality = 0.0;
    double cumulative_q = 0.0;
    bool survived = false;
};

struct GenerationResult {
    TokenSeq context;
    Beam best_beam;
    std::size_t best_index = 0;
    std::vector<Beam> final_beams;
    std::string text;  ///< detokenized best beam
    std::size_t satisfied = 0;
    /// Generated-token count at which the last guide word was matched; 0 with no guides.
    std::optional<std::size_t> tokens_to_satisfaction;
};

struct EngineOptions {
    /// 0 picks std::thread::hardware_concurrency(). Serial backends always use 1.
    std::size_t workers = 0;
    std::function<void(const TraceRecord&)> trace;
    /// Shared across engines to reuse similarity tables; one is created if null.
    std::shared_ptr<SimilarityCache> similarity_cache;
};

/// Directed beam search over any LanguageModel.
///
/// Each beam grows in chunks of k tokens. While a beam's current guide word
/// has not appeared in the chunk, logits are shifted by lambda times that
/// word's similarity table; the first match switches guidance off for the
/// rest of the chunk, and at the chunk end the beam moves on to the next
/// guide word. Candidates are ranked by the sum of their chunk quality scores.
template <LanguageModel M>
class DirectedBeamSearch {
public:
    DirectedBeamSearch(const M& lm, const EmbeddingTable* embeddings, GuidanceConfig guidance,
                       SamplingConfig sampling = {}, QualityConfig quality = {}, EngineOptions options = {})
        : lm_(&lm),
          guidance_(std::move(guidance)),
          sampling_(sampling),
          quality_(quality),
          options_(std::move(options)) {
        guidance_.validate();
        sampling_.validate();
        quality_.validate();
        if (!guidance_.guide_words.empty()) {
            if (embeddings == nullptr) throw InvalidInput("guide words given but no embeddings loaded");
            if (!options_.similarity_cache) {
                options_.similarity_cache = std::make_shared<SimilarityCache>(lm.vocabulary(), *embeddings);
            }
        }
        for (const auto& w : guidance_.guide_words) {
            auto sim = options_.similarity_cache->get(w);
            if (sim->entries.size() != lm.vocab_size()) throw InvalidInput("similarity table built for another vocabulary");
            if (!sim->guide_found) warnings_.push_back("guide word '" + w + "' has no embedding; it is not steered");
            guide_stems_.push_back(porter_stem(sim->guide_word));
            sims_.push_back(std::move(sim));
        }
    }

    const GuidanceConfig& guidance() const noexcept { return guidance_; }
    const SamplingConfig& sampling() const noexcept { return sampling_; }
    const QualityConfig& quality() const noexcept { return quality_; }
    const std::vector<std::string>& warnings() const noexcept { return warnings_; }
    std::size_t guide_count() const noexcept { return sims_.size(); }

    /// Extends `beam` by `len` tokens and scores the new chunk.
    Chunk generate_chunk(std::span<const TokenId> context, Beam& beam, std::size_t len, RngStream& rng) const {
        const std::size_t n = sims_.size();
        if (beam.guide_index < n) beam.guidance_active = true;

        TokenSeq ctx(context.begin(), context.end());
        ctx.insert(ctx.end(), beam.tokens.begin(), beam.tokens.end());
        const std::size_t prefix_len = ctx.size();

        Chunk chunk;
        chunk.tokens.reserve(len);
        for (std::size_t pos = 0; pos < len; ++pos) {
            LogitVector logits = lm_->next_logits(ctx);
            if (beam.guidance_active && beam.guide_index < n && guidance_.lambda > 0.0) {
                logits = modify_logits(logits, *sims_[beam.guide_index], guidance_.lambda);
            }
            const TokenId tok = sample_from_logits(logits, sampling_, rng);
            ctx.push_back(tok);
            chunk.tokens.push_back(tok);
            beam.tokens.push_back(tok);

            if (beam.guide_index < n) {
                const std::string text = lm_->detokenize(beam.tokens);
                const OccurrenceScan scan =
                    count_new_occurrences(text, beam.scan, guide_stems_[beam.guide_index], /*already_stemmed=*/true);
                beam.scan = scan.state;
                if (scan.count > 0) {
                    if (chunk.occurrences == 0) beam.found_at.push_back(beam.tokens.size());
                    chunk.occurrences += scan.count;
                    beam.guidance_active = false;
                }
            }
        }

        chunk.perplexity =
            chunk_perplexity(*lm_, std::span<const TokenId>(ctx).first(prefix_len), std::span<const TokenId>(chunk.tokens));
        chunk.quality = quality_score(chunk.occurrences, chunk.perplexity, quality_);
        if (chunk.occurrences > 0) ++beam.guide_index;
        beam.guidance_active = beam.guide_index < n;
        beam.chunks.push_back(chunk);
        beam.cumulative_q += chunk.quality;
        return chunk;
    }

    /// First expansion: b independent chunks grown from the bare context.
    std::vector<Beam> initialize(std::span<const TokenId> context, std::size_t len) const {
        std::vector<Beam> beams(guidance_.b);
        parallel_for(beams.size(), [&](std::size_t i) {
            RngStream rng = RngStream::derive(sampling_.seed, 0, i, 0);
            generate_chunk(context, beams[i], len, rng);
        });
        if (options_.trace) {
            for (std::size_t i = 0; i < beams.size(); ++i) emit(0, i, 0, beams[i], true);
        }
        return beams;
    }

    /// Expands every beam s times and keeps the best b by cumulative quality
    /// (ties: lower parent index, then lower candidate index).
    std::vector<Beam> step(std::span<const TokenId> context, std::span<const Beam> beams, std::size_t step_index,
                           std::size_t len) const {
        if (beams.empty()) throw InvalidInput("step: no beams");
        const std::size_t s = guidance_.s;
        std::vector<Beam> candidates(beams.size() * s);
        parallel_for(candidates.size(), [&](std::size_t idx) {
            const std::size_t parent = idx / s;
            candidates[idx] = beams[parent];
            RngStream rng = RngStream::derive(sampling_.seed, step_index, parent, idx % s);
            generate_chunk(context, candidates[idx], len, rng);
        });

        std::vector<std::size_t> order(candidates.size());
        std::iota(order.begin(), order.end(), 0);
        // Candidate index idx = parent * s + candidate, so index order is (parent, candidate) order.
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return candidates[a].cumulative_q > candidates[b].cumulative_q;
        });
        const std::size_t keep = std::min(guidance_.b, candidates.size());

        if (options_.trace) {
            std::vector<bool> survived(candidates.size(), false);
            for (std::size_t r = 0; r < keep; ++r) survived[order[r]] = true;
            for (std::size_t idx = 0; idx < candidates.size(); ++idx) {
                emit(step_index, idx / s, idx % s, candidates[idx], survived[idx]);
            }
        }

        std::vector<Beam> next;
        next.reserve(keep);
        for (std::size_t r = 0; r < keep; ++r) next.push_back(std::move(candidates[order[r]]));
        return next;
    }

    GenerationResult generate(std::string_view context_text) const { return generate(lm_->tokenize(context_text)); }

    GenerationResult generate(TokenSeq context) const {
        check_ids(context, lm_->vocab_size());
        const std::size_t k = guidance_.k;
        const std::size_t total = guidance_.max_tokens;

        std::vector<Beam> beams = initialize(context, std::min(k, total));
        std::size_t produced = std::min(k, total);
        for (std::size_t step_index = 1; produced < total; ++step_index) {
            const std::size_t len = std::min(k, total - produced);
            beams = step(context, beams, step_index, len);
            produced += len;
        }

        GenerationResult result;
        result.context = std::move(context);
        std::size_t best = 0;
        for (std::size_t i = 1; i < beams.size(); ++i) {
            if (beams[i].cumulative_q > beams[best].cumulative_q) best = i;
        }
        result.best_index = best;
        result.best_beam = beams[best];
        result.final_beams = std::move(beams);
        result.text = lm_->detokenize(result.best_beam.tokens);
        result.satisfied = result.best_beam.guide_index;
        if (sims_.empty()) {
            result.tokens_to_satisfaction = 0;
        } else if (result.best_beam.guide_index == sims_.size()) {
            result.tokens_to_satisfaction = result.best_beam.found_at.back();
        }
        return result;
    }

private:
    template <class F>
    void parallel_for(std::size_t count, F&& body) const {
        std::size_t workers = options_.workers == 0 ? std::max(1u, std::thread::hardware_concurrency()) : options_.workers;
        if (!lm_->concurrent()) workers = 1;
        workers = std::min(workers, count);
        if (workers <= 1) {
            for (std::size_t i = 0; i < count; ++i) body(i);
            return;
        }
        std::atomic<std::size_t> next{0};
        std::exception_ptr error;
        std::atomic<bool> failed{false};
        std::mutex error_mu;
        {
            std::vector<std::jthread> pool;
            pool.reserve(workers);
            for (std::size_t w = 0; w < workers; ++w) {
                pool.emplace_back([&] {
                    for (std::size_t i = next++; i < count && !failed; i = next++) {
                        try {
                            body(i);
                        } catch (...) {
                            std::lock_guard lock(error_mu);
                            if (!error) error = std::current_exception();
                            failed = true;
                        }
                    }
                });
            }
        }
        if (error) std::rethrow_exception(error);
    }

    void emit(std::size_t step, std::size_t parent, std::size_t candidate, const Beam& beam, bool survived) const {
        const Chunk& c = beam.chunks.back();
        options_.trace(TraceRecord{step, parent, candidate, beam.guide_index, c.occurrences, c.perplexity, c.quality,
                                   beam.cumulative_q, survived});
    }

    const M* lm_;
    GuidanceConfig guidance_;
    SamplingConfig sampling_;
    QualityConfig quality_;
    EngineOptions options_;
    std::vector<std::shared_ptr<const SimilarityTable>> sims_;
    std::vector<std::string> guide_stems_;
    std::vector<std::string> warnings_;
};

}  // namespace dbs
