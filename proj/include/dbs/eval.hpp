// Copyright (C) 2026 The dbs Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <ostream>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "dbs/beam.hpp"
#include "dbs/embeddings.hpp"
#include "dbs/error.hpp"
#include "dbs/lm.hpp"
#include "dbs/random.hpp"
#include "dbs/scoring.hpp"

namespace dbs {

/// One word per line; blank lines and surrounding whitespace dropped.
inline std::vector<std::string> read_word_list(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open word list: " + path);
    std::vector<std::string> words;
    std::string line;
    while (std::getline(in, line)) {
        const auto b = line.find_first_not_of(" \t\r\n");
        if (b == std::string::npos) continue;
        const auto e = line.find_last_not_of(" \t\r\n");
        words.push_back(line.substr(b, e - b + 1));
    }
    return words;
}

struct KeywordSet {
    std::vector<std::string> words;
    /// 0-based positions of `words` in the source list.
    std::vector<std::size_t> source_indices;
};

/// Keyword sets for the keyword-to-phrase task: drop the 500 most common
/// words, drop stop words, then draw `count` sets independently (so a word
/// may recur across sets). Words within one set are distinct.
inline std::vector<KeywordSet> build_keyword_sets(std::span<const std::string> word_list,
                                                  std::span<const std::string> stop_words, std::size_t count,
                                                  std::uint64_t seed, std::size_t set_size = 5) {
    constexpr std::size_t kSkip = 500;
    constexpr std::size_t kListSize = 1000;
    if (word_list.size() < kListSize) {
        throw InvalidInput("word list has " + std::to_string(word_list.size()) + " entries, need " +
                           std::to_string(kListSize));
    }
    auto lower = [](std::string s) {
        std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
        return s;
    };
    std::set<std::string> stops;
    for (const auto& w : stop_words) stops.insert(lower(w));

    std::vector<std::size_t> pool;
    for (std::size_t i = kSkip; i < kListSize; ++i) {
        if (stops.count(lower(word_list[i])) == 0) pool.push_back(i);
    }
    if (pool.size() < set_size) throw InvalidInput("too few candidate keywords after filtering");

    std::vector<KeywordSet> sets;
    sets.reserve(count);
    for (std::size_t n = 0; n < count; ++n) {
        RngStream rng = RngStream::derive(seed, n, 0, 0);
        std::vector<std::size_t> avail = pool;
        KeywordSet ks;
        for (std::size_t j = 0; j < set_size; ++j) {
            const std::size_t pick = rng.below(avail.size());
            ks.source_indices.push_back(avail[pick]);
            ks.words.push_back(word_list[avail[pick]]);
            avail.erase(avail.begin() + static_cast<std::ptrdiff_t>(pick));
        }
        sets.push_back(std::move(ks));
    }
    return sets;
}

/// Fraction of keywords whose stem occurs in `text`.
inline double success_rate(std::string_view text, std::span<const std::string> keywords) {
    if (keywords.empty()) throw InvalidInput("success_rate: no keywords");
    std::size_t hit = 0;
    for (const auto& k : keywords) hit += contains_stem(text, k) ? 1 : 0;
    return static_cast<double>(hit) / static_cast<double>(keywords.size());
}

/// `prefix_texts[t]` is the generated text after t + 1 tokens. Returns the
/// first 1-based token count at which every keyword has occurred, or the
/// total token count if that never happens.
inline std::size_t success_length(std::span<const std::string> prefix_texts, std::span<const std::string> keywords) {
    if (keywords.empty()) return 0;
    std::vector<bool> seen(keywords.size(), false);
    std::size_t outstanding = keywords.size();
    for (std::size_t t = 0; t < prefix_texts.size(); ++t) {
        for (std::size_t j = 0; j < keywords.size(); ++j) {
            if (!seen[j] && contains_stem(prefix_texts[t], keywords[j])) {
                seen[j] = true;
                --outstanding;
            }
        }
        if (outstanding == 0) return t + 1;
    }
    return prefix_texts.size();
}

/// Detokenized prefixes of `tokens`, one per length 1..n.
template <LanguageModel M>
std::vector<std::string> prefix_texts(const M& lm, std::span<const TokenId> tokens) {
    std::vector<std::string> out;
    out.reserve(tokens.size());
    for (std::size_t t = 1; t <= tokens.size(); ++t) out.push_back(lm.detokenize(tokens.first(t)));
    return out;
}

/// exp(mean NLL) of `generated_text` under `evaluator`, conditioned on `context_text`.
template <LanguageModel M>
double eval_perplexity(const M& evaluator, std::string_view context_text, std::string_view generated_text) {
    const TokenSeq target = evaluator.tokenize(generated_text);
    if (target.empty()) throw InvalidInput("eval_perplexity: empty text");
    const TokenSeq prefix = evaluator.tokenize(context_text);
    return std::exp(evaluator.sequence_nll(prefix, target));
}

struct EvalMetrics {
    double success_rate = 0.0;
    double perplexity = 0.0;
    std::size_t success_length = 0;
};

struct SweepGrid {
    std::vector<double> lambdas{20.0};
    std::vector<std::size_t> bs{7};
    std::vector<std::size_t> ss{10};
    std::vector<std::size_t> ks{5};
    std::size_t repetitions = 1;
    std::uint64_t seed = 0;

    void validate() const {
        if (lambdas.empty() || bs.empty() || ss.empty() || ks.empty()) throw InvalidInput("sweep grid has an empty axis");
        if (repetitions < 1) throw InvalidInput("repetitions must be >= 1");
    }
};

struct RunRecord {
    double lambda = 0.0;
    std::size_t b = 0, s = 0, k = 0;
    std::size_t set_id = 0;
    std::size_t rep = 0;
    std::uint64_t seed = 0;
    std::vector<std::string> keywords;
    EvalMetrics metrics;
    double seconds = 0.0;
    std::size_t satisfied = 0;
    std::optional<std::size_t> tokens_to_satisfaction;
    std::string text;
    std::string error;  ///< non-empty when the run failed

    bool ok() const noexcept { return error.empty(); }
};

struct AggregateRecord {
    double lambda = 0.0;
    std::size_t b = 0, s = 0, k = 0;
    std::size_t runs = 0;
    std::size_t failures = 0;
    double success_rate = 0.0;
    double perplexity = 0.0;
    double success_length = 0.0;
    double seconds = 0.0;
};

struct SweepResult {
    std::vector<RunRecord> rows;
    std::vector<AggregateRecord> aggregates;
};

/// Seed of one run: shared by every grid point so points are compared on
/// common random numbers.
inline std::uint64_t run_seed(std::uint64_t master, std::size_t set_id, std::size_t rep) {
    return RngStream::derive(master, set_id, rep, 0x5EED).next_u64();
}

/// Generates once per (grid point, repetition, keyword set) and scores each
/// output. A failing run is recorded and the sweep continues.
template <LanguageModel G, LanguageModel E>
SweepResult run_sweep(const SweepGrid& grid, const G& generator, const EmbeddingTable* embeddings, const E& evaluator,
                      std::span<const KeywordSet> sets, std::string_view context, const GuidanceConfig& base_guidance,
                      const SamplingConfig& base_sampling, const QualityConfig& quality, EngineOptions options = {}) {
    grid.validate();
    if (embeddings != nullptr && !options.similarity_cache) {
        options.similarity_cache = std::make_shared<SimilarityCache>(generator.vocabulary(), *embeddings);
    }
    SweepResult out;
    for (double lambda : grid.lambdas) {
        for (std::size_t b : grid.bs) {
            for (std::size_t s : grid.ss) {
                for (std::size_t k : grid.ks) {
                    AggregateRecord agg{lambda, b, s, k};
                    for (std::size_t rep = 0; rep < grid.repetitions; ++rep) {
                        for (std::size_t set_id = 0; set_id < sets.size(); ++set_id) {
                            RunRecord row;
                            row.lambda = lambda;
                            row.b = b;
                            row.s = s;
                            row.k = k;
                            row.set_id = set_id;
                            row.rep = rep;
                            row.seed = run_seed(grid.seed, set_id, rep);
                            row.keywords = sets[set_id].words;
                            try {
                                GuidanceConfig g = base_guidance;
                                g.guide_words = row.keywords;
                                g.lambda = lambda;
                                g.b = b;
                                g.s = s;
                                g.k = k;
                                SamplingConfig sc = base_sampling;
                                sc.seed = row.seed;
                                const auto t0 = std::chrono::steady_clock::now();
                                DirectedBeamSearch<G> engine(generator, embeddings, g, sc, quality, options);
                                GenerationResult res = engine.generate(context);
                                row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
                                row.text = res.text;
                                row.satisfied = res.satisfied;
                                row.tokens_to_satisfaction = res.tokens_to_satisfaction;
                                row.metrics.success_rate = success_rate(res.text, row.keywords);
                                row.metrics.perplexity = eval_perplexity(evaluator, context, res.text);
                                const auto prefixes = prefix_texts(generator, res.best_beam.tokens);
                                row.metrics.success_length = success_length(prefixes, row.keywords);
                            } catch (const std::exception& e) {
                                row.error = e.what();
                                if (row.error.empty()) row.error = "unknown error";
                            }
                            if (row.ok()) {
                                ++agg.runs;
                                agg.success_rate += row.metrics.success_rate;
                                agg.perplexity += row.metrics.perplexity;
                                agg.success_length += static_cast<double>(row.metrics.success_length);
                                agg.seconds += row.seconds;
                            } else {
                                ++agg.failures;
                            }
                            out.rows.push_back(std::move(row));
                        }
                    }
                    if (agg.runs > 0) {
                        const double n = static_cast<double>(agg.runs);
                        agg.success_rate /= n;
                        agg.perplexity /= n;
                        agg.success_length /= n;
                        agg.seconds /= n;
                    } else {
                        agg.success_rate = agg.perplexity = agg.success_length = agg.seconds =
                            std::numeric_limits<double>::quiet_NaN();
                    }
                    out.aggregates.push_back(agg);
                }
            }
        }
    }
    return out;
}

inline constexpr std::string_view kResultsCsvHeader =
    "lambda,b,s,k,set_id,success_rate,perplexity,success_length,seconds";

namespace detail {

inline std::string fmt_double(double x) {
    if (std::isnan(x)) return "nan";
    std::ostringstream os;
    os << std::setprecision(17) << x;
    return os.str();
}

}  // namespace detail

/// Per-run rows (failed runs omitted), then one row per grid point with
/// set_id "mean" holding the mean over that point's successful runs.
inline void write_results_csv(std::ostream& os, const SweepResult& result) {
    using detail::fmt_double;
    os << kResultsCsvHeader << '\n';
    for (const auto& r : result.rows) {
        if (!r.ok()) continue;
        os << fmt_double(r.lambda) << ',' << r.b << ',' << r.s << ',' << r.k << ',' << r.set_id << ','
           << fmt_double(r.metrics.success_rate) << ',' << fmt_double(r.metrics.perplexity) << ','
           << r.metrics.success_length << ',' << fmt_double(r.seconds) << '\n';
    }
    for (const auto& a : result.aggregates) {
        os << fmt_double(a.lambda) << ',' << a.b << ',' << a.s << ',' << a.k << ",mean," << fmt_double(a.success_rate)
           << ',' << fmt_double(a.perplexity) << ',' << fmt_double(a.success_length) << ',' << fmt_double(a.seconds)
           << '\n';
    }
}

inline nlohmann::json to_json(const RunRecord& r) {
    nlohmann::json j{{"lambda", r.lambda},   {"b", r.b},       {"s", r.s},
                     {"k", r.k},             {"set_id", r.set_id}, {"rep", r.rep},
                     {"seed", r.seed},       {"keywords", r.keywords}, {"seconds", r.seconds},
                     {"satisfied", r.satisfied}, {"text", r.text}};
    if (r.ok()) {
        j["success_rate"] = r.metrics.success_rate;
        j["perplexity"] = r.metrics.perplexity;
        j["success_length"] = r.metrics.success_length;
    } else {
        j["error"] = r.error;
    }
    j["tokens_to_satisfaction"] = r.tokens_to_satisfaction ? nlohmann::json(*r.tokens_to_satisfaction) : nlohmann::json();
    return j;
}

/// One run per line; `config` (the effective run configuration) is attached to each.
inline void write_results_jsonl(std::ostream& os, const SweepResult& result, const nlohmann::json& config = {}) {
    for (const auto& r : result.rows) {
        nlohmann::json j = to_json(r);
        if (!config.is_null()) j["config"] = config;
        os << j.dump() << '\n';
    }
}

inline nlohmann::json to_json(const TraceRecord& t) {
    return {{"step", t.step},
            {"parent", t.parent},
            {"candidate", t.candidate},
            {"guide_index", t.guide_index},
            {"c", t.occurrences},
            {"pp", t.perplexity},
            {"q", t.quality},
            {"cumulative_q", t.cumulative_q},
            {"survived", t.survived}};
}

}  // namespace dbs
