// Copyright (C) 2026 The dbs Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "dbs/eval.hpp"
#include "dbs/ngram.hpp"
#include "test_support.hpp"

namespace dbs {
namespace {

const std::vector<std::string>& word_list() {
    static const auto w = read_word_list(testing::source_path("data/wordlist_1000.txt"));
    return w;
}
const std::vector<std::string>& stop_words() {
    static const auto w = read_word_list(testing::source_path("data/stopwords_en.txt"));
    return w;
}

TEST(KeywordSets, DefaultProtocol) {
    ASSERT_EQ(word_list().size(), 1000u);
    const auto sets = build_keyword_sets(word_list(), stop_words(), 50, 0);
    ASSERT_EQ(sets.size(), 50u);
    std::set<std::string> stops;
    for (const auto& s : stop_words()) stops.insert(s);
    for (const auto& ks : sets) {
        ASSERT_EQ(ks.words.size(), 5u);
        EXPECT_EQ(std::set<std::string>(ks.words.begin(), ks.words.end()).size(), 5u);
        for (std::size_t j = 0; j < 5; ++j) {
            EXPECT_GE(ks.source_indices[j], 500u);
            EXPECT_LT(ks.source_indices[j], 1000u);
            EXPECT_EQ(word_list()[ks.source_indices[j]], ks.words[j]);
            EXPECT_EQ(stops.count(ks.words[j]), 0u) << ks.words[j];
        }
    }
    // Reproducible; a different seed gives different sets.
    const auto again = build_keyword_sets(word_list(), stop_words(), 50, 0);
    const auto other = build_keyword_sets(word_list(), stop_words(), 50, 1);
    bool differs = false;
    for (std::size_t i = 0; i < sets.size(); ++i) {
        EXPECT_EQ(sets[i].words, again[i].words);
        differs |= sets[i].words != other[i].words;
    }
    EXPECT_TRUE(differs);
}

TEST(KeywordSets, CountAndErrors) {
    EXPECT_EQ(build_keyword_sets(word_list(), stop_words(), 1, 3).size(), 1u);
    const std::vector<std::string> short_list(word_list().begin(), word_list().begin() + 400);
    EXPECT_THROW(build_keyword_sets(short_list, stop_words(), 5, 0), InvalidInput);
}

TEST(KeywordSets, StopWordsFilteredCaseInsensitively) {
    std::vector<std::string> list(1000, "alpha");
    for (std::size_t i = 500; i < 1000; ++i) list[i] = i % 2 ? "The" : "w" + std::to_string(i);
    const std::vector<std::string> stops{"the"};
    for (const auto& ks : build_keyword_sets(list, stops, 20, 4)) {
        for (const auto& w : ks.words) EXPECT_NE(w, "The");
    }
}

const std::vector<std::string> kTable1Keywords{"enemy", "speed", "meet", "colony", "mouth"};
constexpr std::string_view kTable1Text =
    "It is the enemy that is the real problem. The speed with which we meet it in the colonies will determine "
    "the fate of the planet.\" A mouthful of spit echoed around the room.";

TEST(SuccessRate, Examples) {
    EXPECT_EQ(success_rate(kTable1Text, kTable1Keywords), 1.0);
    EXPECT_EQ(success_rate("nothing relevant here", kTable1Keywords), 0.0);
    EXPECT_EQ(success_rate("the Enemies meeting", kTable1Keywords), 0.4);
    EXPECT_THROW(success_rate("x", {}), InvalidInput);
}

std::vector<std::string> prefixes_of(const std::vector<std::string>& tokens) {
    std::vector<std::string> out;
    std::string s;
    for (const auto& t : tokens) {
        s += (s.empty() ? "" : " ") + t;
        out.push_back(s);
    }
    return out;
}

TEST(SuccessLength, Examples) {
    std::vector<std::string> toks(90, "filler");
    toks[9] = "enemy";
    toks[39] = "speed";
    const std::vector<std::string> kws{"enemy", "speed"};
    EXPECT_EQ(success_length(prefixes_of(toks), kws), 40u);
    const std::vector<std::string> missing{"enemy", "speed", "mouth"};
    EXPECT_EQ(success_length(prefixes_of(toks), missing), 90u);
    EXPECT_EQ(success_length(prefixes_of(toks), {}), 0u);
}

TEST(EvalPerplexity, Examples) {
    const testing::UniformModel u(50);
    EXPECT_NEAR(eval_perplexity(u, "w1 w2", "w3 w4 w5"), 50.0, 1e-9);

    const auto lm = NgramModel::train_file(testing::source_path("data/corpus.txt"), 2, 0.001);
    const std::string gen = "not so , my lord";
    EXPECT_NEAR(eval_perplexity(lm, "It is", gen),
                chunk_perplexity(lm, lm.tokenize("It is"), lm.tokenize(gen)), 1e-12);

    std::string pattern;
    for (int i = 0; i < 200; ++i) pattern += "la ";
    const auto la = NgramModel::train(pattern, 2, 0.001);
    EXPECT_LT(eval_perplexity(la, "la", "la la la la la la"), 1.01);
    EXPECT_THROW(eval_perplexity(la, "la", ""), InvalidInput);
}

class SweepTest : public ::testing::Test {
protected:
    static const NgramModel& lm() {
        static const auto m = NgramModel::train_file(testing::source_path("data/corpus.txt"), 2, 0.001);
        return m;
    }
    static const EmbeddingTable& emb() {
        static const auto e = stem_cluster_embeddings(lm().vocabulary(), 64, 1);
        return e;
    }
    static std::vector<KeywordSet> sets() {
        return {KeywordSet{{"king", "love", "night"}, {}}, KeywordSet{{"sword", "heart", "death"}, {}}};
    }
    static GuidanceConfig base() {
        GuidanceConfig g;
        g.max_tokens = 20;
        return g;
    }
};

TEST_F(SweepTest, ShapeAndMeans) {
    SweepGrid grid;
    grid.lambdas = {10};
    grid.bs = {2};
    grid.ss = {2};
    grid.ks = {5};
    const auto kws = sets();
    const auto r = run_sweep(grid, lm(), &emb(), lm(), kws, "It is", base(), SamplingConfig{}, QualityConfig{});
    ASSERT_EQ(r.rows.size(), 2u);
    ASSERT_EQ(r.aggregates.size(), 1u);
    double sr = 0, pp = 0, sl = 0;
    for (const auto& row : r.rows) {
        ASSERT_TRUE(row.ok()) << row.error;
        EXPECT_EQ(row.metrics.success_rate, success_rate(row.text, row.keywords));
        // The engine only credits keywords in guide order, so its counters
        // are bounds on the order-free metrics.
        EXPECT_GE(row.metrics.success_rate, static_cast<double>(row.satisfied) / 3.0);
        EXPECT_LE(row.metrics.success_length, 20u);
        if (row.tokens_to_satisfaction) EXPECT_LE(row.metrics.success_length, *row.tokens_to_satisfaction);
        if (row.metrics.success_rate < 1.0) EXPECT_EQ(row.metrics.success_length, 20u);
        sr += row.metrics.success_rate;
        pp += row.metrics.perplexity;
        sl += static_cast<double>(row.metrics.success_length);
    }
    EXPECT_DOUBLE_EQ(r.aggregates[0].success_rate, sr / 2);
    EXPECT_DOUBLE_EQ(r.aggregates[0].perplexity, pp / 2);
    EXPECT_DOUBLE_EQ(r.aggregates[0].success_length, sl / 2);

    std::ostringstream csv;
    write_results_csv(csv, r);
    std::istringstream lines(csv.str());
    std::string line;
    std::vector<std::string> all;
    while (std::getline(lines, line)) all.push_back(line);
    ASSERT_EQ(all.size(), 4u);
    EXPECT_EQ(all[0], kResultsCsvHeader);
    EXPECT_EQ(all[3].substr(0, all[3].find(",mean,")), "10,2,2,5");

    std::ostringstream jsonl;
    write_results_jsonl(jsonl, r, nlohmann::json{{"context", "It is"}});
    std::istringstream jl(jsonl.str());
    int n = 0;
    while (std::getline(jl, line)) {
        const auto j = nlohmann::json::parse(line);
        EXPECT_EQ(j.at("config").at("context"), "It is");
        EXPECT_TRUE(j.at("text").is_string());
        ++n;
    }
    EXPECT_EQ(n, 2);
}

TEST_F(SweepTest, DeterministicGivenSeedAndRepetitionsMultiplyRows) {
    SweepGrid grid;
    grid.lambdas = {5, 20};
    grid.bs = {1};
    grid.ss = {2};
    grid.ks = {5};
    grid.repetitions = 3;
    grid.seed = 12;
    const auto kws = sets();
    const auto a = run_sweep(grid, lm(), &emb(), lm(), kws, "It is", base(), SamplingConfig{}, QualityConfig{});
    const auto b = run_sweep(grid, lm(), &emb(), lm(), kws, "It is", base(), SamplingConfig{}, QualityConfig{});
    ASSERT_EQ(a.rows.size(), 2u * 3u * 2u);
    EXPECT_EQ(a.aggregates.size(), 2u);
    for (std::size_t i = 0; i < a.rows.size(); ++i) {
        EXPECT_EQ(a.rows[i].text, b.rows[i].text);
        EXPECT_EQ(a.rows[i].seed, b.rows[i].seed);
    }
    // Repetitions use different seeds.
    EXPECT_NE(a.rows[0].seed, a.rows[2].seed);
}

TEST_F(SweepTest, FailingRunIsRecordedAndSweepContinues) {
    SweepGrid grid;
    grid.lambdas = {10};
    grid.bs = {1};
    grid.ss = {1};
    grid.ks = {5};
    std::vector<KeywordSet> kws{KeywordSet{{"two words"}, {}}, KeywordSet{{"king"}, {}}};
    const auto r = run_sweep(grid, lm(), &emb(), lm(), kws, "It is", base(), SamplingConfig{}, QualityConfig{});
    ASSERT_EQ(r.rows.size(), 2u);
    EXPECT_FALSE(r.rows[0].ok());
    EXPECT_TRUE(r.rows[1].ok());
    EXPECT_EQ(r.aggregates[0].runs, 1u);
    EXPECT_EQ(r.aggregates[0].failures, 1u);
    EXPECT_EQ(r.aggregates[0].success_rate, r.rows[1].metrics.success_rate);
    std::ostringstream jsonl;
    write_results_jsonl(jsonl, r);
    EXPECT_NE(jsonl.str().find("\"error\""), std::string::npos);
}

TEST_F(SweepTest, EmptyGridAxisRejected) {
    SweepGrid grid;
    grid.lambdas.clear();
    const auto kws = sets();
    EXPECT_THROW(run_sweep(grid, lm(), &emb(), lm(), kws, "It is", base(), SamplingConfig{}, QualityConfig{}),
                 InvalidInput);
}

TEST_F(SweepTest, SteeringRaisesSuccessRate) {
    SweepGrid grid;
    grid.lambdas = {0, 40};
    grid.bs = {3};
    grid.ss = {3};
    grid.ks = {5};
    std::vector<KeywordSet> kws{KeywordSet{{"king", "night", "sword"}, {}}, KeywordSet{{"heart", "death", "crown"}, {}},
                                KeywordSet{{"queen", "blood", "war"}, {}}};
    auto g = base();
    g.max_tokens = 40;
    const auto r = run_sweep(grid, lm(), &emb(), lm(), kws, "It is", g, SamplingConfig{}, QualityConfig{});
    ASSERT_EQ(r.aggregates.size(), 2u);
    EXPECT_LT(r.aggregates[0].success_rate, r.aggregates[1].success_rate);
}

TEST(ReadWordList, Errors) { EXPECT_THROW(read_word_list("/nonexistent/list.txt"), IoError); }

}  // namespace
}  // namespace dbs
