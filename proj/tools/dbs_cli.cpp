// Copyright (C) 2026 The dbs Authors
// SPDX-License-Identifier: Apache-2.0

// dbs: directed beam search from the command line.
//
//   dbs generate  --corpus data/corpus.txt --synthetic-embeddings --keywords love,death
//   dbs evaluate  ... --wordlist data/wordlist_1000.txt --stopwords data/stopwords_en.txt
//   dbs sweep     ... --lambdas 5,10,15,20,25
//
// Exit status: 0 ok, 2 invalid configuration, 3 backend or protocol failure.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "dbs/dbs.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitBackend = 3;

// Backend construction failed for reasons outside the user's configuration.
struct BackendFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct BackendSpec {
    std::string corpus;
    int order = 2;
    double delta = 0.001;
    std::string bridge_cmd;
    std::string bridge_tcp;
    int timeout_ms = 30000;
    int retries = 2;

    bool empty() const { return corpus.empty() && bridge_cmd.empty() && bridge_tcp.empty(); }

    nlohmann::json to_json() const {
        if (!corpus.empty()) return {{"kind", "ngram"}, {"corpus", corpus}, {"order", order}, {"delta", delta}};
        if (!bridge_cmd.empty()) return {{"kind", "bridge"}, {"command", bridge_cmd}};
        return {{"kind", "bridge"}, {"tcp", bridge_tcp}};
    }
};

struct RunConfig {
    BackendSpec backend;
    BackendSpec evaluator;
    std::string embeddings;
    std::size_t dim = 300;
    bool synthetic_embeddings = false;
    std::string context = "It is";
    std::string keywords;
    dbs::GuidanceConfig guidance;
    dbs::SamplingConfig sampling;
    dbs::QualityConfig quality;
    bool greedy = false;
    std::size_t workers = 0;
    std::string trace;
    // evaluate / sweep
    std::string wordlist;
    std::string stopwords;
    std::size_t sets = 50;
    std::string out_dir = ".";
    std::vector<double> lambdas;
    std::vector<std::size_t> bs, ss, ks;
    std::size_t repeat = 1;

    nlohmann::json to_json() const {
        return {{"backend", backend.to_json()},
                {"evaluator", evaluator.empty() ? nlohmann::json("generator") : evaluator.to_json()},
                {"embeddings", synthetic_embeddings ? std::string("synthetic") : embeddings},
                {"dim", dim},
                {"context", context},
                {"lambda", guidance.lambda},
                {"b", guidance.b},
                {"s", guidance.s},
                {"k", guidance.k},
                {"max_tokens", guidance.max_tokens},
                {"top_p", sampling.top_p},
                {"temperature", sampling.temperature},
                {"seed", sampling.seed},
                {"alpha", quality.alpha},
                {"c_star", quality.c_star},
                {"greedy", greedy}};
    }
};

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream is(s);
    while (std::getline(is, cur, sep)) {
        const auto b = cur.find_first_not_of(" \t");
        if (b == std::string::npos) continue;
        out.push_back(cur.substr(b, cur.find_last_not_of(" \t") - b + 1));
    }
    return out;
}

dbs::BridgeEndpoint endpoint_of(const BackendSpec& spec) {
    dbs::BridgeEndpoint e;
    if (!spec.bridge_cmd.empty()) {
        e = dbs::BridgeEndpoint::subprocess(split(spec.bridge_cmd, ' '));
    } else {
        const auto colon = spec.bridge_tcp.rfind(':');
        if (colon == std::string::npos) throw dbs::InvalidInput("--bridge-tcp expects host:port");
        int port = 0;
        try {
            port = std::stoi(spec.bridge_tcp.substr(colon + 1));
        } catch (const std::exception&) {
            throw dbs::InvalidInput("--bridge-tcp expects host:port");
        }
        if (port <= 0 || port > 65535) throw dbs::InvalidInput("--bridge-tcp port out of range");
        e = dbs::BridgeEndpoint::tcp(spec.bridge_tcp.substr(0, colon), static_cast<std::uint16_t>(port));
    }
    e.timeout = std::chrono::milliseconds(spec.timeout_ms);
    e.max_retries = spec.retries;
    return e;
}

// Calls fn(model) with the backend described by `spec`.
template <class F>
int with_backend(const BackendSpec& spec, F&& fn) {
    if (!spec.corpus.empty()) {
        if (!std::filesystem::exists(spec.corpus)) throw dbs::InvalidInput("corpus file not found: " + spec.corpus);
        const auto lm = dbs::NgramModel::train_file(spec.corpus, spec.order, spec.delta);
        return fn(lm);
    }
    const dbs::BridgeEndpoint e = endpoint_of(spec);
    e.validate();
    std::optional<dbs::BridgeModel> lm;
    try {
        lm.emplace(dbs::BridgeModel::connect(e));
    } catch (const dbs::ConnectionError& ex) {
        throw BackendFailure(ex.what());
    } catch (const dbs::ProtocolError& ex) {
        throw BackendFailure(ex.what());
    }
    return fn(*lm);
}

template <dbs::LanguageModel M>
std::optional<dbs::EmbeddingTable> load_embeddings_for(const RunConfig& cfg, const M& lm) {
    if (cfg.synthetic_embeddings) return dbs::stem_cluster_embeddings(lm.vocabulary(), cfg.dim, 0x9E3779B9);
    if (cfg.embeddings.empty()) return std::nullopt;
    if (!std::filesystem::exists(cfg.embeddings)) throw dbs::InvalidInput("embeddings file not found: " + cfg.embeddings);
    auto table = dbs::load_embeddings(cfg.embeddings, cfg.dim);
    if (table.skipped_lines() > 0) {
        std::cerr << "warning: skipped " << table.skipped_lines() << " malformed embedding lines\n";
    }
    return table;
}

template <dbs::LanguageModel M>
int cmd_generate(const RunConfig& cfg, const M& lm) {
    const auto table = load_embeddings_for(cfg, lm);
    dbs::EngineOptions opts;
    opts.workers = cfg.workers;
    std::ofstream trace;
    if (!cfg.trace.empty()) {
        trace.open(cfg.trace);
        if (!trace) throw dbs::InvalidInput("cannot write trace file: " + cfg.trace);
        opts.trace = [&trace](const dbs::TraceRecord& r) { trace << dbs::to_json(r).dump() << '\n'; };
    }
    dbs::DirectedBeamSearch<M> engine(lm, table ? &*table : nullptr, cfg.guidance, cfg.sampling, cfg.quality, opts);
    for (const auto& w : engine.warnings()) std::cerr << "warning: " << w << '\n';
    const auto result = engine.generate(cfg.context);
    std::cout << result.text << '\n';
    std::cerr << "guide words reached: " << result.satisfied << "/" << engine.guide_count() << '\n';
    return 0;
}

template <dbs::LanguageModel G, dbs::LanguageModel E>
int run_protocol(const RunConfig& cfg, const G& gen, const E& evaluator, const dbs::SweepGrid& grid) {
    if (cfg.wordlist.empty()) throw dbs::InvalidInput("--wordlist is required");
    const auto words = dbs::read_word_list(cfg.wordlist);
    std::vector<std::string> stops;
    if (!cfg.stopwords.empty()) stops = dbs::read_word_list(cfg.stopwords);
    const auto sets = dbs::build_keyword_sets(words, stops, cfg.sets, cfg.sampling.seed);
    const auto table = load_embeddings_for(cfg, gen);
    if (!table) throw dbs::InvalidInput("embeddings are required for guided evaluation (--embeddings or --synthetic-embeddings)");

    dbs::EngineOptions opts;
    opts.workers = cfg.workers;
    const auto result = dbs::run_sweep(grid, gen, &*table, evaluator, sets, cfg.context, cfg.guidance, cfg.sampling,
                                       cfg.quality, opts);

    std::filesystem::create_directories(cfg.out_dir);
    const auto csv_path = std::filesystem::path(cfg.out_dir) / "results.csv";
    const auto jsonl_path = std::filesystem::path(cfg.out_dir) / "results.jsonl";
    std::ofstream csv(csv_path), jsonl(jsonl_path);
    if (!csv || !jsonl) throw dbs::InvalidInput("cannot write results into " + cfg.out_dir);
    dbs::write_results_csv(csv, result);
    dbs::write_results_jsonl(jsonl, result, cfg.to_json());

    for (const auto& r : result.rows) {
        if (!r.ok()) std::cerr << "run failed (set " << r.set_id << "): " << r.error << '\n';
    }
    std::cout << "lambda,b,s,k,runs,success_rate,perplexity,success_length,seconds\n";
    for (const auto& a : result.aggregates) {
        std::cout << a.lambda << ',' << a.b << ',' << a.s << ',' << a.k << ',' << a.runs << ',' << a.success_rate << ','
                  << a.perplexity << ',' << a.success_length << ',' << a.seconds << '\n';
    }
    return 0;
}

template <dbs::LanguageModel G>
int cmd_protocol(const RunConfig& cfg, const G& gen, const dbs::SweepGrid& grid) {
    if (cfg.evaluator.empty()) {
        std::cerr << "warning: no evaluator backend given; scoring perplexity with the generator\n";
        return run_protocol(cfg, gen, gen, grid);
    }
    return with_backend(cfg.evaluator, [&](const auto& ev) { return run_protocol(cfg, gen, ev, grid); });
}

void add_backend_options(CLI::App& app, BackendSpec& spec, const std::string& prefix, const std::string& what) {
    app.add_option("--" + prefix + "corpus", spec.corpus, what + ": n-gram training corpus (UTF-8 text)");
    app.add_option("--" + prefix + "order", spec.order, what + ": n-gram order")->capture_default_str();
    app.add_option("--" + prefix + "delta", spec.delta, what + ": add-delta smoothing")->capture_default_str();
    app.add_option("--" + prefix + "bridge-cmd", spec.bridge_cmd, what + ": protocol server command (stdio)");
    app.add_option("--" + prefix + "bridge-tcp", spec.bridge_tcp, what + ": protocol server host:port");
    app.add_option("--" + prefix + "bridge-timeout", spec.timeout_ms, what + ": request timeout in ms")->capture_default_str();
    app.add_option("--" + prefix + "bridge-retries", spec.retries, what + ": retries after a timeout")->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
    RunConfig cfg;
    if (const char* env = std::getenv("DBS_SEED")) {
        try {
            cfg.sampling.seed = std::stoull(env);
        } catch (const std::exception&) {
            std::cerr << "error: DBS_SEED is not an unsigned integer\n";
            return kExitConfig;
        }
    }

    CLI::App app{"Directed beam search: steer a language model toward guide words"};
    app.set_config("--config", "", "key=value configuration file");
    app.require_subcommand(1);
    app.fallthrough();

    add_backend_options(app, cfg.backend, "", "generator");
    add_backend_options(app, cfg.evaluator, "eval-", "evaluator");
    app.add_option("--embeddings", cfg.embeddings, "word vectors in GloVe text format (.gz accepted)");
    app.add_option("--dim", cfg.dim, "embedding dimension")->capture_default_str();
    app.add_flag("--synthetic-embeddings", cfg.synthetic_embeddings,
                 "use stem-clustered random vectors instead of an embeddings file");
    app.add_option("--context", cfg.context, "prompt text")->capture_default_str();
    app.add_option("--keywords", cfg.keywords, "comma-separated ordered guide words");
    app.add_option("--lambda", cfg.guidance.lambda, "guidance strength")->capture_default_str();
    app.add_option("-b,--beams", cfg.guidance.b, "beams kept per step")->capture_default_str();
    app.add_option("-s,--candidates", cfg.guidance.s, "candidates per beam per step")->capture_default_str();
    app.add_option("-k,--chunk", cfg.guidance.k, "tokens per chunk")->capture_default_str();
    app.add_option("--max-tokens", cfg.guidance.max_tokens, "tokens to generate")->capture_default_str();
    app.add_option("--top-p", cfg.sampling.top_p, "nucleus mass")->capture_default_str();
    app.add_option("--temperature", cfg.sampling.temperature, "softmax temperature")->capture_default_str();
    app.add_option("--seed", cfg.sampling.seed, "master seed (default: $DBS_SEED or 0)")->capture_default_str();
    app.add_option("--alpha", cfg.quality.alpha, "perplexity weight in the quality score")->capture_default_str();
    app.add_option("--c-star", cfg.quality.c_star, "penalty for chunks missing their guide word")->capture_default_str();
    app.add_flag("--greedy", cfg.greedy, "deterministic argmax decoding");
    app.add_option("--workers", cfg.workers, "parallel candidate workers (0 = all cores)")->capture_default_str();

    auto* gen = app.add_subcommand("generate", "generate one text");
    gen->add_option("--trace", cfg.trace, "write per-candidate scores as JSON lines");

    std::string lambdas, bs, ss, ks;
    auto* eval = app.add_subcommand("evaluate", "keyword-to-phrase evaluation at one operating point");
    auto* sweep = app.add_subcommand("sweep", "keyword-to-phrase evaluation over a hyperparameter grid");
    for (auto* sub : {eval, sweep}) {
        sub->add_option("--wordlist", cfg.wordlist, "1000 common words, one per line")->required();
        sub->add_option("--stopwords", cfg.stopwords, "stop words, one per line");
        sub->add_option("--sets", cfg.sets, "keyword sets of 5")->capture_default_str();
        sub->add_option("--out-dir", cfg.out_dir, "directory for results.csv and results.jsonl")->capture_default_str();
    }
    sweep->add_option("--lambdas", lambdas, "comma-separated lambda values");
    sweep->add_option("--bs", bs, "comma-separated beam counts");
    sweep->add_option("--ss", ss, "comma-separated candidate counts");
    sweep->add_option("--ks", ks, "comma-separated chunk lengths");
    sweep->add_option("--repeat", cfg.repeat, "repetitions per grid point")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitConfig;
    }

    try {
        if (cfg.backend.empty()) throw dbs::InvalidInput("a generator backend is required (--corpus or --bridge-cmd/--bridge-tcp)");
        cfg.guidance.guide_words = split(cfg.keywords, ',');
        cfg.sampling.mode = cfg.greedy ? dbs::SamplingMode::greedy : dbs::SamplingMode::stochastic;
        cfg.guidance.validate();
        cfg.sampling.validate();
        cfg.quality.validate();
        if (!cfg.embeddings.empty() && !std::filesystem::exists(cfg.embeddings)) {
            throw dbs::InvalidInput("embeddings file not found: " + cfg.embeddings);
        }
        if (!cfg.guidance.guide_words.empty() && cfg.embeddings.empty() && !cfg.synthetic_embeddings) {
            throw dbs::InvalidInput("guide words need --embeddings or --synthetic-embeddings");
        }

        dbs::SweepGrid grid;
        grid.seed = cfg.sampling.seed;
        grid.lambdas = {cfg.guidance.lambda};
        grid.bs = {cfg.guidance.b};
        grid.ss = {cfg.guidance.s};
        grid.ks = {cfg.guidance.k};
        if (sweep->parsed()) {
            auto parse_list = [](const std::string& text, auto& out, const char* name, auto conv) {
                if (text.empty()) return;
                out.clear();
                for (const auto& v : split(text, ',')) {
                    try {
                        out.push_back(conv(v));
                    } catch (const std::exception&) {
                        throw dbs::InvalidInput(std::string("bad value in ") + name + ": " + v);
                    }
                }
                if (out.empty()) throw dbs::InvalidInput(std::string(name) + " is empty");
            };
            auto to_size = [](const std::string& v) { return static_cast<std::size_t>(std::stoull(v)); };
            auto to_double = [](const std::string& v) { return std::stod(v); };
            auto provided = [&](const char* name) { return sweep->count(name) > 0; };
            for (const auto* name : {"--lambdas", "--bs", "--ss", "--ks"}) {
                if (provided(name) && split(sweep->get_option(name)->as<std::string>(), ',').empty()) {
                    throw dbs::InvalidInput(std::string(name) + " is empty");
                }
            }
            parse_list(lambdas, grid.lambdas, "--lambdas", to_double);
            parse_list(bs, grid.bs, "--bs", to_size);
            parse_list(ss, grid.ss, "--ss", to_size);
            parse_list(ks, grid.ks, "--ks", to_size);
            grid.repetitions = cfg.repeat;
            for (std::size_t k : grid.ks) {
                if (k < 1 || k > cfg.guidance.max_tokens) throw dbs::InvalidInput("every k must be in [1, max_tokens]");
            }
            for (std::size_t v : grid.bs) {
                if (v < 1) throw dbs::InvalidInput("every b must be >= 1");
            }
            for (std::size_t v : grid.ss) {
                if (v < 1) throw dbs::InvalidInput("every s must be >= 1");
            }
            for (double l : grid.lambdas) {
                if (!(l >= 0.0)) throw dbs::InvalidInput("every lambda must be >= 0");
            }
            grid.validate();
        }

        return with_backend(cfg.backend, [&](const auto& lm) {
            if (gen->parsed()) return cmd_generate(cfg, lm);
            return cmd_protocol(cfg, lm, grid);
        });
    } catch (const dbs::InvalidInput& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const dbs::IoError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const BackendFailure& e) {
        std::cerr << "backend error: " << e.what() << '\n';
        return kExitBackend;
    } catch (const dbs::ProtocolError& e) {
        std::cerr << "protocol error: " << e.what() << '\n';
        return kExitBackend;
    } catch (const dbs::ConnectionError& e) {
        std::cerr << "connection error: " << e.what() << '\n';
        return kExitBackend;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitBackend;
    }
}
