// Copyright (C) 2026 The dbs Authors
// SPDX-License-Identifier: Apache-2.0

// Protocol v1 server over an in-process n-gram (or uniform) model. Used by
// the bridge tests and as a reference for writing real model adapters.

#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdio>
#include <iostream>
#include <map>
#include <sstream>
#include <memory>
#include <optional>
#include <mutex>
#include <string>
#include <thread>

#include "dbs/lm.hpp"
#include "dbs/ngram.hpp"

namespace {

using nlohmann::json;

// |V| tokens "w0" ... "w{n-1}" with all-zero logits.
struct UniformBackend {
    explicit UniformBackend(std::size_t n) {
        std::vector<std::string> s;
        for (std::size_t i = 0; i < n; ++i) s.push_back("w" + std::to_string(i));
        vocab = dbs::Vocabulary(std::move(s));
    }
    dbs::Vocabulary vocab;
};

enum class Fault {
    none,
    short_logits,   // logits one entry short
    nan_logits,     // a NaN literal inside the logits array
    bad_version,    // hello answers version 2
    zero_vocab,     // hello answers vocab_size 0
    no_nll,         // nll op answered with an error record
    no_vocab,       // vocab op answered with an error record
    stale_reply,    // every reply is preceded by a bogus reply to an older id
    drop_first,     // the first logits request is never answered
    silent,         // nothing is ever answered
};

class Server {
public:
    Server(std::optional<dbs::NgramModel> ngram, std::optional<UniformBackend> uniform, Fault fault)
        : ngram_(std::move(ngram)), uniform_(std::move(uniform)), fault_(fault) {}

    // Returns the reply lines for one request line (possibly none).
    std::vector<std::string> handle(const std::string& line) {
        std::lock_guard lock(mu_);
        json req = json::parse(line, nullptr, false);
        if (req.is_discarded() || !req.is_object()) return {json{{"id", 0}, {"error", "unparseable request"}}.dump()};
        const json id = req.value("id", json(0));
        if (fault_ == Fault::silent) return {};
        std::vector<std::string> out;
        if (fault_ == Fault::stale_reply && id.is_number_unsigned() && id.get<std::uint64_t>() > 0) {
            out.push_back(json{{"id", id.get<std::uint64_t>() - 1}, {"text", "stale"}}.dump());
        }
        try {
            out.push_back(dispatch(req, id));
        } catch (const std::exception& e) {
            out.push_back(json{{"id", id}, {"error", e.what()}}.dump());
        }
        if (out.back().empty()) out.pop_back();
        return out;
    }

private:
    const dbs::Vocabulary& vocab() const { return ngram_ ? ngram_->vocabulary() : uniform_->vocab; }

    std::string dispatch(const json& req, const json& id) {
        const std::string op = req.value("op", "");
        if (op == "hello") {
            const int version = fault_ == Fault::bad_version ? 2 : 1;
            const std::size_t n = fault_ == Fault::zero_vocab ? 0 : vocab().size();
            return json{{"id", id}, {"version", version}, {"vocab_size", n}}.dump();
        }
        if (op == "vocab") {
            if (fault_ == Fault::no_vocab) throw std::runtime_error("unknown op: vocab");
            std::vector<std::string> toks;
            for (dbs::TokenId i = 0; i < vocab().size(); ++i) toks.push_back(vocab().surface(i));
            return json{{"id", id}, {"tokens", toks}}.dump();
        }
        if (op == "tokenize") {
            const std::string text = req.at("text").get<std::string>();
            dbs::TokenSeq ids;
            if (ngram_) {
                ids = ngram_->tokenize(text);
            } else {
                std::istringstream is(text);
                std::string w;
                while (is >> w) ids.push_back(vocab().lookup(w).value_or(0));
            }
            return json{{"id", id}, {"ids", ids}}.dump();
        }
        if (op == "detokenize") {
            const auto ids = req.at("ids").get<dbs::TokenSeq>();
            std::string text;
            if (ngram_) {
                text = ngram_->detokenize(ids);
            } else {
                for (std::size_t i = 0; i < ids.size(); ++i) text += (i ? " " : "") + vocab().surface(ids[i]);
            }
            return json{{"id", id}, {"text", text}}.dump();
        }
        if (op == "logits") {
            const auto ids = req.at("ids").get<dbs::TokenSeq>();
            dbs::LogitVector l;
            if (ngram_) {
                l = ngram_->next_logits(ids);
            } else {
                dbs::check_ids(ids, vocab().size());
                l.assign(vocab().size(), 0.0);
            }
            if (fault_ == Fault::drop_first && !dropped_) {
                dropped_ = true;
                return {};
            }
            if (fault_ == Fault::short_logits) l.pop_back();
            std::string body = json{{"id", id}, {"logits", l}}.dump();
            if (fault_ == Fault::nan_logits) {
                const auto pos = body.find("[") + 1;
                const auto end = body.find_first_of(",]", pos);
                body.replace(pos, end - pos, "NaN");
            }
            return body;
        }
        if (op == "nll") {
            if (fault_ == Fault::no_nll || !ngram_) throw std::runtime_error("unknown op: nll");
            const auto prefix = req.at("prefix").get<dbs::TokenSeq>();
            const auto target = req.at("target").get<dbs::TokenSeq>();
            return json{{"id", id}, {"nll", ngram_->sequence_nll(prefix, target)}}.dump();
        }
        throw std::runtime_error("unknown op: " + op);
    }

    std::optional<dbs::NgramModel> ngram_;
    std::optional<UniformBackend> uniform_;
    Fault fault_;
    bool dropped_ = false;
    std::mutex mu_;
};

void serve_stream(Server& server, std::FILE* in, std::FILE* out) {
    std::string line;
    int c;
    while ((c = std::fgetc(in)) != EOF) {
        if (c != '\n') {
            line.push_back(static_cast<char>(c));
            continue;
        }
        for (const auto& reply : server.handle(line)) {
            std::fputs(reply.c_str(), out);
            std::fputc('\n', out);
        }
        std::fflush(out);
        line.clear();
    }
}

int serve_tcp(Server& server, int port) {
    const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    int one = 1;
    ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = htons(static_cast<std::uint16_t>(port));
    if (::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 || ::listen(fd, 4) != 0) {
        std::perror("bind/listen");
        return 1;
    }
    socklen_t len = sizeof addr;
    ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
    std::printf("%d\n", ntohs(addr.sin_port));
    std::fflush(stdout);
    for (;;) {
        const int client = ::accept(fd, nullptr, nullptr);
        if (client < 0) continue;
        // One thread per connection; the server itself is shared.
        std::thread([&server, client] {
            std::FILE* in = ::fdopen(client, "r");
            std::FILE* out = ::fdopen(::dup(client), "w");
            serve_stream(server, in, out);
            std::fclose(in);
            std::fclose(out);
        }).detach();
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Protocol v1 test server backed by an n-gram model"};
    std::string corpus;
    int order = 2;
    double delta = 0.01;
    std::size_t uniform = 0;
    int port = -1;
    std::string fault_name = "none";
    app.add_option("--corpus", corpus, "training corpus for the n-gram backend");
    app.add_option("--order", order, "n-gram order");
    app.add_option("--delta", delta, "add-delta smoothing");
    app.add_option("--uniform", uniform, "serve a uniform model over this many tokens instead");
    app.add_option("--port", port, "serve TCP on this port (0 = any; the port is printed)");
    app.add_flag("--stdio", "serve on stdin/stdout (default)");
    app.add_option("--fault", fault_name, "fault to inject")
        ->check(CLI::IsMember({"none", "short-logits", "nan-logits", "bad-version", "zero-vocab", "no-nll", "no-vocab",
                               "stale-reply", "drop-first", "silent"}));
    CLI11_PARSE(app, argc, argv);

    static const std::map<std::string, Fault> faults{
        {"none", Fault::none},           {"short-logits", Fault::short_logits}, {"nan-logits", Fault::nan_logits},
        {"bad-version", Fault::bad_version}, {"zero-vocab", Fault::zero_vocab}, {"no-nll", Fault::no_nll},
        {"no-vocab", Fault::no_vocab},   {"stale-reply", Fault::stale_reply},   {"drop-first", Fault::drop_first},
        {"silent", Fault::silent}};

    try {
        std::optional<dbs::NgramModel> ngram;
        std::optional<UniformBackend> uni;
        if (uniform > 0) {
            uni.emplace(uniform);
        } else if (!corpus.empty()) {
            ngram = dbs::NgramModel::train_file(corpus, order, delta);
        } else {
            std::cerr << "either --corpus or --uniform is required\n";
            return 2;
        }
        Server server(std::move(ngram), std::move(uni), faults.at(fault_name));
        if (port >= 0) return serve_tcp(server, port);
        serve_stream(server, stdin, stdout);
    } catch (const std::exception& e) {
        std::cerr << "dbs_mock_server: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
