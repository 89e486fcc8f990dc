// Copyright (C) 2026 The dbs Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <fcntl.h>
#include <netdb.h>
#include <poll.h>
#include <signal.h>
#include <spawn.h>
#include <sys/socket.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <nlohmann/json.hpp>

#include <cerrno>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dbs/error.hpp"
#include "dbs/lm.hpp"

extern char** environ;

namespace dbs {

inline constexpr int kProtocolVersion = 1;

/// Where a protocol server lives.
struct BridgeEndpoint {
    enum class Transport { stdio, tcp };

    Transport transport = Transport::stdio;
    std::vector<std::string> command;  ///< argv of the server process (stdio)
    std::string host = "127.0.0.1";    ///< tcp
    std::uint16_t port = 0;            ///< tcp
    std::chrono::milliseconds timeout{30000};
    int max_retries = 2;

    static BridgeEndpoint subprocess(std::vector<std::string> argv) {
        BridgeEndpoint e;
        e.transport = Transport::stdio;
        e.command = std::move(argv);
        return e;
    }

    static BridgeEndpoint tcp(std::string host, std::uint16_t port) {
        BridgeEndpoint e;
        e.transport = Transport::tcp;
        e.host = std::move(host);
        e.port = port;
        return e;
    }

    void validate() const {
        if (timeout.count() <= 0) throw InvalidInput("bridge timeout must be > 0");
        if (max_retries < 0) throw InvalidInput("bridge max-retries must be >= 0");
        if (transport == Transport::stdio && command.empty()) throw InvalidInput("bridge command is empty");
        if (transport == Transport::tcp && port == 0) throw InvalidInput("bridge tcp port is missing");
    }
};

/// Bidirectional newline-framed byte stream.
class LineChannel {
public:
    virtual ~LineChannel() = default;
    virtual void send_line(std::string_view line) = 0;
    /// Next complete line without its terminator, or nullopt on timeout.
    virtual std::optional<std::string> receive_line(std::chrono::milliseconds timeout) = 0;
};

namespace detail {

// Buffered line reader over a pollable fd.
class FdLineReader {
public:
    explicit FdLineReader(int fd) : fd_(fd) {}

    std::optional<std::string> read(std::chrono::milliseconds timeout) {
        const auto deadline = std::chrono::steady_clock::now() + timeout;
        for (;;) {
            if (auto nl = buf_.find('\n'); nl != std::string::npos) {
                std::string line = buf_.substr(0, nl);
                buf_.erase(0, nl + 1);
                if (!line.empty() && line.back() == '\r') line.pop_back();
                return line;
            }
            const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
            if (left.count() <= 0) return std::nullopt;
            pollfd p{fd_, POLLIN, 0};
            const int r = ::poll(&p, 1, static_cast<int>(left.count()));
            if (r < 0) {
                if (errno == EINTR) continue;
                throw ConnectionError(std::string("poll failed: ") + std::strerror(errno));
            }
            if (r == 0) return std::nullopt;
            char tmp[65536];
            const ssize_t n = ::read(fd_, tmp, sizeof tmp);
            if (n < 0) {
                if (errno == EINTR || errno == EAGAIN) continue;
                throw ConnectionError(std::string("read failed: ") + std::strerror(errno));
            }
            if (n == 0) throw ConnectionError("protocol server closed the connection");
            buf_.append(tmp, static_cast<std::size_t>(n));
        }
    }

private:
    int fd_;
    std::string buf_;
};

inline void write_all(int fd, std::string_view data, bool socket) {
    while (!data.empty()) {
        const ssize_t n = socket ? ::send(fd, data.data(), data.size(), MSG_NOSIGNAL) : ::write(fd, data.data(), data.size());
        if (n < 0) {
            if (errno == EINTR) continue;
            throw ConnectionError(std::string("write failed: ") + std::strerror(errno));
        }
        data.remove_prefix(static_cast<std::size_t>(n));
    }
}

}  // namespace detail

/// Server running as a child process speaking over its stdin/stdout.
class SubprocessChannel final : public LineChannel {
public:
    explicit SubprocessChannel(const std::vector<std::string>& argv) {
        if (argv.empty()) throw InvalidInput("empty server command");
        // A dead child must surface as an error, not kill the client.
        struct sigaction old {};
        if (::sigaction(SIGPIPE, nullptr, &old) == 0 && old.sa_handler == SIG_DFL) ::signal(SIGPIPE, SIG_IGN);

        int in_pipe[2], out_pipe[2];
        if (::pipe2(in_pipe, O_CLOEXEC) != 0) throw ConnectionError("pipe failed");
        if (::pipe2(out_pipe, O_CLOEXEC) != 0) {
            ::close(in_pipe[0]);
            ::close(in_pipe[1]);
            throw ConnectionError("pipe failed");
        }
        posix_spawn_file_actions_t actions;
        posix_spawn_file_actions_init(&actions);
        posix_spawn_file_actions_adddup2(&actions, in_pipe[0], STDIN_FILENO);
        posix_spawn_file_actions_adddup2(&actions, out_pipe[1], STDOUT_FILENO);

        std::vector<char*> args;
        for (const auto& a : argv) args.push_back(const_cast<char*>(a.c_str()));
        args.push_back(nullptr);
        const int rc = ::posix_spawnp(&pid_, args[0], &actions, nullptr, args.data(), environ);
        posix_spawn_file_actions_destroy(&actions);
        ::close(in_pipe[0]);
        ::close(out_pipe[1]);
        to_child_ = in_pipe[1];
        from_child_ = out_pipe[0];
        if (rc != 0) {
            ::close(to_child_);
            ::close(from_child_);
            pid_ = -1;
            throw ConnectionError("cannot start protocol server '" + argv[0] + "': " + std::strerror(rc));
        }
        reader_ = std::make_unique<detail::FdLineReader>(from_child_);
    }

    SubprocessChannel(const SubprocessChannel&) = delete;
    SubprocessChannel& operator=(const SubprocessChannel&) = delete;

    ~SubprocessChannel() override {
        if (to_child_ >= 0) ::close(to_child_);  // EOF asks the server to exit
        if (from_child_ >= 0) ::close(from_child_);
        if (pid_ > 0) {
            int status = 0;
            for (int i = 0; i < 50; ++i) {
                if (::waitpid(pid_, &status, WNOHANG) != 0) return;
                ::usleep(10000);
            }
            ::kill(pid_, SIGKILL);
            ::waitpid(pid_, &status, 0);
        }
    }

    void send_line(std::string_view line) override {
        std::string framed(line);
        framed.push_back('\n');
        detail::write_all(to_child_, framed, false);
    }

    std::optional<std::string> receive_line(std::chrono::milliseconds timeout) override { return reader_->read(timeout); }

private:
    pid_t pid_ = -1;
    int to_child_ = -1;
    int from_child_ = -1;
    std::unique_ptr<detail::FdLineReader> reader_;
};

/// Server reachable over a TCP socket.
class TcpChannel final : public LineChannel {
public:
    TcpChannel(const std::string& host, std::uint16_t port, std::chrono::milliseconds timeout) {
        addrinfo hints{};
        hints.ai_family = AF_UNSPEC;
        hints.ai_socktype = SOCK_STREAM;
        addrinfo* res = nullptr;
        const std::string service = std::to_string(port);
        if (const int rc = ::getaddrinfo(host.c_str(), service.c_str(), &hints, &res); rc != 0) {
            throw ConnectionError("cannot resolve " + host + ": " + ::gai_strerror(rc));
        }
        std::unique_ptr<addrinfo, decltype(&::freeaddrinfo)> guard(res, &::freeaddrinfo);
        std::string last_error = "no addresses";
        for (addrinfo* ai = res; ai != nullptr; ai = ai->ai_next) {
            const int fd = ::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC | SOCK_NONBLOCK, ai->ai_protocol);
            if (fd < 0) continue;
            if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0 || wait_connected(fd, timeout, last_error)) {
                ::fcntl(fd, F_SETFL, ::fcntl(fd, F_GETFL) & ~O_NONBLOCK);
                fd_ = fd;
                break;
            }
            ::close(fd);
        }
        if (fd_ < 0) throw ConnectionError("cannot connect to " + host + ":" + service + ": " + last_error);
        reader_ = std::make_unique<detail::FdLineReader>(fd_);
    }

    TcpChannel(const TcpChannel&) = delete;
    TcpChannel& operator=(const TcpChannel&) = delete;
    ~TcpChannel() override {
        if (fd_ >= 0) ::close(fd_);
    }

    void send_line(std::string_view line) override {
        std::string framed(line);
        framed.push_back('\n');
        detail::write_all(fd_, framed, true);
    }

    std::optional<std::string> receive_line(std::chrono::milliseconds timeout) override { return reader_->read(timeout); }

private:
    static bool wait_connected(int fd, std::chrono::milliseconds timeout, std::string& error) {
        if (errno != EINPROGRESS) {
            error = std::strerror(errno);
            return false;
        }
        pollfd p{fd, POLLOUT, 0};
        const int r = ::poll(&p, 1, static_cast<int>(timeout.count()));
        if (r <= 0) {
            error = r == 0 ? "timed out" : std::strerror(errno);
            return false;
        }
        int so_error = 0;
        socklen_t len = sizeof so_error;
        ::getsockopt(fd, SOL_SOCKET, SO_ERROR, &so_error, &len);
        if (so_error != 0) {
            error = std::strerror(so_error);
            return false;
        }
        return true;
    }

    int fd_ = -1;
    std::unique_ptr<detail::FdLineReader> reader_;
};

/// LanguageModel served by an external process over protocol v1
/// (line-delimited JSON, one message per line).
///
/// Requests carry strictly increasing ids. Replies are matched by id;
/// replies to abandoned (timed-out) requests are discarded. A timed-out
/// request is re-sent under a fresh id up to `max_retries` times.
class BridgeModel {
public:
    static BridgeModel connect(const BridgeEndpoint& endpoint) {
        endpoint.validate();
        std::unique_ptr<LineChannel> channel;
        if (endpoint.transport == BridgeEndpoint::Transport::stdio) {
            channel = std::make_unique<SubprocessChannel>(endpoint.command);
        } else {
            channel = std::make_unique<TcpChannel>(endpoint.host, endpoint.port, endpoint.timeout);
        }
        return BridgeModel(std::move(channel), endpoint.timeout, endpoint.max_retries);
    }

    /// Takes over an already-open channel and performs the handshake.
    BridgeModel(std::unique_ptr<LineChannel> channel, std::chrono::milliseconds timeout, int max_retries)
        : state_(std::make_unique<State>()) {
        state_->channel = std::move(channel);
        state_->timeout = timeout;
        state_->max_retries = max_retries;
        handshake();
    }

    const Vocabulary& vocabulary() const noexcept { return vocab_; }
    std::size_t vocab_size() const noexcept { return vocab_.size(); }
    /// One connection serves one request at a time.
    bool concurrent() const noexcept { return false; }
    std::uint64_t requests_sent() const noexcept { return state_->next_id; }

    LogitVector next_logits(std::span<const TokenId> ctx) const {
        check_ids(ctx, vocab_size());
        nlohmann::json req{{"op", "logits"}, {"ids", std::vector<TokenId>(ctx.begin(), ctx.end())}};
        const nlohmann::json resp = request(req);
        const auto it = resp.find("logits");
        if (it == resp.end() || !it->is_array()) throw malformed("logits reply has no 'logits' array");
        if (it->size() != vocab_size()) {
            throw ProtocolError(ProtocolError::Kind::wrong_length, "logits reply has " + std::to_string(it->size()) +
                                                                       " entries, expected " + std::to_string(vocab_size()));
        }
        LogitVector out;
        out.reserve(it->size());
        for (const auto& v : *it) {
            if (!v.is_number()) throw malformed("non-numeric logit");
            const double x = v.get<double>();
            if (!std::isfinite(x)) throw ProtocolError(ProtocolError::Kind::non_finite, "non-finite logit");
            out.push_back(x);
        }
        return out;
    }

    TokenSeq tokenize(std::string_view text) const {
        const nlohmann::json resp = request({{"op", "tokenize"}, {"text", std::string(text)}});
        return read_ids(resp);
    }

    std::string detokenize(std::span<const TokenId> ids) const {
        check_ids(ids, vocab_size());
        const nlohmann::json resp = request({{"op", "detokenize"}, {"ids", std::vector<TokenId>(ids.begin(), ids.end())}});
        const auto it = resp.find("text");
        if (it == resp.end() || !it->is_string()) throw malformed("detokenize reply has no 'text'");
        return it->get<std::string>();
    }

    /// Uses the server's optional nll op; falls back to local computation
    /// from logits once the server has refused it.
    double sequence_nll(std::span<const TokenId> prefix, std::span<const TokenId> target) const {
        if (target.empty()) throw InvalidInput("sequence_nll: empty target");
        check_ids(prefix, vocab_size());
        check_ids(target, vocab_size());
        if (state_->nll_supported) {
            try {
                const nlohmann::json resp =
                    request({{"op", "nll"},
                             {"prefix", std::vector<TokenId>(prefix.begin(), prefix.end())},
                             {"target", std::vector<TokenId>(target.begin(), target.end())}});
                const auto it = resp.find("nll");
                if (it == resp.end() || !it->is_number()) throw malformed("nll reply has no 'nll'");
                const double x = it->get<double>();
                if (!std::isfinite(x)) throw ProtocolError(ProtocolError::Kind::non_finite, "non-finite nll");
                return x;
            } catch (const ProtocolError& e) {
                if (e.kind() != ProtocolError::Kind::remote) throw;
                state_->nll_supported = false;
            }
        }
        return nll_from_logits(*this, prefix, target);
    }

    bool server_nll() const noexcept { return state_->nll_supported; }

private:
    struct State {
        std::unique_ptr<LineChannel> channel;
        std::chrono::milliseconds timeout{30000};
        int max_retries = 2;
        std::uint64_t next_id = 0;
        bool nll_supported = true;
        std::mutex mu;
    };

    static ProtocolError malformed(const std::string& what) { return ProtocolError(ProtocolError::Kind::malformed, what); }

    static TokenSeq read_ids(const nlohmann::json& resp) {
        const auto it = resp.find("ids");
        if (it == resp.end() || !it->is_array()) throw malformed("reply has no 'ids' array");
        TokenSeq ids;
        for (const auto& v : *it) {
            if (!v.is_number_unsigned()) throw malformed("token id is not a non-negative integer");
            ids.push_back(v.get<TokenId>());
        }
        return ids;
    }

    void handshake() {
        nlohmann::json resp;
        try {
            resp = request({{"op", "hello"}, {"version", kProtocolVersion}}, /*retries=*/0);
        } catch (const ProtocolError& e) {
            if (e.kind() == ProtocolError::Kind::timeout) throw ConnectionError("handshake timed out");
            throw;
        }
        const auto ver = resp.find("version");
        if (ver == resp.end() || !ver->is_number_integer()) throw malformed("hello reply has no version");
        if (ver->get<int>() != kProtocolVersion) {
            throw ProtocolError(ProtocolError::Kind::version,
                                "server speaks protocol " + ver->dump() + ", client speaks " + std::to_string(kProtocolVersion));
        }
        const auto vs = resp.find("vocab_size");
        if (vs == resp.end() || !vs->is_number_unsigned() || vs->get<std::uint64_t>() == 0) {
            throw ProtocolError(ProtocolError::Kind::wrong_length, "server reported an empty vocabulary");
        }
        const std::size_t n = vs->get<std::size_t>();

        std::vector<std::string> surfaces;
        try {
            const nlohmann::json v = request({{"op", "vocab"}});
            const auto toks = v.find("tokens");
            if (toks == v.end() || !toks->is_array()) throw malformed("vocab reply has no 'tokens' array");
            for (const auto& t : *toks) {
                if (!t.is_string()) throw malformed("vocab entry is not a string");
                surfaces.push_back(t.get<std::string>());
            }
        } catch (const ProtocolError& e) {
            if (e.kind() != ProtocolError::Kind::remote) throw;
            // No vocab op: spell each id individually.
            for (std::size_t id = 0; id < n; ++id) {
                const nlohmann::json r = request({{"op", "detokenize"}, {"ids", {id}}});
                const auto it = r.find("text");
                if (it == r.end() || !it->is_string()) throw malformed("detokenize reply has no 'text'");
                surfaces.push_back(it->get<std::string>());
            }
        }
        if (surfaces.size() != n) {
            throw ProtocolError(ProtocolError::Kind::wrong_length, "vocabulary has " + std::to_string(surfaces.size()) +
                                                                       " entries, hello reported " + std::to_string(n));
        }
        vocab_ = Vocabulary(std::move(surfaces));
    }

    nlohmann::json request(nlohmann::json req, std::optional<int> retries = std::nullopt) const {
        std::lock_guard lock(state_->mu);
        const int attempts = 1 + retries.value_or(state_->max_retries);
        for (int attempt = 0; attempt < attempts; ++attempt) {
            const std::uint64_t id = state_->next_id++;
            req["id"] = id;
            state_->channel->send_line(req.dump());
            const auto deadline = std::chrono::steady_clock::now() + state_->timeout;
            for (;;) {
                const auto left =
                    std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
                if (left.count() <= 0) break;
                const auto line = state_->channel->receive_line(left);
                if (!line) break;
                nlohmann::json resp = nlohmann::json::parse(*line, nullptr, /*allow_exceptions=*/false);
                if (resp.is_discarded() || !resp.is_object()) throw malformed("unparseable reply: " + line->substr(0, 200));
                const auto rid = resp.find("id");
                if (rid == resp.end() || !rid->is_number_unsigned()) throw malformed("reply without id");
                const std::uint64_t got = rid->get<std::uint64_t>();
                if (got < id) continue;  // answer to an abandoned request
                if (got > id) throw malformed("reply id " + std::to_string(got) + " from the future");
                if (const auto err = resp.find("error"); err != resp.end()) {
                    throw ProtocolError(ProtocolError::Kind::remote,
                                        "server error on '" + req["op"].get<std::string>() + "': " +
                                            (err->is_string() ? err->get<std::string>() : err->dump()));
                }
                return resp;
            }
        }
        throw ProtocolError(ProtocolError::Kind::timeout, "'" + req["op"].get<std::string>() + "' request timed out");
    }

    std::unique_ptr<State> state_;
    Vocabulary vocab_;
};

static_assert(LanguageModel<BridgeModel>);

/// True iff a hello round-trip with a matching version completes.
inline bool healthcheck(const BridgeEndpoint& endpoint) {
    try {
        BridgeModel::connect(endpoint);
        return true;
    } catch (const std::exception&) {
        return false;
    }
}

}  // namespace dbs
