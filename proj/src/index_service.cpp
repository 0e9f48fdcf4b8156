// Copyright (c) 2026 the unirag authors
// SPDX-License-Identifier: Apache-2.0
#include "unirag/index_service.hpp"

#include <arpa/inet.h>
#include <csignal>
#include <fcntl.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <stdexcept>
#include <sys/time.h>

#include <json.hpp>

#include "unirag/wire.hpp"

namespace unirag {

using nlohmann::json;

namespace {

std::atomic<bool> g_signal_stop{false};

void on_signal(int) { g_signal_stop.store(true); }

json hits_to_json(const std::vector<SearchHit>& hits) {
    json ids = json::array();
    json scores = json::array();
    for (const auto& [id, score] : hits) {
        ids.push_back(id);
        scores.push_back(score);
    }
    return json{{"ids", ids}, {"scores", scores}};
}

}  // namespace

IndexServer::IndexServer(AnyIndex index, ServerConfig config)
    : index_(std::move(index)), config_(std::move(config)) {}

IndexServer::~IndexServer() { stop(); }

void IndexServer::start() {
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0) throw std::runtime_error("index server: socket() failed");
    const int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(static_cast<uint16_t>(config_.port));
    if (::inet_pton(AF_INET, config_.bind_addr.c_str(), &addr.sin_addr) != 1) {
        ::close(listen_fd_);
        listen_fd_ = -1;
        throw std::runtime_error("index server: bad bind address " + config_.bind_addr);
    }
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
        ::close(listen_fd_);
        listen_fd_ = -1;
        throw std::runtime_error("index server: bind failed on " + config_.bind_addr + ":" +
                                 std::to_string(config_.port));
    }
    if (::listen(listen_fd_, config_.max_connections) != 0) {
        ::close(listen_fd_);
        listen_fd_ = -1;
        throw std::runtime_error("index server: listen failed");
    }
    sockaddr_in bound{};
    socklen_t len = sizeof(bound);
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&bound), &len);
    actual_port_ = ntohs(bound.sin_port);
    running_.store(true);
    accept_thread_ = std::thread([this] { accept_loop(); });
}

void IndexServer::stop() {
    if (!running_.exchange(false)) return;
    if (listen_fd_ >= 0) {
        ::shutdown(listen_fd_, SHUT_RDWR);
        ::close(listen_fd_);
        listen_fd_ = -1;
    }
    if (accept_thread_.joinable()) accept_thread_.join();
    std::lock_guard<std::mutex> lock(workers_mutex_);
    for (std::thread& t : workers_) {
        if (t.joinable()) t.join();
    }
    workers_.clear();
}

void IndexServer::run_until_signal() {
    start();
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    while (!g_signal_stop.load()) {
        std::this_thread::sleep_for(std::chrono::milliseconds(50));
    }
    stop();
}

void IndexServer::accept_loop() {
    while (running_.load()) {
        sockaddr_in peer{};
        socklen_t len = sizeof(peer);
        const int fd = ::accept(listen_fd_, reinterpret_cast<sockaddr*>(&peer), &len);
        if (fd < 0) {
            if (!running_.load()) break;
            continue;
        }
        std::lock_guard<std::mutex> lock(workers_mutex_);
        workers_.emplace_back([this, fd] { handle_connection(fd); });
    }
}

void IndexServer::handle_connection(int fd) {
    const int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    try {
        std::string body;
        while (running_.load() && read_frame(fd, body)) {
            write_frame(fd, handle_request(body));
        }
    } catch (const std::exception&) {
        // Framing violation or peer reset: drop the connection.
    }
    ::close(fd);
}

std::string IndexServer::handle_request(const std::string& body) {
    json req;
    try {
        req = json::parse(body);
    } catch (const std::exception& e) {
        return json{{"error", std::string("malformed JSON: ") + e.what()}}.dump();
    }
    try {
        const std::string op = req.value("op", "");
        if (op == "ping") return json{{"ok", true}}.dump();
        if (op == "stats") {
            return json{{"n", index_.size()},
                        {"dim", index_.dim()},
                        {"kind", index_.kind == IndexKind::Flat ? "flat" : "pq"},
                        {"frozen", frozen_.load()}}
                .dump();
        }
        if (op == "search") {
            const std::vector<float> embedding = req.at("embedding").get<std::vector<float>>();
            const int k = req.at("k").get<int>();
            if (static_cast<int>(embedding.size()) != index_.dim())
                return json{{"error", "dim mismatch"}}.dump();
            if (k < 1) return json{{"error", "k must be >= 1"}}.dump();
            frozen_.store(true);  // search freezes the index
            return hits_to_json(index_.search(embedding, k)).dump();
        }
        if (op == "add") {
            if (frozen_.load()) return json{{"error", "index frozen"}}.dump();
            if (index_.kind != IndexKind::Flat)
                return json{{"error", "add requires a flat index"}}.dump();
            const std::string id = req.at("id").get<std::string>();
            const std::vector<float> vec = req.at("vector").get<std::vector<float>>();
            std::lock_guard<std::mutex> lock(index_mutex_);
            if (index_.flat.dim != 0 && static_cast<int>(vec.size()) != index_.flat.dim)
                return json{{"error", "dim mismatch"}}.dump();
            index_.flat.add(id, vec);
            return json{{"ok", true}, {"n", index_.size()}}.dump();
        }
        return json{{"error", "unknown op"}}.dump();
    } catch (const std::exception& e) {
        return json{{"error", e.what()}}.dump();
    }
}

// ---- TcpIndexClient ----

TcpIndexClient::TcpIndexClient(std::string host, int port, int timeout_ms, int retries, int backoff_ms)
    : host_(std::move(host)), port_(port), timeout_ms_(timeout_ms), retries_(retries),
      backoff_ms_(backoff_ms) {
    if (timeout_ms_ <= 0) throw std::invalid_argument("TcpIndexClient: timeout must be positive");
}

int TcpIndexClient::connect_once() {
    const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) throw RetrievalError(RetrievalError::Kind::Connect, "socket() failed", true);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(static_cast<uint16_t>(port_));
    if (::inet_pton(AF_INET, host_.c_str(), &addr.sin_addr) != 1) {
        ::close(fd);
        throw RetrievalError(RetrievalError::Kind::Connect, "bad address " + host_, false);
    }
    // Non-blocking connect with poll-based timeout.
    const int flags = ::fcntl(fd, F_GETFL, 0);
    ::fcntl(fd, F_SETFL, flags | O_NONBLOCK);
    const int rc = ::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr));
    if (rc != 0 && errno != EINPROGRESS) {
        ::close(fd);
        throw RetrievalError(RetrievalError::Kind::Connect,
                             std::string("connect failed: ") + std::strerror(errno), true);
    }
    if (rc != 0) {
        pollfd pfd{fd, POLLOUT, 0};
        const int pr = ::poll(&pfd, 1, timeout_ms_);
        if (pr <= 0) {
            ::close(fd);
            throw RetrievalError(RetrievalError::Kind::Timeout, "connect timed out", true);
        }
        int err = 0;
        socklen_t len = sizeof(err);
        ::getsockopt(fd, SOL_SOCKET, SO_ERROR, &err, &len);
        if (err != 0) {
            ::close(fd);
            throw RetrievalError(RetrievalError::Kind::Connect,
                                 std::string("connect failed: ") + std::strerror(err), true);
        }
    }
    ::fcntl(fd, F_SETFL, flags);
    timeval tv{timeout_ms_ / 1000, (timeout_ms_ % 1000) * 1000};
    ::setsockopt(fd, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof(tv));
    ::setsockopt(fd, SOL_SOCKET, SO_SNDTIMEO, &tv, sizeof(tv));
    const int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    return fd;
}

std::string TcpIndexClient::request(const std::string& body) {
    int attempt = 0;
    while (true) {
        int fd = -1;
        try {
            fd = connect_once();
            write_frame(fd, body);
            std::string response;
            if (!read_frame(fd, response))
                throw RetrievalError(RetrievalError::Kind::Protocol, "server closed connection", false);
            ::close(fd);
            return response;
        } catch (const RetrievalError& e) {
            if (fd >= 0) ::close(fd);
            if (!e.retryable() || attempt >= retries_) throw;
        } catch (const std::exception& e) {
            if (fd >= 0) ::close(fd);
            // Socket-level failures mid-exchange count as timeouts (retryable).
            if (attempt >= retries_)
                throw RetrievalError(RetrievalError::Kind::Timeout, e.what(), true);
        }
        ++attempt;
        std::this_thread::sleep_for(std::chrono::milliseconds(backoff_ms_));
    }
}

SearchResult TcpIndexClient::search(const std::vector<float>& embedding, int k) {
    const json req{{"op", "search"}, {"embedding", embedding}, {"k", k}};
    const std::string body = request(req.dump());
    json resp;
    try {
        resp = json::parse(body);
    } catch (const std::exception& e) {
        throw RetrievalError(RetrievalError::Kind::Protocol,
                             std::string("bad response JSON: ") + e.what(), false);
    }
    if (resp.contains("error"))
        throw RetrievalError(RetrievalError::Kind::Remote, resp.at("error").get<std::string>(), false);
    SearchResult out;
    out.ids = resp.at("ids").get<std::vector<std::string>>();
    out.scores = resp.at("scores").get<std::vector<float>>();
    if (out.ids.size() != out.scores.size())
        throw RetrievalError(RetrievalError::Kind::Protocol, "ids/scores length mismatch", false);
    return out;
}

SearchResult LocalIndexClient::search(const std::vector<float>& embedding, int k) {
    const std::vector<SearchHit> hits = index_->search(embedding, k);
    SearchResult out;
    for (const auto& [id, score] : hits) {
        out.ids.push_back(id);
        out.scores.push_back(score);
    }
    return out;
}

}  // namespace unirag
