// Copyright (c) 2026 the unirag authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "unirag/index.hpp"
#include "unirag/retrieval_client.hpp"

namespace unirag {

struct ServerConfig {
    std::string bind_addr = "127.0.0.1";
    int port = 7077;  // 0 picks an ephemeral port
    int max_connections = 64;
};

// JSON-over-TCP index service. Ops: "ping", "search", "add", "stats".
// The index freezes on the first search; adds after that are rejected.
// Each connection handles one request/response pair per message and stays
// open across malformed requests.
class IndexServer {
public:
    IndexServer(AnyIndex index, ServerConfig config);
    ~IndexServer();

    // Binds and starts the accept loop; throws on bind failure.
    void start();
    void stop();
    // start() + block until SIGINT/SIGTERM (CLI entry point).
    void run_until_signal();

    int port() const { return actual_port_; }
    bool frozen() const { return frozen_.load(); }

private:
    void accept_loop();
    void handle_connection(int fd);
    std::string handle_request(const std::string& body);

    AnyIndex index_;
    ServerConfig config_;
    int listen_fd_ = -1;
    int actual_port_ = 0;
    std::atomic<bool> running_{false};
    std::atomic<bool> frozen_{false};
    std::mutex index_mutex_;  // guards mutation before freeze
    std::thread accept_thread_;
    std::vector<std::thread> workers_;
    std::mutex workers_mutex_;
};

// TCP client with fixed-backoff retries on connection failures. Timeouts and
// connect errors are retryable; protocol and remote errors are not.
class TcpIndexClient : public RetrieverClient {
public:
    TcpIndexClient(std::string host, int port, int timeout_ms = 2000, int retries = 3,
                   int backoff_ms = 100);

    SearchResult search(const std::vector<float>& embedding, int k) override;

    // Sends one raw JSON body and returns the response body (for tests and
    // the add/stats ops).
    std::string request(const std::string& body);

private:
    int connect_once();

    std::string host_;
    int port_;
    int timeout_ms_;
    int retries_;
    int backoff_ms_;
};

// In-process transport over the same interface, for tests and local decode.
class LocalIndexClient : public RetrieverClient {
public:
    explicit LocalIndexClient(const AnyIndex* index) : index_(index) {}
    SearchResult search(const std::vector<float>& embedding, int k) override;

private:
    const AnyIndex* index_;
};

}  // namespace unirag
