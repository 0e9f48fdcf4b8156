// Copyright (c) 2026 the unirag authors
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <chrono>
#include <thread>

#include <json.hpp>

#include "unirag/index_service.hpp"
#include "unirag/rng.hpp"
#include "unirag/wire.hpp"

using namespace unirag;
using nlohmann::json;

namespace {

AnyIndex make_index(int n, int dim, uint64_t seed) {
    Rng rng(seed);
    AnyIndex idx;
    idx.kind = IndexKind::Flat;
    for (int i = 0; i < n; ++i) {
        std::vector<float> v(static_cast<size_t>(dim));
        for (float& x : v) x = static_cast<float>(rng.next_gaussian());
        char buf[16];
        std::snprintf(buf, sizeof(buf), "p%04d", i);
        idx.flat.add(buf, v);
    }
    return idx;
}

std::vector<float> random_query(Rng& rng, int dim) {
    std::vector<float> q(static_cast<size_t>(dim));
    for (float& x : q) x = static_cast<float>(rng.next_gaussian());
    return q;
}

int raw_connect(int port) {
    const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    REQUIRE(fd >= 0);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(static_cast<uint16_t>(port));
    ::inet_pton(AF_INET, "127.0.0.1", &addr.sin_addr);
    REQUIRE(::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) == 0);
    return fd;
}

}  // namespace

TEST_SUITE("service") {

TEST_CASE("ping, stats, add, and freeze semantics") {
    ServerConfig cfg;
    cfg.port = 0;
    IndexServer server(make_index(8, 4, 1), cfg);
    server.start();
    TcpIndexClient client("127.0.0.1", server.port());

    CHECK(json::parse(client.request(R"({"op":"ping"})")) == json{{"ok", true}});

    json stats = json::parse(client.request(R"({"op":"stats"})"));
    CHECK(stats["n"] == 8);
    CHECK(stats["dim"] == 4);
    CHECK(stats["frozen"] == false);

    // Adds are allowed before the first search.
    json added = json::parse(
        client.request(json{{"op", "add"}, {"id", "extra"}, {"vector", {1.0, 0.0, 0.0, 0.0}}}.dump()));
    CHECK(added["ok"] == true);
    CHECK(added["n"] == 9);

    // First search freezes the index.
    const SearchResult r = client.search({1.0f, 0.0f, 0.0f, 0.0f}, 3);
    CHECK(r.ids.size() == 3);
    stats = json::parse(client.request(R"({"op":"stats"})"));
    CHECK(stats["frozen"] == true);
    json rejected = json::parse(
        client.request(json{{"op", "add"}, {"id", "late"}, {"vector", {0.0, 1.0, 0.0, 0.0}}}.dump()));
    CHECK(rejected["error"] == "index frozen");

    server.stop();
}

TEST_CASE("protocol errors keep the connection open") {
    ServerConfig cfg;
    cfg.port = 0;
    IndexServer server(make_index(4, 4, 2), cfg);
    server.start();
    TcpIndexClient client("127.0.0.1", server.port());

    CHECK(json::parse(client.request("not json at all")).contains("error"));
    CHECK(json::parse(client.request(R"({"op":"transmogrify"})"))["error"] == "unknown op");
    // dim mismatch is reported as a remote error string.
    json bad = json::parse(client.request(R"({"op":"search","embedding":[1.0,2.0],"k":1})"));
    CHECK(bad["error"] == "dim mismatch");
    CHECK_THROWS_AS(client.search({1.0f, 2.0f}, 1), RetrievalError);

    server.stop();
}

TEST_CASE("two frames on one connection give two responses in order") {
    ServerConfig cfg;
    cfg.port = 0;
    IndexServer server(make_index(4, 4, 3), cfg);
    server.start();
    const int fd = raw_connect(server.port());

    const std::string m1 = R"({"op":"ping"})";
    const std::string m2 = R"({"op":"stats"})";
    // Write both frames back-to-back before reading anything.
    std::string buffer;
    auto frame = [](const std::string& body) {
        std::string out;
        const uint32_t len = static_cast<uint32_t>(body.size());
        out.push_back(static_cast<char>(len >> 24));
        out.push_back(static_cast<char>(len >> 16));
        out.push_back(static_cast<char>(len >> 8));
        out.push_back(static_cast<char>(len));
        out += body;
        return out;
    };
    const std::string both = frame(m1) + frame(m2);
    write_exact(fd, both.data(), both.size());
    std::string r1, r2;
    REQUIRE(read_frame(fd, r1));
    REQUIRE(read_frame(fd, r2));
    CHECK(json::parse(r1) == json{{"ok", true}});
    CHECK(json::parse(r2)["n"] == 4);
    ::close(fd);
    server.stop();
}

TEST_CASE("search with k larger than the index returns everything") {
    ServerConfig cfg;
    cfg.port = 0;
    IndexServer server(make_index(5, 4, 4), cfg);
    server.start();
    TcpIndexClient client("127.0.0.1", server.port());
    const SearchResult r = client.search({1.0f, 0.0f, 0.0f, 0.0f}, 50);
    CHECK(r.ids.size() == 5);
    for (size_t i = 1; i < r.scores.size(); ++i) CHECK(r.scores[i] <= r.scores[i - 1]);
    server.stop();
}

TEST_CASE("round trip of an indexed vector returns its id first") {
    AnyIndex idx = make_index(16, 8, 5);
    // Normalize rows so the stored vector is its own best match.
    for (int i = 0; i < idx.flat.size(); ++i) {
        float* v = idx.flat.vectors.data() + static_cast<size_t>(i) * 8;
        double n = 0;
        for (int j = 0; j < 8; ++j) n += static_cast<double>(v[j]) * v[j];
        for (int j = 0; j < 8; ++j) v[j] = static_cast<float>(v[j] / std::sqrt(n));
    }
    const std::vector<float> probe(idx.flat.vector(11), idx.flat.vector(11) + 8);
    ServerConfig cfg;
    cfg.port = 0;
    IndexServer server(std::move(idx), cfg);
    server.start();
    TcpIndexClient client("127.0.0.1", server.port());
    CHECK(client.search(probe, 1).ids[0] == "p0011");
    server.stop();
}

TEST_CASE("client retries with fixed backoff until exhaustion") {
    // Nothing listens on this port.
    const int retries = 2, backoff_ms = 60;
    TcpIndexClient client("127.0.0.1", 1, /*timeout_ms*/ 150, retries, backoff_ms);
    const auto start = std::chrono::steady_clock::now();
    bool threw = false;
    try {
        client.search({1.0f}, 1);
    } catch (const RetrievalError& e) {
        threw = true;
        CHECK(e.retryable());
    }
    const double elapsed_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    CHECK(threw);
    // Wall time covers the two backoff sleeps; allow generous slack above.
    CHECK(elapsed_ms >= retries * backoff_ms * 0.9);
    CHECK(elapsed_ms < 5000);
}

TEST_CASE("concurrent clients match the in-process search exactly") {
    AnyIndex idx = make_index(128, 16, 6);
    const AnyIndex local = idx;  // copy for the differential
    ServerConfig cfg;
    cfg.port = 0;
    IndexServer server(std::move(idx), cfg);
    server.start();
    const int port = server.port();

    const int n_clients = 8, n_queries = 40;
    std::vector<int> failures(static_cast<size_t>(n_clients), 0);
    std::vector<std::thread> threads;
    for (int c = 0; c < n_clients; ++c) {
        threads.emplace_back([&, c]() {
            Rng rng(1000 + static_cast<uint64_t>(c));
            TcpIndexClient client("127.0.0.1", port);
            for (int qi = 0; qi < n_queries; ++qi) {
                const std::vector<float> q = random_query(rng, 16);
                const SearchResult got = client.search(q, 10);
                const auto want = local.search(q, 10);
                if (got.ids.size() != want.size()) {
                    ++failures[static_cast<size_t>(c)];
                    continue;
                }
                for (size_t i = 0; i < want.size(); ++i) {
                    if (got.ids[i] != want[i].first || got.scores[i] != want[i].second)
                        ++failures[static_cast<size_t>(c)];
                }
            }
        });
    }
    for (auto& t : threads) t.join();
    for (int c = 0; c < n_clients; ++c) CHECK(failures[static_cast<size_t>(c)] == 0);
    server.stop();
}

TEST_CASE("oversized frames are rejected") {
    ServerConfig cfg;
    cfg.port = 0;
    IndexServer server(make_index(4, 4, 7), cfg);
    server.start();
    const int fd = raw_connect(server.port());
    // Header advertises a body beyond the 16 MiB cap; server must drop us.
    const uint8_t header[4] = {0x7F, 0xFF, 0xFF, 0xFF};
    write_exact(fd, header, 4);
    std::string resp;
    bool closed = false;
    try {
        closed = !read_frame(fd, resp);
    } catch (const std::exception&) {
        closed = true;
    }
    CHECK(closed);
    ::close(fd);
    server.stop();
}

}  // TEST_SUITE
