// Copyright (c) 2026 the unirag authors
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>

#include "unirag/index.hpp"
#include "unirag/kv_compress.hpp"
#include "unirag/rng.hpp"

using namespace unirag;

namespace {

std::string padded_id(int i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "v%05d", i);
    return buf;
}

FlatIndex random_index(Rng& rng, int n, int dim) {
    FlatIndex idx;
    for (int i = 0; i < n; ++i) {
        std::vector<float> v(static_cast<size_t>(dim));
        for (float& x : v) x = static_cast<float>(rng.next_gaussian());
        idx.add(padded_id(i), v);
    }
    return idx;
}

// O(n*dim) scalar brute force with the same score type and tie rule.
std::vector<SearchHit> brute_force(const FlatIndex& idx, const std::vector<float>& q, int k) {
    std::vector<SearchHit> all;
    for (int i = 0; i < idx.size(); ++i) {
        double acc = 0.0;
        for (int j = 0; j < idx.dim; ++j)
            acc += static_cast<double>(q[static_cast<size_t>(j)]) * idx.vector(i)[j];
        all.emplace_back(idx.ids[static_cast<size_t>(i)], static_cast<float>(acc));
    }
    std::sort(all.begin(), all.end(), [](const SearchHit& a, const SearchHit& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    all.resize(static_cast<size_t>(std::min<size_t>(static_cast<size_t>(k), all.size())));
    return all;
}

std::string temp_path(const char* name) {
    return std::string("/tmp/unirag_test_") + name + "_" + std::to_string(::getpid());
}

}  // namespace

TEST_SUITE("index") {

TEST_CASE("flat search finds a stored vector first") {
    Rng rng(301);
    FlatIndex idx = random_index(rng, 32, 8);
    // Normalize all vectors so self-similarity is maximal.
    for (int i = 0; i < idx.size(); ++i) {
        float* v = idx.vectors.data() + static_cast<size_t>(i) * idx.dim;
        double n = 0;
        for (int j = 0; j < idx.dim; ++j) n += static_cast<double>(v[j]) * v[j];
        const float inv = static_cast<float>(1.0 / std::sqrt(n));
        for (int j = 0; j < idx.dim; ++j) v[j] *= inv;
    }
    const std::vector<float> q(idx.vector(7), idx.vector(7) + idx.dim);
    const auto hits = flat_search(idx, q, 3);
    CHECK(hits[0].first == padded_id(7));
}

TEST_CASE("flat search breaks ties toward the lower id") {
    FlatIndex idx;
    idx.add("b", {1.0f, 0.0f});
    idx.add("a", {1.0f, 0.0f});
    const auto hits = flat_search(idx, {1.0f, 0.0f}, 1);
    CHECK(hits[0].first == "a");
}

TEST_CASE("flat search equals the brute-force oracle on random instances") {
    Rng rng(307);
    for (int trial = 0; trial < 20; ++trial) {
        const int n = 20 + static_cast<int>(rng.next_below(236));
        FlatIndex idx = random_index(rng, n, 32);
        std::vector<float> q(32);
        for (float& x : q) x = static_cast<float>(rng.next_gaussian());
        const int k = 1 + static_cast<int>(rng.next_below(12));
        CHECK(flat_search(idx, q, k) == brute_force(idx, q, k));
    }
}

TEST_CASE("flat search validates inputs") {
    FlatIndex empty;
    CHECK_THROWS_AS(flat_search(empty, {1.0f}, 1), std::runtime_error);
    FlatIndex idx;
    idx.add("a", {1.0f, 2.0f});
    CHECK_THROWS_AS(flat_search(idx, {1.0f}, 1), std::invalid_argument);
    CHECK_THROWS_AS(flat_search(idx, {1.0f, 2.0f}, 0), std::invalid_argument);
    CHECK(flat_search(idx, {1.0f, 2.0f}, 10).size() == 1);  // k > n returns all
    CHECK_THROWS_AS(idx.add("a", {3.0f, 4.0f}), std::invalid_argument);
}

TEST_CASE("pq training reproduces an exactly-coverable set") {
    // 2^bits distinct vectors with bits=2 -> one centroid per point.
    Rng rng(311);
    const int n = 4, dim = 4;
    std::vector<float> data;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < dim; ++j)
            data.push_back(i == j % n ? 5.0f + static_cast<float>(i) : static_cast<float>(i));
    const PQCodebook cb = train_pq(data.data(), n, dim, 2, 2, 25, 17);
    for (int i = 0; i < n; ++i) {
        const auto codes = pq_encode(cb, data.data() + static_cast<size_t>(i) * dim);
        const auto recon = pq_decode(cb, codes.data());
        for (int j = 0; j < dim; ++j)
            CHECK(recon[static_cast<size_t>(j)] ==
                  doctest::Approx(data[static_cast<size_t>(i) * dim + j]).epsilon(1e-5));
    }
}

TEST_CASE("pq on identical vectors is exact") {
    std::vector<float> data;
    for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 4; ++j) data.push_back(1.5f);
    const PQCodebook cb = train_pq(data.data(), 8, 4, 2, 2, 10, 19);
    const auto codes = pq_encode(cb, data.data());
    const auto recon = pq_decode(cb, codes.data());
    for (float v : recon) CHECK(v == doctest::Approx(1.5f).epsilon(1e-6));
}

TEST_CASE("pq k-means sweep error is monotone non-increasing") {
    Rng rng(313);
    const int n = 512, dim = 16;
    std::vector<float> data(static_cast<size_t>(n) * dim);
    for (float& v : data) v = static_cast<float>(rng.next_gaussian());
    std::vector<double> sweep_mse;
    (void)train_pq(data.data(), n, dim, 4, 4, 12, 23, false, &sweep_mse);
    REQUIRE(sweep_mse.size() >= 2);
    for (size_t i = 1; i < sweep_mse.size(); ++i) CHECK(sweep_mse[i] <= sweep_mse[i - 1] + 1e-9);
}

TEST_CASE("pq training requires enough vectors") {
    std::vector<float> data(16 * 4, 0.0f);
    CHECK_THROWS_AS(train_pq(data.data(), 16, 4, 2, 8, 5, 1), std::invalid_argument);
    CHECK_THROWS_AS(train_pq(data.data(), 16, 4, 3, 2, 5, 1), std::invalid_argument);
}

TEST_CASE("pq encode is deterministic and scalar quantization matches the oracle") {
    Rng rng(317);
    // m == dim, so each subspace is one scalar; PQ must match per-scalar
    // nearest-centroid quantization.
    const int n = 64, dim = 4;
    std::vector<float> data(static_cast<size_t>(n) * dim);
    for (float& v : data) v = static_cast<float>(rng.next_gaussian());
    const PQCodebook cb = train_pq(data.data(), n, dim, dim, 4, 20, 29);
    std::vector<float> probe(static_cast<size_t>(dim));
    for (float& v : probe) v = static_cast<float>(rng.next_gaussian());
    const auto c1 = pq_encode(cb, probe.data());
    const auto c2 = pq_encode(cb, probe.data());
    CHECK(c1 == c2);
    const auto recon = pq_decode(cb, c1.data());
    for (int s = 0; s < dim; ++s) {
        // Scalar oracle: nearest centroid of subspace s.
        double best = 1e300;
        float best_c = 0;
        for (int c = 0; c < cb.ksub(); ++c) {
            const float cent = cb.centroids[static_cast<size_t>(s) * cb.ksub() + c];
            const double d = std::abs(static_cast<double>(probe[static_cast<size_t>(s)]) - cent);
            if (d < best) {
                best = d;
                best_c = cent;
            }
        }
        CHECK(recon[static_cast<size_t>(s)] == doctest::Approx(best_c).epsilon(1e-6));
    }
}

TEST_CASE("pq reconstruction error is non-increasing in bits") {
    Rng rng(331);
    const int n = 1024, dim = 16;
    std::vector<float> data(static_cast<size_t>(n) * dim);
    for (float& v : data) v = static_cast<float>(rng.next_gaussian());
    double prev = 1e300;
    for (int bits : {4, 6, 8}) {
        const PQCodebook cb = train_pq(data.data(), n, dim, 4, bits, 15, 37);
        double err = 0.0;
        for (int i = 0; i < n; ++i) {
            const auto codes = pq_encode(cb, data.data() + static_cast<size_t>(i) * dim);
            const auto recon = pq_decode(cb, codes.data());
            for (int j = 0; j < dim; ++j) {
                const double d = data[static_cast<size_t>(i) * dim + j] - recon[static_cast<size_t>(j)];
                err += d * d;
            }
        }
        CHECK(err <= prev + 1e-6);
        prev = err;
    }
}

TEST_CASE("rotation is orthonormal and pq round-trips through it") {
    const auto rot = random_rotation(16, 99);
    for (int i = 0; i < 16; ++i) {
        for (int j = 0; j < 16; ++j) {
            double acc = 0.0;
            for (int x = 0; x < 16; ++x)
                acc += static_cast<double>(rot[static_cast<size_t>(i) * 16 + x]) *
                       rot[static_cast<size_t>(j) * 16 + x];
            CHECK(acc == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-5));
        }
    }
    Rng rng(341);
    std::vector<float> data(512 * 16);
    for (float& v : data) v = static_cast<float>(rng.next_gaussian());
    const PQCodebook cb = train_pq(data.data(), 512, 16, 4, 6, 12, 43, /*with_rotation*/ true);
    CHECK(cb.has_rotation());
    const auto codes = pq_encode(cb, data.data());
    const auto recon = pq_decode(cb, codes.data());
    double err = 0.0;
    for (int j = 0; j < 16; ++j) {
        const double d = data[static_cast<size_t>(j)] - recon[static_cast<size_t>(j)];
        err += d * d;
    }
    CHECK(err < 16.0);  // sane reconstruction, not an identity check
}

TEST_CASE("pq search scores obey the Cauchy-Schwarz error bound") {
    Rng rng(347);
    FlatIndex flat = random_index(rng, 256, 32);
    const PQIndex pq = build_pq_index(flat, 8, 8, 12, 51);
    std::vector<float> q(32);
    for (float& x : q) x = static_cast<float>(rng.next_gaussian());
    double qnorm = 0;
    for (float x : q) qnorm += static_cast<double>(x) * x;
    qnorm = std::sqrt(qnorm);
    const auto hits = pq_search(pq, q, 10);
    for (const auto& [id, score] : hits) {
        const int row = static_cast<int>(std::find(pq.ids.begin(), pq.ids.end(), id) - pq.ids.begin());
        const auto recon = pq_decode(pq.codebook, pq.codes.data() + static_cast<size_t>(row) * pq.codebook.m);
        double exact = 0, err = 0;
        for (int j = 0; j < 32; ++j) {
            exact += static_cast<double>(q[static_cast<size_t>(j)]) * flat.vector(row)[j];
            const double d = flat.vector(row)[j] - recon[static_cast<size_t>(j)];
            err += d * d;
        }
        CHECK(std::abs(score - exact) <= qnorm * std::sqrt(err) + 1e-4);
    }
}

TEST_CASE("a lossless codebook makes pq search equal flat search") {
    // 2^bits >= n distinct vectors, m=dim scalars: training with k-means can
    // place one centroid per distinct scalar, making the codec exact.
    Rng rng(353);
    FlatIndex flat = random_index(rng, 16, 4);
    const PQIndex pq = build_pq_index(flat, 4, 4, 30, 57);
    std::vector<float> q(4);
    for (float& x : q) x = static_cast<float>(rng.next_gaussian());
    const auto a = flat_search(flat, q, 5);
    const auto b = pq_search(pq, q, 5);
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].first == b[i].first);
        CHECK(a[i].second == doctest::Approx(b[i].second).epsilon(1e-4));
    }
}

TEST_CASE("heavy hitter selection follows mass with recency tie-break") {
    CHECK(heavy_hitter_select({0.9, 0.1, 0.8, 0.2}, 0.5) == std::vector<int>{0, 2});
    // Uniform masses keep the most recent half.
    CHECK(heavy_hitter_select({1.0, 1.0, 1.0, 1.0}, 0.5) == std::vector<int>{2, 3});
    // keep_ratio 1.0 is the identity.
    CHECK(heavy_hitter_select({0.3, 0.1, 0.2}, 1.0) == std::vector<int>{0, 1, 2});
    CHECK_THROWS_AS(heavy_hitter_select({0.1}, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(heavy_hitter_select({0.1}, 1.5), std::invalid_argument);
    CHECK_THROWS_AS(heavy_hitter_select({-0.1}, 0.5), std::invalid_argument);
}

TEST_CASE("heavy hitter count is exactly ceil(L*ratio) and a subsequence") {
    Rng rng(359);
    for (int trial = 0; trial < 50; ++trial) {
        const int l = 1 + static_cast<int>(rng.next_below(40));
        std::vector<double> masses(static_cast<size_t>(l));
        for (double& m : masses) m = rng.next_double();
        const double ratio = 0.05 + 0.95 * rng.next_double();
        const auto kept = heavy_hitter_select(masses, ratio);
        CHECK(static_cast<int>(kept.size()) == static_cast<int>(std::ceil(l * ratio)));
        CHECK(std::is_sorted(kept.begin(), kept.end()));
        CHECK(std::adjacent_find(kept.begin(), kept.end()) == kept.end());
    }
}

TEST_CASE("index save/load round trip is bit exact") {
    Rng rng(367);
    AnyIndex idx;
    idx.kind = IndexKind::Flat;
    idx.flat = random_index(rng, 64, 16);
    const std::string path = temp_path("flat");
    save_index(path, idx);
    const AnyIndex loaded = load_index(path);
    CHECK(loaded.kind == IndexKind::Flat);
    CHECK(loaded.flat.ids == idx.flat.ids);
    CHECK(loaded.flat.vectors == idx.flat.vectors);

    std::vector<float> q(16);
    for (float& x : q) x = static_cast<float>(rng.next_gaussian());
    CHECK(flat_search(loaded.flat, q, 7) == flat_search(idx.flat, q, 7));
    std::remove(path.c_str());
}

TEST_CASE("pq index save/load round trip is bit exact") {
    Rng rng(373);
    AnyIndex idx;
    idx.kind = IndexKind::PQ;
    FlatIndex flat = random_index(rng, 300, 32);
    idx.pq = build_pq_index(flat, 8, 8, 10, 61, /*with_rotation*/ true);
    const std::string path = temp_path("pq");
    save_index(path, idx);
    const AnyIndex loaded = load_index(path);
    CHECK(loaded.kind == IndexKind::PQ);
    CHECK(loaded.pq.ids == idx.pq.ids);
    CHECK(loaded.pq.codes == idx.pq.codes);
    CHECK(loaded.pq.codebook.centroids == idx.pq.codebook.centroids);
    CHECK(loaded.pq.codebook.rotation == idx.pq.codebook.rotation);
    std::remove(path.c_str());
}

TEST_CASE("truncated index file fails cleanly") {
    Rng rng(379);
    AnyIndex idx;
    idx.kind = IndexKind::Flat;
    idx.flat = random_index(rng, 16, 8);
    const std::string path = temp_path("trunc");
    save_index(path, idx);
    // Truncate the file to half.
    FILE* f = std::fopen(path.c_str(), "rb+");
    std::fseek(f, 0, SEEK_END);
    const long size = std::ftell(f);
    std::fclose(f);
    REQUIRE(::truncate(path.c_str(), size / 2) == 0);
    CHECK_THROWS_WITH_AS(load_index(path), "truncated file", std::runtime_error);
    std::remove(path.c_str());
    CHECK_THROWS_AS(load_index("/nonexistent/unirag.idx"), std::runtime_error);
}

TEST_CASE("compression ratio accounting matches the float16 formula") {
    // A 128-wide head split into 32 subquantizers of 8 bits: 128*2/32 = 8.
    CHECK(pq_compression_ratio(128 / 32, 8) == doctest::Approx(8.0));
    CHECK(pq_compression_ratio(2, 8) == doctest::Approx(4.0));
    CHECK_THROWS_AS(pq_compression_ratio(0, 8), std::invalid_argument);
}

}  // TEST_SUITE
