// Copyright (c) 2026 the unirag authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <utility>
#include <vector>

#include "unirag/pq.hpp"

namespace unirag {

using SearchHit = std::pair<std::string, float>;

// Exact dot-product index over passage embeddings.
struct FlatIndex {
    int dim = 0;
    std::vector<std::string> ids;
    std::vector<float> vectors;  // [n, dim]

    int size() const { return static_cast<int>(ids.size()); }
    void add(const std::string& id, const std::vector<float>& vec);
    const float* vector(int row) const { return vectors.data() + static_cast<size_t>(row) * dim; }
};

// Exact top-k by dot product, descending; ties broken by ascending id.
std::vector<SearchHit> flat_search(const FlatIndex& index, const std::vector<float>& query, int k);

// Product-quantized index; scores are asymmetric-distance dot products.
struct PQIndex {
    PQCodebook codebook;
    std::vector<std::string> ids;
    std::vector<uint8_t> codes;  // [n, m]

    int size() const { return static_cast<int>(ids.size()); }
};

PQIndex build_pq_index(const FlatIndex& flat, int m, int bits, int iterations, uint64_t seed,
                       bool with_rotation = false);

std::vector<SearchHit> pq_search(const PQIndex& index, const std::vector<float>& query, int k);

enum class IndexKind : uint8_t { Flat = 0, PQ = 1 };

// On-disk index: magic "IIDX", version u32, kind u8, dim, n, ids, payload.
struct AnyIndex {
    IndexKind kind = IndexKind::Flat;
    FlatIndex flat;
    PQIndex pq;

    int dim() const { return kind == IndexKind::Flat ? flat.dim : pq.codebook.dim; }
    int size() const { return kind == IndexKind::Flat ? flat.size() : pq.size(); }
    std::vector<SearchHit> search(const std::vector<float>& query, int k) const {
        return kind == IndexKind::Flat ? flat_search(flat, query, k) : pq_search(pq, query, k);
    }
};

void save_index(const std::string& path, const AnyIndex& index);
AnyIndex load_index(const std::string& path);

}  // namespace unirag
