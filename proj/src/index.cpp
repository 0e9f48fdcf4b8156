// Copyright (c) 2026 the unirag authors
// SPDX-License-Identifier: Apache-2.0
#include "unirag/index.hpp"

#include <algorithm>
#include <stdexcept>
#include <unordered_set>

#include "unirag/binary_io.hpp"

namespace unirag {

namespace {

constexpr char kMagic[4] = {'I', 'I', 'D', 'X'};
constexpr uint32_t kVersion = 1;

// Shared top-k selection: score descending, id ascending on ties.
std::vector<SearchHit> top_k(std::vector<std::pair<float, const std::string*>>& scored, int k) {
    const auto cmp = [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return *a.second < *b.second;
    };
    const size_t keep = std::min(static_cast<size_t>(k), scored.size());
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(keep), scored.end(), cmp);
    std::vector<SearchHit> out;
    out.reserve(keep);
    for (size_t i = 0; i < keep; ++i) out.emplace_back(*scored[i].second, scored[i].first);
    return out;
}

}  // namespace

void FlatIndex::add(const std::string& id, const std::vector<float>& vec) {
    if (dim == 0) dim = static_cast<int>(vec.size());
    if (static_cast<int>(vec.size()) != dim) throw std::invalid_argument("FlatIndex::add: dim mismatch");
    for (const std::string& existing : ids) {
        if (existing == id) throw std::invalid_argument("FlatIndex::add: duplicate id " + id);
    }
    ids.push_back(id);
    vectors.insert(vectors.end(), vec.begin(), vec.end());
}

std::vector<SearchHit> flat_search(const FlatIndex& index, const std::vector<float>& query, int k) {
    if (k < 1) throw std::invalid_argument("flat_search: k must be >= 1");
    if (index.size() == 0) throw std::runtime_error("flat_search: empty index");
    if (static_cast<int>(query.size()) != index.dim)
        throw std::invalid_argument("flat_search: dim mismatch");
    std::vector<std::pair<float, const std::string*>> scored;
    scored.reserve(index.ids.size());
    for (int i = 0; i < index.size(); ++i) {
        const float* v = index.vector(i);
        double acc = 0.0;
        for (int j = 0; j < index.dim; ++j) acc += static_cast<double>(query[static_cast<size_t>(j)]) * v[j];
        scored.emplace_back(static_cast<float>(acc), &index.ids[static_cast<size_t>(i)]);
    }
    return top_k(scored, k);
}

PQIndex build_pq_index(const FlatIndex& flat, int m, int bits, int iterations, uint64_t seed,
                       bool with_rotation) {
    PQIndex idx;
    idx.codebook = train_pq(flat.vectors.data(), flat.size(), flat.dim, m, bits, iterations, seed,
                            with_rotation);
    idx.ids = flat.ids;
    idx.codes.reserve(static_cast<size_t>(flat.size()) * m);
    for (int i = 0; i < flat.size(); ++i) {
        const std::vector<uint8_t> c = pq_encode(idx.codebook, flat.vector(i));
        idx.codes.insert(idx.codes.end(), c.begin(), c.end());
    }
    return idx;
}

std::vector<SearchHit> pq_search(const PQIndex& index, const std::vector<float>& query, int k) {
    if (k < 1) throw std::invalid_argument("pq_search: k must be >= 1");
    if (index.size() == 0) throw std::runtime_error("pq_search: empty index");
    if (static_cast<int>(query.size()) != index.codebook.dim)
        throw std::invalid_argument("pq_search: dim mismatch");
    const std::vector<float> tables = pq_adc_tables(index.codebook, query.data());
    const int m = index.codebook.m;
    const int ksub = index.codebook.ksub();
    std::vector<std::pair<float, const std::string*>> scored;
    scored.reserve(index.ids.size());
    for (int i = 0; i < index.size(); ++i) {
        const uint8_t* code = index.codes.data() + static_cast<size_t>(i) * m;
        double acc = 0.0;
        for (int s = 0; s < m; ++s) acc += tables[static_cast<size_t>(s) * ksub + code[s]];
        scored.emplace_back(static_cast<float>(acc), &index.ids[static_cast<size_t>(i)]);
    }
    return top_k(scored, k);
}

void save_index(const std::string& path, const AnyIndex& index) {
    BinaryWriter w(path);
    w.magic(kMagic);
    w.u32(kVersion);
    w.u8(static_cast<uint8_t>(index.kind));
    w.i32(index.dim());
    w.i32(index.size());
    if (index.kind == IndexKind::Flat) {
        for (const std::string& id : index.flat.ids) w.str(id);
        w.f32_array(index.flat.vectors.data(), index.flat.vectors.size());
    } else {
        for (const std::string& id : index.pq.ids) w.str(id);
        const PQCodebook& cb = index.pq.codebook;
        w.i32(cb.m);
        w.i32(cb.bits);
        w.u8(cb.has_rotation() ? 1 : 0);
        if (cb.has_rotation()) w.f32_array(cb.rotation.data(), cb.rotation.size());
        w.f32_array(cb.centroids.data(), cb.centroids.size());
        for (uint8_t c : index.pq.codes) w.u8(c);
    }
    w.close();
}

AnyIndex load_index(const std::string& path) {
    BinaryReader r(path);
    r.expect_magic(kMagic, "index");
    const uint32_t version = r.u32();
    if (version != kVersion) throw std::runtime_error("index: unsupported version");
    const uint8_t kind = r.u8();
    const int dim = r.i32();
    const int n = r.i32();
    if (dim < 1 || n < 0) throw std::runtime_error("index: corrupt header");
    AnyIndex out;
    if (kind == static_cast<uint8_t>(IndexKind::Flat)) {
        out.kind = IndexKind::Flat;
        out.flat.dim = dim;
        for (int i = 0; i < n; ++i) out.flat.ids.push_back(r.str());
        out.flat.vectors = r.f32_array(static_cast<size_t>(n) * dim);
    } else if (kind == static_cast<uint8_t>(IndexKind::PQ)) {
        out.kind = IndexKind::PQ;
        for (int i = 0; i < n; ++i) out.pq.ids.push_back(r.str());
        PQCodebook& cb = out.pq.codebook;
        cb.dim = dim;
        cb.m = r.i32();
        cb.bits = r.i32();
        if (cb.m < 1 || dim % cb.m != 0 || cb.bits < 1 || cb.bits > 16)
            throw std::runtime_error("index: corrupt codebook header");
        if (r.u8()) cb.rotation = r.f32_array(static_cast<size_t>(dim) * dim);
        cb.centroids = r.f32_array(static_cast<size_t>(cb.m) * cb.ksub() * cb.sub_dim());
        out.pq.codes.resize(static_cast<size_t>(n) * cb.m);
        for (auto& c : out.pq.codes) c = r.u8();
    } else {
        throw std::runtime_error("index: unknown kind");
    }
    if (!r.at_end()) throw std::runtime_error("index: trailing bytes");
    return out;
}

}  // namespace unirag
