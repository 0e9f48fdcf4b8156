// Copyright (c) 2026 the unirag authors
// SPDX-License-Identifier: Apache-2.0
#include "unirag/kv_compress.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "unirag/rng.hpp"

namespace unirag {

std::vector<int> heavy_hitter_select(const std::vector<double>& masses, double keep_ratio) {
    if (!(keep_ratio > 0.0 && keep_ratio <= 1.0))
        throw std::invalid_argument("heavy_hitter_select: keep_ratio must be in (0, 1]");
    for (double m : masses) {
        if (m < 0.0) throw std::invalid_argument("heavy_hitter_select: negative attention mass");
    }
    const int l = static_cast<int>(masses.size());
    const int keep = static_cast<int>(std::ceil(l * keep_ratio));
    std::vector<int> order(static_cast<size_t>(l));
    std::iota(order.begin(), order.end(), 0);
    // Mass descending; ties prefer the more recent (larger index) token.
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        if (masses[static_cast<size_t>(a)] != masses[static_cast<size_t>(b)])
            return masses[static_cast<size_t>(a)] > masses[static_cast<size_t>(b)];
        return a > b;
    });
    order.resize(static_cast<size_t>(keep));
    std::sort(order.begin(), order.end());
    return order;
}

namespace {

LayerKV gather_layer_rows(const LayerKV& kv, const std::vector<int>& rows) {
    NoGradScope ng;
    return LayerKV{gather_rows(kv.keys, rows), gather_rows(kv.values, rows)};
}

double heavy_hitter_ratio(int original, int kept) {
    return kept == 0 ? 1.0 : static_cast<double>(original) / kept;
}

}  // namespace

CompressedKV heavy_hitter_prune(const PassageKV& kv, const std::vector<double>& attention_mass,
                                double keep_ratio) {
    if (static_cast<int>(attention_mass.size()) != kv.rows())
        throw std::invalid_argument("heavy_hitter_prune: attention stats length mismatch");

    std::vector<int> kept;
    std::vector<int> kept_per_segment;
    for (int s = 0; s < kv.segments(); ++s) {
        const auto [begin, end] = kv.segment_range(s);
        std::vector<double> local(attention_mass.begin() + begin, attention_mass.begin() + end);
        const std::vector<int> sel = heavy_hitter_select(local, keep_ratio);
        for (int i : sel) kept.push_back(begin + i);
        kept_per_segment.push_back(static_cast<int>(sel.size()));
    }

    CompressedKV out;
    out.kind = CompressionKind::HeavyHitter;
    out.original_token_count = kv.rows();
    out.kept_rows = kept;
    out.compression_ratio = heavy_hitter_ratio(kv.rows(), static_cast<int>(kept.size()));

    PassageKV pruned;
    pruned.layer_begin = kv.layer_begin;
    pruned.layer_end = kv.layer_end;
    pruned.strategy = kv.strategy;
    pruned.frozen = kv.frozen;
    pruned.passage_ids = kv.passage_ids;
    pruned.segment_rows = kept_per_segment;
    for (int i : kept) pruned.position_ids.push_back(kv.position_ids[static_cast<size_t>(i)]);
    pruned.layers.reserve(kv.layers.size());
    for (const LayerKV& layer : kv.layers) pruned.layers.push_back(gather_layer_rows(layer, kept));
    out.pruned = std::move(pruned);
    return out;
}

KVCodec train_kv_codec(const std::vector<PassageKV>& corpus_kvs, int m, int bits, int iterations,
                       uint64_t seed) {
    if (corpus_kvs.empty()) throw std::invalid_argument("train_kv_codec: no training KV");
    const int lb = corpus_kvs[0].layer_begin, le = corpus_kvs[0].layer_end;
    const int d_h = corpus_kvs[0].layers.at(0).keys.dim(2);
    KVCodec codec;
    codec.m = m;
    codec.bits = bits;
    codec.layer_begin = lb;
    codec.layer_end = le;
    for (int l = lb; l <= le; ++l) {
        // Pool all head vectors of this layer across passages and heads.
        std::vector<float> keys, values;
        for (const PassageKV& kv : corpus_kvs) {
            if (kv.layer_begin != lb || kv.layer_end != le)
                throw std::invalid_argument("train_kv_codec: inconsistent layer ranges");
            const LayerKV& layer = kv.layers[static_cast<size_t>(l - lb)];
            const float* pk = layer.keys.data();
            const float* pv = layer.values.data();
            const size_t n = layer.keys.numel();
            keys.insert(keys.end(), pk, pk + n);
            values.insert(values.end(), pv, pv + n);
        }
        const int n_vec = static_cast<int>(keys.size()) / d_h;
        codec.key_books.push_back(
            train_pq(keys.data(), n_vec, d_h, m, bits, iterations, derive_seed(seed, static_cast<uint64_t>(l), 0)));
        codec.value_books.push_back(
            train_pq(values.data(), n_vec, d_h, m, bits, iterations, derive_seed(seed, static_cast<uint64_t>(l), 1)));
    }
    return codec;
}

CompressedKV compress_kv(const KVCodec& codec, const PassageKV& kv) {
    if (kv.layer_begin != codec.layer_begin || kv.layer_end != codec.layer_end)
        throw std::invalid_argument("compress_kv: codec layer range mismatch");
    CompressedKV out;
    out.kind = CompressionKind::PQ;
    out.original_token_count = kv.rows();
    out.position_ids = kv.position_ids;
    out.passage_ids = kv.passage_ids;
    out.segment_rows = kv.segment_rows;
    out.layer_begin = kv.layer_begin;
    out.layer_end = kv.layer_end;
    out.strategy = kv.strategy;
    const int d_h = kv.layers.at(0).keys.dim(2);
    out.compression_ratio = pq_compression_ratio(d_h / codec.m, codec.bits);
    for (size_t li = 0; li < kv.layers.size(); ++li) {
        const LayerKV& layer = kv.layers[li];
        const int rows = layer.keys.dim(0), hk = layer.keys.dim(1);
        CompressedKV::PQLayerCodes codes;
        codes.key_codes.reserve(static_cast<size_t>(rows) * hk * codec.m);
        codes.value_codes.reserve(static_cast<size_t>(rows) * hk * codec.m);
        for (int r = 0; r < rows; ++r) {
            for (int h = 0; h < hk; ++h) {
                const size_t off = (static_cast<size_t>(r) * hk + h) * d_h;
                const auto kc = pq_encode(codec.key_books[li], layer.keys.data() + off);
                const auto vc = pq_encode(codec.value_books[li], layer.values.data() + off);
                codes.key_codes.insert(codes.key_codes.end(), kc.begin(), kc.end());
                codes.value_codes.insert(codes.value_codes.end(), vc.begin(), vc.end());
            }
        }
        out.layers.push_back(std::move(codes));
    }
    return out;
}

PassageKV decompress_kv(const KVCodec& codec, const CompressedKV& compressed) {
    if (compressed.kind == CompressionKind::HeavyHitter) return compressed.pruned;
    PassageKV out;
    out.layer_begin = compressed.layer_begin;
    out.layer_end = compressed.layer_end;
    out.position_ids = compressed.position_ids;
    out.passage_ids = compressed.passage_ids;
    out.segment_rows = compressed.segment_rows;
    out.strategy = compressed.strategy;
    out.frozen = FrozenMode::None;
    const int rows = static_cast<int>(compressed.position_ids.size());
    const int d_h = codec.key_books.at(0).dim;
    for (size_t li = 0; li < compressed.layers.size(); ++li) {
        const auto& codes = compressed.layers[li];
        const int hk = static_cast<int>(codes.key_codes.size()) / (rows * codec.m);
        Tensor k = Tensor::zeros({rows, hk, d_h});
        Tensor v = Tensor::zeros({rows, hk, d_h});
        for (int r = 0; r < rows; ++r) {
            for (int h = 0; h < hk; ++h) {
                const size_t code_off = (static_cast<size_t>(r) * hk + h) * codec.m;
                const size_t out_off = (static_cast<size_t>(r) * hk + h) * d_h;
                const auto kd = pq_decode(codec.key_books[li], codes.key_codes.data() + code_off);
                const auto vd = pq_decode(codec.value_books[li], codes.value_codes.data() + code_off);
                std::copy(kd.begin(), kd.end(), k.data() + out_off);
                std::copy(vd.begin(), vd.end(), v.data() + out_off);
            }
        }
        out.layers.push_back(LayerKV{std::move(k), std::move(v)});
    }
    return out;
}

void PrecomputedKVSource::put(const std::string& id, PassageKV kv) {
    store_[id] = std::move(kv);
}

PassageKV PrecomputedKVSource::fetch(const std::vector<std::string>& ids) {
    std::vector<PassageKV> parts;
    parts.reserve(ids.size());
    for (const std::string& id : ids) {
        auto it = store_.find(id);
        if (it == store_.end()) throw std::runtime_error("PrecomputedKVSource: unknown passage " + id);
        parts.push_back(it->second);
    }
    return concat_passage_kv(parts);
}

PrecomputedKVSource build_compressed_kv_source(const TransformerModel& model,
                                               const std::vector<std::string>& ids,
                                               const std::vector<TokenSeq>& passage_tokens,
                                               const CompressionOptions& options) {
    if (ids.size() != passage_tokens.size())
        throw std::invalid_argument("build_compressed_kv_source: ids/tokens mismatch");
    NoGradScope ng;
    std::vector<PassageKV> all_kv;
    std::vector<std::vector<double>> all_mass;
    all_kv.reserve(ids.size());
    for (size_t i = 0; i < ids.size(); ++i) {
        AttnStats stats;
        all_kv.push_back(model.encode_passages({passage_tokens[i]}, {ids[i]},
                                               EncodeStrategy::Independent, FrozenMode::None,
                                               nullptr, &stats));
        all_mass.push_back(std::move(stats.self_mass));
    }
    PrecomputedKVSource source;
    if (options.mode == "none") {
        for (size_t i = 0; i < ids.size(); ++i) source.put(ids[i], std::move(all_kv[i]));
    } else if (options.mode == "heavy_hitter") {
        for (size_t i = 0; i < ids.size(); ++i) {
            CompressedKV c = heavy_hitter_prune(all_kv[i], all_mass[i], options.keep_ratio);
            source.put(ids[i], std::move(c.pruned));
        }
    } else if (options.mode == "pq") {
        const KVCodec codec =
            train_kv_codec(all_kv, options.pq_m, options.pq_bits, options.pq_iterations, options.seed);
        for (size_t i = 0; i < ids.size(); ++i)
            source.put(ids[i], decompress_kv(codec, compress_kv(codec, all_kv[i])));
    } else {
        throw std::invalid_argument("unknown compression mode: " + options.mode);
    }
    return source;
}

PassageKV concat_passage_kv(const std::vector<PassageKV>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_passage_kv: no parts");
    NoGradScope ng;
    PassageKV out;
    out.layer_begin = parts[0].layer_begin;
    out.layer_end = parts[0].layer_end;
    out.strategy = EncodeStrategy::Independent;
    out.frozen = parts[0].frozen;
    const size_t n_layers = parts[0].layers.size();
    for (const PassageKV& p : parts) {
        if (p.layer_begin != out.layer_begin || p.layer_end != out.layer_end)
            throw std::invalid_argument("concat_passage_kv: layer range mismatch");
        out.position_ids.insert(out.position_ids.end(), p.position_ids.begin(), p.position_ids.end());
        out.passage_ids.insert(out.passage_ids.end(), p.passage_ids.begin(), p.passage_ids.end());
        out.segment_rows.insert(out.segment_rows.end(), p.segment_rows.begin(), p.segment_rows.end());
    }
    for (size_t l = 0; l < n_layers; ++l) {
        std::vector<Tensor> ks, vs;
        for (const PassageKV& p : parts) {
            ks.push_back(p.layers[l].keys);
            vs.push_back(p.layers[l].values);
        }
        out.layers.push_back(LayerKV{concat_rows(ks), concat_rows(vs)});
    }
    return out;
}

}  // namespace unirag
