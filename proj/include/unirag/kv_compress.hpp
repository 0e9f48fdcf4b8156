// Copyright (c) 2026 the unirag authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "unirag/model.hpp"
#include "unirag/pq.hpp"

namespace unirag {

// Keeps ceil(L * keep_ratio) indices with the largest accumulated attention
// mass; ties prefer more recent tokens. Returned indices are ascending, so
// the kept tokens form a subsequence.
std::vector<int> heavy_hitter_select(const std::vector<double>& masses, double keep_ratio);

enum class CompressionKind : uint8_t { HeavyHitter = 0, PQ = 1 };

// Compressed per-passage KV states. Heavy-hitter keeps a pruned token list;
// PQ stores u8 codes per (layer, head kind) codebook pair.
struct CompressedKV {
    CompressionKind kind = CompressionKind::HeavyHitter;
    int original_token_count = 0;
    double compression_ratio = 1.0;

    // HeavyHitter payload: the surviving rows, directly usable.
    PassageKV pruned;
    std::vector<int> kept_rows;

    // PQ payload: codes [rows, h_k, m] per layer for keys and values.
    struct PQLayerCodes {
        std::vector<uint8_t> key_codes;
        std::vector<uint8_t> value_codes;
    };
    std::vector<PQLayerCodes> layers;
    std::vector<int> position_ids;
    std::vector<std::string> passage_ids;
    std::vector<int> segment_rows;
    int layer_begin = 0;
    int layer_end = -1;
    EncodeStrategy strategy = EncodeStrategy::Independent;
};

// Prunes each passage segment independently using the per-token attention
// mass accumulated during the passage self-encoding pass.
CompressedKV heavy_hitter_prune(const PassageKV& kv, const std::vector<double>& attention_mass,
                                double keep_ratio = 0.5);

// One codebook per (layer, key/value) pair over head vectors of width d_h.
struct KVCodec {
    int m = 0;
    int bits = 8;
    int layer_begin = 0;
    int layer_end = -1;
    std::vector<PQCodebook> key_books;    // per layer in [layer_begin, layer_end]
    std::vector<PQCodebook> value_books;
};

KVCodec train_kv_codec(const std::vector<PassageKV>& corpus_kvs, int m, int bits, int iterations,
                       uint64_t seed);

CompressedKV compress_kv(const KVCodec& codec, const PassageKV& kv);
PassageKV decompress_kv(const KVCodec& codec, const CompressedKV& compressed);

// Passage source backed by precomputed (optionally compressed) per-passage
// KV states, as used when middle-group KV is stored instead of recomputed.
class PrecomputedKVSource : public PassageSource {
public:
    void put(const std::string& id, PassageKV kv);
    bool contains(const std::string& id) const { return store_.count(id) != 0; }
    PassageKV fetch(const std::vector<std::string>& ids) override;

private:
    std::map<std::string, PassageKV> store_;
};

// Concatenates per-passage KV blocks (independent positions) into one
// cross-attention block.
PassageKV concat_passage_kv(const std::vector<PassageKV>& parts);

struct CompressionOptions {
    std::string mode = "none";  // none | heavy_hitter | pq
    int pq_m = 4;
    int pq_bits = 8;
    int pq_iterations = 10;
    double keep_ratio = 0.5;
    uint64_t seed = 1;
};

class Tokenizer;

// Precomputes per-passage KV for the whole corpus (independent encoding) and
// applies the requested compression. Heavy-hitter masses come from each
// passage's own encoding pass.
PrecomputedKVSource build_compressed_kv_source(const TransformerModel& model,
                                               const std::vector<std::string>& ids,
                                               const std::vector<TokenSeq>& passage_tokens,
                                               const CompressionOptions& options);

}  // namespace unirag
