// Copyright (c) 2026 the unirag authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "unirag/config.hpp"
#include "unirag/retrieval_client.hpp"
#include "unirag/tensor.hpp"

namespace unirag {

using TokenSeq = std::vector<int>;

enum class EncodeStrategy { Independent, ConcatSegmented, ConcatFull };
enum class FrozenMode { None, FrozenHidden, FrozenKV };

const char* to_string(EncodeStrategy s);
const char* to_string(FrozenMode m);

// Pooled retrieval embedding of a prompt: the final token's layer-b query
// attention states, head-averaged within each GQA group.
struct QueryEmbedding {
    Tensor pooled;       // [1, h_k*d_h]
    Tensor grouped_raw;  // [1, h_q*d_h], pre-averaging
    std::vector<float> vec() const { return pooled.to_vector(); }
};

// The final token's layer-b key attention state of a passage, verbatim.
struct PassageEmbedding {
    Tensor pooled;  // [1, h_k*d_h]
    std::string passage_id;
    std::vector<float> vec() const { return pooled.to_vector(); }
};

struct LayerKV {
    Tensor keys;    // [rows, h_k, d_h], rotary already applied
    Tensor values;  // [rows, h_k, d_h]
};

// Key/value states of encoded passages for layers [layer_begin, layer_end]
// (= [b, t]), with segment bookkeeping for per-passage operations.
struct PassageKV {
    int layer_begin = 0;
    int layer_end = -1;
    std::vector<LayerKV> layers;
    std::vector<int> position_ids;
    std::vector<std::string> passage_ids;  // one per segment
    std::vector<int> segment_rows;         // tokens per segment
    EncodeStrategy strategy = EncodeStrategy::ConcatFull;
    FrozenMode frozen = FrozenMode::None;

    int rows() const { return static_cast<int>(position_ids.size()); }
    int segments() const { return static_cast<int>(segment_rows.size()); }
    // Row range [begin, end) of one segment.
    std::pair<int, int> segment_range(int segment) const;
};

// Mutable per-sequence forward state: prompt hidden states after layer b,
// the self-attention KV cache for every layer, and the pooled query
// embedding. continue_with_passages() advances it.
struct PromptState {
    std::vector<int> tokens;          // all tokens processed so far
    int prompt_len = 0;
    int position_offset = 0;          // k * l_max
    QueryEmbedding query;
    Tensor q_states_layer_b;          // [prompt_len, h_q, d_h], pre-rotary
    Tensor pending_hidden;            // rows not yet run through layers > b
    std::vector<int> pending_rows;    // absolute indices of pending rows
    std::vector<LayerKV> kv;          // per layer; grows as rows are processed
    int rows_full = 0;                // rows processed through all layers
};

struct DecodeResult {
    std::vector<int> tokens;
    std::vector<std::string> passage_ids;
    int retrieval_calls = 0;
};

// Supplies passage KV states for a set of retrieved ids, either by encoding
// stored token sequences on the fly or from a precomputed KV store.
class PassageSource {
public:
    virtual ~PassageSource() = default;
    virtual PassageKV fetch(const std::vector<std::string>& ids) = 0;
};

class TransformerModel {
public:
    TransformerModel(ModelConfig config, uint64_t seed);

    const ModelConfig& config() const { return cfg_; }
    LayerGroupPlan layer_plan() const { return LayerGroupPlan::from_config(cfg_); }

    // Stable name -> parameter mapping (checkpoint and optimizer order).
    std::vector<std::pair<std::string, Tensor>> named_parameters() const;
    Tensor parameter(const std::string& name) const;
    void zero_grads() const;
    // Detached deep copy (used for the step-0 snapshot and checkpoints).
    TransformerModel clone() const;

    // ---- retrieval side ----

    // Runs layers 0..b over the prompt with self-attention only and pools the
    // query embedding from the final token. Query token i is placed at
    // position shift_positions(k, l_max) + i.
    PromptState forward_prompt(const TokenSeq& tokens, int k_for_shift) const;

    QueryEmbedding pool_query_embedding(const Tensor& q_states_layer_b) const;
    PassageEmbedding pool_passage_embedding(const Tensor& k_states_layer_b,
                                            const std::string& passage_id) const;

    static float score(const QueryEmbedding& q, const PassageEmbedding& p);
    static Tensor score_tensor(const QueryEmbedding& q, const PassageEmbedding& p);

    // Per-passage embeddings (independent encoding of each passage).
    std::vector<PassageEmbedding> embed_passages(const std::vector<TokenSeq>& passages,
                                                 const std::vector<std::string>& ids) const;

    // ---- reader side ----

    // Runs layers 0..t over the passages under the given strategy and
    // captures K/V states for layers [b, t]. Frozen modes take states (or
    // hidden inputs) from `snapshot`. Optional `stats` accumulates attention
    // mass received by each token for heavy-hitter pruning.
    PassageKV encode_passages(const std::vector<TokenSeq>& passages,
                              const std::vector<std::string>& ids,
                              EncodeStrategy strategy,
                              FrozenMode frozen = FrozenMode::None,
                              const TransformerModel* snapshot = nullptr,
                              AttnStats* stats = nullptr) const;

    // Processes pending prompt rows and `step_tokens` through the remaining
    // layers: [b+1, t] cross-attend to `kv` (plus layer b for step tokens when
    // share_layer_b_cross_attention is set), [t+1, N-1] never see passages.
    // Returns logits for `logit_positions` (absolute token indices); these
    // must be rows processed by this call. kv == nullptr means no passages.
    Tensor continue_with_passages(PromptState& state, const PassageKV* kv,
                                  const std::vector<int>& step_tokens,
                                  const std::vector<int>& logit_positions) const;

    // Greedy decoding with a single retrieval event. k == 0 skips retrieval
    // and decodes as a vanilla causal LM.
    DecodeResult decode(const TokenSeq& prompt, RetrieverClient* client, PassageSource* passages,
                        int k, int max_new_tokens, int eos_id) const;

    // Vanilla causal LM logits for the given rows (no passages, offset 0).
    Tensor lm_logits(const TokenSeq& tokens, const std::vector<int>& logit_positions) const;

private:
    struct LayerWeights {
        Tensor attn_norm, wq, wk, wv, wo, mlp_norm, w_gate, w_up, w_down;
    };

    struct CaptureRequest {
        int layer = -1;
        Tensor pre_rope_q;  // [rows, h_q, d_h]
        Tensor pre_rope_k;  // [rows, h_k, d_h]
    };

    // One transformer layer over `rows_hidden`; appends this call's K/V rows
    // to `cache` and returns the updated hidden states.
    Tensor layer_forward(int layer, const Tensor& rows_hidden, const std::vector<int>& positions,
                         LayerKV& cache, const AttnSpans& spans, const Tensor* k_cross,
                         const Tensor* v_cross, CaptureRequest* capture, AttnStats* stats) const;

    Tensor logits_for_rows(const Tensor& hidden, const std::vector<int>& rows) const;

    ModelConfig cfg_;
    Tensor tok_embed_;  // [V, d]; also the (tied) output head
    std::vector<LayerWeights> layers_;
    Tensor final_norm_;
};

}  // namespace unirag
