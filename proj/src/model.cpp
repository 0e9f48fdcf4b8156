// Copyright (c) 2026 the unirag authors
// SPDX-License-Identifier: Apache-2.0
#include "unirag/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "unirag/rng.hpp"

namespace unirag {

const char* to_string(EncodeStrategy s) {
    switch (s) {
        case EncodeStrategy::Independent: return "independent";
        case EncodeStrategy::ConcatSegmented: return "concat_segmented";
        case EncodeStrategy::ConcatFull: return "concat_full";
    }
    return "?";
}

const char* to_string(FrozenMode m) {
    switch (m) {
        case FrozenMode::None: return "none";
        case FrozenMode::FrozenHidden: return "frozen_hidden";
        case FrozenMode::FrozenKV: return "frozen_kv";
    }
    return "?";
}

std::pair<int, int> PassageKV::segment_range(int segment) const {
    if (segment < 0 || segment >= segments()) throw std::out_of_range("PassageKV::segment_range");
    int begin = 0;
    for (int s = 0; s < segment; ++s) begin += segment_rows[static_cast<size_t>(s)];
    return {begin, begin + segment_rows[static_cast<size_t>(segment)]};
}

TransformerModel::TransformerModel(ModelConfig config, uint64_t seed) : cfg_(config) {
    cfg_.validate();
    Rng rng(seed);
    const int d = cfg_.d_model;
    const float proj_std = 1.0f / std::sqrt(static_cast<float>(d));
    const float down_std = 1.0f / std::sqrt(static_cast<float>(cfg_.d_ff));
    tok_embed_ = Tensor::randn({cfg_.vocab_size, d}, rng, 0.02f, true);
    layers_.resize(static_cast<size_t>(cfg_.n_layers));
    for (LayerWeights& L : layers_) {
        L.attn_norm = Tensor::from({d}, std::vector<float>(static_cast<size_t>(d), 1.0f), true);
        L.wq = Tensor::randn({d, cfg_.n_query_heads * cfg_.head_dim}, rng, proj_std, true);
        L.wk = Tensor::randn({d, cfg_.n_key_heads * cfg_.head_dim}, rng, proj_std, true);
        L.wv = Tensor::randn({d, cfg_.n_key_heads * cfg_.head_dim}, rng, proj_std, true);
        L.wo = Tensor::randn({cfg_.n_query_heads * cfg_.head_dim, d}, rng, proj_std, true);
        L.mlp_norm = Tensor::from({d}, std::vector<float>(static_cast<size_t>(d), 1.0f), true);
        L.w_gate = Tensor::randn({d, cfg_.d_ff}, rng, proj_std, true);
        L.w_up = Tensor::randn({d, cfg_.d_ff}, rng, proj_std, true);
        L.w_down = Tensor::randn({cfg_.d_ff, d}, rng, down_std, true);
    }
    final_norm_ = Tensor::from({d}, std::vector<float>(static_cast<size_t>(d), 1.0f), true);
}

std::vector<std::pair<std::string, Tensor>> TransformerModel::named_parameters() const {
    std::vector<std::pair<std::string, Tensor>> out;
    out.emplace_back("tok_embed", tok_embed_);
    for (int i = 0; i < cfg_.n_layers; ++i) {
        const LayerWeights& L = layers_[static_cast<size_t>(i)];
        const std::string p = "layers." + std::to_string(i) + ".";
        out.emplace_back(p + "attn_norm", L.attn_norm);
        out.emplace_back(p + "wq", L.wq);
        out.emplace_back(p + "wk", L.wk);
        out.emplace_back(p + "wv", L.wv);
        out.emplace_back(p + "wo", L.wo);
        out.emplace_back(p + "mlp_norm", L.mlp_norm);
        out.emplace_back(p + "w_gate", L.w_gate);
        out.emplace_back(p + "w_up", L.w_up);
        out.emplace_back(p + "w_down", L.w_down);
    }
    out.emplace_back("final_norm", final_norm_);
    return out;
}

Tensor TransformerModel::parameter(const std::string& name) const {
    for (auto& [n, t] : named_parameters()) {
        if (n == name) return t;
    }
    throw std::out_of_range("TransformerModel::parameter: unknown parameter " + name);
}

void TransformerModel::zero_grads() const {
    for (auto& [n, t] : named_parameters()) {
        Tensor tt = t;
        tt.zero_grad();
    }
}

TransformerModel TransformerModel::clone() const {
    TransformerModel m(cfg_, 0);
    auto src = named_parameters();
    auto dst = m.named_parameters();
    for (size_t i = 0; i < src.size(); ++i) {
        Tensor d = dst[i].second;
        const Tensor& s = src[i].second;
        std::copy(s.data(), s.data() + s.numel(), d.data());
    }
    return m;
}

namespace {

AttnSpans causal_spans(int prior_rows, const std::vector<int>& seg_begin_abs) {
    AttnSpans sp;
    const int rows = static_cast<int>(seg_begin_abs.size());
    sp.self_begin = seg_begin_abs;
    sp.self_end.resize(static_cast<size_t>(rows));
    for (int i = 0; i < rows; ++i) sp.self_end[static_cast<size_t>(i)] = prior_rows + i + 1;
    return sp;
}

void enable_cross(AttnSpans& sp, int cross_rows) {
    sp.cross_begin.assign(sp.self_begin.size(), 0);
    sp.cross_end.assign(sp.self_begin.size(), cross_rows);
}

int cache_rows(const LayerKV& kv) { return kv.keys.defined() ? kv.keys.dim(0) : 0; }

}  // namespace

Tensor TransformerModel::layer_forward(int layer, const Tensor& rows_hidden,
                                       const std::vector<int>& positions, LayerKV& cache,
                                       const AttnSpans& spans, const Tensor* k_cross,
                                       const Tensor* v_cross, CaptureRequest* capture,
                                       AttnStats* stats) const {
    const LayerWeights& L = layers_[static_cast<size_t>(layer)];
    const int rows = rows_hidden.dim(0);
    Tensor x = rms_norm(rows_hidden, L.attn_norm);
    Tensor q = matmul(x, L.wq).reshaped({rows, cfg_.n_query_heads, cfg_.head_dim});
    Tensor k = matmul(x, L.wk).reshaped({rows, cfg_.n_key_heads, cfg_.head_dim});
    Tensor v = matmul(x, L.wv).reshaped({rows, cfg_.n_key_heads, cfg_.head_dim});
    if (capture && capture->layer == layer) {
        capture->pre_rope_q = q;
        capture->pre_rope_k = k;
    }
    Tensor qr = apply_rope(q, positions);
    Tensor kr = apply_rope(k, positions);
    if (cache.keys.defined()) {
        cache.keys = concat_rows({cache.keys, kr});
        cache.values = concat_rows({cache.values, v});
    } else {
        cache.keys = kr;
        cache.values = v;
    }
    Tensor attn = attention(qr, cache.keys, cache.values, k_cross, v_cross, spans, stats);
    Tensor h1 = add(rows_hidden, matmul(attn.reshaped({rows, cfg_.d_model}), L.wo));
    Tensor x2 = rms_norm(h1, L.mlp_norm);
    Tensor mlp = matmul(swiglu(matmul(x2, L.w_gate), matmul(x2, L.w_up)), L.w_down);
    return add(h1, mlp);
}

Tensor TransformerModel::logits_for_rows(const Tensor& hidden, const std::vector<int>& rows) const {
    Tensor picked = gather_rows(hidden, rows);
    Tensor normed = rms_norm(picked, final_norm_);
    return matmul_nt(normed, tok_embed_);
}

PromptState TransformerModel::forward_prompt(const TokenSeq& tokens, int k_for_shift) const {
    if (tokens.empty()) throw std::invalid_argument("forward_prompt: empty token sequence");
    const int t = static_cast<int>(tokens.size());
    PromptState st;
    st.tokens = tokens;
    st.prompt_len = t;
    st.position_offset = shift_positions(k_for_shift, cfg_.max_passage_len);
    st.kv.resize(static_cast<size_t>(cfg_.n_layers));
    std::vector<int> positions(static_cast<size_t>(t));
    for (int i = 0; i < t; ++i) positions[static_cast<size_t>(i)] = st.position_offset + i;
    const AttnSpans spans = causal_spans(0, std::vector<int>(static_cast<size_t>(t), 0));
    Tensor h = embedding(tok_embed_, tokens);
    CaptureRequest cap;
    cap.layer = cfg_.boundary_b;
    for (int l = 0; l <= cfg_.boundary_b; ++l) {
        h = layer_forward(l, h, positions, st.kv[static_cast<size_t>(l)], spans, nullptr, nullptr,
                          l == cfg_.boundary_b ? &cap : nullptr, nullptr);
    }
    st.q_states_layer_b = cap.pre_rope_q;
    st.query = pool_query_embedding(cap.pre_rope_q);
    st.pending_hidden = h;
    st.pending_rows.resize(static_cast<size_t>(t));
    std::iota(st.pending_rows.begin(), st.pending_rows.end(), 0);
    return st;
}

QueryEmbedding TransformerModel::pool_query_embedding(const Tensor& q_states_layer_b) const {
    if (q_states_layer_b.shape().size() != 3 || q_states_layer_b.dim(1) != cfg_.n_query_heads ||
        q_states_layer_b.dim(2) != cfg_.head_dim)
        throw std::invalid_argument("pool_query_embedding: expected [tokens, h_q, d_h]");
    const int t = q_states_layer_b.dim(0);
    Tensor flat = q_states_layer_b.reshaped({t, cfg_.n_query_heads * cfg_.head_dim});
    QueryEmbedding qe;
    qe.grouped_raw = gather_rows(flat, {t - 1});
    qe.pooled = group_mean(qe.grouped_raw, cfg_.n_key_heads, cfg_.group_size, cfg_.head_dim);
    return qe;
}

PassageEmbedding TransformerModel::pool_passage_embedding(const Tensor& k_states_layer_b,
                                                          const std::string& passage_id) const {
    if (k_states_layer_b.shape().size() != 3 || k_states_layer_b.dim(1) != cfg_.n_key_heads ||
        k_states_layer_b.dim(2) != cfg_.head_dim)
        throw std::invalid_argument("pool_passage_embedding: expected [tokens, h_k, d_h]");
    const int t = k_states_layer_b.dim(0);
    Tensor flat = k_states_layer_b.reshaped({t, cfg_.n_key_heads * cfg_.head_dim});
    PassageEmbedding pe;
    pe.pooled = gather_rows(flat, {t - 1});
    pe.passage_id = passage_id;
    return pe;
}

float TransformerModel::score(const QueryEmbedding& q, const PassageEmbedding& p) {
    if (q.pooled.numel() != p.pooled.numel())
        throw std::invalid_argument("score: embedding length mismatch");
    const float* a = q.pooled.data();
    const float* b = p.pooled.data();
    double acc = 0.0;
    for (size_t i = 0; i < q.pooled.numel(); ++i) acc += static_cast<double>(a[i]) * b[i];
    return static_cast<float>(acc);
}

Tensor TransformerModel::score_tensor(const QueryEmbedding& q, const PassageEmbedding& p) {
    return dot(q.pooled, p.pooled);
}

namespace {

struct EncodePack {
    std::vector<int> tokens;
    std::vector<int> positions;
    std::vector<int> seg_begin_abs;  // per row: absolute start of its segment
    std::vector<int> seg_rows;
};

EncodePack pack_passages(const std::vector<TokenSeq>& passages, EncodeStrategy strategy) {
    EncodePack p;
    int base = 0;
    for (const TokenSeq& pass : passages) {
        const int len = static_cast<int>(pass.size());
        for (int i = 0; i < len; ++i) {
            p.tokens.push_back(pass[static_cast<size_t>(i)]);
            p.positions.push_back(strategy == EncodeStrategy::Independent ? i : base + i);
            p.seg_begin_abs.push_back(strategy == EncodeStrategy::ConcatFull ? 0 : base);
        }
        p.seg_rows.push_back(len);
        base += len;
    }
    return p;
}

}  // namespace

std::vector<PassageEmbedding> TransformerModel::embed_passages(
    const std::vector<TokenSeq>& passages, const std::vector<std::string>& ids) const {
    if (passages.empty() || passages.size() != ids.size())
        throw std::invalid_argument("embed_passages: need matching non-empty passages and ids");
    for (const TokenSeq& p : passages) {
        if (p.empty()) throw std::invalid_argument("embed_passages: empty passage");
        if (static_cast<int>(p.size()) > cfg_.max_passage_len)
            throw std::runtime_error("passage exceeds l_max");
    }
    const EncodePack pack = pack_passages(passages, EncodeStrategy::Independent);
    const AttnSpans spans = causal_spans(0, pack.seg_begin_abs);
    Tensor h = embedding(tok_embed_, pack.tokens);
    CaptureRequest cap;
    cap.layer = cfg_.boundary_b;
    for (int l = 0; l <= cfg_.boundary_b; ++l) {
        LayerKV scratch;
        h = layer_forward(l, h, pack.positions, scratch, spans, nullptr, nullptr,
                          l == cfg_.boundary_b ? &cap : nullptr, nullptr);
    }
    const int hk_dim = cfg_.n_key_heads * cfg_.head_dim;
    Tensor k_flat = cap.pre_rope_k.reshaped({static_cast<int>(pack.tokens.size()), hk_dim});
    std::vector<PassageEmbedding> out;
    int row = 0;
    for (size_t s = 0; s < passages.size(); ++s) {
        row += pack.seg_rows[s];
        PassageEmbedding pe;
        pe.pooled = gather_rows(k_flat, {row - 1});
        pe.passage_id = ids[s];
        out.push_back(std::move(pe));
    }
    return out;
}

PassageKV TransformerModel::encode_passages(const std::vector<TokenSeq>& passages,
                                            const std::vector<std::string>& ids,
                                            EncodeStrategy strategy, FrozenMode frozen,
                                            const TransformerModel* snapshot,
                                            AttnStats* stats) const {
    if (passages.empty() || passages.size() != ids.size())
        throw std::invalid_argument("encode_passages: need matching non-empty passages and ids");
    if (static_cast<int>(passages.size()) > cfg_.retrieval_fanin)
        throw std::invalid_argument("encode_passages: more passages than retrieval fan-in k");
    for (const TokenSeq& p : passages) {
        if (p.empty()) throw std::invalid_argument("encode_passages: empty passage");
        if (static_cast<int>(p.size()) > cfg_.max_passage_len)
            throw std::runtime_error("passage exceeds l_max");
    }
    if (frozen != FrozenMode::None && snapshot == nullptr)
        throw std::invalid_argument("encode_passages: frozen mode requires a parameter snapshot");

    if (frozen == FrozenMode::FrozenKV) {
        NoGradScope ng;
        PassageKV kv = snapshot->encode_passages(passages, ids, strategy, FrozenMode::None, nullptr, stats);
        kv.frozen = FrozenMode::FrozenKV;
        return kv;
    }

    const int b = cfg_.boundary_b, t = cfg_.boundary_t;
    const EncodePack pack = pack_passages(passages, strategy);
    const AttnSpans spans = causal_spans(0, pack.seg_begin_abs);

    PassageKV out;
    out.layer_begin = b;
    out.layer_end = t;
    out.layers.resize(static_cast<size_t>(t - b + 1));
    out.position_ids = pack.positions;
    out.passage_ids = ids;
    out.segment_rows = pack.seg_rows;
    out.strategy = strategy;
    out.frozen = frozen;

    if (frozen == FrozenMode::FrozenHidden) {
        // Capture the snapshot's per-layer hidden inputs, then run the current
        // key/value projections over them.
        std::vector<Tensor> hidden_in(static_cast<size_t>(t - b + 1));
        {
            NoGradScope ng;
            Tensor h = embedding(snapshot->tok_embed_, pack.tokens);
            for (int l = 0; l <= t; ++l) {
                if (l >= b) hidden_in[static_cast<size_t>(l - b)] = h;
                LayerKV scratch;
                h = snapshot->layer_forward(l, h, pack.positions, scratch, spans, nullptr, nullptr,
                                            nullptr, l <= t ? stats : nullptr);
            }
        }
        const int rows = static_cast<int>(pack.tokens.size());
        for (int l = b; l <= t; ++l) {
            const LayerWeights& L = layers_[static_cast<size_t>(l)];
            Tensor x = rms_norm(hidden_in[static_cast<size_t>(l - b)], L.attn_norm);
            Tensor k = matmul(x, L.wk).reshaped({rows, cfg_.n_key_heads, cfg_.head_dim});
            Tensor v = matmul(x, L.wv).reshaped({rows, cfg_.n_key_heads, cfg_.head_dim});
            out.layers[static_cast<size_t>(l - b)] =
                LayerKV{apply_rope(k, pack.positions), v};
        }
        return out;
    }

    Tensor h = embedding(tok_embed_, pack.tokens);
    for (int l = 0; l <= t; ++l) {
        LayerKV scratch;
        h = layer_forward(l, h, pack.positions, scratch, spans, nullptr, nullptr, nullptr, stats);
        if (l >= b) out.layers[static_cast<size_t>(l - b)] = scratch;
    }
    return out;
}

Tensor TransformerModel::continue_with_passages(PromptState& state, const PassageKV* kv,
                                                const std::vector<int>& step_tokens,
                                                const std::vector<int>& logit_positions) const {
    const int b = cfg_.boundary_b, t = cfg_.boundary_t, n = cfg_.n_layers;
    if (kv && (kv->layer_begin != b || kv->layer_end != t))
        throw std::invalid_argument("continue_with_passages: passage KV layer range mismatch");
    const int cross_rows = kv ? kv->rows() : 0;

    // Phase A: run new step tokens through the bottom group.
    if (!step_tokens.empty()) {
        const int step_base = static_cast<int>(state.tokens.size());
        const int steps = static_cast<int>(step_tokens.size());
        std::vector<int> positions(static_cast<size_t>(steps));
        for (int i = 0; i < steps; ++i)
            positions[static_cast<size_t>(i)] = state.position_offset + step_base + i;
        Tensor h = embedding(tok_embed_, step_tokens);
        for (int l = 0; l <= b; ++l) {
            const int prior = cache_rows(state.kv[static_cast<size_t>(l)]);
            AttnSpans spans = causal_spans(prior, std::vector<int>(static_cast<size_t>(steps), 0));
            const bool cross_here = kv && cfg_.share_layer_b_cross_attention && l == b;
            if (cross_here) enable_cross(spans, cross_rows);
            const Tensor* kc = cross_here ? &kv->layers[0].keys : nullptr;
            const Tensor* vc = cross_here ? &kv->layers[0].values : nullptr;
            h = layer_forward(l, h, positions, state.kv[static_cast<size_t>(l)], spans, kc, vc,
                              nullptr, nullptr);
        }
        for (int tok : step_tokens) state.tokens.push_back(tok);
        if (state.pending_hidden.defined()) {
            state.pending_hidden = concat_rows({state.pending_hidden, h});
        } else {
            state.pending_hidden = h;
        }
        for (int i = 0; i < steps; ++i) state.pending_rows.push_back(step_base + i);
    }

    if (state.pending_rows.empty())
        throw std::invalid_argument("continue_with_passages: nothing to process");

    // Phase B: pending rows through the middle and top groups.
    const int pend = static_cast<int>(state.pending_rows.size());
    const int first_pending = state.pending_rows.front();
    std::vector<int> positions(static_cast<size_t>(pend));
    for (int i = 0; i < pend; ++i)
        positions[static_cast<size_t>(i)] = state.position_offset + state.pending_rows[static_cast<size_t>(i)];
    Tensor h = state.pending_hidden;
    for (int l = b + 1; l < n; ++l) {
        const int prior = cache_rows(state.kv[static_cast<size_t>(l)]);
        AttnSpans spans = causal_spans(prior, std::vector<int>(static_cast<size_t>(pend), 0));
        const bool cross_here = kv && l <= t;
        if (cross_here) enable_cross(spans, cross_rows);
        const Tensor* kc = cross_here ? &kv->layers[static_cast<size_t>(l - b)].keys : nullptr;
        const Tensor* vc = cross_here ? &kv->layers[static_cast<size_t>(l - b)].values : nullptr;
        h = layer_forward(l, h, positions, state.kv[static_cast<size_t>(l)], spans, kc, vc, nullptr,
                          nullptr);
    }
    state.rows_full = static_cast<int>(state.tokens.size());

    if (logit_positions.empty())
        throw std::invalid_argument("continue_with_passages: no logit positions requested");
    std::vector<int> rows;
    rows.reserve(logit_positions.size());
    for (int pos : logit_positions) {
        const int r = pos - first_pending;
        if (r < 0 || r >= pend)
            throw std::out_of_range("continue_with_passages: logit position not in this call");
        rows.push_back(r);
    }
    Tensor logits = logits_for_rows(h, rows);
    state.pending_hidden = Tensor();
    state.pending_rows.clear();
    return logits;
}

Tensor TransformerModel::lm_logits(const TokenSeq& tokens, const std::vector<int>& logit_positions) const {
    PromptState st = forward_prompt(tokens, 0);
    return continue_with_passages(st, nullptr, {}, logit_positions);
}

DecodeResult TransformerModel::decode(const TokenSeq& prompt, RetrieverClient* client,
                                      PassageSource* passages, int k, int max_new_tokens,
                                      int eos_id) const {
    NoGradScope ng;
    DecodeResult res;
    PromptState st = forward_prompt(prompt, k);
    std::optional<PassageKV> kv;
    if (k > 0) {
        if (!client || !passages)
            throw std::invalid_argument("decode: retrieval requires a client and a passage source");
        SearchResult sr = client->search(st.query.vec(), k);
        res.retrieval_calls = 1;
        res.passage_ids = sr.ids;
        kv = passages->fetch(sr.ids);
    }
    if (max_new_tokens <= 0) return res;
    const PassageKV* kvp = kv ? &*kv : nullptr;

    auto argmax_row0 = [](const Tensor& logits) {
        const float* p = logits.data();
        const int v = logits.dim(1);
        int best = 0;
        for (int j = 1; j < v; ++j) {
            if (p[j] > p[best]) best = j;
        }
        return best;
    };

    Tensor logits = continue_with_passages(st, kvp, {}, {static_cast<int>(prompt.size()) - 1});
    int next = argmax_row0(logits);
    res.tokens.push_back(next);
    while (static_cast<int>(res.tokens.size()) < max_new_tokens && next != eos_id) {
        const int new_row = static_cast<int>(st.tokens.size());
        logits = continue_with_passages(st, kvp, {next}, {new_row});
        next = argmax_row0(logits);
        res.tokens.push_back(next);
    }
    return res;
}

}  // namespace unirag
