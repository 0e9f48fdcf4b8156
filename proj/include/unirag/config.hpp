// Copyright (c) 2026 the unirag authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace unirag {

// Architectural hyperparameters of the layer-grouped decoder. Layers
// [0, b] form the retrieval group, [b, t] the reading group (layer b is
// shared), and [t+1, n_layers-1] the passage-blind top group.
struct ModelConfig {
    int n_layers = 8;
    int boundary_b = 2;
    int boundary_t = 5;
    int d_model = 64;
    int n_query_heads = 8;
    int n_key_heads = 4;
    int group_size = 2;
    int head_dim = 8;
    int d_ff = 128;
    int vocab_size = 0;  // set from the tokenizer
    int max_passage_len = 32;   // l_max, tokens
    int retrieval_fanin = 4;    // k
    bool share_layer_b_cross_attention = false;

    void validate() const {
        if (!(0 <= boundary_b && boundary_b < boundary_t && boundary_t < n_layers - 1))
            throw std::invalid_argument("ModelConfig: need 0 <= b < t < N-1");
        if (n_query_heads != n_key_heads * group_size)
            throw std::invalid_argument("ModelConfig: h_q must equal h_k * g");
        if (d_model != n_query_heads * head_dim)
            throw std::invalid_argument("ModelConfig: d_model must equal h_q * d_h");
        if (head_dim % 2 != 0) throw std::invalid_argument("ModelConfig: head_dim must be even");
        if (vocab_size <= 0) throw std::invalid_argument("ModelConfig: vocab_size must be positive");
        if (max_passage_len < 1 || retrieval_fanin < 0 || d_ff < 1)
            throw std::invalid_argument("ModelConfig: bad l_max / k / d_ff");
    }

    int embedding_dim() const { return n_key_heads * head_dim; }
};

// Inclusive layer ranges of the three groups.
struct LayerGroupPlan {
    int bottom_begin = 0, bottom_end = 0;  // [0, b]
    int middle_begin = 0, middle_end = 0;  // [b, t]
    int top_begin = 0, top_end = 0;        // [t+1, N-1]

    static LayerGroupPlan from_config(const ModelConfig& c) {
        LayerGroupPlan p;
        p.bottom_begin = 0;
        p.bottom_end = c.boundary_b;
        p.middle_begin = c.boundary_b;
        p.middle_end = c.boundary_t;
        p.top_begin = c.boundary_t + 1;
        p.top_end = c.n_layers - 1;
        return p;
    }
};

// Desk-scale preset used throughout the tests.
inline ModelConfig tiny_preset(int vocab_size) {
    ModelConfig c;
    c.vocab_size = vocab_size;
    return c;
}

// Boundaries reported for the 3B-class model: b=7, t=19, k=10.
inline ModelConfig paper_small_preset(int vocab_size) {
    ModelConfig c;
    c.n_layers = 28;
    c.boundary_b = 7;
    c.boundary_t = 19;
    c.d_model = 3072;
    c.n_query_heads = 24;
    c.n_key_heads = 8;
    c.group_size = 3;
    c.head_dim = 128;
    c.d_ff = 8192;
    c.vocab_size = vocab_size;
    c.max_passage_len = 128;
    c.retrieval_fanin = 10;
    return c;
}

// Boundaries reported for the 8B-class model: b=7, t=23, k=10.
inline ModelConfig paper_large_preset(int vocab_size) {
    ModelConfig c;
    c.n_layers = 32;
    c.boundary_b = 7;
    c.boundary_t = 23;
    c.d_model = 4096;
    c.n_query_heads = 32;
    c.n_key_heads = 8;
    c.group_size = 4;
    c.head_dim = 128;
    c.d_ff = 14336;
    c.vocab_size = vocab_size;
    c.max_passage_len = 128;
    c.retrieval_fanin = 10;
    return c;
}

// Position offset for query tokens when k passages of at most l_max tokens
// precede them: query token i sits at position k*l_max + i.
inline int shift_positions(int k, int l_max) {
    if (k < 0 || l_max < 1) throw std::invalid_argument("shift_positions: need k >= 0 and l_max >= 1");
    return k * l_max;
}

}  // namespace unirag
