// Copyright (c) 2026 the unirag authors
// SPDX-License-Identifier: Apache-2.0
#include "unirag/checkpoint.hpp"

#include <algorithm>

#include "unirag/binary_io.hpp"

namespace unirag {

namespace {

constexpr char kMagic[4] = {'I', 'M', 'P', 'R'};
constexpr uint32_t kVersion = 1;

void write_config(BinaryWriter& w, const ModelConfig& c) {
    w.i32(c.n_layers);
    w.i32(c.boundary_b);
    w.i32(c.boundary_t);
    w.i32(c.d_model);
    w.i32(c.n_query_heads);
    w.i32(c.n_key_heads);
    w.i32(c.group_size);
    w.i32(c.head_dim);
    w.i32(c.d_ff);
    w.i32(c.vocab_size);
    w.i32(c.max_passage_len);
    w.i32(c.retrieval_fanin);
    w.u8(c.share_layer_b_cross_attention ? 1 : 0);
}

ModelConfig read_config(BinaryReader& r) {
    ModelConfig c;
    c.n_layers = r.i32();
    c.boundary_b = r.i32();
    c.boundary_t = r.i32();
    c.d_model = r.i32();
    c.n_query_heads = r.i32();
    c.n_key_heads = r.i32();
    c.group_size = r.i32();
    c.head_dim = r.i32();
    c.d_ff = r.i32();
    c.vocab_size = r.i32();
    c.max_passage_len = r.i32();
    c.retrieval_fanin = r.i32();
    c.share_layer_b_cross_attention = r.u8() != 0;
    return c;
}

}  // namespace

void save_checkpoint(const std::string& path, const TransformerModel& model, const Tokenizer& tokenizer) {
    BinaryWriter w(path);
    w.magic(kMagic);
    w.u32(kVersion);
    write_config(w, model.config());
    const auto& table = tokenizer.table();
    w.u32(static_cast<uint32_t>(table.size()));
    for (const std::string& piece : table) w.str(piece);
    const auto params = model.named_parameters();
    w.u32(static_cast<uint32_t>(params.size()));
    for (const auto& [name, tensor] : params) {
        w.str(name);
        w.u32(static_cast<uint32_t>(tensor.shape().size()));
        for (int d : tensor.shape()) w.i32(d);
        w.f32_array(tensor.data(), tensor.numel());
    }
    w.close();
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    BinaryReader r(path);
    r.expect_magic(kMagic, "checkpoint");
    const uint32_t version = r.u32();
    if (version != kVersion) throw std::runtime_error("checkpoint: unsupported version");
    const ModelConfig config = read_config(r);
    const uint32_t n_pieces = r.u32();
    std::vector<std::string> table;
    table.reserve(n_pieces);
    for (uint32_t i = 0; i < n_pieces; ++i) table.push_back(r.str());
    Tokenizer tokenizer = Tokenizer::from_table(std::move(table));

    TransformerModel model(config, 0);
    const uint32_t n_params = r.u32();
    auto params = model.named_parameters();
    if (n_params != params.size()) throw std::runtime_error("checkpoint: parameter count mismatch");
    for (uint32_t i = 0; i < n_params; ++i) {
        const std::string name = r.str();
        Tensor t = model.parameter(name);
        const uint32_t ndims = r.u32();
        std::vector<int> dims(ndims);
        for (uint32_t d = 0; d < ndims; ++d) dims[d] = r.i32();
        if (dims != t.shape()) throw std::runtime_error("checkpoint: shape mismatch for " + name);
        std::vector<float> vals = r.f32_array(t.numel());
        std::copy(vals.begin(), vals.end(), t.data());
    }
    return LoadedCheckpoint{std::move(model), std::move(tokenizer)};
}

}  // namespace unirag
