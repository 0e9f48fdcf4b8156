// Copyright (c) 2026 the unirag authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "unirag/model.hpp"
#include "unirag/tokenizer.hpp"

namespace unirag {

// Checkpoint file: magic "IMPR", version u32, config record, tokenizer piece
// table, then named float32 parameter tensors. Little-endian throughout;
// round-trips are bit-exact.
void save_checkpoint(const std::string& path, const TransformerModel& model, const Tokenizer& tokenizer);

struct LoadedCheckpoint {
    TransformerModel model;
    Tokenizer tokenizer;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace unirag
