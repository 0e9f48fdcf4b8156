// Copyright (c) 2026 the unirag authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "unirag/data.hpp"
#include "unirag/tokenizer.hpp"

namespace unirag {

struct SynthConfig {
    uint64_t seed = 1;
    int n_passages = 256;
    int n_train = 2048;
    int n_eval = 512;
    // Fraction of training examples in the shifted format (0 keeps that
    // format unseen until evaluation).
    double shifted_train_fraction = 0.0;
    // Fraction of entities reserved for the eval split.
    double eval_entity_fraction = 0.25;
};

// Synthetic lookup benchmark. Corpus passages read
//   "the secret code of <ENTITY> is <CODE>",
// held-in queries "Q: what is the secret code of <ENTITY>? A:" and
// format-shifted queries "<ENTITY> [SEP] secret code", both answered by the
// entity's code. Entities and codes are unique fixed-length tokens, so each
// answer appears in exactly one passage; train and eval entity pools are
// disjoint.
struct SynthData {
    std::vector<CorpusRecord> corpus;
    std::vector<ExampleRecord> train;
    std::vector<ExampleRecord> eval;
    Tokenizer tokenizer;  // frozen over the corpus plus both query templates
};

SynthData synth_data(const SynthConfig& config);

extern const char* const kLookupTask;
extern const char* const kShiftedTask;

}  // namespace unirag
