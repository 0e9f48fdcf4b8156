// Copyright (c) 2026 the unirag authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <vector>

#include "unirag/data.hpp"
#include "unirag/index.hpp"
#include "unirag/model.hpp"
#include "unirag/retrieval_client.hpp"
#include "unirag/tokenizer.hpp"

namespace unirag {

struct TaskStats {
    int n = 0;
    double exact_match = 0.0;
    double recall_at_k = 0.0;
};

struct EvalReport {
    double exact_match = 0.0;
    double recall_at_k = 0.0;
    int k = 0;
    int n = 0;
    std::map<std::string, TaskStats> per_task;
};

// Open-QA style normalization: lowercase, strip punctuation and the articles
// a/an/the, collapse whitespace.
std::string normalize_answer(const std::string& text);

// Encodes every corpus passage with the model's bottom layers and pools the
// passage embeddings into a flat index.
FlatIndex build_passage_index(const TransformerModel& model, const Tokenizer& tokenizer,
                              const std::vector<CorpusRecord>& corpus);

// Encodes retrieved passages on the fly with the given strategy.
class EncodingPassageSource : public PassageSource {
public:
    EncodingPassageSource(const TransformerModel& model, const Tokenizer& tokenizer,
                          const std::vector<CorpusRecord>& corpus, EncodeStrategy strategy,
                          FrozenMode frozen = FrozenMode::None,
                          const TransformerModel* snapshot = nullptr);

    PassageKV fetch(const std::vector<std::string>& ids) override;

private:
    const TransformerModel& model_;
    std::map<std::string, TokenSeq> tokens_;
    EncodeStrategy strategy_;
    FrozenMode frozen_;
    const TransformerModel* snapshot_;
};

// Greedy-decodes every example with one retrieval of k passages, then scores
// exact match and retrieval recall (gold answer contained as a substring in
// any of the top-k passage texts). Never mutates the checkpoint or index.
EvalReport evaluate(const TransformerModel& model, const Tokenizer& tokenizer,
                    const std::vector<CorpusRecord>& corpus,
                    const std::vector<ExampleRecord>& examples, int k, RetrieverClient& client,
                    PassageSource& source, int max_new_tokens = 8);

}  // namespace unirag
