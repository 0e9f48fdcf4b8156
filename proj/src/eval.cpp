// Copyright (c) 2026 the unirag authors
// SPDX-License-Identifier: Apache-2.0
#include "unirag/eval.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>
#include <stdexcept>

namespace unirag {

std::string normalize_answer(const std::string& text) {
    std::string lowered;
    lowered.reserve(text.size());
    for (char ch : text) {
        const unsigned char c = static_cast<unsigned char>(ch);
        if (std::isalnum(c) || std::isspace(c)) lowered += static_cast<char>(std::tolower(c));
        else lowered += ' ';
    }
    std::istringstream words(lowered);
    std::string word, out;
    while (words >> word) {
        if (word == "a" || word == "an" || word == "the") continue;
        if (!out.empty()) out += ' ';
        out += word;
    }
    return out;
}

FlatIndex build_passage_index(const TransformerModel& model, const Tokenizer& tokenizer,
                              const std::vector<CorpusRecord>& corpus) {
    if (corpus.empty()) throw std::invalid_argument("build_passage_index: empty corpus");
    NoGradScope ng;
    std::vector<TokenSeq> tokens;
    std::vector<std::string> ids;
    tokens.reserve(corpus.size());
    for (const CorpusRecord& r : corpus) {
        tokens.push_back(tokenizer.encode(r.text));
        ids.push_back(r.id);
    }
    const std::vector<PassageEmbedding> embs = model.embed_passages(tokens, ids);
    FlatIndex index;
    for (const PassageEmbedding& e : embs) index.add(e.passage_id, e.vec());
    return index;
}

EncodingPassageSource::EncodingPassageSource(const TransformerModel& model,
                                             const Tokenizer& tokenizer,
                                             const std::vector<CorpusRecord>& corpus,
                                             EncodeStrategy strategy, FrozenMode frozen,
                                             const TransformerModel* snapshot)
    : model_(model), strategy_(strategy), frozen_(frozen), snapshot_(snapshot) {
    for (const CorpusRecord& r : corpus) tokens_[r.id] = tokenizer.encode(r.text);
}

PassageKV EncodingPassageSource::fetch(const std::vector<std::string>& ids) {
    std::vector<TokenSeq> tokens;
    tokens.reserve(ids.size());
    for (const std::string& id : ids) {
        auto it = tokens_.find(id);
        if (it == tokens_.end()) throw std::runtime_error("EncodingPassageSource: unknown passage " + id);
        tokens.push_back(it->second);
    }
    return model_.encode_passages(tokens, ids, strategy_, frozen_, snapshot_);
}

EvalReport evaluate(const TransformerModel& model, const Tokenizer& tokenizer,
                    const std::vector<CorpusRecord>& corpus,
                    const std::vector<ExampleRecord>& examples, int k, RetrieverClient& client,
                    PassageSource& source, int max_new_tokens) {
    if (examples.empty()) throw std::invalid_argument("evaluate: no examples");
    std::map<std::string, std::string> text_by_id;
    for (const CorpusRecord& r : corpus) text_by_id[r.id] = r.text;

    auto lowercase = [](std::string s) {
        std::transform(s.begin(), s.end(), s.begin(),
                       [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
        return s;
    };

    EvalReport report;
    report.k = k;
    report.n = static_cast<int>(examples.size());
    std::map<std::string, TaskStats> tasks;
    for (const ExampleRecord& ex : examples) {
        const TokenSeq prompt = tokenizer.encode(ex.query);
        const DecodeResult result =
            model.decode(prompt, &client, &source, k, max_new_tokens, Tokenizer::kEosId);
        const std::string generated = tokenizer.decode(result.tokens);
        const bool em = normalize_answer(generated) == normalize_answer(ex.answer);

        bool hit = false;
        const std::string needle = lowercase(ex.answer);
        for (const std::string& id : result.passage_ids) {
            auto it = text_by_id.find(id);
            if (it != text_by_id.end() && lowercase(it->second).find(needle) != std::string::npos) {
                hit = true;
                break;
            }
        }

        report.exact_match += em ? 1.0 : 0.0;
        report.recall_at_k += hit ? 1.0 : 0.0;
        TaskStats& ts = tasks[ex.task.empty() ? "default" : ex.task];
        ts.n += 1;
        ts.exact_match += em ? 1.0 : 0.0;
        ts.recall_at_k += hit ? 1.0 : 0.0;
    }
    report.exact_match /= report.n;
    report.recall_at_k /= report.n;
    for (auto& [name, ts] : tasks) {
        ts.exact_match /= ts.n;
        ts.recall_at_k /= ts.n;
    }
    report.per_task = std::move(tasks);
    return report;
}

}  // namespace unirag
