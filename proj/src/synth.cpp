// Copyright (c) 2026 the unirag authors
// SPDX-License-Identifier: Apache-2.0
#include "unirag/synth.hpp"

#include <set>
#include <stdexcept>

#include "unirag/rng.hpp"

namespace unirag {

const char* const kLookupTask = "lookup";
const char* const kShiftedTask = "shifted";

namespace {

// Fixed-length uppercase alnum tokens: distinct tokens can never be
// substrings of one another, which keeps the recall metric unambiguous.
std::string fresh_token(Rng& rng, std::set<std::string>& used) {
    static const char* letters = "ABCDEFGHIJKLMNOPQRSTUVWXYZ";
    static const char* alnum = "ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";
    for (int attempt = 0; attempt < 10000; ++attempt) {
        std::string t;
        t += letters[rng.next_below(26)];
        for (int i = 0; i < 5; ++i) t += alnum[rng.next_below(36)];
        if (used.insert(t).second) return t;
    }
    throw std::runtime_error("synth_data: token generation exhausted");
}

std::string lookup_query(const std::string& entity) {
    return "Q: what is the secret code of " + entity + "? A:";
}

std::string shifted_query(const std::string& entity) {
    return entity + " [SEP] secret code";
}

}  // namespace

SynthData synth_data(const SynthConfig& config) {
    if (config.n_passages < 16) throw std::invalid_argument("synth_data: need at least 16 passages");
    if (config.n_train < 1 || config.n_eval < 1)
        throw std::invalid_argument("synth_data: need train and eval examples");

    Rng rng(config.seed);
    std::set<std::string> used;
    std::vector<std::string> entities, codes;
    for (int i = 0; i < config.n_passages; ++i) entities.push_back(fresh_token(rng, used));
    for (int i = 0; i < config.n_passages; ++i) codes.push_back(fresh_token(rng, used));

    SynthData out;
    out.corpus.reserve(static_cast<size_t>(config.n_passages));
    for (int i = 0; i < config.n_passages; ++i) {
        CorpusRecord r;
        r.id = "p" + std::to_string(i);
        r.text = "the secret code of " + entities[static_cast<size_t>(i)] + " is " +
                 codes[static_cast<size_t>(i)];
        out.corpus.push_back(std::move(r));
    }

    // Disjoint entity pools.
    int n_eval_entities = static_cast<int>(config.n_passages * config.eval_entity_fraction);
    n_eval_entities = std::max(1, std::min(n_eval_entities, config.n_passages - 1));
    std::vector<int> entity_order(static_cast<size_t>(config.n_passages));
    for (int i = 0; i < config.n_passages; ++i) entity_order[static_cast<size_t>(i)] = i;
    rng.shuffle(entity_order);
    const std::vector<int> eval_pool(entity_order.begin(), entity_order.begin() + n_eval_entities);
    const std::vector<int> train_pool(entity_order.begin() + n_eval_entities, entity_order.end());

    auto make_example = [&](int entity_idx, bool shifted) {
        ExampleRecord ex;
        const std::string& entity = entities[static_cast<size_t>(entity_idx)];
        ex.query = shifted ? shifted_query(entity) : lookup_query(entity);
        ex.answer = codes[static_cast<size_t>(entity_idx)];
        ex.task = shifted ? kShiftedTask : kLookupTask;
        return ex;
    };

    for (int i = 0; i < config.n_train; ++i) {
        const int e = train_pool[static_cast<size_t>(rng.next_below(train_pool.size()))];
        const bool shifted = rng.next_double() < config.shifted_train_fraction;
        out.train.push_back(make_example(e, shifted));
    }
    // Eval split: first half held-in format, second half format-shifted.
    for (int i = 0; i < config.n_eval; ++i) {
        const int e = eval_pool[static_cast<size_t>(rng.next_below(eval_pool.size()))];
        out.eval.push_back(make_example(e, i >= config.n_eval / 2));
    }

    std::vector<std::string> texts;
    for (const CorpusRecord& r : out.corpus) texts.push_back(r.text);
    texts.push_back(lookup_query("X"));
    texts.push_back(shifted_query("X"));
    out.tokenizer = Tokenizer::build(texts);
    return out;
}

}  // namespace unirag
