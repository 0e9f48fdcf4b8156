// Copyright (c) 2026 the unirag authors
// SPDX-License-Identifier: Apache-2.0
#include "unirag/candidates.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>
#include <stdexcept>

#include "unirag/rng.hpp"

namespace unirag {

namespace {

std::vector<std::string> lowercase_word_set(const std::string& text) {
    std::vector<std::string> words;
    std::string cur;
    auto flush = [&]() {
        if (!cur.empty()) {
            words.push_back(cur);
            cur.clear();
        }
    };
    for (char ch : text) {
        const unsigned char c = static_cast<unsigned char>(ch);
        if (std::isalnum(c)) {
            cur += static_cast<char>(std::tolower(c));
        } else {
            flush();
        }
    }
    flush();
    std::sort(words.begin(), words.end());
    words.erase(std::unique(words.begin(), words.end()), words.end());
    return words;
}

size_t intersection_size(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    size_t i = 0, j = 0, n = 0;
    while (i < a.size() && j < b.size()) {
        if (a[i] == b[j]) {
            ++n;
            ++i;
            ++j;
        } else if (a[i] < b[j]) {
            ++i;
        } else {
            ++j;
        }
    }
    return n;
}

}  // namespace

TokenOverlapRetriever::TokenOverlapRetriever(const std::vector<CorpusRecord>& corpus) {
    entries_.reserve(corpus.size());
    for (const CorpusRecord& r : corpus) entries_.push_back(Entry{r.id, lowercase_word_set(r.text)});
}

std::vector<std::string> TokenOverlapRetriever::rank(const std::string& query_text) const {
    const std::vector<std::string> q = lowercase_word_set(query_text);
    std::vector<std::pair<double, const std::string*>> scored;
    scored.reserve(entries_.size());
    for (const Entry& e : entries_) {
        double s = 0.0;
        if (!q.empty() && !e.tokens.empty())
            s = static_cast<double>(intersection_size(q, e.tokens)) /
                std::sqrt(static_cast<double>(q.size()) * static_cast<double>(e.tokens.size()));
        scored.emplace_back(s, &e.id);
    }
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return *a.second < *b.second;
    });
    std::vector<std::string> out;
    out.reserve(scored.size());
    for (const auto& [s, id] : scored) out.push_back(*id);
    return out;
}

std::vector<int> CandidateSet::positive_indices() const {
    std::vector<int> out(positives.size());
    for (size_t i = 0; i < positives.size(); ++i) out[i] = static_cast<int>(i);
    return out;
}

std::vector<int> CandidateSet::negative_indices() const {
    std::vector<int> out;
    for (size_t i = positives.size(); i < all.size(); ++i) out.push_back(static_cast<int>(i));
    return out;
}

int positive_window_size(int n) { return n >= 50 ? 5 : std::max(1, n * 5 / 50); }

CandidateSet build_candidates(const std::vector<std::string>& reference_ranking,
                              const std::vector<std::vector<std::string>>& peer_positives,
                              uint64_t seed) {
    const int n = static_cast<int>(reference_ranking.size());
    if (n < 6) throw std::runtime_error("corpus too small for candidate construction");

    const int p_end = positive_window_size(n);
    int h_lo, h_hi;
    if (n >= 50) {
        h_lo = 9;
        h_hi = 50;
    } else {
        // Proportional windows for small corpora.
        h_lo = std::max(p_end, n * 9 / 50);
        h_hi = n;
    }

    CandidateSet cs;
    for (int i = 0; i < p_end; ++i) cs.positives.push_back(reference_ranking[static_cast<size_t>(i)]);

    const int window = h_hi - h_lo;
    const int n_hard = std::min(9, window);
    Rng rng(seed);
    const std::vector<int> picks = rng.sample_without_replacement(window, n_hard);
    for (int p : picks) cs.hard_negatives.push_back(reference_ranking[static_cast<size_t>(h_lo + p)]);

    std::set<std::string> seen(cs.positives.begin(), cs.positives.end());
    for (const std::string& id : cs.hard_negatives) seen.insert(id);
    for (const auto& peers : peer_positives) {
        for (const std::string& id : peers) {
            if (seen.insert(id).second) cs.random_negatives.push_back(id);
        }
    }

    cs.all = cs.positives;
    cs.all.insert(cs.all.end(), cs.hard_negatives.begin(), cs.hard_negatives.end());
    cs.all.insert(cs.all.end(), cs.random_negatives.begin(), cs.random_negatives.end());
    return cs;
}

}  // namespace unirag
