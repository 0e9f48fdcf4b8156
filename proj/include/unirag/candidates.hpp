// Copyright (c) 2026 the unirag authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "unirag/data.hpp"

namespace unirag {

// Ranks the whole corpus for a query; the warmup stage trains against these
// pseudo labels. Desk-scale default is a normalized token-overlap scorer.
class ReferenceRetriever {
public:
    virtual ~ReferenceRetriever() = default;
    virtual std::vector<std::string> rank(const std::string& query_text) const = 0;
};

// score(q, p) = |shared lowercase tokens| / sqrt(|q| * |p|), ties broken by
// ascending passage id.
class TokenOverlapRetriever : public ReferenceRetriever {
public:
    explicit TokenOverlapRetriever(const std::vector<CorpusRecord>& corpus);
    std::vector<std::string> rank(const std::string& query_text) const override;

private:
    struct Entry {
        std::string id;
        std::vector<std::string> tokens;  // sorted unique lowercase alnum runs
    };
    std::vector<Entry> entries_;
};

// Warmup supervision for one query: pseudo-positives from reference ranks
// 1-5, hard negatives sampled from ranks 10-50, random negatives from the
// positives of in-batch peers. `all` keeps the stable order P, N_h, N_r.
struct CandidateSet {
    std::vector<std::string> positives;
    std::vector<std::string> hard_negatives;
    std::vector<std::string> random_negatives;
    std::vector<std::string> all;

    std::vector<int> positive_indices() const;
    std::vector<int> negative_indices() const;
};

// Rank windows shrink proportionally when the corpus has fewer than 50
// passages; fewer than 6 passages is an error.
CandidateSet build_candidates(const std::vector<std::string>& reference_ranking,
                              const std::vector<std::vector<std::string>>& peer_positives,
                              uint64_t seed);

// Size of the pseudo-positive window for a ranking of n passages (5 when
// n >= 50, proportional below).
int positive_window_size(int n);

}  // namespace unirag
