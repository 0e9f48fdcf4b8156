// Copyright (c) 2026 the unirag authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace unirag {

// Retrieval failure surfaced to decode(); `retryable` distinguishes transport
// problems (connect/timeout) from protocol or remote errors.
class RetrievalError : public std::runtime_error {
public:
    enum class Kind { Connect, Timeout, Protocol, Remote };

    RetrievalError(Kind kind, const std::string& message, bool retryable)
        : std::runtime_error(message), kind_(kind), retryable_(retryable) {}

    Kind kind() const { return kind_; }
    bool retryable() const { return retryable_; }

private:
    Kind kind_;
    bool retryable_;
};

struct SearchResult {
    std::vector<std::string> ids;
    std::vector<float> scores;  // descending
};

// Top-k search over passage embeddings; implemented in-process and over TCP.
class RetrieverClient {
public:
    virtual ~RetrieverClient() = default;
    virtual SearchResult search(const std::vector<float>& embedding, int k) = 0;
};

}  // namespace unirag
