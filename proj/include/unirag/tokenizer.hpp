// Copyright (c) 2026 the unirag authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <unordered_map>
#include <vector>

namespace unirag {

// Deterministic word-piece tokenizer with byte fallback. Pieces use the
// SentencePiece word-boundary marker (U+2581); unknown spans fall back to
// single-byte tokens so any input round-trips. The table is frozen at
// data-generation time and stored inside checkpoints.
class Tokenizer {
public:
    static constexpr int kPadId = 0;
    static constexpr int kBosId = 1;
    static constexpr int kEosId = 2;
    static constexpr int kByteBase = 3;  // ids 3..258 are raw bytes
    static constexpr int kPieceBase = 259;

    Tokenizer() = default;

    // Builds the piece table from whitespace-split words of `texts`.
    // Punctuation runs become standalone pieces.
    static Tokenizer build(const std::vector<std::string>& texts);

    // Reconstructs a tokenizer from a full id-ordered piece table
    // (specials + bytes + word pieces), as stored in checkpoints.
    static Tokenizer from_table(std::vector<std::string> table);

    std::vector<int> encode(const std::string& text) const;
    std::string decode(const std::vector<int>& ids) const;

    int vocab_size() const { return static_cast<int>(table_.size()); }
    const std::vector<std::string>& table() const { return table_; }
    // -1 when the piece is not in the table.
    int piece_id(const std::string& piece) const;

private:
    void index_pieces();

    std::vector<std::string> table_;
    std::unordered_map<std::string, int> piece_to_id_;
    size_t max_piece_len_ = 0;
};

}  // namespace unirag
