// Copyright (c) 2026 the unirag authors
// SPDX-License-Identifier: Apache-2.0
#include "unirag/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <stdexcept>

namespace unirag {

namespace {

const std::string kSpaceMark = "\xe2\x96\x81";  // U+2581

std::string byte_piece(int b) {
    static const char* hex = "0123456789ABCDEF";
    std::string s = "<0x";
    s += hex[(b >> 4) & 0xF];
    s += hex[b & 0xF];
    s += ">";
    return s;
}

bool is_word_char(unsigned char c) { return std::isalnum(c) != 0 || c >= 0x80; }

// Splits a whitespace-free word into alternating alnum / punctuation runs.
std::vector<std::string> split_runs(const std::string& word) {
    std::vector<std::string> runs;
    size_t i = 0;
    while (i < word.size()) {
        const bool w = is_word_char(static_cast<unsigned char>(word[i]));
        size_t j = i + 1;
        while (j < word.size() && is_word_char(static_cast<unsigned char>(word[j])) == w) ++j;
        runs.push_back(word.substr(i, j - i));
        i = j;
    }
    return runs;
}

}  // namespace

Tokenizer Tokenizer::build(const std::vector<std::string>& texts) {
    std::set<std::string> pieces;
    for (const std::string& text : texts) {
        size_t i = 0;
        while (i < text.size()) {
            while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
            size_t j = i;
            while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
            if (j > i) {
                const std::vector<std::string> runs = split_runs(text.substr(i, j - i));
                for (size_t r = 0; r < runs.size(); ++r)
                    pieces.insert(r == 0 ? kSpaceMark + runs[r] : runs[r]);
            }
            i = j;
        }
    }
    Tokenizer t;
    t.table_.reserve(259 + pieces.size());
    t.table_.push_back("<pad>");
    t.table_.push_back("<bos>");
    t.table_.push_back("<eos>");
    for (int b = 0; b < 256; ++b) t.table_.push_back(byte_piece(b));
    for (const std::string& p : pieces) t.table_.push_back(p);
    t.index_pieces();
    return t;
}

Tokenizer Tokenizer::from_table(std::vector<std::string> table) {
    if (table.size() < static_cast<size_t>(kPieceBase) || table[0] != "<pad>" || table[1] != "<bos>" ||
        table[2] != "<eos>" || table[3] != byte_piece(0) || table[258] != byte_piece(255))
        throw std::invalid_argument("Tokenizer::from_table: malformed piece table");
    Tokenizer t;
    t.table_ = std::move(table);
    t.index_pieces();
    return t;
}

void Tokenizer::index_pieces() {
    piece_to_id_.clear();
    max_piece_len_ = 0;
    for (size_t i = kPieceBase; i < table_.size(); ++i) {
        piece_to_id_[table_[i]] = static_cast<int>(i);
        max_piece_len_ = std::max(max_piece_len_, table_[i].size());
    }
}

int Tokenizer::piece_id(const std::string& piece) const {
    auto it = piece_to_id_.find(piece);
    return it == piece_to_id_.end() ? -1 : it->second;
}

std::vector<int> Tokenizer::encode(const std::string& text) const {
    // Normalize: every whitespace run becomes a single word-boundary marker.
    std::string norm;
    norm.reserve(text.size() + 3);
    bool pending_space = true;  // leading marker
    for (char c : text) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            pending_space = true;
            continue;
        }
        if (pending_space) {
            norm += kSpaceMark;
            pending_space = false;
        }
        norm += c;
    }
    std::vector<int> out;
    size_t i = 0;
    while (i < norm.size()) {
        const size_t limit = std::min(max_piece_len_, norm.size() - i);
        int id = -1;
        size_t len = 0;
        for (size_t l = limit; l >= 1; --l) {
            auto it = piece_to_id_.find(norm.substr(i, l));
            if (it != piece_to_id_.end()) {
                id = it->second;
                len = l;
                break;
            }
        }
        if (id >= 0) {
            out.push_back(id);
            i += len;
        } else {
            out.push_back(kByteBase + static_cast<unsigned char>(norm[i]));
            i += 1;
        }
    }
    return out;
}

std::string Tokenizer::decode(const std::vector<int>& ids) const {
    std::string raw;
    for (int id : ids) {
        if (id < 0 || id >= vocab_size()) throw std::out_of_range("Tokenizer::decode: id out of range");
        if (id == kPadId || id == kBosId || id == kEosId) continue;
        if (id >= kByteBase && id < kPieceBase) {
            raw += static_cast<char>(id - kByteBase);
        } else {
            raw += table_[static_cast<size_t>(id)];
        }
    }
    std::string out;
    out.reserve(raw.size());
    size_t i = 0;
    while (i < raw.size()) {
        if (raw.compare(i, kSpaceMark.size(), kSpaceMark) == 0) {
            out += ' ';
            i += kSpaceMark.size();
        } else {
            out += raw[i];
            i += 1;
        }
    }
    if (!out.empty() && out[0] == ' ') out.erase(out.begin());
    return out;
}

}  // namespace unirag
