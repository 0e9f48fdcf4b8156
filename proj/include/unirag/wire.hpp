// Copyright (c) 2026 the unirag authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>

namespace unirag {

// One message = 4-byte big-endian body length + UTF-8 JSON body.
constexpr size_t kMaxWireBody = 16u * 1024u * 1024u;

// Reads one framed message. Returns false on clean EOF before any byte of a
// frame; throws on oversized frames, mid-frame EOF, or socket errors.
bool read_frame(int fd, std::string& body);
void write_frame(int fd, const std::string& body);

// Exact-count socket IO; false on EOF.
bool read_exact(int fd, void* buf, size_t n);
void write_exact(int fd, const void* buf, size_t n);

}  // namespace unirag
