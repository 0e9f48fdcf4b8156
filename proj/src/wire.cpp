// Copyright (c) 2026 the unirag authors
// SPDX-License-Identifier: Apache-2.0
#include "unirag/wire.hpp"

#include <cerrno>
#include <cstring>
#include <stdexcept>

#include <sys/socket.h>
#include <unistd.h>

namespace unirag {

bool read_exact(int fd, void* buf, size_t n) {
    auto* p = static_cast<uint8_t*>(buf);
    size_t got = 0;
    while (got < n) {
        const ssize_t r = ::recv(fd, p + got, n - got, 0);
        if (r == 0) {
            if (got == 0) return false;
            throw std::runtime_error("wire: connection closed mid-frame");
        }
        if (r < 0) {
            if (errno == EINTR) continue;
            throw std::runtime_error(std::string("wire: recv failed: ") + std::strerror(errno));
        }
        got += static_cast<size_t>(r);
    }
    return true;
}

void write_exact(int fd, const void* buf, size_t n) {
    const auto* p = static_cast<const uint8_t*>(buf);
    size_t sent = 0;
    while (sent < n) {
        const ssize_t w = ::send(fd, p + sent, n - sent, MSG_NOSIGNAL);
        if (w <= 0) {
            if (w < 0 && errno == EINTR) continue;
            throw std::runtime_error(std::string("wire: send failed: ") + std::strerror(errno));
        }
        sent += static_cast<size_t>(w);
    }
}

bool read_frame(int fd, std::string& body) {
    uint8_t len_be[4];
    if (!read_exact(fd, len_be, 4)) return false;
    const uint32_t len = (static_cast<uint32_t>(len_be[0]) << 24) |
                         (static_cast<uint32_t>(len_be[1]) << 16) |
                         (static_cast<uint32_t>(len_be[2]) << 8) | len_be[3];
    if (len > kMaxWireBody) throw std::runtime_error("wire: frame exceeds 16 MiB limit");
    body.resize(len);
    if (len > 0 && !read_exact(fd, body.data(), len))
        throw std::runtime_error("wire: connection closed mid-frame");
    return true;
}

void write_frame(int fd, const std::string& body) {
    if (body.size() > kMaxWireBody) throw std::runtime_error("wire: frame exceeds 16 MiB limit");
    const uint32_t len = static_cast<uint32_t>(body.size());
    uint8_t len_be[4] = {static_cast<uint8_t>(len >> 24), static_cast<uint8_t>(len >> 16),
                         static_cast<uint8_t>(len >> 8), static_cast<uint8_t>(len)};
    write_exact(fd, len_be, 4);
    write_exact(fd, body.data(), body.size());
}

}  // namespace unirag
