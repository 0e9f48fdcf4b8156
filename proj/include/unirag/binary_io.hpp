// Copyright (c) 2026 the unirag authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace unirag {

// Little-endian binary writer/reader with hard bounds checks; a short file
// surfaces as a clean error rather than a partial object.
class BinaryWriter {
public:
    explicit BinaryWriter(const std::string& path) : out_(path, std::ios::binary) {
        if (!out_) throw std::runtime_error("cannot open for writing: " + path);
    }

    void u8(uint8_t v) { raw(&v, 1); }
    void u32(uint32_t v) {
        uint8_t b[4] = {static_cast<uint8_t>(v), static_cast<uint8_t>(v >> 8),
                        static_cast<uint8_t>(v >> 16), static_cast<uint8_t>(v >> 24)};
        raw(b, 4);
    }
    void i32(int32_t v) { u32(static_cast<uint32_t>(v)); }
    void u64(uint64_t v) {
        u32(static_cast<uint32_t>(v));
        u32(static_cast<uint32_t>(v >> 32));
    }
    void f32(float v) {
        uint32_t u;
        std::memcpy(&u, &v, 4);
        u32(u);
    }
    void str(const std::string& s) {
        u32(static_cast<uint32_t>(s.size()));
        raw(s.data(), s.size());
    }
    void f32_array(const float* p, size_t n) {
        for (size_t i = 0; i < n; ++i) f32(p[i]);
    }
    void magic(const char m[4]) { raw(m, 4); }

    void close() {
        out_.close();
        if (!out_) throw std::runtime_error("write failed on close");
    }

private:
    void raw(const void* p, size_t n) {
        out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
        if (!out_) throw std::runtime_error("write failed");
    }
    std::ofstream out_;
};

class BinaryReader {
public:
    explicit BinaryReader(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw std::runtime_error("cannot open for reading: " + path);
        buf_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    }

    uint8_t u8() {
        need(1);
        return static_cast<uint8_t>(buf_[pos_++]);
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<uint8_t>(buf_[pos_ + static_cast<size_t>(i)]);
        pos_ += 4;
        return v;
    }
    int32_t i32() { return static_cast<int32_t>(u32()); }
    uint64_t u64() {
        const uint64_t lo = u32();
        const uint64_t hi = u32();
        return lo | (hi << 32);
    }
    float f32() {
        const uint32_t u = u32();
        float v;
        std::memcpy(&v, &u, 4);
        return v;
    }
    std::string str() {
        const uint32_t n = u32();
        need(n);
        std::string s(buf_.data() + pos_, n);
        pos_ += n;
        return s;
    }
    std::vector<float> f32_array(size_t n) {
        std::vector<float> out(n);
        for (size_t i = 0; i < n; ++i) out[i] = f32();
        return out;
    }
    void expect_magic(const char m[4], const std::string& what) {
        need(4);
        if (std::memcmp(buf_.data() + pos_, m, 4) != 0)
            throw std::runtime_error(what + ": bad magic");
        pos_ += 4;
    }
    bool at_end() const { return pos_ == buf_.size(); }

private:
    void need(size_t n) {
        if (pos_ + n > buf_.size()) throw std::runtime_error("truncated file");
    }
    std::string buf_;
    size_t pos_ = 0;
};

}  // namespace unirag
