// Copyright (c) 2026 the unirag authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace unirag {

// SplitMix64. Every random draw in the project goes through this generator so
// that runs are bit-reproducible across platforms and standard libraries.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1).
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Uniform integer in [0, n).
    uint64_t next_below(uint64_t n) {
        if (n == 0) throw std::invalid_argument("next_below: n must be positive");
        return next_u64() % n;
    }

    // Standard normal via Box-Muller.
    double next_gaussian() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = next_double();
        double u2 = next_double();
        if (u1 < 1e-300) u1 = 1e-300;
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(next_below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // Sample `count` distinct indices from [0, n) without replacement,
    // preserving no particular order beyond the draw sequence.
    std::vector<int> sample_without_replacement(int n, int count) {
        if (count > n) throw std::invalid_argument("sample_without_replacement: count > n");
        std::vector<int> pool(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) pool[static_cast<size_t>(i)] = i;
        std::vector<int> out;
        out.reserve(static_cast<size_t>(count));
        for (int i = 0; i < count; ++i) {
            const size_t j = static_cast<size_t>(next_below(pool.size()));
            out.push_back(pool[j]);
            pool[j] = pool.back();
            pool.pop_back();
        }
        return out;
    }

private:
    uint64_t state_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// Derive a sub-stream seed, e.g. per (epoch, example).
inline uint64_t derive_seed(uint64_t base, uint64_t a, uint64_t b = 0) {
    Rng r(base ^ (a * 0x9e3779b97f4a7c15ULL) ^ (b * 0xc2b2ae3d27d4eb4fULL));
    return r.next_u64();
}

}  // namespace unirag
