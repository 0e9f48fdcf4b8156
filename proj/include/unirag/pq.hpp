// Copyright (c) 2026 the unirag authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

namespace unirag {

// Product quantization codebook: m subquantizers of 2^bits centroids each
// over dim/m-wide subspaces, with an optional fixed orthonormal rotation
// applied before encoding.
struct PQCodebook {
    int dim = 0;
    int m = 0;
    int bits = 8;
    std::vector<float> centroids;  // [m, 2^bits, sub_dim]
    std::vector<float> rotation;   // [dim, dim] row-major, empty = identity

    int sub_dim() const { return dim / m; }
    int ksub() const { return 1 << bits; }
    bool has_rotation() const { return !rotation.empty(); }
};

// Per-subspace Lloyd k-means with k-means++ seeding from a fixed seed. Stops
// after `iterations` sweeps or when the largest centroid shift drops below
// 1e-6; empty clusters are reseeded from the farthest points. Optional
// `sweep_mse` records the mean squared reconstruction error after each sweep.
PQCodebook train_pq(const float* vectors, int n, int dim, int m, int bits, int iterations,
                    uint64_t seed, bool with_rotation = false,
                    std::vector<double>* sweep_mse = nullptr);

// Seeded orthonormal matrix (QR of a Gaussian matrix).
std::vector<float> random_rotation(int dim, uint64_t seed);

std::vector<uint8_t> pq_encode(const PQCodebook& cb, const float* v);
// Reconstruction in the original (unrotated) space.
std::vector<float> pq_decode(const PQCodebook& cb, const uint8_t* codes);

// ADC dot-product lookup tables for a query: [m, 2^bits] float32.
std::vector<float> pq_adc_tables(const PQCodebook& cb, const float* query);

// Storage ratio versus a float16-equivalent head vector of width sub_dim*m:
// (dim * 2 bytes) / (m * bits/8 bytes) = 16 * sub_dim / bits.
double pq_compression_ratio(int sub_dim, int bits);

}  // namespace unirag
