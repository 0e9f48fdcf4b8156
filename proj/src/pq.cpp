// Copyright (c) 2026 the unirag authors
// SPDX-License-Identifier: Apache-2.0
#include "unirag/pq.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "unirag/rng.hpp"

namespace unirag {

namespace {

// Squared L2 between two sub-vectors, accumulated in double.
double sq_dist(const float* a, const float* b, int d) {
    double acc = 0.0;
    for (int i = 0; i < d; ++i) {
        const double diff = static_cast<double>(a[i]) - b[i];
        acc += diff * diff;
    }
    return acc;
}

void apply_rotation(const std::vector<float>& rot, int dim, const float* v, float* out) {
    for (int i = 0; i < dim; ++i) {
        double acc = 0.0;
        const float* row = rot.data() + static_cast<size_t>(i) * dim;
        for (int j = 0; j < dim; ++j) acc += static_cast<double>(row[j]) * v[j];
        out[i] = static_cast<float>(acc);
    }
}

void apply_rotation_transpose(const std::vector<float>& rot, int dim, const float* v, float* out) {
    for (int i = 0; i < dim; ++i) {
        double acc = 0.0;
        for (int j = 0; j < dim; ++j) acc += static_cast<double>(rot[static_cast<size_t>(j) * dim + i]) * v[j];
        out[i] = static_cast<float>(acc);
    }
}

// Lloyd k-means over `n` points of width `d` stored with stride `stride`.
void kmeans_subspace(const float* points, int n, int d, size_t stride, int k, int iterations,
                     Rng& rng, float* centroids_out, std::vector<double>* sweep_mse) {
    // k-means++ seeding.
    std::vector<const float*> pts(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) pts[static_cast<size_t>(i)] = points + static_cast<size_t>(i) * stride;

    std::vector<int> chosen;
    chosen.push_back(static_cast<int>(rng.next_below(static_cast<uint64_t>(n))));
    std::vector<double> best_d(static_cast<size_t>(n), std::numeric_limits<double>::max());
    while (static_cast<int>(chosen.size()) < k) {
        const float* last = pts[static_cast<size_t>(chosen.back())];
        double total = 0.0;
        for (int i = 0; i < n; ++i) {
            best_d[static_cast<size_t>(i)] = std::min(best_d[static_cast<size_t>(i)], sq_dist(pts[static_cast<size_t>(i)], last, d));
            total += best_d[static_cast<size_t>(i)];
        }
        int pick;
        if (total <= 0.0) {
            pick = static_cast<int>(rng.next_below(static_cast<uint64_t>(n)));
        } else {
            const double target = rng.next_double() * total;
            double run = 0.0;
            pick = n - 1;
            for (int i = 0; i < n; ++i) {
                run += best_d[static_cast<size_t>(i)];
                if (run >= target) {
                    pick = i;
                    break;
                }
            }
        }
        chosen.push_back(pick);
    }
    for (int c = 0; c < k; ++c)
        for (int j = 0; j < d; ++j)
            centroids_out[static_cast<size_t>(c) * d + j] = pts[static_cast<size_t>(chosen[static_cast<size_t>(c)])][j];

    std::vector<int> assign(static_cast<size_t>(n), 0);
    std::vector<double> sums(static_cast<size_t>(k) * d);
    std::vector<int> counts(static_cast<size_t>(k));
    for (int sweep = 0; sweep < iterations; ++sweep) {
        // Assign.
        double mse = 0.0;
        for (int i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::max();
            int arg = 0;
            for (int c = 0; c < k; ++c) {
                const double dd = sq_dist(pts[static_cast<size_t>(i)], centroids_out + static_cast<size_t>(c) * d, d);
                if (dd < best) {
                    best = dd;
                    arg = c;
                }
            }
            assign[static_cast<size_t>(i)] = arg;
            mse += best;
        }
        if (sweep_mse) sweep_mse->push_back(mse / n);
        // Update.
        std::fill(sums.begin(), sums.end(), 0.0);
        std::fill(counts.begin(), counts.end(), 0);
        for (int i = 0; i < n; ++i) {
            const int c = assign[static_cast<size_t>(i)];
            counts[static_cast<size_t>(c)] += 1;
            for (int j = 0; j < d; ++j) sums[static_cast<size_t>(c) * d + j] += pts[static_cast<size_t>(i)][j];
        }
        double max_shift = 0.0;
        for (int c = 0; c < k; ++c) {
            if (counts[static_cast<size_t>(c)] == 0) {
                // Reseed from the point farthest from its centroid.
                double far_d = -1.0;
                int far_i = 0;
                for (int i = 0; i < n; ++i) {
                    const double dd = sq_dist(pts[static_cast<size_t>(i)],
                                              centroids_out + static_cast<size_t>(assign[static_cast<size_t>(i)]) * d, d);
                    if (dd > far_d) {
                        far_d = dd;
                        far_i = i;
                    }
                }
                for (int j = 0; j < d; ++j)
                    centroids_out[static_cast<size_t>(c) * d + j] = pts[static_cast<size_t>(far_i)][j];
                max_shift = std::numeric_limits<double>::max();
                continue;
            }
            double shift = 0.0;
            for (int j = 0; j < d; ++j) {
                const float nv = static_cast<float>(sums[static_cast<size_t>(c) * d + j] / counts[static_cast<size_t>(c)]);
                const double diff = static_cast<double>(nv) - centroids_out[static_cast<size_t>(c) * d + j];
                shift += diff * diff;
                centroids_out[static_cast<size_t>(c) * d + j] = nv;
            }
            max_shift = std::max(max_shift, shift);
        }
        if (max_shift < 1e-6) break;
    }
}

}  // namespace

std::vector<float> random_rotation(int dim, uint64_t seed) {
    Rng rng(seed);
    std::vector<double> a(static_cast<size_t>(dim) * dim);
    for (double& v : a) v = rng.next_gaussian();
    // Modified Gram-Schmidt on rows.
    for (int i = 0; i < dim; ++i) {
        double* ri = a.data() + static_cast<size_t>(i) * dim;
        for (int j = 0; j < i; ++j) {
            const double* rj = a.data() + static_cast<size_t>(j) * dim;
            double proj = 0.0;
            for (int x = 0; x < dim; ++x) proj += ri[x] * rj[x];
            for (int x = 0; x < dim; ++x) ri[x] -= proj * rj[x];
        }
        double norm = 0.0;
        for (int x = 0; x < dim; ++x) norm += ri[x] * ri[x];
        norm = std::sqrt(norm);
        if (norm < 1e-12) throw std::runtime_error("random_rotation: degenerate basis");
        for (int x = 0; x < dim; ++x) ri[x] /= norm;
    }
    std::vector<float> out(a.size());
    for (size_t i = 0; i < a.size(); ++i) out[i] = static_cast<float>(a[i]);
    return out;
}

PQCodebook train_pq(const float* vectors, int n, int dim, int m, int bits, int iterations,
                    uint64_t seed, bool with_rotation, std::vector<double>* sweep_mse) {
    if (m < 1 || dim % m != 0) throw std::invalid_argument("train_pq: dim must be divisible by m");
    if (bits < 1 || bits > 16) throw std::invalid_argument("train_pq: bits out of range");
    const int k = 1 << bits;
    if (n < k) throw std::invalid_argument("train_pq: need at least 2^bits training vectors");
    if (iterations < 1) throw std::invalid_argument("train_pq: iterations must be positive");

    PQCodebook cb;
    cb.dim = dim;
    cb.m = m;
    cb.bits = bits;
    if (with_rotation) cb.rotation = random_rotation(dim, seed ^ 0x5075ULL);

    std::vector<float> rotated;
    const float* data = vectors;
    if (cb.has_rotation()) {
        rotated.resize(static_cast<size_t>(n) * dim);
        for (int i = 0; i < n; ++i)
            apply_rotation(cb.rotation, dim, vectors + static_cast<size_t>(i) * dim,
                           rotated.data() + static_cast<size_t>(i) * dim);
        data = rotated.data();
    }

    const int sd = cb.sub_dim();
    cb.centroids.resize(static_cast<size_t>(m) * k * sd);
    Rng rng(seed);
    for (int s = 0; s < m; ++s) {
        kmeans_subspace(data + static_cast<size_t>(s) * sd, n, sd, static_cast<size_t>(dim), k,
                        iterations, rng, cb.centroids.data() + static_cast<size_t>(s) * k * sd,
                        s == 0 ? sweep_mse : nullptr);
    }
    return cb;
}

std::vector<uint8_t> pq_encode(const PQCodebook& cb, const float* v) {
    const int sd = cb.sub_dim(), k = cb.ksub();
    std::vector<float> rot;
    const float* x = v;
    if (cb.has_rotation()) {
        rot.resize(static_cast<size_t>(cb.dim));
        apply_rotation(cb.rotation, cb.dim, v, rot.data());
        x = rot.data();
    }
    std::vector<uint8_t> codes(static_cast<size_t>(cb.m));
    for (int s = 0; s < cb.m; ++s) {
        const float* sub = x + static_cast<size_t>(s) * sd;
        const float* cents = cb.centroids.data() + static_cast<size_t>(s) * k * sd;
        double best = std::numeric_limits<double>::max();
        int arg = 0;
        for (int c = 0; c < k; ++c) {
            const double dd = sq_dist(sub, cents + static_cast<size_t>(c) * sd, sd);
            if (dd < best) {
                best = dd;
                arg = c;
            }
        }
        codes[static_cast<size_t>(s)] = static_cast<uint8_t>(arg);
    }
    return codes;
}

std::vector<float> pq_decode(const PQCodebook& cb, const uint8_t* codes) {
    const int sd = cb.sub_dim(), k = cb.ksub();
    std::vector<float> recon(static_cast<size_t>(cb.dim));
    for (int s = 0; s < cb.m; ++s) {
        const float* cent = cb.centroids.data() +
                            (static_cast<size_t>(s) * k + codes[static_cast<size_t>(s)]) * sd;
        std::copy(cent, cent + sd, recon.begin() + static_cast<size_t>(s) * sd);
    }
    if (!cb.has_rotation()) return recon;
    std::vector<float> out(static_cast<size_t>(cb.dim));
    apply_rotation_transpose(cb.rotation, cb.dim, recon.data(), out.data());
    return out;
}

std::vector<float> pq_adc_tables(const PQCodebook& cb, const float* query) {
    const int sd = cb.sub_dim(), k = cb.ksub();
    std::vector<float> rot;
    const float* q = query;
    if (cb.has_rotation()) {
        rot.resize(static_cast<size_t>(cb.dim));
        apply_rotation(cb.rotation, cb.dim, query, rot.data());
        q = rot.data();
    }
    std::vector<float> tables(static_cast<size_t>(cb.m) * k);
    for (int s = 0; s < cb.m; ++s) {
        const float* sub = q + static_cast<size_t>(s) * sd;
        for (int c = 0; c < k; ++c) {
            const float* cent = cb.centroids.data() + (static_cast<size_t>(s) * k + c) * sd;
            double acc = 0.0;
            for (int j = 0; j < sd; ++j) acc += static_cast<double>(sub[j]) * cent[j];
            tables[static_cast<size_t>(s) * k + c] = static_cast<float>(acc);
        }
    }
    return tables;
}

double pq_compression_ratio(int sub_dim, int bits) {
    if (sub_dim < 1 || bits < 1) throw std::invalid_argument("pq_compression_ratio: bad arguments");
    return 16.0 * sub_dim / bits;
}

}  // namespace unirag
