// Copyright (c) 2026 the unirag authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace unirag {

class Rng;

// Dense row-major float32 tensor with value semantics. Data and gradient
// buffers are shared between copies; reductions accumulate in float64.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
    static Tensor from(std::vector<int> shape, std::vector<float> values, bool requires_grad = false);
    static Tensor scalar(float value, bool requires_grad = false);
    // Gaussian init, mean 0 / given stddev, drawn from the project Rng.
    static Tensor randn(std::vector<int> shape, Rng& rng, float stddev, bool requires_grad = false);

    bool defined() const { return static_cast<bool>(data_); }
    const std::vector<int>& shape() const { return shape_; }
    int dim(int axis) const;
    size_t numel() const;

    float* data() { return data_->data(); }
    const float* data() const { return data_->data(); }
    std::vector<float> to_vector() const { return *data_; }

    bool requires_grad() const { return requires_grad_; }
    // Allocates a zeroed gradient buffer when turning gradients on.
    void set_requires_grad(bool on);
    float* grad();
    const float* grad() const;
    bool has_grad() const { return static_cast<bool>(grad_); }
    void zero_grad();

    float item() const;

    // Same buffers, new shape. numel must match.
    Tensor reshaped(std::vector<int> shape) const;
    // Deep copy of the data with gradients detached.
    Tensor detached_copy() const;

    int node() const { return node_; }

private:
    friend class GradTape;

    std::vector<int> shape_;
    std::shared_ptr<std::vector<float>> data_;
    std::shared_ptr<std::vector<float>> grad_;
    bool requires_grad_ = false;
    int node_ = -1;  // producing tape node, -1 for leaves
};

// Reverse-mode tape. Records one node per forward op in creation order
// (a valid topological order); backward() replays the reachable suffix in
// exact reverse order. One tape may be active per thread.
class GradTape {
public:
    GradTape();
    ~GradTape();
    GradTape(const GradTape&) = delete;
    GradTape& operator=(const GradTape&) = delete;

    static GradTape* current();

    int record(std::vector<int> parents, std::function<void()> backward_fn);

    // Records `backward_fn` for `out` on the active tape when `out` carries
    // gradients; no-op otherwise.
    static void attach(Tensor& out, const std::vector<const Tensor*>& inputs,
                       std::function<void()> backward_fn);

    // Seeds d(loss)/d(loss) = 1 and accumulates gradients into every
    // requires_grad tensor reachable from `loss`. Throws if the loss is not
    // a scalar on this tape, or if called again without reset().
    void backward(const Tensor& loss);
    void reset();

    size_t size() const { return nodes_.size(); }
    bool backward_done() const { return backward_done_; }

private:
    struct Node {
        std::vector<int> parents;
        std::function<void()> backward;
    };
    std::vector<Node> nodes_;
    bool backward_done_ = false;
};

// Temporarily disables recording on the current thread.
class NoGradScope {
public:
    NoGradScope();
    ~NoGradScope();
    NoGradScope(const NoGradScope&) = delete;
    NoGradScope& operator=(const NoGradScope&) = delete;

private:
    GradTape* saved_;
};

// Per-row visibility for the fused attention op. Query row i sees self keys
// [self_begin[i], self_end[i]) and, when cross tensors are given, cross keys
// [cross_begin[i], cross_end[i]). Cross keys come first in the softmax order.
struct AttnSpans {
    std::vector<int> self_begin;
    std::vector<int> self_end;
    std::vector<int> cross_begin;
    std::vector<int> cross_end;
};

// Accumulated attention probability mass received by each self key, summed
// over query rows and heads. Feeds heavy-hitter pruning.
struct AttnStats {
    std::vector<double> self_mass;
};

// ---- ops ----

Tensor matmul(const Tensor& a, const Tensor& b);   // [m,k] x [k,n] -> [m,n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // [m,k] x [n,k]^T -> [m,n]
Tensor add(const Tensor& a, const Tensor& b);      // same shape
Tensor scale(const Tensor& a, float s);
Tensor dot(const Tensor& a, const Tensor& b);      // flat dot -> scalar, float64 accumulation
Tensor sum(const Tensor& a);                       // -> scalar
Tensor embedding(const Tensor& table, const std::vector<int>& ids);  // [V,d] -> [T,d]
Tensor rms_norm(const Tensor& x, const Tensor& weight, float eps = 1e-5f);  // rows of [T,d]
Tensor swiglu(const Tensor& gate, const Tensor& up);                 // silu(gate) * up
Tensor gather_rows(const Tensor& x, const std::vector<int>& rows);   // duplicates allowed
Tensor concat_rows(const std::vector<Tensor>& parts);
// Mean over the g query heads of each group: [R, h_k*g*d_h] -> [R, h_k*d_h].
Tensor group_mean(const Tensor& x, int h_k, int g, int d_h);

// Row softmax with max-subtraction and float64 denominators. Masked entries
// (mask value 0) are exactly zero in the output. A fully masked row throws
// "empty attention row".
Tensor softmax_rows(const Tensor& x, const std::vector<uint8_t>* mask = nullptr);

// Rotary position application on [T, H, d_h]; d_h must be even. Pair 2i is
// rotated by angle position / base^(2i/d_h).
Tensor apply_rope(const Tensor& states, const std::vector<int>& positions, float base = 10000.0f);

// Mean negative log-likelihood of targets under rows of logits.
Tensor cross_entropy_rows(const Tensor& logits, const std::vector<int>& targets);

// Grouped-query attention over explicit visibility spans. q is [T,h_q,d_h],
// self/cross K and V are [S,h_k,d_h] / [P,h_k,d_h]; query head j uses kv head
// j / (h_q/h_k). Scores scaled by 1/sqrt(d_h).
Tensor attention(const Tensor& q, const Tensor& k_self, const Tensor& v_self,
                 const Tensor* k_cross, const Tensor* v_cross,
                 const AttnSpans& spans, AttnStats* stats = nullptr);

// No-autograd helpers.
bool all_finite(const Tensor& t);
// log softmax(logits[row])[target] computed in float64.
double row_log_prob(const Tensor& logits, int row, int target);

}  // namespace unirag
