// Copyright (c) 2026 the unirag authors
// SPDX-License-Identifier: Apache-2.0
#include "unirag/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <stdexcept>

#include "unirag/rng.hpp"

namespace unirag {

namespace {

thread_local GradTape* t_current_tape = nullptr;

size_t shape_numel(const std::vector<int>& shape) {
    size_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw std::invalid_argument("tensor shape entries must be positive");
        n *= static_cast<size_t>(d);
    }
    return n;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

bool grad_enabled() { return t_current_tape != nullptr; }

std::vector<int> parent_nodes(const std::vector<const Tensor*>& inputs) {
    std::vector<int> out;
    for (const Tensor* t : inputs) {
        if (t->node() >= 0) out.push_back(t->node());
    }
    return out;
}

}  // namespace

// ---- Tensor ----

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
    Tensor t;
    const size_t n = shape_numel(shape);
    t.shape_ = std::move(shape);
    t.data_ = std::make_shared<std::vector<float>>(n, 0.0f);
    t.set_requires_grad(requires_grad);
    return t;
}

Tensor Tensor::from(std::vector<int> shape, std::vector<float> values, bool requires_grad) {
    const size_t n = shape_numel(shape);
    if (n != values.size()) throw std::invalid_argument("Tensor::from: data length does not match shape");
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = std::make_shared<std::vector<float>>(std::move(values));
    t.set_requires_grad(requires_grad);
    return t;
}

Tensor Tensor::scalar(float value, bool requires_grad) {
    return from({1}, {value}, requires_grad);
}

Tensor Tensor::randn(std::vector<int> shape, Rng& rng, float stddev, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    float* p = t.data();
    const size_t n = t.numel();
    for (size_t i = 0; i < n; ++i) p[i] = static_cast<float>(rng.next_gaussian()) * stddev;
    return t;
}

int Tensor::dim(int axis) const {
    if (axis < 0) axis += static_cast<int>(shape_.size());
    if (axis < 0 || axis >= static_cast<int>(shape_.size())) throw std::out_of_range("Tensor::dim axis");
    return shape_[static_cast<size_t>(axis)];
}

size_t Tensor::numel() const { return data_ ? data_->size() : 0; }

void Tensor::set_requires_grad(bool on) {
    requires_grad_ = on;
    if (on && !grad_) grad_ = std::make_shared<std::vector<float>>(numel(), 0.0f);
}

float* Tensor::grad() {
    if (!grad_) grad_ = std::make_shared<std::vector<float>>(numel(), 0.0f);
    return grad_->data();
}

const float* Tensor::grad() const {
    if (!grad_) throw std::logic_error("Tensor::grad: no gradient buffer allocated");
    return grad_->data();
}

void Tensor::zero_grad() {
    if (grad_) std::fill(grad_->begin(), grad_->end(), 0.0f);
}

float Tensor::item() const {
    if (numel() != 1) throw std::logic_error("Tensor::item: tensor is not scalar");
    return (*data_)[0];
}

Tensor Tensor::reshaped(std::vector<int> shape) const {
    if (shape_numel(shape) != numel()) throw std::invalid_argument("reshaped: numel mismatch");
    Tensor t = *this;
    t.shape_ = std::move(shape);
    return t;
}

Tensor Tensor::detached_copy() const {
    Tensor t;
    t.shape_ = shape_;
    t.data_ = std::make_shared<std::vector<float>>(*data_);
    return t;
}

// Output tensor for an op: requires grad iff recording and any input does.
Tensor make_op_output(std::vector<int> shape, const std::vector<const Tensor*>& inputs) {
    bool rg = false;
    if (grad_enabled()) {
        for (const Tensor* t : inputs) rg = rg || t->requires_grad();
    }
    Tensor out = Tensor::zeros(std::move(shape), rg);
    return out;
}

namespace {

void record_if_needed(Tensor& out, const std::vector<const Tensor*>& inputs, std::function<void()> fn) {
    GradTape::attach(out, inputs, std::move(fn));
}

}  // namespace

// ---- GradTape ----

void GradTape::attach(Tensor& out, const std::vector<const Tensor*>& inputs,
                      std::function<void()> backward_fn) {
    if (!out.requires_grad()) return;
    out.node_ = t_current_tape->record(parent_nodes(inputs), std::move(backward_fn));
}

GradTape::GradTape() {
    if (t_current_tape != nullptr) throw std::logic_error("a GradTape is already active on this thread");
    t_current_tape = this;
}

GradTape::~GradTape() {
    if (t_current_tape == this) t_current_tape = nullptr;
}

GradTape* GradTape::current() { return t_current_tape; }

int GradTape::record(std::vector<int> parents, std::function<void()> backward_fn) {
    nodes_.push_back(Node{std::move(parents), std::move(backward_fn)});
    return static_cast<int>(nodes_.size()) - 1;
}

void GradTape::backward(const Tensor& loss) {
    if (backward_done_) throw std::logic_error("backward already ran on this tape; reset() first");
    if (loss.numel() != 1) throw std::invalid_argument("backward: loss must be scalar");
    if (loss.node() < 0 || loss.node() >= static_cast<int>(nodes_.size()))
        throw std::invalid_argument("backward: loss is not on this tape");
    backward_done_ = true;

    Tensor seed = loss;
    seed.grad()[0] += 1.0f;

    // Mark ancestors of the loss node; everything else is skipped.
    std::vector<uint8_t> reachable(nodes_.size(), 0);
    std::vector<int> stack{loss.node()};
    reachable[static_cast<size_t>(loss.node())] = 1;
    while (!stack.empty()) {
        const int id = stack.back();
        stack.pop_back();
        for (int p : nodes_[static_cast<size_t>(id)].parents) {
            if (!reachable[static_cast<size_t>(p)]) {
                reachable[static_cast<size_t>(p)] = 1;
                stack.push_back(p);
            }
        }
    }
    for (int id = loss.node(); id >= 0; --id) {
        if (reachable[static_cast<size_t>(id)]) nodes_[static_cast<size_t>(id)].backward();
    }
}

void GradTape::reset() {
    nodes_.clear();
    backward_done_ = false;
}

NoGradScope::NoGradScope() : saved_(t_current_tape) { t_current_tape = nullptr; }
NoGradScope::~NoGradScope() { t_current_tape = saved_; }

// ---- ops ----

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.dim(1) != b.dim(0))
        throw std::invalid_argument("matmul: incompatible shapes");
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor out = make_op_output({m, n}, {&a, &b});
    const float* pa = a.data();
    const float* pb = b.data();
    float* po = out.data();
    for (int i = 0; i < m; ++i) {
        float* orow = po + static_cast<size_t>(i) * n;
        const float* arow = pa + static_cast<size_t>(i) * k;
        for (int kk = 0; kk < k; ++kk) {
            const float av = arow[kk];
            const float* brow = pb + static_cast<size_t>(kk) * n;
            for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    record_if_needed(out, {&a, &b}, [a = a, b = b, out, m, k, n]() mutable {
        const float* g = out.grad();
        if (a.requires_grad()) {
            float* ga = a.grad();
            const float* pb2 = b.data();
            for (int i = 0; i < m; ++i) {
                const float* grow = g + static_cast<size_t>(i) * n;
                float* garow = ga + static_cast<size_t>(i) * k;
                for (int kk = 0; kk < k; ++kk) {
                    const float* brow = pb2 + static_cast<size_t>(kk) * n;
                    float acc = 0.0f;
                    for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
                    garow[kk] += acc;
                }
            }
        }
        if (b.requires_grad()) {
            float* gb = b.grad();
            const float* pa2 = a.data();
            for (int i = 0; i < m; ++i) {
                const float* grow = g + static_cast<size_t>(i) * n;
                const float* arow = pa2 + static_cast<size_t>(i) * k;
                for (int kk = 0; kk < k; ++kk) {
                    const float av = arow[kk];
                    if (av == 0.0f) continue;
                    float* gbrow = gb + static_cast<size_t>(kk) * n;
                    for (int j = 0; j < n; ++j) gbrow[j] += av * grow[j];
                }
            }
        }
    });
    return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.dim(1) != b.dim(1))
        throw std::invalid_argument("matmul_nt: incompatible shapes");
    const int m = a.dim(0), k = a.dim(1), n = b.dim(0);
    Tensor out = make_op_output({m, n}, {&a, &b});
    const float* pa = a.data();
    const float* pb = b.data();
    float* po = out.data();
    for (int i = 0; i < m; ++i) {
        const float* arow = pa + static_cast<size_t>(i) * k;
        float* orow = po + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const float* brow = pb + static_cast<size_t>(j) * k;
            float acc = 0.0f;
            for (int kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
            orow[j] = acc;
        }
    }
    record_if_needed(out, {&a, &b}, [a = a, b = b, out, m, k, n]() mutable {
        const float* g = out.grad();
        if (a.requires_grad()) {
            float* ga = a.grad();
            const float* pb2 = b.data();
            for (int i = 0; i < m; ++i) {
                const float* grow = g + static_cast<size_t>(i) * n;
                float* garow = ga + static_cast<size_t>(i) * k;
                for (int j = 0; j < n; ++j) {
                    const float gv = grow[j];
                    if (gv == 0.0f) continue;
                    const float* brow = pb2 + static_cast<size_t>(j) * k;
                    for (int kk = 0; kk < k; ++kk) garow[kk] += gv * brow[kk];
                }
            }
        }
        if (b.requires_grad()) {
            float* gb = b.grad();
            const float* pa2 = a.data();
            for (int i = 0; i < m; ++i) {
                const float* grow = g + static_cast<size_t>(i) * n;
                const float* arow = pa2 + static_cast<size_t>(i) * k;
                for (int j = 0; j < n; ++j) {
                    const float gv = grow[j];
                    if (gv == 0.0f) continue;
                    float* gbrow = gb + static_cast<size_t>(j) * k;
                    for (int kk = 0; kk < k; ++kk) gbrow[kk] += gv * arow[kk];
                }
            }
        }
    });
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    Tensor out = make_op_output(a.shape(), {&a, &b});
    const float* pa = a.data();
    const float* pb = b.data();
    float* po = out.data();
    const size_t n = out.numel();
    for (size_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
    record_if_needed(out, {&a, &b}, [a = a, b = b, out, n]() mutable {
        const float* g = out.grad();
        if (a.requires_grad()) {
            float* ga = a.grad();
            for (size_t i = 0; i < n; ++i) ga[i] += g[i];
        }
        if (b.requires_grad()) {
            float* gb = b.grad();
            for (size_t i = 0; i < n; ++i) gb[i] += g[i];
        }
    });
    return out;
}

Tensor scale(const Tensor& a, float s) {
    Tensor out = make_op_output(a.shape(), {&a});
    const float* pa = a.data();
    float* po = out.data();
    const size_t n = out.numel();
    for (size_t i = 0; i < n; ++i) po[i] = pa[i] * s;
    record_if_needed(out, {&a}, [a = a, out, s, n]() mutable {
        if (!a.requires_grad()) return;
        const float* g = out.grad();
        float* ga = a.grad();
        for (size_t i = 0; i < n; ++i) ga[i] += g[i] * s;
    });
    return out;
}

Tensor dot(const Tensor& a, const Tensor& b) {
    if (a.numel() != b.numel()) throw std::invalid_argument("dot: length mismatch");
    const size_t n = a.numel();
    Tensor out = make_op_output({1}, {&a, &b});
    const float* pa = a.data();
    const float* pb = b.data();
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) acc += static_cast<double>(pa[i]) * static_cast<double>(pb[i]);
    out.data()[0] = static_cast<float>(acc);
    record_if_needed(out, {&a, &b}, [a = a, b = b, out, n]() mutable {
        const float g = out.grad()[0];
        if (a.requires_grad()) {
            float* ga = a.grad();
            const float* pb2 = b.data();
            for (size_t i = 0; i < n; ++i) ga[i] += g * pb2[i];
        }
        if (b.requires_grad()) {
            float* gb = b.grad();
            const float* pa2 = a.data();
            for (size_t i = 0; i < n; ++i) gb[i] += g * pa2[i];
        }
    });
    return out;
}

Tensor sum(const Tensor& a) {
    Tensor out = make_op_output({1}, {&a});
    const float* pa = a.data();
    const size_t n = a.numel();
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) acc += pa[i];
    out.data()[0] = static_cast<float>(acc);
    record_if_needed(out, {&a}, [a = a, out, n]() mutable {
        if (!a.requires_grad()) return;
        const float g = out.grad()[0];
        float* ga = a.grad();
        for (size_t i = 0; i < n; ++i) ga[i] += g;
    });
    return out;
}

Tensor embedding(const Tensor& table, const std::vector<int>& ids) {
    if (table.shape().size() != 2) throw std::invalid_argument("embedding: table must be [V,d]");
    if (ids.empty()) throw std::invalid_argument("embedding: empty id sequence");
    const int v = table.dim(0), d = table.dim(1);
    for (int id : ids) {
        if (id < 0 || id >= v) throw std::out_of_range("embedding: id out of range");
    }
    const int t = static_cast<int>(ids.size());
    Tensor out = make_op_output({t, d}, {&table});
    float* po = out.data();
    const float* pt = table.data();
    for (int i = 0; i < t; ++i)
        std::memcpy(po + static_cast<size_t>(i) * d, pt + static_cast<size_t>(ids[static_cast<size_t>(i)]) * d,
                    sizeof(float) * static_cast<size_t>(d));
    record_if_needed(out, {&table}, [table = table, out, ids, d, t]() mutable {
        if (!table.requires_grad()) return;
        const float* g = out.grad();
        float* gt = table.grad();
        for (int i = 0; i < t; ++i) {
            float* dst = gt + static_cast<size_t>(ids[static_cast<size_t>(i)]) * d;
            const float* src = g + static_cast<size_t>(i) * d;
            for (int j = 0; j < d; ++j) dst[j] += src[j];
        }
    });
    return out;
}

Tensor rms_norm(const Tensor& x, const Tensor& weight, float eps) {
    if (x.shape().size() != 2 || weight.shape().size() != 1 || x.dim(1) != weight.dim(0))
        throw std::invalid_argument("rms_norm: expected [T,d] and [d]");
    const int t = x.dim(0), d = x.dim(1);
    Tensor out = make_op_output({t, d}, {&x, &weight});
    const float* px = x.data();
    const float* pw = weight.data();
    float* po = out.data();
    std::vector<float> inv_rms(static_cast<size_t>(t));
    for (int i = 0; i < t; ++i) {
        const float* row = px + static_cast<size_t>(i) * d;
        double ms = 0.0;
        for (int j = 0; j < d; ++j) ms += static_cast<double>(row[j]) * static_cast<double>(row[j]);
        ms /= d;
        const float s = static_cast<float>(1.0 / std::sqrt(ms + static_cast<double>(eps)));
        inv_rms[static_cast<size_t>(i)] = s;
        float* orow = po + static_cast<size_t>(i) * d;
        for (int j = 0; j < d; ++j) orow[j] = row[j] * s * pw[j];
    }
    record_if_needed(out, {&x, &weight}, [x = x, weight = weight, out, inv_rms, t, d]() mutable {
        const float* g = out.grad();
        const float* px2 = x.data();
        const float* pw2 = weight.data();
        for (int i = 0; i < t; ++i) {
            const float s = inv_rms[static_cast<size_t>(i)];
            const float* row = px2 + static_cast<size_t>(i) * d;
            const float* grow = g + static_cast<size_t>(i) * d;
            if (weight.requires_grad()) {
                float* gw = weight.grad();
                for (int j = 0; j < d; ++j) gw[j] += grow[j] * row[j] * s;
            }
            if (x.requires_grad()) {
                double inner = 0.0;  // sum_k g_k w_k x_k
                for (int j = 0; j < d; ++j)
                    inner += static_cast<double>(grow[j]) * pw2[j] * row[j];
                const float c = static_cast<float>(inner) * s * s * s / static_cast<float>(d);
                float* gx = x.grad() + static_cast<size_t>(i) * d;
                for (int j = 0; j < d; ++j) gx[j] += grow[j] * pw2[j] * s - row[j] * c;
            }
        }
    });
    return out;
}

Tensor swiglu(const Tensor& gate, const Tensor& up) {
    check_same_shape(gate, up, "swiglu");
    Tensor out = make_op_output(gate.shape(), {&gate, &up});
    const float* pg = gate.data();
    const float* pu = up.data();
    float* po = out.data();
    const size_t n = out.numel();
    for (size_t i = 0; i < n; ++i) {
        const float sig = 1.0f / (1.0f + std::exp(-pg[i]));
        po[i] = pg[i] * sig * pu[i];
    }
    record_if_needed(out, {&gate, &up}, [gate = gate, up = up, out, n]() mutable {
        const float* g = out.grad();
        const float* pg2 = gate.data();
        const float* pu2 = up.data();
        for (size_t i = 0; i < n; ++i) {
            const float sig = 1.0f / (1.0f + std::exp(-pg2[i]));
            const float silu = pg2[i] * sig;
            if (gate.requires_grad())
                gate.grad()[i] += g[i] * pu2[i] * (sig + silu * (1.0f - sig));
            if (up.requires_grad()) up.grad()[i] += g[i] * silu;
        }
    });
    return out;
}

Tensor gather_rows(const Tensor& x, const std::vector<int>& rows) {
    if (x.shape().empty()) throw std::invalid_argument("gather_rows: rank-0 input");
    if (rows.empty()) throw std::invalid_argument("gather_rows: empty row list");
    const int r = x.dim(0);
    const int cols = static_cast<int>(x.numel()) / r;
    for (int i : rows) {
        if (i < 0 || i >= r) throw std::out_of_range("gather_rows: row index out of range");
    }
    std::vector<int> shape = x.shape();
    shape[0] = static_cast<int>(rows.size());
    Tensor out = make_op_output(shape, {&x});
    const float* px = x.data();
    float* po = out.data();
    for (size_t i = 0; i < rows.size(); ++i)
        std::memcpy(po + i * cols, px + static_cast<size_t>(rows[i]) * cols, sizeof(float) * static_cast<size_t>(cols));
    record_if_needed(out, {&x}, [x = x, out, rows, cols]() mutable {
        if (!x.requires_grad()) return;
        const float* g = out.grad();
        float* gx = x.grad();
        for (size_t i = 0; i < rows.size(); ++i) {
            float* dst = gx + static_cast<size_t>(rows[i]) * cols;
            const float* src = g + i * cols;
            for (int j = 0; j < cols; ++j) dst[j] += src[j];
        }
    });
    return out;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: no parts");
    std::vector<int> shape = parts[0].shape();
    int total = 0;
    const int cols = static_cast<int>(parts[0].numel()) / parts[0].dim(0);
    for (const Tensor& p : parts) {
        if (static_cast<int>(p.numel()) / p.dim(0) != cols)
            throw std::invalid_argument("concat_rows: row width mismatch");
        total += p.dim(0);
    }
    shape[0] = total;
    std::vector<const Tensor*> ins;
    for (const Tensor& p : parts) ins.push_back(&p);
    Tensor out = make_op_output(shape, ins);
    float* po = out.data();
    size_t off = 0;
    for (const Tensor& p : parts) {
        std::memcpy(po + off, p.data(), sizeof(float) * p.numel());
        off += p.numel();
    }
    record_if_needed(out, ins, [parts = parts, out, cols]() mutable {
        const float* g = out.grad();
        size_t off2 = 0;
        for (Tensor& p : parts) {
            const size_t n = p.numel();
            if (p.requires_grad()) {
                float* gp = p.grad();
                for (size_t i = 0; i < n; ++i) gp[i] += g[off2 + i];
            }
            off2 += n;
        }
        (void)cols;
    });
    return out;
}

Tensor group_mean(const Tensor& x, int h_k, int g, int d_h) {
    if (x.shape().size() != 2 || x.dim(1) != h_k * g * d_h)
        throw std::invalid_argument("group_mean: expected [R, h_k*g*d_h]");
    const int r = x.dim(0);
    Tensor out = make_op_output({r, h_k * d_h}, {&x});
    const float* px = x.data();
    float* po = out.data();
    const float inv = 1.0f / static_cast<float>(g);
    for (int i = 0; i < r; ++i) {
        const float* row = px + static_cast<size_t>(i) * h_k * g * d_h;
        float* orow = po + static_cast<size_t>(i) * h_k * d_h;
        for (int kh = 0; kh < h_k; ++kh) {
            for (int dd = 0; dd < d_h; ++dd) {
                double acc = 0.0;
                for (int gg = 0; gg < g; ++gg) acc += row[(kh * g + gg) * d_h + dd];
                orow[kh * d_h + dd] = static_cast<float>(acc) * inv;
            }
        }
    }
    record_if_needed(out, {&x}, [x = x, out, r, h_k, g, d_h, inv]() mutable {
        if (!x.requires_grad()) return;
        const float* go = out.grad();
        float* gx = x.grad();
        for (int i = 0; i < r; ++i) {
            const float* grow = go + static_cast<size_t>(i) * h_k * d_h;
            float* gxrow = gx + static_cast<size_t>(i) * h_k * g * d_h;
            for (int kh = 0; kh < h_k; ++kh)
                for (int gg = 0; gg < g; ++gg)
                    for (int dd = 0; dd < d_h; ++dd)
                        gxrow[(kh * g + gg) * d_h + dd] += grow[kh * d_h + dd] * inv;
        }
    });
    return out;
}

Tensor softmax_rows(const Tensor& x, const std::vector<uint8_t>* mask) {
    if (x.shape().size() != 2) throw std::invalid_argument("softmax_rows: expected [rows, cols]");
    const int r = x.dim(0), c = x.dim(1);
    if (mask && static_cast<int>(mask->size()) != r * c)
        throw std::invalid_argument("softmax_rows: mask size mismatch");
    Tensor out = make_op_output({r, c}, {&x});
    const float* px = x.data();
    float* po = out.data();
    for (int i = 0; i < r; ++i) {
        const float* row = px + static_cast<size_t>(i) * c;
        const uint8_t* mrow = mask ? mask->data() + static_cast<size_t>(i) * c : nullptr;
        float mx = -std::numeric_limits<float>::infinity();
        for (int j = 0; j < c; ++j) {
            if (mrow && !mrow[j]) continue;
            mx = std::max(mx, row[j]);
        }
        if (mx == -std::numeric_limits<float>::infinity())
            throw std::runtime_error("empty attention row");
        double denom = 0.0;
        float* orow = po + static_cast<size_t>(i) * c;
        for (int j = 0; j < c; ++j) {
            if (mrow && !mrow[j]) {
                orow[j] = 0.0f;
                continue;
            }
            orow[j] = std::exp(row[j] - mx);
            denom += orow[j];
        }
        const float inv = static_cast<float>(1.0 / denom);
        for (int j = 0; j < c; ++j) orow[j] *= inv;
    }
    record_if_needed(out, {&x}, [x = x, out, r, c]() mutable {
        if (!x.requires_grad()) return;
        const float* g = out.grad();
        const float* p = out.data();
        float* gx = x.grad();
        for (int i = 0; i < r; ++i) {
            const float* grow = g + static_cast<size_t>(i) * c;
            const float* prow = p + static_cast<size_t>(i) * c;
            double inner = 0.0;
            for (int j = 0; j < c; ++j) inner += static_cast<double>(grow[j]) * prow[j];
            float* gxrow = gx + static_cast<size_t>(i) * c;
            for (int j = 0; j < c; ++j)
                gxrow[j] += prow[j] * (grow[j] - static_cast<float>(inner));
        }
    });
    return out;
}

Tensor apply_rope(const Tensor& states, const std::vector<int>& positions, float base) {
    if (states.shape().size() != 3) throw std::invalid_argument("apply_rope: expected [T, H, d_h]");
    const int t = states.dim(0), h = states.dim(1), dh = states.dim(2);
    if (dh % 2 != 0) throw std::invalid_argument("apply_rope: head dimension must be even");
    if (static_cast<int>(positions.size()) != t)
        throw std::invalid_argument("apply_rope: positions length must match tokens");
    for (int p : positions) {
        if (p < 0) throw std::invalid_argument("apply_rope: positions must be non-negative");
    }
    const int half = dh / 2;
    // Per-pair inverse frequencies.
    std::vector<double> inv_freq(static_cast<size_t>(half));
    for (int i = 0; i < half; ++i)
        inv_freq[static_cast<size_t>(i)] = std::pow(static_cast<double>(base), -2.0 * i / dh);
    Tensor out = make_op_output({t, h, dh}, {&states});
    const float* px = states.data();
    float* po = out.data();
    for (int tok = 0; tok < t; ++tok) {
        const double pos = positions[static_cast<size_t>(tok)];
        for (int i = 0; i < half; ++i) {
            const double ang = pos * inv_freq[static_cast<size_t>(i)];
            const float c = static_cast<float>(std::cos(ang));
            const float s = static_cast<float>(std::sin(ang));
            for (int hh = 0; hh < h; ++hh) {
                const size_t off = (static_cast<size_t>(tok) * h + hh) * dh + 2 * static_cast<size_t>(i);
                const float x0 = px[off], x1 = px[off + 1];
                po[off] = c * x0 - s * x1;
                po[off + 1] = s * x0 + c * x1;
            }
        }
    }
    record_if_needed(out, {&states}, [states = states, out, positions, inv_freq, t, h, half]() mutable {
        if (!states.requires_grad()) return;
        const float* g = out.grad();
        float* gx = states.grad();
        const int dh2 = 2 * half;
        for (int tok = 0; tok < t; ++tok) {
            const double pos = positions[static_cast<size_t>(tok)];
            for (int i = 0; i < half; ++i) {
                const double ang = pos * inv_freq[static_cast<size_t>(i)];
                const float c = static_cast<float>(std::cos(ang));
                const float s = static_cast<float>(std::sin(ang));
                for (int hh = 0; hh < h; ++hh) {
                    const size_t off = (static_cast<size_t>(tok) * h + hh) * dh2 + 2 * static_cast<size_t>(i);
                    const float g0 = g[off], g1 = g[off + 1];
                    gx[off] += c * g0 + s * g1;
                    gx[off + 1] += -s * g0 + c * g1;
                }
            }
        }
    });
    return out;
}

Tensor cross_entropy_rows(const Tensor& logits, const std::vector<int>& targets) {
    if (logits.shape().size() != 2) throw std::invalid_argument("cross_entropy_rows: expected [R,V]");
    const int r = logits.dim(0), v = logits.dim(1);
    if (static_cast<int>(targets.size()) != r)
        throw std::invalid_argument("cross_entropy_rows: target count mismatch");
    for (int tt : targets) {
        if (tt < 0 || tt >= v) throw std::out_of_range("cross_entropy_rows: target id out of range");
    }
    Tensor out = make_op_output({1}, {&logits});
    const float* pl = logits.data();
    double total = 0.0;
    for (int i = 0; i < r; ++i) {
        const float* row = pl + static_cast<size_t>(i) * v;
        float mx = row[0];
        for (int j = 1; j < v; ++j) mx = std::max(mx, row[j]);
        double denom = 0.0;
        for (int j = 0; j < v; ++j) denom += std::exp(static_cast<double>(row[j]) - mx);
        total += std::log(denom) + mx - row[targets[static_cast<size_t>(i)]];
    }
    out.data()[0] = static_cast<float>(total / r);
    record_if_needed(out, {&logits}, [logits = logits, out, targets, r, v]() mutable {
        if (!logits.requires_grad()) return;
        const float g = out.grad()[0] / static_cast<float>(r);
        const float* pl2 = logits.data();
        float* gl = logits.grad();
        for (int i = 0; i < r; ++i) {
            const float* row = pl2 + static_cast<size_t>(i) * v;
            float* grow = gl + static_cast<size_t>(i) * v;
            float mx = row[0];
            for (int j = 1; j < v; ++j) mx = std::max(mx, row[j]);
            double denom = 0.0;
            for (int j = 0; j < v; ++j) denom += std::exp(static_cast<double>(row[j]) - mx);
            for (int j = 0; j < v; ++j) {
                const float p = static_cast<float>(std::exp(static_cast<double>(row[j]) - mx) / denom);
                grow[j] += g * (p - (j == targets[static_cast<size_t>(i)] ? 1.0f : 0.0f));
            }
        }
    });
    return out;
}

namespace {

struct AttnDims {
    int t, hq, dh, s, p, groups;
};

AttnDims attn_check(const Tensor& q, const Tensor& k_self, const Tensor& v_self,
                    const Tensor* k_cross, const Tensor* v_cross, const AttnSpans& spans) {
    if (q.shape().size() != 3 || k_self.shape().size() != 3 || v_self.shape().size() != 3)
        throw std::invalid_argument("attention: q/k/v must be rank 3");
    AttnDims d{};
    d.t = q.dim(0);
    d.hq = q.dim(1);
    d.dh = q.dim(2);
    d.s = k_self.dim(0);
    const int hk = k_self.dim(1);
    if (hk <= 0 || d.hq % hk != 0) throw std::invalid_argument("attention: h_q must be a multiple of h_k");
    d.groups = d.hq / hk;
    if (k_self.dim(2) != d.dh || v_self.dim(0) != d.s || v_self.dim(1) != hk || v_self.dim(2) != d.dh)
        throw std::invalid_argument("attention: self K/V shape mismatch");
    d.p = 0;
    if (k_cross) {
        if (!v_cross) throw std::invalid_argument("attention: cross K without cross V");
        d.p = k_cross->dim(0);
        if (k_cross->dim(1) != hk || k_cross->dim(2) != d.dh || v_cross->dim(0) != d.p ||
            v_cross->dim(1) != hk || v_cross->dim(2) != d.dh)
            throw std::invalid_argument("attention: cross K/V shape mismatch");
    }
    auto check_span = [&](const std::vector<int>& vsz, const char* name) {
        if (static_cast<int>(vsz.size()) != d.t)
            throw std::invalid_argument(std::string("attention: span ") + name + " must have one entry per query row");
    };
    check_span(spans.self_begin, "self_begin");
    check_span(spans.self_end, "self_end");
    if (k_cross) {
        check_span(spans.cross_begin, "cross_begin");
        check_span(spans.cross_end, "cross_end");
    }
    return d;
}

}  // namespace

Tensor attention(const Tensor& q, const Tensor& k_self, const Tensor& v_self,
                 const Tensor* k_cross, const Tensor* v_cross,
                 const AttnSpans& spans, AttnStats* stats) {
    const AttnDims dd = attn_check(q, k_self, v_self, k_cross, v_cross, spans);
    const int t = dd.t, hq = dd.hq, dh = dd.dh, groups = dd.groups;
    const float sc = 1.0f / std::sqrt(static_cast<float>(dh));
    std::vector<const Tensor*> ins{&q, &k_self, &v_self};
    if (k_cross) {
        ins.push_back(k_cross);
        ins.push_back(v_cross);
    }
    Tensor out = make_op_output({t, hq, dh}, ins);
    if (stats && static_cast<int>(stats->self_mass.size()) != dd.s)
        stats->self_mass.assign(static_cast<size_t>(dd.s), 0.0);

    const bool keep_probs = out.requires_grad();
    // probs laid out per (row, head): cross block then self block.
    auto probs = std::make_shared<std::vector<float>>();
    std::vector<size_t> prob_off;
    if (keep_probs) prob_off.reserve(static_cast<size_t>(t) * hq);

    const float* pq = q.data();
    const float* pks = k_self.data();
    const float* pvs = v_self.data();
    const float* pkc = k_cross ? k_cross->data() : nullptr;
    const float* pvc = v_cross ? v_cross->data() : nullptr;
    float* po = out.data();
    std::vector<float> logits;
    for (int i = 0; i < t; ++i) {
        const int sb = spans.self_begin[static_cast<size_t>(i)];
        const int se = spans.self_end[static_cast<size_t>(i)];
        const int cb = k_cross ? spans.cross_begin[static_cast<size_t>(i)] : 0;
        const int ce = k_cross ? spans.cross_end[static_cast<size_t>(i)] : 0;
        if (sb < 0 || se > dd.s || cb < 0 || ce > dd.p)
            throw std::out_of_range("attention: span out of range");
        const int n_self = std::max(0, se - sb);
        const int n_cross = std::max(0, ce - cb);
        const int n_vis = n_self + n_cross;
        if (n_vis == 0) throw std::runtime_error("empty attention row");
        logits.resize(static_cast<size_t>(n_vis));
        for (int h = 0; h < hq; ++h) {
            const int kvh = h / groups;
            const float* qv = pq + (static_cast<size_t>(i) * hq + h) * dh;
            // cross keys first, then self keys
            for (int j = 0; j < n_cross; ++j) {
                const float* kv = pkc + (static_cast<size_t>(cb + j) * (hq / groups) + kvh) * dh;
                double acc = 0.0;
                for (int x = 0; x < dh; ++x) acc += static_cast<double>(qv[x]) * kv[x];
                logits[static_cast<size_t>(j)] = static_cast<float>(acc) * sc;
            }
            for (int j = 0; j < n_self; ++j) {
                const float* kv = pks + (static_cast<size_t>(sb + j) * (hq / groups) + kvh) * dh;
                double acc = 0.0;
                for (int x = 0; x < dh; ++x) acc += static_cast<double>(qv[x]) * kv[x];
                logits[static_cast<size_t>(n_cross + j)] = static_cast<float>(acc) * sc;
            }
            float mx = logits[0];
            for (int j = 1; j < n_vis; ++j) mx = std::max(mx, logits[static_cast<size_t>(j)]);
            double denom = 0.0;
            for (int j = 0; j < n_vis; ++j) {
                logits[static_cast<size_t>(j)] = std::exp(logits[static_cast<size_t>(j)] - mx);
                denom += logits[static_cast<size_t>(j)];
            }
            const float inv = static_cast<float>(1.0 / denom);
            for (int j = 0; j < n_vis; ++j) logits[static_cast<size_t>(j)] *= inv;
            float* ov = po + (static_cast<size_t>(i) * hq + h) * dh;
            for (int x = 0; x < dh; ++x) {
                double acc = 0.0;
                for (int j = 0; j < n_cross; ++j)
                    acc += static_cast<double>(logits[static_cast<size_t>(j)]) *
                           pvc[(static_cast<size_t>(cb + j) * (hq / groups) + kvh) * dh + x];
                for (int j = 0; j < n_self; ++j)
                    acc += static_cast<double>(logits[static_cast<size_t>(n_cross + j)]) *
                           pvs[(static_cast<size_t>(sb + j) * (hq / groups) + kvh) * dh + x];
                ov[x] = static_cast<float>(acc);
            }
            if (stats) {
                for (int j = 0; j < n_self; ++j)
                    stats->self_mass[static_cast<size_t>(sb + j)] += logits[static_cast<size_t>(n_cross + j)];
            }
            if (keep_probs) {
                prob_off.push_back(probs->size());
                probs->insert(probs->end(), logits.begin(), logits.begin() + n_vis);
            }
        }
    }

    if (keep_probs) {
        Tensor kc = k_cross ? *k_cross : Tensor();
        Tensor vc = v_cross ? *v_cross : Tensor();
        AttnSpans sp = spans;
        record_if_needed(out, ins, [q = q, k_self = k_self, v_self = v_self, kc, vc, out, sp, probs, prob_off, t, hq, dh, groups, sc]() mutable {
            const float* g = out.grad();
            const float* pq2 = q.data();
            const float* pks2 = k_self.data();
            const float* pvs2 = v_self.data();
            const float* pkc2 = kc.defined() ? kc.data() : nullptr;
            const float* pvc2 = vc.defined() ? vc.data() : nullptr;
            float* gq = q.requires_grad() ? q.grad() : nullptr;
            float* gks = k_self.requires_grad() ? k_self.grad() : nullptr;
            float* gvs = v_self.requires_grad() ? v_self.grad() : nullptr;
            float* gkc = (kc.defined() && kc.requires_grad()) ? kc.grad() : nullptr;
            float* gvc = (vc.defined() && vc.requires_grad()) ? vc.grad() : nullptr;
            const int hk = hq / groups;
            size_t slot = 0;
            std::vector<float> dlogit;
            for (int i = 0; i < t; ++i) {
                const int sb = sp.self_begin[static_cast<size_t>(i)];
                const int se = sp.self_end[static_cast<size_t>(i)];
                const int cb = pkc2 ? sp.cross_begin[static_cast<size_t>(i)] : 0;
                const int ce = pkc2 ? sp.cross_end[static_cast<size_t>(i)] : 0;
                const int n_self = std::max(0, se - sb);
                const int n_cross = std::max(0, ce - cb);
                const int n_vis = n_self + n_cross;
                for (int h = 0; h < hq; ++h, ++slot) {
                    const int kvh = h / groups;
                    const float* prob = probs->data() + prob_off[slot];
                    const float* gov = g + (static_cast<size_t>(i) * hq + h) * dh;
                    const float* qv = pq2 + (static_cast<size_t>(i) * hq + h) * dh;
                    dlogit.resize(static_cast<size_t>(n_vis));
                    double inner = 0.0;
                    for (int j = 0; j < n_vis; ++j) {
                        const bool is_cross = j < n_cross;
                        const float* vv = is_cross
                                              ? pvc2 + (static_cast<size_t>(cb + j) * hk + kvh) * dh
                                              : pvs2 + (static_cast<size_t>(sb + j - n_cross) * hk + kvh) * dh;
                        double dp = 0.0;
                        for (int x = 0; x < dh; ++x) dp += static_cast<double>(gov[x]) * vv[x];
                        dlogit[static_cast<size_t>(j)] = static_cast<float>(dp);
                        inner += static_cast<double>(prob[j]) * dp;
                    }
                    for (int j = 0; j < n_vis; ++j) {
                        const bool is_cross = j < n_cross;
                        const float p = prob[j];
                        const float dl = p * (dlogit[static_cast<size_t>(j)] - static_cast<float>(inner));
                        const size_t kv_off = is_cross ? (static_cast<size_t>(cb + j) * hk + kvh) * dh
                                                       : (static_cast<size_t>(sb + j - n_cross) * hk + kvh) * dh;
                        // dV += p * g_out
                        float* gv = is_cross ? gvc : gvs;
                        if (gv) {
                            for (int x = 0; x < dh; ++x) gv[kv_off + x] += p * gov[x];
                        }
                        // dq += dl * k * sc ; dk += dl * q * sc
                        const float* kv = is_cross ? pkc2 + kv_off : pks2 + kv_off;
                        if (gq) {
                            float* gqv = gq + (static_cast<size_t>(i) * hq + h) * dh;
                            for (int x = 0; x < dh; ++x) gqv[x] += dl * kv[x] * sc;
                        }
                        float* gk = is_cross ? gkc : gks;
                        if (gk) {
                            for (int x = 0; x < dh; ++x) gk[kv_off + x] += dl * qv[x] * sc;
                        }
                    }
                }
            }
        });
    }
    return out;
}

bool all_finite(const Tensor& t) {
    const float* p = t.data();
    const size_t n = t.numel();
    for (size_t i = 0; i < n; ++i) {
        if (!std::isfinite(p[i])) return false;
    }
    return true;
}

double row_log_prob(const Tensor& logits, int row, int target) {
    const int v = logits.dim(1);
    if (target < 0 || target >= v) throw std::out_of_range("row_log_prob: target out of range");
    const float* p = logits.data() + static_cast<size_t>(row) * v;
    float mx = p[0];
    for (int j = 1; j < v; ++j) mx = std::max(mx, p[j]);
    double denom = 0.0;
    for (int j = 0; j < v; ++j) denom += std::exp(static_cast<double>(p[j]) - mx);
    return static_cast<double>(p[target]) - mx - std::log(denom);
}

}  // namespace unirag
