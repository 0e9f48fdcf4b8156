// Copyright (c) 2026 the unirag authors
// SPDX-License-Identifier: Apache-2.0
#include "ref_model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace refd {

using unirag::AttnSpans;
using unirag::EncodeStrategy;
using unirag::ModelConfig;
using unirag::TrainStage;

Params Params::from_model(const unirag::TransformerModel& model) {
    Params p;
    p.cfg = model.config();
    for (const auto& [name, tensor] : model.named_parameters()) {
        const float* d = tensor.data();
        p.tensors[name] = Vec(d, d + tensor.numel());
    }
    return p;
}

Vec matmul(const Vec& a, int m, int k, const Vec& b, int n) {
    Vec out(static_cast<size_t>(m) * n, 0.0);
    for (int i = 0; i < m; ++i) {
        const double* arow = a.data() + static_cast<size_t>(i) * k;
        double* orow = out.data() + static_cast<size_t>(i) * n;
        for (int kk = 0; kk < k; ++kk) {
            const double av = arow[kk];
            const double* brow = b.data() + static_cast<size_t>(kk) * n;
            for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    return out;
}

Vec rms_norm(const Vec& x, int t, int d, const Vec& w, double eps) {
    Vec out(x.size());
    for (int i = 0; i < t; ++i) {
        const double* row = x.data() + static_cast<size_t>(i) * d;
        double ms = 0.0;
        for (int j = 0; j < d; ++j) ms += row[j] * row[j];
        const double s = 1.0 / std::sqrt(ms / d + eps);
        for (int j = 0; j < d; ++j) out[static_cast<size_t>(i) * d + j] = row[j] * s * w[static_cast<size_t>(j)];
    }
    return out;
}

Vec swiglu(const Vec& gate, const Vec& up) {
    Vec out(gate.size());
    for (size_t i = 0; i < gate.size(); ++i) {
        const double sig = 1.0 / (1.0 + std::exp(-gate[i]));
        out[i] = gate[i] * sig * up[i];
    }
    return out;
}

Vec rope(const Vec& x, int t, int h, int d_h, const std::vector<int>& positions, double base) {
    const int half = d_h / 2;
    Vec out(x.size());
    for (int tok = 0; tok < t; ++tok) {
        const double pos = positions[static_cast<size_t>(tok)];
        for (int i = 0; i < half; ++i) {
            const double ang = pos * std::pow(base, -2.0 * i / d_h);
            const double c = std::cos(ang), s = std::sin(ang);
            for (int hh = 0; hh < h; ++hh) {
                const size_t off = (static_cast<size_t>(tok) * h + hh) * d_h + 2 * static_cast<size_t>(i);
                out[off] = c * x[off] - s * x[off + 1];
                out[off + 1] = s * x[off] + c * x[off + 1];
            }
        }
    }
    return out;
}

Vec softmax(const Vec& logits) {
    double mx = logits[0];
    for (double v : logits) mx = std::max(mx, v);
    Vec out(logits.size());
    double denom = 0.0;
    for (size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - mx);
        denom += out[i];
    }
    for (double& v : out) v /= denom;
    return out;
}

Vec attention(const Vec& q, int t, int hq, int dh, const Vec& k_self, int s, int hk,
              const Vec& v_self, const Vec* k_cross, int p, const Vec* v_cross,
              const AttnSpans& spans) {
    (void)s;
    const int groups = hq / hk;
    const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
    Vec out(static_cast<size_t>(t) * hq * dh, 0.0);
    for (int i = 0; i < t; ++i) {
        const int sb = spans.self_begin[static_cast<size_t>(i)];
        const int se = spans.self_end[static_cast<size_t>(i)];
        const int cb = k_cross ? spans.cross_begin[static_cast<size_t>(i)] : 0;
        const int ce = k_cross ? spans.cross_end[static_cast<size_t>(i)] : 0;
        (void)p;
        const int n_cross = std::max(0, ce - cb);
        const int n_self = std::max(0, se - sb);
        for (int h = 0; h < hq; ++h) {
            const int kvh = h / groups;
            const double* qv = q.data() + (static_cast<size_t>(i) * hq + h) * dh;
            Vec logits(static_cast<size_t>(n_cross + n_self));
            for (int j = 0; j < n_cross; ++j) {
                const double* kv = k_cross->data() + (static_cast<size_t>(cb + j) * hk + kvh) * dh;
                double acc = 0.0;
                for (int x = 0; x < dh; ++x) acc += qv[x] * kv[x];
                logits[static_cast<size_t>(j)] = acc * sc;
            }
            for (int j = 0; j < n_self; ++j) {
                const double* kv = k_self.data() + (static_cast<size_t>(sb + j) * hk + kvh) * dh;
                double acc = 0.0;
                for (int x = 0; x < dh; ++x) acc += qv[x] * kv[x];
                logits[static_cast<size_t>(n_cross + j)] = acc * sc;
            }
            const Vec probs = softmax(logits);
            double* ov = out.data() + (static_cast<size_t>(i) * hq + h) * dh;
            for (int j = 0; j < n_cross; ++j) {
                const double* vv = v_cross->data() + (static_cast<size_t>(cb + j) * hk + kvh) * dh;
                for (int x = 0; x < dh; ++x) ov[x] += probs[static_cast<size_t>(j)] * vv[x];
            }
            for (int j = 0; j < n_self; ++j) {
                const double* vv = v_self.data() + (static_cast<size_t>(sb + j) * hk + kvh) * dh;
                for (int x = 0; x < dh; ++x) ov[x] += probs[static_cast<size_t>(n_cross + j)] * vv[x];
            }
        }
    }
    return out;
}

double cross_entropy_mean(const Vec& logits, int rows, int vocab, const std::vector<int>& targets) {
    double total = 0.0;
    for (int i = 0; i < rows; ++i) {
        const double* row = logits.data() + static_cast<size_t>(i) * vocab;
        double mx = row[0];
        for (int j = 1; j < vocab; ++j) mx = std::max(mx, row[j]);
        double denom = 0.0;
        for (int j = 0; j < vocab; ++j) denom += std::exp(row[j] - mx);
        total += std::log(denom) + mx - row[targets[static_cast<size_t>(i)]];
    }
    return total / rows;
}

double nce(const Vec& scores, const std::vector<int>& positives, const std::vector<int>& negatives) {
    double loss = 0.0;
    for (int p : positives) {
        double m = scores[static_cast<size_t>(p)];
        for (int n : negatives) m = std::max(m, scores[static_cast<size_t>(n)]);
        double denom = std::exp(scores[static_cast<size_t>(p)] - m);
        for (int n : negatives) denom += std::exp(scores[static_cast<size_t>(n)] - m);
        loss += m + std::log(denom) - scores[static_cast<size_t>(p)];
    }
    return loss;
}

double kl_const_target(const Vec& p_target, const Vec& p_retrieval) {
    double kl = 0.0;
    for (size_t i = 0; i < p_target.size(); ++i) {
        if (p_target[i] == 0.0) continue;
        kl += p_target[i] * (std::log(p_target[i]) - std::log(p_retrieval[i]));
    }
    return kl;
}

namespace {

struct LayerState {
    Vec k;  // [rows, hk, dh], rotary applied
    Vec v;
};

struct RefRun {
    const Params& p;
    const ModelConfig& cfg;

    explicit RefRun(const Params& params) : p(params), cfg(params.cfg) {}

    Vec embed(const std::vector<int>& tokens) const {
        const Vec& table = p.at("tok_embed");
        Vec h(tokens.size() * static_cast<size_t>(cfg.d_model));
        for (size_t i = 0; i < tokens.size(); ++i)
            std::copy(table.begin() + static_cast<size_t>(tokens[i]) * cfg.d_model,
                      table.begin() + (static_cast<size_t>(tokens[i]) + 1) * cfg.d_model,
                      h.begin() + i * static_cast<size_t>(cfg.d_model));
        return h;
    }

    // One layer over `rows` new rows; appends K/V to `state`. Returns updated
    // hidden. `capture_pre_rope_q/k` grab the pre-rotary projections.
    Vec layer(int l, const Vec& h, int rows, const std::vector<int>& positions, LayerState& state,
              const AttnSpans& spans, const LayerState* cross, Vec* capture_pre_rope_q,
              Vec* capture_pre_rope_k) const {
        const std::string pre = "layers." + std::to_string(l) + ".";
        const int d = cfg.d_model, hq = cfg.n_query_heads, hk = cfg.n_key_heads, dh = cfg.head_dim;
        const Vec x = rms_norm(h, rows, d, p.at(pre + "attn_norm"));
        Vec q = matmul(x, rows, d, p.at(pre + "wq"), hq * dh);
        Vec k = matmul(x, rows, d, p.at(pre + "wk"), hk * dh);
        Vec v = matmul(x, rows, d, p.at(pre + "wv"), hk * dh);
        if (capture_pre_rope_q) *capture_pre_rope_q = q;
        if (capture_pre_rope_k) *capture_pre_rope_k = k;
        const Vec qr = rope(q, rows, hq, dh, positions);
        const Vec kr = rope(k, rows, hk, dh, positions);
        state.k.insert(state.k.end(), kr.begin(), kr.end());
        state.v.insert(state.v.end(), v.begin(), v.end());
        const int s = static_cast<int>(state.k.size()) / (hk * dh);
        const Vec attn =
            attention(qr, rows, hq, dh, state.k, s, hk, state.v, cross ? &cross->k : nullptr,
                      cross ? static_cast<int>(cross->k.size()) / (hk * dh) : 0,
                      cross ? &cross->v : nullptr, spans);
        Vec h1 = h;
        const Vec proj = matmul(attn, rows, hq * dh, p.at(pre + "wo"), d);
        for (size_t i = 0; i < h1.size(); ++i) h1[i] += proj[i];
        const Vec x2 = rms_norm(h1, rows, d, p.at(pre + "mlp_norm"));
        const Vec gate = matmul(x2, rows, d, p.at(pre + "w_gate"), cfg.d_ff);
        const Vec up = matmul(x2, rows, d, p.at(pre + "w_up"), cfg.d_ff);
        const Vec mlp = matmul(swiglu(gate, up), rows, cfg.d_ff, p.at(pre + "w_down"), d);
        for (size_t i = 0; i < h1.size(); ++i) h1[i] += mlp[i];
        return h1;
    }

    Vec logits_rows(const Vec& h, const std::vector<int>& pick) const {
        const int d = cfg.d_model, v = cfg.vocab_size;
        Vec picked(pick.size() * static_cast<size_t>(d));
        for (size_t i = 0; i < pick.size(); ++i)
            std::copy(h.begin() + static_cast<size_t>(pick[i]) * d,
                      h.begin() + (static_cast<size_t>(pick[i]) + 1) * d,
                      picked.begin() + i * static_cast<size_t>(d));
        const Vec normed = rms_norm(picked, static_cast<int>(pick.size()), d, p.at("final_norm"));
        // logits = normed * tok_embed^T
        const Vec& table = p.at("tok_embed");
        Vec out(pick.size() * static_cast<size_t>(v), 0.0);
        for (size_t i = 0; i < pick.size(); ++i) {
            for (int j = 0; j < v; ++j) {
                double acc = 0.0;
                for (int x = 0; x < d; ++x)
                    acc += normed[i * static_cast<size_t>(d) + static_cast<size_t>(x)] *
                           table[static_cast<size_t>(j) * d + static_cast<size_t>(x)];
                out[i * static_cast<size_t>(v) + static_cast<size_t>(j)] = acc;
            }
        }
        return out;
    }
};

AttnSpans causal(int prior, const std::vector<int>& seg_begin) {
    AttnSpans sp;
    sp.self_begin = seg_begin;
    sp.self_end.resize(seg_begin.size());
    for (size_t i = 0; i < seg_begin.size(); ++i) sp.self_end[i] = prior + static_cast<int>(i) + 1;
    return sp;
}

struct PackedPassages {
    std::vector<int> tokens;
    std::vector<int> positions;
    std::vector<int> seg_begin;
};

PackedPassages pack(const std::vector<std::vector<int>>& passages, EncodeStrategy strategy) {
    PackedPassages out;
    int base = 0;
    for (const auto& pass : passages) {
        for (size_t i = 0; i < pass.size(); ++i) {
            out.tokens.push_back(pass[i]);
            out.positions.push_back(strategy == EncodeStrategy::Independent ? static_cast<int>(i)
                                                                            : base + static_cast<int>(i));
            out.seg_begin.push_back(strategy == EncodeStrategy::ConcatFull ? 0 : base);
        }
        base += static_cast<int>(pass.size());
    }
    return out;
}

}  // namespace

double joint_loss(const Params& params, const std::vector<Example>& batch, TrainStage stage,
                  double lambda, double tau_r, const std::vector<Vec>& frozen_p_target,
                  EncodeStrategy strategy) {
    const RefRun run(params);
    const ModelConfig& cfg = params.cfg;
    const int hk = cfg.n_key_heads, dh = cfg.head_dim, hq = cfg.n_query_heads;
    const int g = cfg.group_size;

    double total = 0.0;
    for (size_t ei = 0; ei < batch.size(); ++ei) {
        const Example& ex = batch[ei];
        const int k_gen = static_cast<int>(ex.selected.size());
        const int offset = unirag::shift_positions(k_gen, cfg.max_passage_len);

        // Candidate embeddings E_p: independent bottom pass, last-token
        // pre-rope key state at layer b.
        std::vector<Vec> ep_all;
        for (const auto& pass : ex.candidates) {
            const int rows = static_cast<int>(pass.size());
            std::vector<int> positions(pass.size());
            for (int i = 0; i < rows; ++i) positions[static_cast<size_t>(i)] = i;
            const AttnSpans spans = causal(0, std::vector<int>(pass.size(), 0));
            Vec h = run.embed(pass);
            Vec pre_k;
            for (int l = 0; l <= cfg.boundary_b; ++l) {
                LayerState st;
                h = run.layer(l, h, rows, positions, st, spans, nullptr, nullptr,
                              l == cfg.boundary_b ? &pre_k : nullptr);
            }
            ep_all.emplace_back(pre_k.end() - hk * dh, pre_k.end());
        }

        // Query bottom pass and E_q pooling.
        const int qrows = static_cast<int>(ex.query.size());
        std::vector<int> qpos(ex.query.size());
        for (int i = 0; i < qrows; ++i) qpos[static_cast<size_t>(i)] = offset + i;
        const AttnSpans qspans = causal(0, std::vector<int>(ex.query.size(), 0));
        Vec qh = run.embed(ex.query);
        std::vector<LayerState> cache(static_cast<size_t>(cfg.n_layers));
        Vec pre_q;
        for (int l = 0; l <= cfg.boundary_b; ++l)
            qh = run.layer(l, qh, qrows, qpos, cache[static_cast<size_t>(l)], qspans, nullptr,
                           l == cfg.boundary_b ? &pre_q : nullptr, nullptr);
        Vec eq(static_cast<size_t>(hk) * dh);
        const double* last = pre_q.data() + (static_cast<size_t>(qrows) - 1) * hq * dh;
        for (int kh = 0; kh < hk; ++kh) {
            for (int x = 0; x < dh; ++x) {
                double acc = 0.0;
                for (int gg = 0; gg < g; ++gg) acc += last[(kh * g + gg) * dh + x];
                eq[static_cast<size_t>(kh) * dh + x] = acc / g;
            }
        }
        Vec scores(ex.candidates.size());
        for (size_t c = 0; c < ex.candidates.size(); ++c) {
            double acc = 0.0;
            for (size_t x = 0; x < eq.size(); ++x) acc += eq[x] * ep_all[c][x];
            scores[c] = acc;
        }

        double j_ret;
        if (stage == TrainStage::Warmup) {
            j_ret = nce(scores, ex.positives, ex.negatives);
        } else {
            Vec scaled(scores.size());
            for (size_t x = 0; x < scores.size(); ++x) scaled[x] = scores[x] / tau_r;
            j_ret = kl_const_target(frozen_p_target[ei], softmax(scaled));
        }

        // Generation over the fixed selected candidates.
        std::vector<std::vector<int>> selected;
        for (int idx : ex.selected) selected.push_back(ex.candidates[static_cast<size_t>(idx)]);
        const PackedPassages packed = pack(selected, strategy);
        const int prow = static_cast<int>(packed.tokens.size());
        std::vector<LayerState> pkv(static_cast<size_t>(cfg.boundary_t + 1));
        const AttnSpans pspans = causal(0, packed.seg_begin);
        Vec ph = run.embed(packed.tokens);
        for (int l = 0; l <= cfg.boundary_t; ++l)
            ph = run.layer(l, ph, prow, packed.positions, pkv[static_cast<size_t>(l)], pspans,
                           nullptr, nullptr, nullptr);

        // Response rows through the bottom group.
        const int r = static_cast<int>(ex.response.size());
        std::vector<int> steps(ex.response.begin(), ex.response.end() - 1);
        Vec all_h = qh;
        if (!steps.empty()) {
            std::vector<int> spos(steps.size());
            for (size_t i = 0; i < steps.size(); ++i) spos[i] = offset + qrows + static_cast<int>(i);
            const AttnSpans sspans = causal(qrows, std::vector<int>(steps.size(), 0));
            Vec sh = run.embed(steps);
            for (int l = 0; l <= cfg.boundary_b; ++l)
                sh = run.layer(l, sh, static_cast<int>(steps.size()), spos,
                               cache[static_cast<size_t>(l)], sspans, nullptr, nullptr, nullptr);
            all_h.insert(all_h.end(), sh.begin(), sh.end());
        }

        // Pending rows through the middle and top groups.
        const int pend = qrows + static_cast<int>(steps.size());
        std::vector<int> ppos(static_cast<size_t>(pend));
        for (int i = 0; i < pend; ++i) ppos[static_cast<size_t>(i)] = offset + i;
        for (int l = cfg.boundary_b + 1; l < cfg.n_layers; ++l) {
            AttnSpans spans2 = causal(0, std::vector<int>(static_cast<size_t>(pend), 0));
            const bool cross = l <= cfg.boundary_t;
            if (cross) {
                spans2.cross_begin.assign(static_cast<size_t>(pend), 0);
                spans2.cross_end.assign(static_cast<size_t>(pend), prow);
            }
            all_h = run.layer(l, all_h, pend, ppos, cache[static_cast<size_t>(l)], spans2,
                              cross ? &pkv[static_cast<size_t>(l)] : nullptr, nullptr, nullptr);
        }
        std::vector<int> pick(static_cast<size_t>(r));
        for (int j = 0; j < r; ++j) pick[static_cast<size_t>(j)] = qrows - 1 + j;
        const Vec logits = run.logits_rows(all_h, pick);
        const double j_gen = cross_entropy_mean(logits, r, cfg.vocab_size, ex.response);

        total += j_gen + lambda * j_ret;
    }
    return total / static_cast<double>(batch.size());
}

}  // namespace refd
