// Copyright (c) 2026 the unirag authors
// SPDX-License-Identifier: Apache-2.0
#include "unirag/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace unirag {

const char* to_string(TrainStage s) {
    return s == TrainStage::Warmup ? "warmup" : "self_distill";
}

Tensor generation_loss(const Tensor& logits, const std::vector<int>& targets,
                       const std::vector<uint8_t>& response_mask) {
    if (logits.shape().size() != 2) throw std::invalid_argument("generation_loss: logits must be [T,V]");
    const int t = logits.dim(0);
    if (static_cast<int>(targets.size()) != t || static_cast<int>(response_mask.size()) != t)
        throw std::invalid_argument("generation_loss: targets/mask length mismatch");
    std::vector<int> rows;
    std::vector<int> masked_targets;
    for (int i = 0; i < t; ++i) {
        if (response_mask[static_cast<size_t>(i)]) {
            rows.push_back(i);
            masked_targets.push_back(targets[static_cast<size_t>(i)]);
        }
    }
    if (rows.empty()) throw std::invalid_argument("no response tokens");
    return cross_entropy_rows(gather_rows(logits, rows), masked_targets);
}

namespace {

void check_candidate_indices(int count, const std::vector<int>& idx, const char* what) {
    for (int i : idx) {
        if (i < 0 || i >= count) throw std::out_of_range(std::string("nce_loss: ") + what + " index out of range");
    }
}

}  // namespace

Tensor nce_loss(const Tensor& scores, const std::vector<int>& positives,
                const std::vector<int>& negatives) {
    const int c = static_cast<int>(scores.numel());
    if (positives.empty()) throw std::invalid_argument("nce_loss: empty positives");
    check_candidate_indices(c, positives, "positive");
    check_candidate_indices(c, negatives, "negative");
    for (int p : positives) {
        for (int n : negatives) {
            if (p == n) throw std::invalid_argument("nce_loss: positives and negatives overlap");
        }
    }
    Tensor flat = scores.reshaped({c});

    // Per-positive log-sum-exp over {positive} + negatives.
    auto term_denom = [](const float* s, int p, const std::vector<int>& negs) {
        double m = s[p];
        for (int n : negs) m = std::max(m, static_cast<double>(s[n]));
        double acc = std::exp(static_cast<double>(s[p]) - m);
        for (int n : negs) acc += std::exp(static_cast<double>(s[n]) - m);
        return std::pair<double, double>(m, acc);
    };

    const float* s = flat.data();
    double loss = 0.0;
    for (int p : positives) {
        auto [m, acc] = term_denom(s, p, negatives);
        loss += m + std::log(acc) - static_cast<double>(s[p]);
    }
    Tensor out = Tensor::zeros({1}, GradTape::current() != nullptr && scores.requires_grad());
    out.data()[0] = static_cast<float>(loss);
    GradTape::attach(out, {&scores}, [flat, out, positives, negatives, term_denom]() mutable {
        if (!flat.requires_grad()) return;
        const float g = out.grad()[0];
        const float* s2 = flat.data();
        float* gs = flat.grad();
        for (int p : positives) {
            auto [m, acc] = term_denom(s2, p, negatives);
            const double wp = std::exp(static_cast<double>(s2[p]) - m) / acc;
            gs[p] += g * static_cast<float>(wp - 1.0);
            for (int n : negatives) {
                const double wn = std::exp(static_cast<double>(s2[n]) - m) / acc;
                gs[n] += g * static_cast<float>(wn);
            }
        }
    });
    return out;
}

double nce_loss_value(const std::vector<double>& scores, const std::vector<int>& positives,
                      const std::vector<int>& negatives) {
    if (positives.empty()) throw std::invalid_argument("nce_loss: empty positives");
    const int c = static_cast<int>(scores.size());
    check_candidate_indices(c, positives, "positive");
    check_candidate_indices(c, negatives, "negative");
    for (int p : positives) {
        for (int n : negatives) {
            if (p == n) throw std::invalid_argument("nce_loss: positives and negatives overlap");
        }
    }
    double loss = 0.0;
    for (int p : positives) {
        double m = scores[static_cast<size_t>(p)];
        for (int n : negatives) m = std::max(m, scores[static_cast<size_t>(n)]);
        double acc = std::exp(scores[static_cast<size_t>(p)] - m);
        for (int n : negatives) acc += std::exp(scores[static_cast<size_t>(n)] - m);
        loss += m + std::log(acc) - scores[static_cast<size_t>(p)];
    }
    return loss;
}

double distill_loss_value(const std::vector<double>& p_target,
                          const std::vector<double>& p_retrieval) {
    if (p_target.size() != p_retrieval.size())
        throw std::invalid_argument("distill_loss: support mismatch");
    double sum_t = 0.0, sum_r = 0.0;
    for (size_t i = 0; i < p_target.size(); ++i) {
        sum_t += p_target[i];
        sum_r += p_retrieval[i];
    }
    if (std::abs(sum_t - 1.0) > 1e-5 || std::abs(sum_r - 1.0) > 1e-5)
        throw std::invalid_argument("distill_loss: distributions must be normalized");
    double loss = 0.0;
    for (size_t i = 0; i < p_target.size(); ++i) {
        if (p_target[i] == 0.0) continue;
        if (p_retrieval[i] <= 0.0)
            throw std::domain_error("distill_loss: prediction has zero mass where target is positive");
        loss += p_target[i] * (std::log(p_target[i]) - std::log(p_retrieval[i]));
    }
    return loss;
}

std::vector<double> target_distribution(const std::vector<double>& logliks, double tau_t) {
    if (logliks.empty()) throw std::invalid_argument("target_distribution: empty candidate set");
    if (tau_t <= 0.0) throw std::invalid_argument("target_distribution: tau_t must be positive");
    double m = logliks[0] / tau_t;
    for (double l : logliks) m = std::max(m, l / tau_t);
    std::vector<double> out(logliks.size());
    double denom = 0.0;
    for (size_t i = 0; i < logliks.size(); ++i) {
        out[i] = std::exp(logliks[i] / tau_t - m);
        denom += out[i];
    }
    for (double& v : out) v /= denom;
    return out;
}

Tensor retrieval_distribution(const Tensor& scores, float tau_r) {
    if (tau_r <= 0.0f) throw std::invalid_argument("retrieval_distribution: tau_r must be positive");
    const int c = static_cast<int>(scores.numel());
    Tensor row = scale(scores.reshaped({1, c}), 1.0f / tau_r);
    return softmax_rows(row).reshaped({c});
}

std::vector<double> retrieval_distribution_values(const std::vector<double>& scores, double tau_r) {
    if (tau_r <= 0.0) throw std::invalid_argument("retrieval_distribution: tau_r must be positive");
    return target_distribution(scores, tau_r);
}

Tensor distill_loss(const std::vector<double>& p_target, const Tensor& p_retrieval) {
    const int c = static_cast<int>(p_retrieval.numel());
    if (static_cast<int>(p_target.size()) != c)
        throw std::invalid_argument("distill_loss: support mismatch");
    Tensor flat = p_retrieval.reshaped({c});
    const float* pr = flat.data();
    double sum_t = 0.0, sum_r = 0.0;
    for (int i = 0; i < c; ++i) {
        sum_t += p_target[static_cast<size_t>(i)];
        sum_r += pr[i];
    }
    if (std::abs(sum_t - 1.0) > 1e-5 || std::abs(sum_r - 1.0) > 1e-5)
        throw std::invalid_argument("distill_loss: distributions must be normalized");
    double loss = 0.0;
    for (int i = 0; i < c; ++i) {
        const double pt = p_target[static_cast<size_t>(i)];
        if (pt == 0.0) continue;
        if (pr[i] <= 0.0f)
            throw std::domain_error("distill_loss: prediction has zero mass where target is positive");
        loss += pt * (std::log(pt) - std::log(static_cast<double>(pr[i])));
    }
    Tensor out = Tensor::zeros({1}, GradTape::current() != nullptr && p_retrieval.requires_grad());
    out.data()[0] = static_cast<float>(loss);
    GradTape::attach(out, {&p_retrieval}, [flat, out, p_target, c]() mutable {
        if (!flat.requires_grad()) return;
        const float g = out.grad()[0];
        const float* pr2 = flat.data();
        float* gr = flat.grad();
        for (int i = 0; i < c; ++i) {
            const double pt = p_target[static_cast<size_t>(i)];
            if (pt == 0.0) continue;
            gr[i] += g * static_cast<float>(-pt / static_cast<double>(pr2[i]));
        }
    });
    return out;
}

LossBreakdown joint_loss(float j_gen, float j_ret, float lambda, TrainStage stage) {
    if (lambda < 0.0f) throw std::invalid_argument("joint_loss: lambda must be non-negative");
    LossBreakdown b;
    b.j_gen = j_gen;
    b.j_ret = j_ret;
    b.lambda = lambda;
    b.j_total = j_gen + lambda * j_ret;
    b.stage = stage;
    return b;
}

}  // namespace unirag
