// Copyright (c) 2026 the unirag authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "unirag/tensor.hpp"

namespace unirag {

enum class TrainStage { Warmup, SelfDistill };

const char* to_string(TrainStage s);

// Components of the joint objective J = J_gen + lambda * J_ret.
struct LossBreakdown {
    float j_gen = 0.0f;
    float j_ret = 0.0f;
    float lambda = 1.0f;
    float j_total = 0.0f;
    TrainStage stage = TrainStage::Warmup;
};

struct DistillationTemperatures {
    float tau_t = 1.0f;
    float tau_r = 1.0f;

    void validate() const {
        if (tau_t <= 0.0f || tau_r <= 0.0f)
            throw std::invalid_argument("DistillationTemperatures: temperatures must be positive");
    }
};

// Mean NLL over the masked (response) positions of a teacher-forced pass.
// logits is [T, V]; mask must select at least one position and never a query
// position. Throws "no response tokens" when the mask is empty.
Tensor generation_loss(const Tensor& logits, const std::vector<int>& targets,
                       const std::vector<uint8_t>& response_mask);

// Multi-Label NCE over similarity scores: each positive competes against the
// shared negative pool only (other positives are excluded from its
// denominator). Computed with log-sum-exp stabilization.
Tensor nce_loss(const Tensor& scores, const std::vector<int>& positives,
                const std::vector<int>& negatives);
// Same arithmetic without the float32 cast of the result.
double nce_loss_value(const std::vector<double>& scores, const std::vector<int>& positives,
                      const std::vector<int>& negatives);

// Soft target distribution over candidates from response log-likelihoods,
// softmax(loglik / tau_t). Plain values: gradients never flow through it.
std::vector<double> target_distribution(const std::vector<double>& logliks, double tau_t);

// Predicted retrieval distribution softmax(scores / tau_r); gradients flow.
Tensor retrieval_distribution(const Tensor& scores, float tau_r);
std::vector<double> retrieval_distribution_values(const std::vector<double>& scores, double tau_r);

// KL(P_T || P_R) with 0*ln(0) := 0. Both inputs must be normalized within
// 1e-5 and share support.
Tensor distill_loss(const std::vector<double>& p_target, const Tensor& p_retrieval);
double distill_loss_value(const std::vector<double>& p_target, const std::vector<double>& p_retrieval);

LossBreakdown joint_loss(float j_gen, float j_ret, float lambda, TrainStage stage);

}  // namespace unirag
