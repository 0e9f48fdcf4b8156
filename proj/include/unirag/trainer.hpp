// Copyright (c) 2026 the unirag authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "unirag/candidates.hpp"
#include "unirag/config.hpp"
#include "unirag/data.hpp"
#include "unirag/model.hpp"
#include "unirag/objectives.hpp"
#include "unirag/tokenizer.hpp"

namespace unirag {

struct TrainExample {
    TokenSeq query;      // q
    TokenSeq response;   // r, ends with <eos>
    std::string gold_answer;
    std::string query_text;
    std::string task;
};

struct TrainSchedule {
    int total_epochs = 10;
    int warmup_epochs = 3;
    int batch_size = 2;
    float learning_rate = 3e-4f;
    uint64_t seed = 1;
    float lambda = 1.0f;  // retrieval loss weight in Eq. J = J_gen + lambda*J_ret
    DistillationTemperatures temperatures;
    float plain_text_prob = 0.1f;
    bool linear_lr_decay = true;
    EncodeStrategy strategy = EncodeStrategy::ConcatFull;
    FrozenMode frozen = FrozenMode::None;
    int dev_subset = 128;  // per-epoch metric subset; final eval uses everything

    void validate() const {
        if (!(0 <= warmup_epochs && warmup_epochs <= total_epochs))
            throw std::invalid_argument("TrainSchedule: need 0 <= warmup_epochs <= total_epochs");
        if (batch_size < 1 || learning_rate <= 0.0f)
            throw std::invalid_argument("TrainSchedule: bad batch size or learning rate");
        if (lambda < 0.0f) throw std::invalid_argument("TrainSchedule: lambda must be >= 0");
        temperatures.validate();
    }
};

// Warmup for epochs [0, warmup_epochs), self-distillation afterwards.
TrainStage stage_for_epoch(int epoch, const TrainSchedule& schedule);

// log P_LM(r | p, q) per candidate: the response-token log-prob sum with the
// query conditioned on each candidate alone (k=1 cross-attention). No
// gradients flow; used for the self-distillation target distribution.
std::vector<double> candidate_logliks(const TransformerModel& model, const TokenSeq& query,
                                      const TokenSeq& response,
                                      const std::vector<TokenSeq>& candidate_passages,
                                      EncodeStrategy strategy,
                                      FrozenMode frozen = FrozenMode::None,
                                      const TransformerModel* snapshot = nullptr);

class AdamOptimizer {
public:
    AdamOptimizer(std::vector<std::pair<std::string, Tensor>> params, float lr,
                  float beta1 = 0.9f, float beta2 = 0.999f, float eps = 1e-8f);

    // One update from the accumulated gradients; lr_scale applies schedule
    // decay on top of the base learning rate.
    void step(float lr_scale = 1.0f);
    int steps_taken() const { return steps_; }

private:
    std::vector<std::pair<std::string, Tensor>> params_;
    std::vector<std::vector<float>> m_;
    std::vector<std::vector<float>> v_;
    float lr_, beta1_, beta2_, eps_;
    int steps_ = 0;
};

struct EpochMetrics {
    int epoch = 0;
    TrainStage stage = TrainStage::Warmup;
    double j_gen = 0.0;
    double j_ret = 0.0;
    double dev_em = 0.0;
    double dev_recall_at_k = 0.0;
};

struct TrainResult {
    std::vector<EpochMetrics> metrics;
    int steps = 0;
};

struct TrainCallbacks {
    // Called after each epoch; use it to persist checkpoints.
    std::function<void(int epoch, const EpochMetrics&)> on_epoch;
};

class Trainer {
public:
    Trainer(TransformerModel& model, const Tokenizer& tokenizer,
            std::vector<CorpusRecord> corpus, std::vector<ExampleRecord> train_examples,
            std::vector<ExampleRecord> dev_examples, TrainSchedule schedule,
            const ReferenceRetriever& reference);

    // One optimization step over the given example indices. Exposed for the
    // determinism and overfit tests.
    LossBreakdown train_step(const std::vector<int>& example_indices, TrainStage stage, int epoch);

    TrainResult train(const TrainCallbacks& callbacks = {});

    const TransformerModel& snapshot() const { return *snapshot_; }
    const std::vector<TrainExample>& examples() const { return examples_; }
    const std::vector<CorpusRecord>& corpus() const { return corpus_; }

    // Instrumentation for the stage-isolation tests.
    int nce_calls() const { return nce_calls_; }
    int distill_calls() const { return distill_calls_; }

    EpochMetrics eval_dev(int epoch, TrainStage stage, double j_gen, double j_ret) const;

private:
    struct StepItem {
        int example_index;
        CandidateSet candidates;
    };

    LossBreakdown retrieval_step(const std::vector<StepItem>& items, TrainStage stage);
    LossBreakdown plain_text_step(Rng& rng);
    CandidateSet candidates_for(int example_index, const std::vector<int>& peers, int epoch) const;
    const TokenSeq& passage_tokens(const std::string& id) const;

    TransformerModel& model_;
    const Tokenizer& tokenizer_;
    std::vector<CorpusRecord> corpus_;
    std::map<std::string, TokenSeq> corpus_tokens_;
    std::map<std::string, std::string> corpus_text_;
    std::vector<TrainExample> examples_;
    std::vector<ExampleRecord> dev_;
    TrainSchedule schedule_;
    std::vector<std::vector<std::string>> rankings_;  // per example, reference order
    std::unique_ptr<TransformerModel> snapshot_;      // step-0 parameters
    std::unique_ptr<AdamOptimizer> optimizer_;
    int total_steps_planned_ = 0;
    int steps_done_ = 0;
    int nce_calls_ = 0;
    int distill_calls_ = 0;
};

// Tokenizes a query/answer pair into a TrainExample (response gets <eos>).
TrainExample make_train_example(const Tokenizer& tokenizer, const ExampleRecord& record);

void write_metrics_jsonl(const std::string& path, const std::vector<EpochMetrics>& metrics);

}  // namespace unirag
