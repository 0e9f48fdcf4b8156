// Copyright (c) 2026 the unirag authors
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <set>

#include "unirag/candidates.hpp"
#include "unirag/rng.hpp"
#include "unirag/synth.hpp"
#include "unirag/trainer.hpp"

using namespace unirag;

namespace {

std::vector<std::string> numbered_ids(int n) {
    std::vector<std::string> out;
    for (int i = 0; i < n; ++i) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "r%03d", i);
        out.push_back(buf);
    }
    return out;
}

struct TinySetup {
    SynthData data;
    TransformerModel model;
    TokenOverlapRetriever reference;

    explicit TinySetup(uint64_t seed, int passages = 24, int train = 32, int eval = 8)
        : data(synth_data(SynthConfig{seed, passages, train, eval, 0.0, 0.25})),
          model(tiny_preset(data.tokenizer.vocab_size()), seed),
          reference(data.corpus) {}
};

TrainSchedule fast_schedule(uint64_t seed) {
    TrainSchedule s;
    s.seed = seed;
    s.total_epochs = 2;
    s.warmup_epochs = 1;
    s.batch_size = 2;
    s.plain_text_prob = 0.1f;
    s.dev_subset = 4;
    return s;
}

}  // namespace

TEST_SUITE("trainer") {

TEST_CASE("stage_for_epoch follows the warmup boundary") {
    TrainSchedule s;
    s.total_epochs = 10;
    s.warmup_epochs = 3;
    CHECK(stage_for_epoch(0, s) == TrainStage::Warmup);
    CHECK(stage_for_epoch(2, s) == TrainStage::Warmup);
    CHECK(stage_for_epoch(3, s) == TrainStage::SelfDistill);
    CHECK(stage_for_epoch(9, s) == TrainStage::SelfDistill);
    CHECK_THROWS_AS(stage_for_epoch(10, s), std::out_of_range);
    CHECK_THROWS_AS(stage_for_epoch(-1, s), std::out_of_range);

    // Warmup-only arm: self-distillation never runs.
    s.warmup_epochs = s.total_epochs;
    for (int e = 0; e < s.total_epochs; ++e) CHECK(stage_for_epoch(e, s) == TrainStage::Warmup);
    // Self-distillation-only arm.
    s.warmup_epochs = 0;
    for (int e = 0; e < s.total_epochs; ++e) CHECK(stage_for_epoch(e, s) == TrainStage::SelfDistill);
}

TEST_CASE("build_candidates windows and determinism") {
    const auto ranking = numbered_ids(50);
    const CandidateSet a = build_candidates(ranking, {}, 12345);
    const CandidateSet b = build_candidates(ranking, {}, 12345);
    CHECK(a.positives == std::vector<std::string>(ranking.begin(), ranking.begin() + 5));
    CHECK(a.hard_negatives.size() == 9);
    for (const std::string& id : a.hard_negatives) {
        const auto pos = std::find(ranking.begin(), ranking.end(), id) - ranking.begin();
        CHECK(pos >= 9);
        CHECK(pos < 50);
    }
    CHECK(a.all == b.all);          // reproducible
    CHECK(a.random_negatives.empty());  // batch of one
    // Stable ordering: positives, then hard, then random.
    CHECK(std::equal(a.positives.begin(), a.positives.end(), a.all.begin()));
}

TEST_CASE("peer positives become random negatives unless already used") {
    const auto ranking = numbered_ids(60);
    std::vector<std::vector<std::string>> peers{{ranking[0], "z900", "z901"}};
    const CandidateSet cs = build_candidates(ranking, peers, 7);
    // ranking[0] is one of our positives and must not reappear.
    CHECK(std::count(cs.random_negatives.begin(), cs.random_negatives.end(), ranking[0]) == 0);
    CHECK(std::count(cs.random_negatives.begin(), cs.random_negatives.end(), "z900") == 1);
    // Disjointness invariant.
    std::set<std::string> pos(cs.positives.begin(), cs.positives.end());
    for (const auto& id : cs.hard_negatives) CHECK(pos.count(id) == 0);
    for (const auto& id : cs.random_negatives) CHECK(pos.count(id) == 0);
    // Ordered union matches the parts.
    CHECK(cs.all.size() ==
          cs.positives.size() + cs.hard_negatives.size() + cs.random_negatives.size());
}

TEST_CASE("small corpora get proportional windows and tiny ones fail") {
    const auto ranking = numbered_ids(20);
    const CandidateSet cs = build_candidates(ranking, {}, 3);
    CHECK(cs.positives.size() == 2);  // 20*5/50
    CHECK_FALSE(cs.hard_negatives.empty());
    CHECK_THROWS_WITH_AS(build_candidates(numbered_ids(5), {}, 1),
                         "corpus too small for candidate construction", std::runtime_error);
}

TEST_CASE("candidate logliks are deterministic and sized like the candidate set") {
    TinySetup setup(91);
    const TrainExample ex = make_train_example(setup.data.tokenizer, setup.data.train[0]);
    std::vector<TokenSeq> cands;
    for (int i = 0; i < 4; ++i)
        cands.push_back(setup.data.tokenizer.encode(setup.data.corpus[static_cast<size_t>(i)].text));
    cands.push_back(cands[0]);  // duplicate candidate
    const auto lls =
        candidate_logliks(setup.model, ex.query, ex.response, cands, EncodeStrategy::ConcatFull);
    CHECK(lls.size() == cands.size());
    CHECK(lls[0] == doctest::Approx(lls[4]).epsilon(1e-12));  // identical passages
    for (double l : lls) CHECK(l < 0.0);
}

TEST_CASE("five training steps are bit-identical across runs") {
    auto run = [](uint64_t seed) {
        TinySetup setup(seed);
        Trainer trainer(setup.model, setup.data.tokenizer, setup.data.corpus, setup.data.train, {},
                        fast_schedule(seed), setup.reference);
        for (int step = 0; step < 5; ++step)
            trainer.train_step({(step * 2) % 32, (step * 2 + 1) % 32},
                               step < 3 ? TrainStage::Warmup : TrainStage::SelfDistill, 0);
        std::vector<float> flat;
        for (const auto& [name, t] : setup.model.named_parameters())
            flat.insert(flat.end(), t.data(), t.data() + t.numel());
        return flat;
    };
    const auto a = run(5);
    const auto b = run(5);
    REQUIRE(a.size() == b.size());
    CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0);
}

TEST_CASE("warmup never touches the distillation path and vice versa") {
    TinySetup setup(93);
    Trainer trainer(setup.model, setup.data.tokenizer, setup.data.corpus, setup.data.train, {},
                    fast_schedule(93), setup.reference);
    trainer.train_step({0, 1}, TrainStage::Warmup, 0);
    trainer.train_step({2, 3}, TrainStage::Warmup, 0);
    CHECK(trainer.nce_calls() == 4);  // one per example
    CHECK(trainer.distill_calls() == 0);
    trainer.train_step({4, 5}, TrainStage::SelfDistill, 1);
    CHECK(trainer.nce_calls() == 4);
    CHECK(trainer.distill_calls() == 2);
}

TEST_CASE("loss decreases when overfitting one batch") {
    TinySetup setup(95);
    TrainSchedule schedule = fast_schedule(95);
    schedule.linear_lr_decay = false;
    Trainer trainer(setup.model, setup.data.tokenizer, setup.data.corpus, setup.data.train, {},
                    schedule, setup.reference);
    std::vector<int> batch(32);
    for (int i = 0; i < 32; ++i) batch[static_cast<size_t>(i)] = i;
    double first = 0.0, last = 0.0;
    for (int step = 0; step < 50; ++step) {
        const LossBreakdown loss = trainer.train_step(batch, TrainStage::Warmup, 0);
        CHECK(std::isfinite(loss.j_total));
        if (step == 0) first = loss.j_total;
        if (step == 49) last = loss.j_total;
    }
    CHECK(last < first);
}

TEST_CASE("lambda zero reduces the objective to generation only") {
    TinySetup setup(97);
    TrainSchedule schedule = fast_schedule(97);
    schedule.lambda = 0.0f;
    Trainer trainer(setup.model, setup.data.tokenizer, setup.data.corpus, setup.data.train, {},
                    schedule, setup.reference);
    const LossBreakdown loss = trainer.train_step({0, 1}, TrainStage::Warmup, 0);
    CHECK(loss.lambda == 0.0f);
    CHECK(loss.j_total == doctest::Approx(loss.j_gen));
}

TEST_CASE("non-finite losses abort with the offending batch ids") {
    TinySetup setup(99);
    Trainer trainer(setup.model, setup.data.tokenizer, setup.data.corpus, setup.data.train, {},
                    fast_schedule(99), setup.reference);
    Tensor w = setup.model.parameter("layers.0.wq");
    w.data()[0] = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_WITH_AS(trainer.train_step({3, 7}, TrainStage::Warmup, 0),
                         "non-finite loss; batch examples: 3 7", std::runtime_error);
}

TEST_CASE("training run touches both stages, logs metrics, and keeps the step-0 snapshot") {
    TinySetup setup(101, 16, 24, 8);
    const std::vector<float> init = setup.model.parameter("tok_embed").to_vector();
    TrainSchedule schedule = fast_schedule(101);
    Trainer trainer(setup.model, setup.data.tokenizer, setup.data.corpus, setup.data.train,
                    setup.data.eval, schedule, setup.reference);
    const TrainResult result = trainer.train();
    REQUIRE(result.metrics.size() == 2);
    CHECK(result.metrics[0].stage == TrainStage::Warmup);
    CHECK(result.metrics[1].stage == TrainStage::SelfDistill);
    CHECK(std::isfinite(result.metrics[0].j_gen));
    CHECK(result.metrics[1].j_ret >= 0.0);  // KL is non-negative
    CHECK(trainer.distill_calls() > 0);
    // Snapshot still holds the step-0 parameters even though training moved.
    const std::vector<float> snap = trainer.snapshot().parameter("tok_embed").to_vector();
    CHECK(snap == init);
    const std::vector<float> now = setup.model.parameter("tok_embed").to_vector();
    CHECK_FALSE(now == init);
    // Metrics file round trip.
    write_metrics_jsonl("/tmp/unirag_metrics_test.jsonl", result.metrics);
    std::remove("/tmp/unirag_metrics_test.jsonl");
}

}  // TEST_SUITE
