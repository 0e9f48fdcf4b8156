// Copyright (c) 2026 the unirag authors
// SPDX-License-Identifier: Apache-2.0
#include "unirag/ablate.hpp"

#include <iomanip>
#include <memory>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "unirag/eval.hpp"
#include "unirag/index_service.hpp"
#include "unirag/kv_compress.hpp"
#include "unirag/rng.hpp"

namespace unirag {

namespace {

struct SplitReports {
    EvalReport lookup;
    EvalReport shifted;
};

struct TrainedArtifacts {
    std::unique_ptr<TransformerModel> model;
    std::unique_ptr<TransformerModel> snapshot;
    Tokenizer tokenizer;
    std::vector<CorpusRecord> corpus;
    std::vector<ExampleRecord> eval_lookup;
    std::vector<ExampleRecord> eval_shifted;
    TrainSchedule schedule;
};

TrainedArtifacts train_once(const AblateRunConfig& base, uint64_t seed,
                            const std::function<void(TrainSchedule&)>& tweak_schedule) {
    SynthConfig synth_cfg = base.synth;
    synth_cfg.seed = seed;
    SynthData data = synth_data(synth_cfg);

    TrainedArtifacts art;
    art.tokenizer = data.tokenizer;
    art.corpus = data.corpus;
    for (const ExampleRecord& ex : data.eval) {
        (ex.task == kShiftedTask ? art.eval_shifted : art.eval_lookup).push_back(ex);
    }
    art.schedule = base.schedule;
    art.schedule.seed = seed;
    if (tweak_schedule) tweak_schedule(art.schedule);

    art.model = std::make_unique<TransformerModel>(tiny_preset(data.tokenizer.vocab_size()),
                                                   derive_seed(seed, 0x1111, 0));
    TokenOverlapRetriever reference(data.corpus);
    Trainer trainer(*art.model, art.tokenizer, data.corpus, data.train, {}, art.schedule, reference);
    trainer.train();
    art.snapshot = std::make_unique<TransformerModel>(trainer.snapshot().clone());
    return art;
}

EvalReport eval_split(const TrainedArtifacts& art, const std::vector<ExampleRecord>& split,
                      PassageSource& source) {
    if (split.empty()) return EvalReport{};
    AnyIndex index;
    index.kind = IndexKind::Flat;
    index.flat = build_passage_index(*art.model, art.tokenizer, art.corpus);
    LocalIndexClient client(&index);
    return evaluate(*art.model, art.tokenizer, art.corpus, split,
                    art.model->config().retrieval_fanin, client, source);
}

SplitReports eval_both(const TrainedArtifacts& art, PassageSource& source) {
    SplitReports r;
    r.lookup = eval_split(art, art.eval_lookup, source);
    r.shifted = eval_split(art, art.eval_shifted, source);
    return r;
}

SplitReports eval_encoding(const TrainedArtifacts& art, EncodeStrategy strategy, FrozenMode frozen) {
    EncodingPassageSource source(*art.model, art.tokenizer, art.corpus, strategy, frozen,
                                 art.snapshot.get());
    return eval_both(art, source);
}

// Per-passage KV store built with independent encoding, optionally compressed.
SplitReports eval_compression(const TrainedArtifacts& art, const std::string& mode,
                              const AblateRunConfig& base) {
    CompressionOptions options;
    options.mode = mode;
    options.pq_m = base.pq_m;
    options.pq_bits = base.pq_bits;
    options.keep_ratio = base.heavy_hitter_keep;
    options.seed = derive_seed(base.schedule.seed, 0x6bULL, 0);
    std::vector<std::string> ids;
    std::vector<TokenSeq> tokens;
    for (const CorpusRecord& rec : art.corpus) {
        ids.push_back(rec.id);
        tokens.push_back(art.tokenizer.encode(rec.text));
    }
    PrecomputedKVSource source = build_compressed_kv_source(*art.model, ids, tokens, options);
    return eval_both(art, source);
}

void accumulate(ArmMetrics& acc, const SplitReports& r) {
    acc.seeds += 1;
    acc.em_lookup += r.lookup.exact_match;
    acc.recall_lookup += r.lookup.recall_at_k;
    acc.em_shifted += r.shifted.exact_match;
    acc.recall_shifted += r.shifted.recall_at_k;
}

void finish(ArmMetrics& acc) {
    if (acc.seeds == 0) return;
    acc.em_lookup /= acc.seeds;
    acc.recall_lookup /= acc.seeds;
    acc.em_shifted /= acc.seeds;
    acc.recall_shifted /= acc.seeds;
}

}  // namespace

std::vector<ArmMetrics> run_ablation(const std::string& grid, const AblateRunConfig& base,
                                     int n_seeds, std::ostream* progress) {
    if (n_seeds < 1) throw std::invalid_argument("run_ablation: need at least one seed");
    std::vector<ArmMetrics> rows;
    auto log = [&](const std::string& msg) {
        if (progress) (*progress) << msg << std::endl;
    };

    if (grid == "objectives") {
        const std::vector<std::pair<std::string, std::function<void(TrainSchedule&)>>> arms = {
            {"warmup_only", [](TrainSchedule& s) { s.warmup_epochs = s.total_epochs; }},
            {"self_distill_only", [](TrainSchedule& s) { s.warmup_epochs = 0; }},
            {"warmup_plus_self_distill", [](TrainSchedule&) {}},
        };
        for (const auto& [name, tweak] : arms) {
            ArmMetrics acc;
            acc.arm = name;
            for (int s = 0; s < n_seeds; ++s) {
                log("objectives/" + name + " seed " + std::to_string(s + 1));
                TrainedArtifacts art = train_once(base, base.synth.seed + static_cast<uint64_t>(s), tweak);
                accumulate(acc, eval_encoding(art, art.schedule.strategy, FrozenMode::None));
            }
            finish(acc);
            rows.push_back(acc);
        }
        return rows;
    }

    if (grid == "encoding") {
        const std::vector<std::pair<std::string, EncodeStrategy>> arms = {
            {"independent", EncodeStrategy::Independent},
            {"concat_segmented", EncodeStrategy::ConcatSegmented},
            {"concat_full", EncodeStrategy::ConcatFull},
        };
        for (const auto& [name, strategy] : arms) {
            ArmMetrics acc;
            acc.arm = name;
            for (int s = 0; s < n_seeds; ++s) {
                log("encoding/" + name + " seed " + std::to_string(s + 1));
                TrainedArtifacts art =
                    train_once(base, base.synth.seed + static_cast<uint64_t>(s),
                               [strategy](TrainSchedule& sch) { sch.strategy = strategy; });
                accumulate(acc, eval_encoding(art, strategy, FrozenMode::None));
            }
            finish(acc);
            rows.push_back(acc);
        }
        return rows;
    }

    if (grid == "frozen") {
        // Train once per seed; freezing applies at inference time.
        std::vector<ArmMetrics> accs = {{"none", 0, 0, 0, 0, 0},
                                        {"frozen_hidden", 0, 0, 0, 0, 0},
                                        {"frozen_kv", 0, 0, 0, 0, 0}};
        const FrozenMode modes[3] = {FrozenMode::None, FrozenMode::FrozenHidden, FrozenMode::FrozenKV};
        for (int s = 0; s < n_seeds; ++s) {
            log("frozen grid seed " + std::to_string(s + 1));
            TrainedArtifacts art = train_once(base, base.synth.seed + static_cast<uint64_t>(s),
                                              [](TrainSchedule& sch) {
                                                  sch.strategy = EncodeStrategy::Independent;
                                              });
            for (int m = 0; m < 3; ++m)
                accumulate(accs[static_cast<size_t>(m)],
                           eval_encoding(art, EncodeStrategy::Independent, modes[m]));
        }
        for (auto& a : accs) finish(a);
        return accs;
    }

    if (grid == "compression") {
        std::vector<ArmMetrics> accs = {{"none", 0, 0, 0, 0, 0},
                                        {"heavy_hitter", 0, 0, 0, 0, 0},
                                        {"pq", 0, 0, 0, 0, 0}};
        const char* modes[3] = {"none", "heavy_hitter", "pq"};
        for (int s = 0; s < n_seeds; ++s) {
            log("compression grid seed " + std::to_string(s + 1));
            TrainedArtifacts art = train_once(base, base.synth.seed + static_cast<uint64_t>(s),
                                              [](TrainSchedule& sch) {
                                                  sch.strategy = EncodeStrategy::Independent;
                                              });
            for (int m = 0; m < 3; ++m)
                accumulate(accs[static_cast<size_t>(m)], eval_compression(art, modes[m], base));
        }
        for (auto& a : accs) finish(a);
        return accs;
    }

    if (grid == "boundary_b" || grid == "boundary_t") {
        const bool vary_b = grid == "boundary_b";
        const std::vector<int> values = vary_b ? std::vector<int>{1, 2, 3, 4}
                                               : std::vector<int>{3, 4, 5, 6};
        for (int v : values) {
            ArmMetrics acc;
            acc.arm = (vary_b ? "b=" : "t=") + std::to_string(v);
            for (int s = 0; s < n_seeds; ++s) {
                log(grid + "/" + acc.arm + " seed " + std::to_string(s + 1));
                SynthConfig synth_cfg = base.synth;
                synth_cfg.seed = base.synth.seed + static_cast<uint64_t>(s);
                SynthData data = synth_data(synth_cfg);
                ModelConfig cfg = tiny_preset(data.tokenizer.vocab_size());
                if (vary_b) cfg.boundary_b = v;
                else cfg.boundary_t = v;
                cfg.validate();
                TransformerModel model(cfg, derive_seed(synth_cfg.seed, 0x1111, 0));
                TrainSchedule sch = base.schedule;
                sch.seed = synth_cfg.seed;
                TokenOverlapRetriever reference(data.corpus);
                Trainer trainer(model, data.tokenizer, data.corpus, data.train, {}, sch, reference);
                trainer.train();
                TrainedArtifacts art;
                art.model = std::make_unique<TransformerModel>(model.clone());
                art.snapshot = std::make_unique<TransformerModel>(trainer.snapshot().clone());
                art.tokenizer = data.tokenizer;
                art.corpus = data.corpus;
                for (const ExampleRecord& ex : data.eval)
                    (ex.task == kShiftedTask ? art.eval_shifted : art.eval_lookup).push_back(ex);
                art.schedule = sch;
                accumulate(acc, eval_encoding(art, sch.strategy, FrozenMode::None));
            }
            finish(acc);
            rows.push_back(acc);
        }
        return rows;
    }

    throw std::invalid_argument("unknown ablation grid: " + grid);
}

std::string format_ablation_table(const std::vector<ArmMetrics>& rows) {
    std::ostringstream out;
    size_t width = 4;
    for (const ArmMetrics& r : rows) width = std::max(width, r.arm.size());
    out << std::left << std::setw(static_cast<int>(width) + 2) << "arm"
        << std::right << std::setw(10) << "em_held" << std::setw(12) << "rec_held"
        << std::setw(12) << "em_shift" << std::setw(12) << "rec_shift" << "\n";
    out << std::string(width + 2 + 46, '-') << "\n";
    out << std::fixed << std::setprecision(4);
    for (const ArmMetrics& r : rows) {
        out << std::left << std::setw(static_cast<int>(width) + 2) << r.arm << std::right
            << std::setw(10) << r.em_lookup << std::setw(12) << r.recall_lookup << std::setw(12)
            << r.em_shifted << std::setw(12) << r.recall_shifted << "\n";
    }
    return out.str();
}

}  // namespace unirag
