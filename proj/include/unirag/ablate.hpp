// Copyright (c) 2026 the unirag authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "unirag/synth.hpp"
#include "unirag/trainer.hpp"

namespace unirag {

// One full train+eval run per arm per seed, at reduced desk scale.
struct AblateRunConfig {
    SynthConfig synth{/*seed*/ 1, /*n_passages*/ 64, /*n_train*/ 256, /*n_eval*/ 96,
                      /*shifted_train_fraction*/ 0.0, /*eval_entity_fraction*/ 0.25};
    TrainSchedule schedule;
    int pq_m = 4;
    int pq_bits = 8;
    double heavy_hitter_keep = 0.5;

    AblateRunConfig() {
        schedule.total_epochs = 6;
        schedule.warmup_epochs = 2;
        schedule.dev_subset = 0;  // skip per-epoch dev metrics inside ablation arms
    }
};

struct ArmMetrics {
    std::string arm;
    int seeds = 0;
    double em_lookup = 0.0;
    double recall_lookup = 0.0;
    double em_shifted = 0.0;
    double recall_shifted = 0.0;
};

// Grids: "objectives" (warmup only / self-distillation only / both),
// "encoding" (independent / segmented / full), "frozen" (none / hidden / kv),
// "compression" (none / heavy hitter / pq), "boundary_b", "boundary_t".
std::vector<ArmMetrics> run_ablation(const std::string& grid, const AblateRunConfig& base,
                                     int n_seeds, std::ostream* progress = nullptr);

std::string format_ablation_table(const std::vector<ArmMetrics>& rows);

}  // namespace unirag
