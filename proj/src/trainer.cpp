// Copyright (c) 2026 the unirag authors
// SPDX-License-Identifier: Apache-2.0
#include "unirag/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "unirag/eval.hpp"
#include "unirag/index_service.hpp"
#include "unirag/rng.hpp"

namespace unirag {

TrainStage stage_for_epoch(int epoch, const TrainSchedule& schedule) {
    if (epoch < 0 || epoch >= schedule.total_epochs)
        throw std::out_of_range("stage_for_epoch: epoch out of range");
    return epoch < schedule.warmup_epochs ? TrainStage::Warmup : TrainStage::SelfDistill;
}

std::vector<double> candidate_logliks(const TransformerModel& model, const TokenSeq& query,
                                      const TokenSeq& response,
                                      const std::vector<TokenSeq>& candidate_passages,
                                      EncodeStrategy strategy, FrozenMode frozen,
                                      const TransformerModel* snapshot) {
    if (response.empty()) throw std::invalid_argument("candidate_logliks: empty response");
    NoGradScope ng;
    const PromptState base = model.forward_prompt(query, 1);
    const int r = static_cast<int>(response.size());
    const int prompt_len = static_cast<int>(query.size());
    std::vector<int> steps(response.begin(), response.end() - 1);
    std::vector<int> logit_positions(static_cast<size_t>(r));
    for (int j = 0; j < r; ++j) logit_positions[static_cast<size_t>(j)] = prompt_len - 1 + j;

    std::vector<double> out;
    out.reserve(candidate_passages.size());
    for (size_t c = 0; c < candidate_passages.size(); ++c) {
        PromptState st = base;
        const PassageKV kv = model.encode_passages({candidate_passages[c]}, {"cand"}, strategy,
                                                   frozen, snapshot);
        const Tensor logits = model.continue_with_passages(st, &kv, steps, logit_positions);
        double loglik = 0.0;
        for (int j = 0; j < r; ++j) loglik += row_log_prob(logits, j, response[static_cast<size_t>(j)]);
        out.push_back(loglik);
    }
    return out;
}

AdamOptimizer::AdamOptimizer(std::vector<std::pair<std::string, Tensor>> params, float lr,
                             float beta1, float beta2, float eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& [name, t] : params_) {
        m_.emplace_back(t.numel(), 0.0f);
        v_.emplace_back(t.numel(), 0.0f);
    }
}

void AdamOptimizer::step(float lr_scale) {
    ++steps_;
    const double bc1 = 1.0 - std::pow(static_cast<double>(beta1_), steps_);
    const double bc2 = 1.0 - std::pow(static_cast<double>(beta2_), steps_);
    const float lr = lr_ * lr_scale;
    for (size_t pi = 0; pi < params_.size(); ++pi) {
        Tensor t = params_[pi].second;
        const float* g = t.grad();
        float* p = t.data();
        float* m = m_[pi].data();
        float* v = v_[pi].data();
        const size_t n = t.numel();
        for (size_t i = 0; i < n; ++i) {
            m[i] = beta1_ * m[i] + (1.0f - beta1_) * g[i];
            v[i] = beta2_ * v[i] + (1.0f - beta2_) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p[i] -= static_cast<float>(lr * mhat / (std::sqrt(vhat) + eps_));
        }
    }
}

TrainExample make_train_example(const Tokenizer& tokenizer, const ExampleRecord& record) {
    TrainExample ex;
    ex.query = tokenizer.encode(record.query);
    ex.response = tokenizer.encode(record.answer);
    ex.response.push_back(Tokenizer::kEosId);
    ex.gold_answer = record.answer;
    ex.query_text = record.query;
    ex.task = record.task;
    if (ex.query.empty() || ex.response.empty())
        throw std::invalid_argument("make_train_example: empty query or response");
    return ex;
}

Trainer::Trainer(TransformerModel& model, const Tokenizer& tokenizer,
                 std::vector<CorpusRecord> corpus, std::vector<ExampleRecord> train_examples,
                 std::vector<ExampleRecord> dev_examples, TrainSchedule schedule,
                 const ReferenceRetriever& reference)
    : model_(model), tokenizer_(tokenizer), corpus_(std::move(corpus)), dev_(std::move(dev_examples)),
      schedule_(schedule) {
    schedule_.validate();
    if (corpus_.size() < 6) throw std::runtime_error("corpus too small for candidate construction");
    for (const CorpusRecord& r : corpus_) {
        TokenSeq toks = tokenizer_.encode(r.text);
        if (static_cast<int>(toks.size()) > model_.config().max_passage_len)
            throw std::runtime_error("passage exceeds l_max");
        corpus_tokens_[r.id] = std::move(toks);
        corpus_text_[r.id] = r.text;
    }
    examples_.reserve(train_examples.size());
    rankings_.reserve(train_examples.size());
    for (const ExampleRecord& rec : train_examples) {
        examples_.push_back(make_train_example(tokenizer_, rec));
        rankings_.push_back(reference.rank(rec.query));
    }
    snapshot_ = std::make_unique<TransformerModel>(model_.clone());
    optimizer_ = std::make_unique<AdamOptimizer>(model_.named_parameters(), schedule_.learning_rate);
}

const TokenSeq& Trainer::passage_tokens(const std::string& id) const {
    auto it = corpus_tokens_.find(id);
    if (it == corpus_tokens_.end()) throw std::runtime_error("Trainer: unknown passage id " + id);
    return it->second;
}

CandidateSet Trainer::candidates_for(int example_index, const std::vector<int>& peers,
                                     int epoch) const {
    std::vector<std::vector<std::string>> peer_positives;
    const int p_window = positive_window_size(static_cast<int>(corpus_.size()));
    for (int peer : peers) {
        if (peer == example_index) continue;
        const auto& ranking = rankings_[static_cast<size_t>(peer)];
        peer_positives.emplace_back(ranking.begin(), ranking.begin() + p_window);
    }
    return build_candidates(rankings_[static_cast<size_t>(example_index)], peer_positives,
                            derive_seed(schedule_.seed, static_cast<uint64_t>(epoch),
                                        static_cast<uint64_t>(example_index)));
}

LossBreakdown Trainer::train_step(const std::vector<int>& example_indices, TrainStage stage,
                                  int epoch) {
    std::vector<StepItem> items;
    items.reserve(example_indices.size());
    for (int idx : example_indices)
        items.push_back(StepItem{idx, candidates_for(idx, example_indices, epoch)});
    return retrieval_step(items, stage);
}

LossBreakdown Trainer::retrieval_step(const std::vector<StepItem>& items, TrainStage stage) {
    model_.zero_grads();
    GradTape tape;

    // Embed each distinct candidate passage once per step.
    std::vector<std::string> unique_ids;
    std::vector<TokenSeq> unique_tokens;
    std::map<std::string, int> slot;
    for (const StepItem& item : items) {
        for (const std::string& id : item.candidates.all) {
            if (slot.emplace(id, static_cast<int>(unique_ids.size())).second) {
                unique_ids.push_back(id);
                unique_tokens.push_back(passage_tokens(id));
            }
        }
    }
    const std::vector<PassageEmbedding> embeddings = model_.embed_passages(unique_tokens, unique_ids);

    const float lambda = schedule_.lambda;
    std::vector<Tensor> item_losses;
    double j_gen_sum = 0.0, j_ret_sum = 0.0;
    for (const StepItem& item : items) {
        const TrainExample& ex = examples_[static_cast<size_t>(item.example_index)];
        const CandidateSet& cs = item.candidates;
        const int n_cand = static_cast<int>(cs.all.size());
        const int k_gen = std::min(model_.config().retrieval_fanin, n_cand);

        PromptState st = model_.forward_prompt(ex.query, k_gen);

        std::vector<Tensor> cand_rows;
        cand_rows.reserve(static_cast<size_t>(n_cand));
        for (const std::string& id : cs.all)
            cand_rows.push_back(embeddings[static_cast<size_t>(slot.at(id))].pooled);
        const Tensor ep_matrix = concat_rows(cand_rows);  // [C, h_k*d_h]
        const Tensor scores = matmul_nt(st.query.pooled, ep_matrix).reshaped({n_cand});

        Tensor j_ret;
        if (stage == TrainStage::Warmup) {
            j_ret = nce_loss(scores, cs.positive_indices(), cs.negative_indices());
            ++nce_calls_;
        } else {
            std::vector<TokenSeq> cand_tokens;
            cand_tokens.reserve(static_cast<size_t>(n_cand));
            for (const std::string& id : cs.all) cand_tokens.push_back(passage_tokens(id));
            const std::vector<double> logliks =
                candidate_logliks(model_, ex.query, ex.response, cand_tokens, schedule_.strategy,
                                  schedule_.frozen, snapshot_.get());
            const std::vector<double> p_target =
                target_distribution(logliks, schedule_.temperatures.tau_t);
            const Tensor p_retrieval = retrieval_distribution(scores, schedule_.temperatures.tau_r);
            j_ret = distill_loss(p_target, p_retrieval);
            ++distill_calls_;
        }

        // Generation conditions on the top-k_gen candidates by current score.
        std::vector<int> order(static_cast<size_t>(n_cand));
        std::iota(order.begin(), order.end(), 0);
        const float* sv = scores.data();
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return sv[a] > sv[b]; });
        std::vector<TokenSeq> gen_tokens;
        std::vector<std::string> gen_ids;
        for (int i = 0; i < k_gen; ++i) {
            gen_ids.push_back(cs.all[static_cast<size_t>(order[static_cast<size_t>(i)])]);
            gen_tokens.push_back(passage_tokens(gen_ids.back()));
        }
        const PassageKV kv = model_.encode_passages(gen_tokens, gen_ids, schedule_.strategy,
                                                    schedule_.frozen, snapshot_.get());

        const int r = static_cast<int>(ex.response.size());
        const int prompt_len = static_cast<int>(ex.query.size());
        std::vector<int> steps(ex.response.begin(), ex.response.end() - 1);
        std::vector<int> logit_positions(static_cast<size_t>(r));
        for (int j = 0; j < r; ++j) logit_positions[static_cast<size_t>(j)] = prompt_len - 1 + j;
        const Tensor logits = model_.continue_with_passages(st, &kv, steps, logit_positions);
        const Tensor j_gen = generation_loss(logits, ex.response,
                                             std::vector<uint8_t>(static_cast<size_t>(r), 1));

        j_gen_sum += j_gen.item();
        j_ret_sum += j_ret.item();
        item_losses.push_back(add(j_gen, scale(j_ret, lambda)));
    }

    Tensor batch_loss = item_losses[0];
    for (size_t i = 1; i < item_losses.size(); ++i) batch_loss = add(batch_loss, item_losses[i]);
    batch_loss = scale(batch_loss, 1.0f / static_cast<float>(item_losses.size()));

    if (!all_finite(batch_loss)) {
        std::ostringstream msg;
        msg << "non-finite loss; batch examples:";
        for (const StepItem& item : items) msg << ' ' << item.example_index;
        throw std::runtime_error(msg.str());
    }

    tape.backward(batch_loss);
    float lr_scale = 1.0f;
    if (schedule_.linear_lr_decay && total_steps_planned_ > 0)
        lr_scale = std::max(0.05f, 1.0f - static_cast<float>(steps_done_) / total_steps_planned_);
    optimizer_->step(lr_scale);
    ++steps_done_;

    const auto n = static_cast<float>(items.size());
    return joint_loss(static_cast<float>(j_gen_sum) / n, static_cast<float>(j_ret_sum) / n, lambda,
                      stage);
}

LossBreakdown Trainer::plain_text_step(Rng& rng) {
    model_.zero_grads();
    GradTape tape;
    std::vector<Tensor> losses;
    for (int i = 0; i < schedule_.batch_size; ++i) {
        const CorpusRecord& rec = corpus_[static_cast<size_t>(rng.next_below(corpus_.size()))];
        const TokenSeq& toks = corpus_tokens_.at(rec.id);
        if (toks.size() < 2) continue;
        std::vector<int> positions(toks.size() - 1);
        std::iota(positions.begin(), positions.end(), 0);
        const Tensor logits = model_.lm_logits(toks, positions);
        const std::vector<int> targets(toks.begin() + 1, toks.end());
        losses.push_back(cross_entropy_rows(logits, targets));
    }
    if (losses.empty()) return joint_loss(0.0f, 0.0f, 0.0f, TrainStage::Warmup);
    Tensor total = losses[0];
    for (size_t i = 1; i < losses.size(); ++i) total = add(total, losses[i]);
    total = scale(total, 1.0f / static_cast<float>(losses.size()));
    tape.backward(total);
    float lr_scale = 1.0f;
    if (schedule_.linear_lr_decay && total_steps_planned_ > 0)
        lr_scale = std::max(0.05f, 1.0f - static_cast<float>(steps_done_) / total_steps_planned_);
    optimizer_->step(lr_scale);
    ++steps_done_;
    return joint_loss(total.item(), 0.0f, 0.0f, TrainStage::Warmup);
}

EpochMetrics Trainer::eval_dev(int epoch, TrainStage stage, double j_gen, double j_ret) const {
    EpochMetrics m;
    m.epoch = epoch;
    m.stage = stage;
    m.j_gen = j_gen;
    m.j_ret = j_ret;
    if (dev_.empty() || schedule_.dev_subset <= 0) return m;
    const int n_dev = std::min<int>(schedule_.dev_subset, static_cast<int>(dev_.size()));
    const std::vector<ExampleRecord> subset(dev_.begin(), dev_.begin() + n_dev);
    AnyIndex index;
    index.kind = IndexKind::Flat;
    index.flat = build_passage_index(model_, tokenizer_, corpus_);
    LocalIndexClient client(&index);
    EncodingPassageSource source(model_, tokenizer_, corpus_, schedule_.strategy, schedule_.frozen,
                                 snapshot_.get());
    const EvalReport report = evaluate(model_, tokenizer_, corpus_, subset,
                                       model_.config().retrieval_fanin, client, source);
    m.dev_em = report.exact_match;
    m.dev_recall_at_k = report.recall_at_k;
    return m;
}

TrainResult Trainer::train(const TrainCallbacks& callbacks) {
    const int n = static_cast<int>(examples_.size());
    const int steps_per_epoch = (n + schedule_.batch_size - 1) / schedule_.batch_size;
    total_steps_planned_ = static_cast<int>(
        steps_per_epoch * schedule_.total_epochs * (1.0 + schedule_.plain_text_prob) + 1);

    TrainResult result;
    Rng plain_rng(derive_seed(schedule_.seed, 0x91a1, 0));
    for (int epoch = 0; epoch < schedule_.total_epochs; ++epoch) {
        const TrainStage stage = stage_for_epoch(epoch, schedule_);
        std::vector<int> order(static_cast<size_t>(n));
        std::iota(order.begin(), order.end(), 0);
        Rng shuffle_rng(derive_seed(schedule_.seed, static_cast<uint64_t>(epoch), 0x5u));
        shuffle_rng.shuffle(order);

        double gen_sum = 0.0, ret_sum = 0.0;
        int gen_steps = 0, ret_steps = 0;
        for (int start = 0; start < n; start += schedule_.batch_size) {
            // ~10% of optimization steps train on plain passage text.
            if (plain_rng.next_double() < schedule_.plain_text_prob) {
                const LossBreakdown plain = plain_text_step(plain_rng);
                gen_sum += plain.j_gen;
                ++gen_steps;
            }
            const int end = std::min(n, start + schedule_.batch_size);
            const std::vector<int> batch(order.begin() + start, order.begin() + end);
            const LossBreakdown loss = train_step(batch, stage, epoch);
            gen_sum += loss.j_gen;
            ret_sum += loss.j_ret;
            ++gen_steps;
            ++ret_steps;
        }
        const EpochMetrics metrics =
            eval_dev(epoch, stage, gen_sum / std::max(1, gen_steps), ret_sum / std::max(1, ret_steps));
        result.metrics.push_back(metrics);
        if (callbacks.on_epoch) callbacks.on_epoch(epoch, metrics);
    }
    result.steps = steps_done_;
    return result;
}

void write_metrics_jsonl(const std::string& path, const std::vector<EpochMetrics>& metrics) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    for (const EpochMetrics& m : metrics) {
        out << nlohmann::json{{"epoch", m.epoch},
                              {"stage", to_string(m.stage)},
                              {"j_gen", m.j_gen},
                              {"j_ret", m.j_ret},
                              {"dev_em", m.dev_em},
                              {"dev_recall_at_k", m.dev_recall_at_k}}
                   .dump()
            << "\n";
    }
}

}  // namespace unirag
