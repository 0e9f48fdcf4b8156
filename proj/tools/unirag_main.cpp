// Copyright (c) 2026 the unirag authors
// SPDX-License-Identifier: Apache-2.0
//
// Workbench CLI: synthetic data, training, index building/serving, inference,
// evaluation, and ablation grids. Every subcommand accepts --config FILE with
// TOML-style key=value pairs; explicit flags win.

#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "unirag/ablate.hpp"
#include "unirag/checkpoint.hpp"
#include "unirag/data.hpp"
#include "unirag/eval.hpp"
#include "unirag/index.hpp"
#include "unirag/index_service.hpp"
#include "unirag/kv_compress.hpp"
#include "unirag/rng.hpp"
#include "unirag/synth.hpp"
#include "unirag/trainer.hpp"

namespace {

using namespace unirag;
using nlohmann::json;

EncodeStrategy parse_strategy(const std::string& s) {
    if (s == "independent") return EncodeStrategy::Independent;
    if (s == "concat_segmented") return EncodeStrategy::ConcatSegmented;
    if (s == "concat_full") return EncodeStrategy::ConcatFull;
    throw CLI::ValidationError("--strategy", "unknown strategy: " + s);
}

FrozenMode parse_frozen(const std::string& s) {
    if (s == "none") return FrozenMode::None;
    if (s == "frozen_hidden") return FrozenMode::FrozenHidden;
    if (s == "frozen_kv") return FrozenMode::FrozenKV;
    throw CLI::ValidationError("--frozen", "unknown frozen mode: " + s);
}

void write_tokenizer_table(const std::string& path, const Tokenizer& tok) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    for (const std::string& piece : tok.table()) out << piece << "\n";
}

Tokenizer read_tokenizer_table(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open: " + path);
    std::vector<std::string> table;
    std::string line;
    while (std::getline(in, line)) table.push_back(line);
    while (!table.empty() && table.back().empty()) table.pop_back();
    return Tokenizer::from_table(std::move(table));
}

json report_to_json(const EvalReport& r) {
    json per_task = json::object();
    for (const auto& [task, stats] : r.per_task)
        per_task[task] = {{"n", stats.n},
                          {"exact_match", stats.exact_match},
                          {"recall_at_k", stats.recall_at_k}};
    return json{{"exact_match", r.exact_match},
                {"recall_at_k", r.recall_at_k},
                {"k", r.k},
                {"n", r.n},
                {"per_task", per_task}};
}

void print_report(const EvalReport& r) {
    std::cout << "n=" << r.n << "  k=" << r.k << "  exact_match=" << r.exact_match
              << "  recall@k=" << r.recall_at_k << "\n";
    for (const auto& [task, stats] : r.per_task)
        std::cout << "  task " << task << ": n=" << stats.n << " em=" << stats.exact_match
                  << " recall@k=" << stats.recall_at_k << "\n";
}

struct CommonModelFlags {
    int n_layers = 8, boundary_b = 2, boundary_t = 5, d_model = 64, h_q = 8, h_k = 4, g = 2,
        d_h = 8, d_ff = 128, l_max = 32, k = 4;
    bool share_layer_b = false;

    void attach(CLI::App* cmd) {
        cmd->add_option("--n-layers", n_layers, "decoder layer count");
        cmd->add_option("--boundary-b", boundary_b, "last retrieval-group layer b");
        cmd->add_option("--boundary-t", boundary_t, "last reading-group layer t");
        cmd->add_option("--d-model", d_model, "model width");
        cmd->add_option("--query-heads", h_q, "query head count");
        cmd->add_option("--key-heads", h_k, "key/value head count");
        cmd->add_option("--group-size", g, "query heads per key head");
        cmd->add_option("--head-dim", d_h, "attention head width");
        cmd->add_option("--d-ff", d_ff, "feed-forward width");
        cmd->add_option("--l-max", l_max, "max passage tokens");
        cmd->add_option("--k", k, "retrieval fan-in");
        cmd->add_flag("--share-layer-b", share_layer_b,
                      "enable cross-attention at layer b for decoded tokens");
    }

    ModelConfig to_config(int vocab_size) const {
        ModelConfig c;
        c.n_layers = n_layers;
        c.boundary_b = boundary_b;
        c.boundary_t = boundary_t;
        c.d_model = d_model;
        c.n_query_heads = h_q;
        c.n_key_heads = h_k;
        c.group_size = g;
        c.head_dim = d_h;
        c.d_ff = d_ff;
        c.vocab_size = vocab_size;
        c.max_passage_len = l_max;
        c.retrieval_fanin = k;
        c.share_layer_b_cross_attention = share_layer_b;
        c.validate();
        return c;
    }
};

int cmd_synth_data(uint64_t seed, int passages, int train, int eval, double shifted_frac,
                   const std::string& out_dir) {
    SynthConfig cfg;
    cfg.seed = seed;
    cfg.n_passages = passages;
    cfg.n_train = train;
    cfg.n_eval = eval;
    cfg.shifted_train_fraction = shifted_frac;
    const SynthData data = synth_data(cfg);
    save_corpus_jsonl(out_dir + "/corpus.jsonl", data.corpus);
    save_examples_jsonl(out_dir + "/train.jsonl", data.train);
    save_examples_jsonl(out_dir + "/eval.jsonl", data.eval);
    write_tokenizer_table(out_dir + "/vocab.txt", data.tokenizer);
    std::cout << "wrote " << data.corpus.size() << " passages, " << data.train.size()
              << " train, " << data.eval.size() << " eval examples, vocab size "
              << data.tokenizer.vocab_size() << " to " << out_dir << "\n";
    return 0;
}

std::unique_ptr<RetrieverClient> make_client(const std::string& index_path,
                                             const std::string& remote,
                                             std::optional<AnyIndex>& storage) {
    if (!remote.empty()) {
        const size_t colon = remote.rfind(':');
        if (colon == std::string::npos)
            throw CLI::ValidationError("--remote", "expected host:port");
        return std::make_unique<TcpIndexClient>(remote.substr(0, colon),
                                                std::stoi(remote.substr(colon + 1)));
    }
    if (index_path.empty())
        throw CLI::ValidationError("--index", "missing index (provide --index or --remote)");
    storage = load_index(index_path);
    return std::make_unique<LocalIndexClient>(&*storage);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"unified retrieval-and-generation workbench"};
    app.require_subcommand(1);

    // ---- synth-data ----
    auto* synth_cmd = app.add_subcommand("synth-data", "generate the synthetic lookup corpus");
    synth_cmd->set_config("--config");
    uint64_t synth_seed = 1;
    int synth_passages = 256, synth_train = 2048, synth_eval = 512;
    double synth_shifted = 0.0;
    std::string synth_out = ".";
    synth_cmd->add_option("--seed", synth_seed);
    synth_cmd->add_option("--passages", synth_passages);
    synth_cmd->add_option("--train", synth_train);
    synth_cmd->add_option("--eval", synth_eval);
    synth_cmd->add_option("--shifted-train-fraction", synth_shifted);
    synth_cmd->add_option("--out-dir", synth_out);

    // ---- train ----
    auto* train_cmd = app.add_subcommand("train", "train a model on a synthetic corpus");
    train_cmd->set_config("--config");
    std::string tr_corpus, tr_train, tr_dev, tr_vocab, tr_out = "model.ckpt", tr_metrics,
                tr_epoch_dir;
    CommonModelFlags tr_model;
    int tr_epochs = 10, tr_warmup = 3, tr_batch = 2, tr_dev_subset = 128;
    double tr_lr = 3e-4, tr_lambda = 1.0, tr_tau_t = 1.0, tr_tau_r = 1.0, tr_plain = 0.1;
    uint64_t tr_seed = 1;
    std::string tr_strategy = "concat_full", tr_frozen = "none";
    train_cmd->add_option("--corpus", tr_corpus)->required();
    train_cmd->add_option("--train", tr_train)->required();
    train_cmd->add_option("--dev", tr_dev);
    train_cmd->add_option("--vocab", tr_vocab)->required();
    train_cmd->add_option("--out", tr_out);
    train_cmd->add_option("--metrics", tr_metrics);
    train_cmd->add_option("--epoch-checkpoint-dir", tr_epoch_dir);
    train_cmd->add_option("--epochs", tr_epochs);
    train_cmd->add_option("--warmup-epochs", tr_warmup);
    train_cmd->add_option("--batch-size", tr_batch);
    train_cmd->add_option("--lr", tr_lr);
    train_cmd->add_option("--lambda", tr_lambda);
    train_cmd->add_option("--tau-t", tr_tau_t);
    train_cmd->add_option("--tau-r", tr_tau_r);
    train_cmd->add_option("--plain-text-prob", tr_plain);
    train_cmd->add_option("--seed", tr_seed);
    train_cmd->add_option("--dev-subset", tr_dev_subset);
    train_cmd->add_option("--strategy", tr_strategy);
    train_cmd->add_option("--frozen", tr_frozen);
    tr_model.attach(train_cmd);

    // ---- build-index ----
    auto* build_cmd = app.add_subcommand("build-index", "embed a corpus and write an index file");
    build_cmd->set_config("--config");
    std::string bi_ckpt, bi_corpus, bi_out = "index.bin", bi_kind = "flat";
    int bi_m = 8, bi_bits = 8, bi_iters = 15;
    bool bi_rotation = false;
    uint64_t bi_seed = 1;
    build_cmd->add_option("--checkpoint", bi_ckpt)->required();
    build_cmd->add_option("--corpus", bi_corpus)->required();
    build_cmd->add_option("--out", bi_out);
    build_cmd->add_option("--kind", bi_kind)->check(CLI::IsMember({"flat", "pq"}));
    build_cmd->add_option("--pq-m", bi_m);
    build_cmd->add_option("--pq-bits", bi_bits);
    build_cmd->add_option("--pq-iters", bi_iters);
    build_cmd->add_flag("--rotation", bi_rotation, "apply a fixed random rotation before PQ");
    build_cmd->add_option("--seed", bi_seed);

    // ---- serve-index ----
    auto* serve_cmd = app.add_subcommand("serve-index", "host an index over TCP");
    serve_cmd->set_config("--config");
    std::string sv_index, sv_addr = "127.0.0.1";
    int sv_port = 7077, sv_max_conn = 64;
    serve_cmd->add_option("--index", sv_index)->required();
    serve_cmd->add_option("--addr", sv_addr)->envname("UNIRAG_BIND_ADDR");
    serve_cmd->add_option("--port", sv_port)->envname("UNIRAG_PORT");
    serve_cmd->add_option("--max-connections", sv_max_conn);

    // ---- infer ----
    auto* infer_cmd = app.add_subcommand("infer", "decode a prompt with one retrieval");
    infer_cmd->set_config("--config");
    std::string in_ckpt, in_corpus, in_index, in_remote, in_prompt, in_strategy = "concat_full";
    int in_k = 4, in_max_new = 8;
    infer_cmd->add_option("--checkpoint", in_ckpt)->required();
    infer_cmd->add_option("--corpus", in_corpus)->required();
    infer_cmd->add_option("--index", in_index);
    infer_cmd->add_option("--remote", in_remote, "host:port of a serve-index instance");
    infer_cmd->add_option("--prompt", in_prompt);
    infer_cmd->add_option("--k", in_k);
    infer_cmd->add_option("--max-new-tokens", in_max_new);
    infer_cmd->add_option("--strategy", in_strategy);

    // ---- eval ----
    auto* eval_cmd = app.add_subcommand("eval", "exact match and retrieval recall");
    eval_cmd->set_config("--config");
    std::string ev_ckpt, ev_corpus, ev_examples, ev_index, ev_remote, ev_out,
        ev_strategy = "concat_full", ev_frozen = "none", ev_compression = "none";
    int ev_k = 4, ev_max_new = 8, ev_pq_m = 4, ev_pq_bits = 8;
    double ev_keep = 0.5;
    std::string ev_snapshot;
    eval_cmd->add_option("--checkpoint", ev_ckpt)->required();
    eval_cmd->add_option("--corpus", ev_corpus)->required();
    eval_cmd->add_option("--eval", ev_examples)->required();
    eval_cmd->add_option("--index", ev_index);
    eval_cmd->add_option("--remote", ev_remote);
    eval_cmd->add_option("--out", ev_out, "write the report JSON here");
    eval_cmd->add_option("--k", ev_k);
    eval_cmd->add_option("--max-new-tokens", ev_max_new);
    eval_cmd->add_option("--strategy", ev_strategy);
    eval_cmd->add_option("--frozen", ev_frozen);
    eval_cmd->add_option("--snapshot", ev_snapshot, "step-0 checkpoint for frozen modes");
    eval_cmd->add_option("--compression", ev_compression)
        ->check(CLI::IsMember({"none", "heavy_hitter", "pq"}));
    eval_cmd->add_option("--pq-m", ev_pq_m);
    eval_cmd->add_option("--pq-bits", ev_pq_bits);
    eval_cmd->add_option("--keep-ratio", ev_keep);

    // ---- ablate ----
    auto* abl_cmd = app.add_subcommand("ablate", "grid of train+eval runs");
    abl_cmd->set_config("--config");
    std::string ab_grid = "objectives", ab_out;
    int ab_seeds = 3, ab_passages = 64, ab_train = 256, ab_eval = 96, ab_epochs = 6, ab_warmup = 2;
    uint64_t ab_seed = 1;
    abl_cmd->add_option("--grid", ab_grid)
        ->check(CLI::IsMember({"objectives", "encoding", "frozen", "compression", "boundary_b",
                               "boundary_t"}));
    abl_cmd->add_option("--seeds", ab_seeds);
    abl_cmd->add_option("--seed", ab_seed);
    abl_cmd->add_option("--passages", ab_passages);
    abl_cmd->add_option("--train", ab_train);
    abl_cmd->add_option("--eval", ab_eval);
    abl_cmd->add_option("--epochs", ab_epochs);
    abl_cmd->add_option("--warmup-epochs", ab_warmup);
    abl_cmd->add_option("--out", ab_out, "write the arm metrics JSON here");

    try {
        app.parse(argc, argv);

        if (synth_cmd->parsed())
            return cmd_synth_data(synth_seed, synth_passages, synth_train, synth_eval,
                                  synth_shifted, synth_out);

        if (train_cmd->parsed()) {
            const Tokenizer tok = read_tokenizer_table(tr_vocab);
            const auto corpus = load_corpus_jsonl(tr_corpus);
            const auto train_examples = load_examples_jsonl(tr_train);
            const auto dev_examples = tr_dev.empty() ? std::vector<ExampleRecord>{}
                                                     : load_examples_jsonl(tr_dev);
            TransformerModel model(tr_model.to_config(tok.vocab_size()),
                                   derive_seed(tr_seed, 0x1111, 0));
            TrainSchedule schedule;
            schedule.total_epochs = tr_epochs;
            schedule.warmup_epochs = tr_warmup;
            schedule.batch_size = tr_batch;
            schedule.learning_rate = static_cast<float>(tr_lr);
            schedule.seed = tr_seed;
            schedule.lambda = static_cast<float>(tr_lambda);
            schedule.temperatures = {static_cast<float>(tr_tau_t), static_cast<float>(tr_tau_r)};
            schedule.plain_text_prob = static_cast<float>(tr_plain);
            schedule.strategy = parse_strategy(tr_strategy);
            schedule.frozen = parse_frozen(tr_frozen);
            schedule.dev_subset = tr_dev_subset;
            TokenOverlapRetriever reference(corpus);
            Trainer trainer(model, tok, corpus, train_examples, dev_examples, schedule, reference);
            const TrainCallbacks callbacks{[&](int epoch, const EpochMetrics& m) {
                std::cout << "epoch " << epoch << " [" << to_string(m.stage) << "] j_gen=" << m.j_gen
                          << " j_ret=" << m.j_ret << " dev_em=" << m.dev_em
                          << " dev_recall@k=" << m.dev_recall_at_k << std::endl;
                if (!tr_epoch_dir.empty())
                    save_checkpoint(tr_epoch_dir + "/epoch_" + std::to_string(epoch) + ".ckpt",
                                    model, tok);
            }};
            const TrainResult result = trainer.train(callbacks);
            save_checkpoint(tr_out, model, tok);
            save_checkpoint(tr_out + ".step0", trainer.snapshot(), tok);
            if (!tr_metrics.empty()) write_metrics_jsonl(tr_metrics, result.metrics);
            std::cout << "saved checkpoint to " << tr_out << " after " << result.steps
                      << " steps\n";
            return 0;
        }

        if (build_cmd->parsed()) {
            LoadedCheckpoint ckpt = load_checkpoint(bi_ckpt);
            const auto corpus = load_corpus_jsonl(bi_corpus);
            AnyIndex index;
            index.flat = build_passage_index(ckpt.model, ckpt.tokenizer, corpus);
            if (bi_kind == "pq") {
                index.kind = IndexKind::PQ;
                index.pq = build_pq_index(index.flat, bi_m, bi_bits, bi_iters, bi_seed, bi_rotation);
                index.flat = FlatIndex{};
            }
            save_index(bi_out, index);
            std::cout << "wrote " << bi_kind << " index (" << index.size() << " x " << index.dim()
                      << ") to " << bi_out << "\n";
            return 0;
        }

        if (serve_cmd->parsed()) {
            AnyIndex index = load_index(sv_index);
            ServerConfig cfg;
            cfg.bind_addr = sv_addr;
            cfg.port = sv_port;
            cfg.max_connections = sv_max_conn;
            IndexServer server(std::move(index), cfg);
            std::cout << "serving " << sv_index << " on " << sv_addr << ":" << sv_port
                      << " (SIGINT to stop)" << std::endl;
            server.run_until_signal();
            return 0;
        }

        if (infer_cmd->parsed()) {
            LoadedCheckpoint ckpt = load_checkpoint(in_ckpt);
            const auto corpus = load_corpus_jsonl(in_corpus);
            std::optional<AnyIndex> storage;
            auto client = make_client(in_index, in_remote, storage);
            EncodingPassageSource source(ckpt.model, ckpt.tokenizer, corpus,
                                         parse_strategy(in_strategy));
            std::string prompt = in_prompt;
            if (prompt.empty()) std::getline(std::cin, prompt);
            const DecodeResult result =
                ckpt.model.decode(ckpt.tokenizer.encode(prompt), client.get(), &source, in_k,
                                  in_max_new, Tokenizer::kEosId);
            json out{{"generated", ckpt.tokenizer.decode(result.tokens)},
                     {"retrieved", result.passage_ids},
                     {"retrieval_calls", result.retrieval_calls}};
            std::cout << out.dump() << "\n";
            return 0;
        }

        if (eval_cmd->parsed()) {
            LoadedCheckpoint ckpt = load_checkpoint(ev_ckpt);
            const auto corpus = load_corpus_jsonl(ev_corpus);
            const auto examples = load_examples_jsonl(ev_examples);
            std::optional<AnyIndex> storage;
            auto client = make_client(ev_index, ev_remote, storage);

            std::unique_ptr<TransformerModel> snapshot;
            const FrozenMode frozen = parse_frozen(ev_frozen);
            if (frozen != FrozenMode::None) {
                if (ev_snapshot.empty())
                    throw CLI::ValidationError("--snapshot", "frozen modes need a step-0 checkpoint");
                snapshot = std::make_unique<TransformerModel>(load_checkpoint(ev_snapshot).model);
            }

            EvalReport report;
            if (ev_compression != "none") {
                CompressionOptions options;
                options.mode = ev_compression;
                options.pq_m = ev_pq_m;
                options.pq_bits = ev_pq_bits;
                options.keep_ratio = ev_keep;
                std::vector<std::string> ids;
                std::vector<TokenSeq> tokens;
                for (const CorpusRecord& r : corpus) {
                    ids.push_back(r.id);
                    tokens.push_back(ckpt.tokenizer.encode(r.text));
                }
                PrecomputedKVSource source =
                    build_compressed_kv_source(ckpt.model, ids, tokens, options);
                report = evaluate(ckpt.model, ckpt.tokenizer, corpus, examples, ev_k, *client,
                                  source, ev_max_new);
            } else {
                EncodingPassageSource source(ckpt.model, ckpt.tokenizer, corpus,
                                             parse_strategy(ev_strategy), frozen, snapshot.get());
                report = evaluate(ckpt.model, ckpt.tokenizer, corpus, examples, ev_k, *client,
                                  source, ev_max_new);
            }
            print_report(report);
            if (!ev_out.empty()) {
                std::ofstream out(ev_out);
                out << report_to_json(report).dump(2) << "\n";
            }
            return 0;
        }

        if (abl_cmd->parsed()) {
            AblateRunConfig cfg;
            cfg.synth.seed = ab_seed;
            cfg.synth.n_passages = ab_passages;
            cfg.synth.n_train = ab_train;
            cfg.synth.n_eval = ab_eval;
            cfg.schedule.total_epochs = ab_epochs;
            cfg.schedule.warmup_epochs = ab_warmup;
            const std::vector<ArmMetrics> rows = run_ablation(ab_grid, cfg, ab_seeds, &std::cerr);
            std::cout << format_ablation_table(rows);
            if (!ab_out.empty()) {
                json arr = json::array();
                for (const ArmMetrics& r : rows)
                    arr.push_back({{"arm", r.arm},
                                   {"seeds", r.seeds},
                                   {"em_held_in", r.em_lookup},
                                   {"recall_held_in", r.recall_lookup},
                                   {"em_shifted", r.em_shifted},
                                   {"recall_shifted", r.recall_shifted}});
                std::ofstream out(ab_out);
                out << arr.dump(2) << "\n";
            }
            return 0;
        }
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return 2;
    } catch (const std::out_of_range& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
