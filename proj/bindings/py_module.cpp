// Copyright (c) 2026 the unirag authors
// SPDX-License-Identifier: Apache-2.0
//
// Python bindings over the core operations: tokenizer, retrieval embeddings,
// losses, ANN search, KV compression accounting, synthetic data, training,
// and end-to-end decode/eval.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "unirag/ablate.hpp"
#include "unirag/checkpoint.hpp"
#include "unirag/eval.hpp"
#include "unirag/index.hpp"
#include "unirag/index_service.hpp"
#include "unirag/kv_compress.hpp"
#include "unirag/objectives.hpp"
#include "unirag/rng.hpp"
#include "unirag/synth.hpp"
#include "unirag/trainer.hpp"

namespace py = pybind11;
using namespace unirag;

namespace {

std::vector<float> py_softmax_row(const std::vector<float>& row) {
    const Tensor t = Tensor::from({1, static_cast<int>(row.size())}, row);
    return softmax_rows(t).to_vector();
}

std::vector<std::vector<float>> py_apply_rope(const std::vector<std::vector<float>>& states,
                                              const std::vector<int>& positions) {
    if (states.empty()) throw std::invalid_argument("apply_rope: empty input");
    const int t = static_cast<int>(states.size());
    const int dh = static_cast<int>(states[0].size());
    std::vector<float> flat;
    for (const auto& row : states) {
        if (static_cast<int>(row.size()) != dh) throw std::invalid_argument("ragged input");
        flat.insert(flat.end(), row.begin(), row.end());
    }
    const Tensor out = apply_rope(Tensor::from({t, 1, dh}, flat), positions);
    std::vector<std::vector<float>> result(static_cast<size_t>(t));
    for (int i = 0; i < t; ++i) {
        const float* p = out.data() + static_cast<size_t>(i) * dh;
        result[static_cast<size_t>(i)].assign(p, p + dh);
    }
    return result;
}

double py_nce_loss(const std::vector<float>& scores, const std::vector<int>& positives,
                   const std::vector<int>& negatives) {
    return nce_loss(Tensor::from({static_cast<int>(scores.size())}, scores), positives, negatives)
        .item();
}

double py_distill_loss(const std::vector<double>& p_target, const std::vector<double>& p_ret) {
    std::vector<float> pr(p_ret.begin(), p_ret.end());
    return distill_loss(p_target, Tensor::from({static_cast<int>(pr.size())}, pr)).item();
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "desk-scale unified retrieval-and-generation transformer";

    py::class_<Tokenizer>(m, "Tokenizer")
        .def_static("build", &Tokenizer::build, py::arg("texts"))
        .def("encode", &Tokenizer::encode)
        .def("decode", &Tokenizer::decode)
        .def_property_readonly("vocab_size", &Tokenizer::vocab_size)
        .def_readonly_static("EOS", &Tokenizer::kEosId);

    py::class_<ModelConfig>(m, "ModelConfig")
        .def(py::init<>())
        .def_readwrite("n_layers", &ModelConfig::n_layers)
        .def_readwrite("boundary_b", &ModelConfig::boundary_b)
        .def_readwrite("boundary_t", &ModelConfig::boundary_t)
        .def_readwrite("d_model", &ModelConfig::d_model)
        .def_readwrite("n_query_heads", &ModelConfig::n_query_heads)
        .def_readwrite("n_key_heads", &ModelConfig::n_key_heads)
        .def_readwrite("group_size", &ModelConfig::group_size)
        .def_readwrite("head_dim", &ModelConfig::head_dim)
        .def_readwrite("d_ff", &ModelConfig::d_ff)
        .def_readwrite("vocab_size", &ModelConfig::vocab_size)
        .def_readwrite("max_passage_len", &ModelConfig::max_passage_len)
        .def_readwrite("retrieval_fanin", &ModelConfig::retrieval_fanin)
        .def("validate", &ModelConfig::validate);

    m.def("tiny_preset", &tiny_preset, py::arg("vocab_size"));
    m.def("paper_small_preset", &paper_small_preset, py::arg("vocab_size"));
    m.def("paper_large_preset", &paper_large_preset, py::arg("vocab_size"));
    m.def("shift_positions", &shift_positions, py::arg("k"), py::arg("l_max"));

    m.def("softmax_row", &py_softmax_row, py::arg("row"));
    m.def("apply_rope", &py_apply_rope, py::arg("states"), py::arg("positions"));
    m.def("nce_loss", &py_nce_loss, py::arg("scores"), py::arg("positives"), py::arg("negatives"));
    m.def("target_distribution", &target_distribution, py::arg("logliks"), py::arg("tau_t"));
    m.def("distill_loss", &py_distill_loss, py::arg("p_target"), py::arg("p_retrieval"));
    m.def("pq_compression_ratio", &pq_compression_ratio, py::arg("sub_dim"), py::arg("bits"));
    m.def("heavy_hitter_select", &heavy_hitter_select, py::arg("masses"), py::arg("keep_ratio"));
    m.def("normalize_answer", &normalize_answer, py::arg("text"));

    py::class_<FlatIndex>(m, "FlatIndex")
        .def(py::init<>())
        .def("add", &FlatIndex::add)
        .def_property_readonly("size", &FlatIndex::size)
        .def("search", [](const FlatIndex& idx, const std::vector<float>& q, int k) {
            return flat_search(idx, q, k);
        });

    py::class_<PQIndex>(m, "PQIndex")
        .def_property_readonly("size", &PQIndex::size)
        .def("search", [](const PQIndex& idx, const std::vector<float>& q, int k) {
            return pq_search(idx, q, k);
        });
    m.def("build_pq_index", &build_pq_index, py::arg("flat"), py::arg("m"), py::arg("bits"),
          py::arg("iterations"), py::arg("seed"), py::arg("with_rotation") = false);

    py::class_<CorpusRecord>(m, "CorpusRecord")
        .def_readonly("id", &CorpusRecord::id)
        .def_readonly("text", &CorpusRecord::text);
    py::class_<ExampleRecord>(m, "ExampleRecord")
        .def_readonly("query", &ExampleRecord::query)
        .def_readonly("answer", &ExampleRecord::answer)
        .def_readonly("task", &ExampleRecord::task);

    py::class_<SynthConfig>(m, "SynthConfig")
        .def(py::init<>())
        .def_readwrite("seed", &SynthConfig::seed)
        .def_readwrite("n_passages", &SynthConfig::n_passages)
        .def_readwrite("n_train", &SynthConfig::n_train)
        .def_readwrite("n_eval", &SynthConfig::n_eval)
        .def_readwrite("shifted_train_fraction", &SynthConfig::shifted_train_fraction);
    py::class_<SynthData>(m, "SynthData")
        .def_readonly("corpus", &SynthData::corpus)
        .def_readonly("train", &SynthData::train)
        .def_readonly("eval", &SynthData::eval)
        .def_readonly("tokenizer", &SynthData::tokenizer);
    m.def("synth_data", &synth_data, py::arg("config"));

    py::class_<QueryEmbedding>(m, "QueryEmbedding")
        .def_property_readonly("vector", &QueryEmbedding::vec);

    py::class_<TransformerModel>(m, "TransformerModel")
        .def(py::init<ModelConfig, uint64_t>(), py::arg("config"), py::arg("seed"))
        .def("query_embedding",
             [](const TransformerModel& model, const std::vector<int>& tokens, int k) {
                 NoGradScope ng;
                 return model.forward_prompt(tokens, k).query.vec();
             },
             py::arg("tokens"), py::arg("k") = 0)
        .def("passage_embeddings",
             [](const TransformerModel& model, const std::vector<TokenSeq>& passages,
                const std::vector<std::string>& ids) {
                 NoGradScope ng;
                 std::vector<std::pair<std::string, std::vector<float>>> out;
                 for (const PassageEmbedding& e : model.embed_passages(passages, ids))
                     out.emplace_back(e.passage_id, e.vec());
                 return out;
             })
        .def_property_readonly("config", &TransformerModel::config);

    py::class_<EvalReport>(m, "EvalReport")
        .def_readonly("exact_match", &EvalReport::exact_match)
        .def_readonly("recall_at_k", &EvalReport::recall_at_k)
        .def_readonly("k", &EvalReport::k)
        .def_readonly("n", &EvalReport::n);

    m.def("save_checkpoint", &save_checkpoint);
    m.def("load_checkpoint", [](const std::string& path) {
        LoadedCheckpoint c = load_checkpoint(path);
        return std::make_pair(std::move(c.model), std::move(c.tokenizer));
    });

    // Small end-to-end helper: trains on a synthetic task and reports both
    // eval-split metrics. Used by the python smoke tests.
    m.def(
        "train_and_eval",
        [](const SynthConfig& synth_cfg, int epochs, int warmup_epochs, uint64_t seed) {
            SynthData data = synth_data(synth_cfg);
            TransformerModel model(tiny_preset(data.tokenizer.vocab_size()),
                                   derive_seed(seed, 0x1111, 0));
            TrainSchedule schedule;
            schedule.total_epochs = epochs;
            schedule.warmup_epochs = warmup_epochs;
            schedule.seed = seed;
            schedule.dev_subset = 0;
            TokenOverlapRetriever reference(data.corpus);
            Trainer trainer(model, data.tokenizer, data.corpus, data.train, {}, schedule, reference);
            trainer.train();
            AnyIndex index;
            index.kind = IndexKind::Flat;
            index.flat = build_passage_index(model, data.tokenizer, data.corpus);
            LocalIndexClient client(&index);
            EncodingPassageSource source(model, data.tokenizer, data.corpus, schedule.strategy);
            return evaluate(model, data.tokenizer, data.corpus, data.eval,
                            model.config().retrieval_fanin, client, source);
        },
        py::arg("synth_config"), py::arg("epochs") = 4, py::arg("warmup_epochs") = 2,
        py::arg("seed") = 1);
}
