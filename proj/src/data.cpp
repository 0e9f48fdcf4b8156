// Copyright (c) 2026 the unirag authors
// SPDX-License-Identifier: Apache-2.0
#include "unirag/data.hpp"

#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace unirag {

namespace {

std::vector<nlohmann::json> read_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open: " + path);
    std::vector<nlohmann::json> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        out.push_back(nlohmann::json::parse(line));
    }
    return out;
}

}  // namespace

std::vector<CorpusRecord> load_corpus_jsonl(const std::string& path) {
    std::vector<CorpusRecord> out;
    for (const auto& j : read_jsonl(path))
        out.push_back(CorpusRecord{j.at("id").get<std::string>(), j.at("text").get<std::string>()});
    return out;
}

void save_corpus_jsonl(const std::string& path, const std::vector<CorpusRecord>& corpus) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    for (const CorpusRecord& r : corpus)
        out << nlohmann::json{{"id", r.id}, {"text", r.text}}.dump() << "\n";
}

std::vector<ExampleRecord> load_examples_jsonl(const std::string& path) {
    std::vector<ExampleRecord> out;
    for (const auto& j : read_jsonl(path)) {
        ExampleRecord r;
        r.query = j.at("query").get<std::string>();
        r.answer = j.at("answer").get<std::string>();
        if (j.contains("task")) r.task = j.at("task").get<std::string>();
        out.push_back(std::move(r));
    }
    return out;
}

void save_examples_jsonl(const std::string& path, const std::vector<ExampleRecord>& examples) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    for (const ExampleRecord& r : examples) {
        nlohmann::json j{{"query", r.query}, {"answer", r.answer}};
        if (!r.task.empty()) j["task"] = r.task;
        out << j.dump() << "\n";
    }
}

}  // namespace unirag
