// Copyright (c) 2026 the unirag authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

namespace unirag {

struct CorpusRecord {
    std::string id;
    std::string text;
};

struct ExampleRecord {
    std::string query;
    std::string answer;
    std::string task;  // optional label for per-task breakdowns
};

// JSON-lines IO: corpus records are {"id","text"}, examples {"query","answer"}
// with an optional "task" field.
std::vector<CorpusRecord> load_corpus_jsonl(const std::string& path);
void save_corpus_jsonl(const std::string& path, const std::vector<CorpusRecord>& corpus);
std::vector<ExampleRecord> load_examples_jsonl(const std::string& path);
void save_examples_jsonl(const std::string& path, const std::vector<ExampleRecord>& examples);

}  // namespace unirag
