#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "sgam/model_gateway.hpp"
#include "sgam/path_engine.hpp"
#include "sgam/retrieval.hpp"
#include "sgam/schema_graph.hpp"
#include "sgam/table_store.hpp"

namespace sgam::pipeline {

struct DecomposedQuery {
    std::vector<std::string> constraints;
    std::string main_question;
    std::string raw_question;
};

struct QAItem {
    std::string id;
    std::string question;
    std::string gold_answer;
    int hops = 1;
    std::optional<std::string> case_id;
};

struct ItemVerdict {
    std::string id;
    std::string question;
    std::string gold_answer;
    int hops = 1;
    bool correct = false;
    std::string answer;
    std::vector<std::string> facts;
    std::vector<std::string> chains;
    std::vector<std::string> constraints;
    std::string main_question;
    std::string error;  // non-empty when the item failed with an error tag
};

struct EvalReport {
    struct Bucket {
        int correct = 0;
        int total = 0;
        double accuracy() const { return total == 0 ? 0.0 : static_cast<double>(correct) / total; }
    };

    std::map<std::string, Bucket> buckets;  // "1-hop", "2-hop", ">=3-hop"
    std::vector<ItemVerdict> items;

    std::string to_json() const;
};

enum class JudgeMode { NormalizedMatch, Model };

struct ProviderSpec {
    std::string type;  // "mock" | "scripted" | "http"
    // mock embeddings
    size_t dimension = 64;
    std::uint64_t seed = 1234;
    // scripted chat
    std::filesystem::path script;
    // http providers
    gateway::HttpProviderConfig http;
};

struct PipelineConfig {
    std::filesystem::path schema_path;
    std::filesystem::path data_dir;
    std::filesystem::path keyword_cache;  // optional; reused when present
    std::filesystem::path prompt_templates;
    std::filesystem::path fact_templates;  // optional
    retrieval::RetrievalConfig retrieval;
    ProviderSpec embedding_provider;
    ProviderSpec chat_provider;
    std::string mode = "answer";  // "answer" | "sql"
    std::string case_key_column = "CASEID";
    bool decompose = true;
    paths::SearchLimits search;
    int max_in_flight = 4;

    // Parses the JSON config; relative paths resolve against the config
    // file's directory, and referenced paths must exist.
    static PipelineConfig load(const std::filesystem::path& file);
};

struct AnswerRecord {
    std::string question;
    DecomposedQuery decomposition;
    std::vector<std::string> filters;     // human-readable filter descriptions
    std::vector<std::string> candidates;  // formatted attribute nodes
    std::vector<std::string> raw_chains;  // enumerated dependency chains
    std::vector<std::string> chains;      // merged plan rendering
    std::string plan_json;
    std::vector<store::Fact> facts;
    std::string text;  // final answer

    std::string to_json() const;
};

struct SqlRecord {
    std::string question;
    std::vector<std::string> candidates;
    std::vector<std::string> chains;  // "Path N: ..." lines bound into the prompt
    std::string sql;

    std::string to_json() const;
};

// Parses a decomposition response ("Condition N: ..." lines followed by
// "Main Question: ..."). Throws MalformedDecomposition with the response
// attached when the format does not hold.
DecomposedQuery parse_decomposition(const std::string& question, const std::string& response);

// Lowercase, punctuation stripped, whitespace collapsed; the normalized
// exact/substring judge compares these forms.
std::string normalize_answer(const std::string& text);

std::vector<QAItem> load_dataset_jsonl(const std::filesystem::path& path);

// Engine state shared by every question: schema graph, keyword index, corpus
// and templates, plus the model gateway. Read-only after construction; safe
// for concurrent question answering.
class Engine {
public:
    static Engine create(const PipelineConfig& config);
    // Provider injection for tests and recorders.
    static Engine create(const PipelineConfig& config, std::unique_ptr<gateway::EmbeddingProvider> embedding,
                         std::unique_ptr<gateway::ChatProvider> chat);

    const schema::SchemaSpec& spec() const { return spec_; }
    const schema::SchemaGraph& graph() const { return graph_; }
    const retrieval::KeywordIndex& index() const { return index_; }
    const store::Corpus& corpus() const { return corpus_; }
    const PipelineConfig& config() const { return config_; }
    gateway::Gateway& model_gateway() { return *gateway_; }

    DecomposedQuery decompose_query(const std::string& question);
    store::ConstraintFilter map_constraint_to_filter(const std::string& constraint);
    std::vector<retrieval::ScoredAttribute> retrieve(const std::string& segment);

    AnswerRecord answer_question(const std::string& question);
    SqlRecord generate_sql(const std::string& question);
    EvalReport evaluate(const std::vector<QAItem>& items, JudgeMode judge = JudgeMode::NormalizedMatch);

    void save_index(const std::filesystem::path& path) const { retrieval::save_keyword_index(index_, path); }

private:
    Engine() = default;

    retrieval::Embedder embedder();
    std::string schema_rows() const;
    ItemVerdict evaluate_one(const QAItem& item, JudgeMode judge);

    PipelineConfig config_;
    schema::SchemaSpec spec_;
    schema::SchemaGraph graph_;
    retrieval::KeywordIndex index_;
    store::Corpus corpus_;
    std::vector<store::FactTemplate> fact_templates_;
    std::unique_ptr<gateway::Gateway> gateway_;
};

}  // namespace sgam::pipeline
