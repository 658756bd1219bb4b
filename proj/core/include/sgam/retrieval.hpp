#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "sgam/schema_graph.hpp"

namespace sgam::retrieval {

using Embedder = std::function<std::vector<double>(const std::string&)>;

struct KeywordSet {
    schema::AttributeNode attribute;
    std::vector<std::string> unique_keywords;
    std::vector<std::string> frequent_keywords;
    std::string source_description;

    std::vector<std::string> all_keywords() const;
};

struct IndexEntry {
    KeywordSet keywords;
    std::vector<double> embedding;  // unit norm
};

struct KeywordIndex {
    std::vector<IndexEntry> entries;
    size_t dimension = 0;
};

struct ScoredAttribute {
    schema::AttributeNode attribute;
    double raw_similarity = 0.0;
    double normalized_score = 0.0;
};

enum class KeywordJoin {
    // emb(K_i) of the whole keyword set joined with ", " (default).
    Joined,
    // max over per-keyword similarities, for experimentation.
    PerKeywordMax,
};

struct RetrievalConfig {
    double tau = 0.5;
    double frequency_min = 0.05;
    int doc_freq_max = 1;
    KeywordJoin keyword_join = KeywordJoin::Joined;
};

// Values sampled per column, keyed by (table, column).
using ColumnSamples = std::map<std::pair<std::string, std::string>, std::vector<std::string>>;

// dot(a, b) / (|a| |b|). Throws DimensionMismatch / ZeroVector.
double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b);

// Squared range normalization: (s_i^2 - min s^2) / (max s^2 - min s^2).
// Degenerate inputs (max == min) map everything to 1.0. Throws EmptyInput.
std::vector<double> normalize_scores(const std::vector<double>& raw);

// One entry per declared column. Unique keywords come from the declared sets
// plus tokenized column name and description; frequent keywords from the
// declared sets plus sampled-value tokens that clear the frequency rule
// (relative in-column frequency >= frequency_min, present in at most
// doc_freq_max other columns). Throws EmptyKeywordSet / EmbeddingError.
KeywordIndex build_keyword_index(const schema::SchemaSpec& spec, const ColumnSamples& samples,
                                 const Embedder& embedder, const RetrievalConfig& config = {});

// Scores a query segment against every entry: raw cosine, then squared range
// normalization over the whole index. Sorted descending by normalized score,
// ties by (table, column). Throws EmptyIndex / EmbeddingError.
std::vector<ScoredAttribute> score_attributes(const std::string& segment, const KeywordIndex& index,
                                              const Embedder& embedder,
                                              const RetrievalConfig& config = {});

// Everything scoring at or above tau; falls back to the single top-scored
// attribute when nothing clears the threshold. Throws EmptyInput.
std::set<schema::AttributeNode> select_candidates(const std::vector<ScoredAttribute>& scored,
                                                  const RetrievalConfig& config);

// Cache round-trip (JSON array of {table, column, unique_keywords,
// frequent_keywords, embedding}). Reloading bypasses the embedder.
void save_keyword_index(const KeywordIndex& index, const std::filesystem::path& path);
KeywordIndex load_keyword_index(const std::filesystem::path& path, const schema::SchemaSpec& spec);

}  // namespace sgam::retrieval
