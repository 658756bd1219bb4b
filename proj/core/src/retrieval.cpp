#include "sgam/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "sgam/text_util.hpp"

namespace sgam::retrieval {

namespace {

// Lowercase-normalizes and dedups keeping first occurrence.
std::vector<std::string> normalize_keywords(const std::vector<std::string>& raw) {
    std::vector<std::string> out;
    for (const auto& keyword : raw) {
        std::string lowered = text::to_lower(text::trim(keyword));
        if (lowered.empty()) continue;
        if (std::find(out.begin(), out.end(), lowered) == out.end()) out.push_back(lowered);
    }
    return out;
}

std::vector<double> unit_normalize(std::vector<double> v) {
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm == 0.0) throw ZeroVector("embedding has zero norm");
    for (double& x : v) x /= norm;
    return v;
}

std::vector<double> embed_keywords(const KeywordSet& set, const Embedder& embedder) {
    try {
        return unit_normalize(embedder(text::join(set.all_keywords(), ", ")));
    } catch (const Error&) {
        throw;
    } catch (const std::exception& e) {
        throw EmbeddingError("embedding failed for " + schema::format_node(set.attribute) + ": " + e.what());
    }
}

}  // namespace

std::vector<std::string> KeywordSet::all_keywords() const {
    std::vector<std::string> out = unique_keywords;
    for (const auto& keyword : frequent_keywords) {
        if (std::find(out.begin(), out.end(), keyword) == out.end()) out.push_back(keyword);
    }
    return out;
}

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) {
        throw DimensionMismatch("cosine of vectors with dimensions " + std::to_string(a.size()) + " and " +
                                std::to_string(b.size()));
    }
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) throw ZeroVector("cosine of a zero vector is undefined");
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

std::vector<double> normalize_scores(const std::vector<double>& raw) {
    if (raw.empty()) throw EmptyInput("normalize_scores requires at least one similarity");
    std::vector<double> squared;
    squared.reserve(raw.size());
    for (double s : raw) squared.push_back(s * s);
    const double lo = *std::min_element(squared.begin(), squared.end());
    const double hi = *std::max_element(squared.begin(), squared.end());
    std::vector<double> out;
    out.reserve(raw.size());
    if (hi == lo) {
        out.assign(raw.size(), 1.0);
        return out;
    }
    for (double s : squared) out.push_back((s - lo) / (hi - lo));
    return out;
}

KeywordIndex build_keyword_index(const schema::SchemaSpec& spec, const ColumnSamples& samples,
                                 const Embedder& embedder, const RetrievalConfig& config) {
    // Token -> set of columns whose samples contain it, for the document
    // frequency side of the rule.
    std::map<std::string, std::set<std::pair<std::string, std::string>>> token_columns;
    for (const auto& [column, values] : samples) {
        for (const auto& value : values) {
            for (const auto& token : text::tokenize(value)) token_columns[token].insert(column);
        }
    }

    KeywordIndex index;
    for (const auto& table : spec.tables) {
        for (const auto& col : table.columns) {
            KeywordSet set;
            set.attribute = {col.name, table.name, col.primary_key};
            set.source_description = col.description;

            std::vector<std::string> unique = col.unique_keywords;
            for (const auto& token : text::tokenize(col.name)) unique.push_back(token);
            for (const auto& token : text::tokenize(col.description)) unique.push_back(token);
            set.unique_keywords = normalize_keywords(unique);

            std::vector<std::string> frequent = col.frequent_keywords;
            auto it = samples.find({table.name, col.name});
            if (it != samples.end() && !it->second.empty()) {
                const auto& values = it->second;
                std::map<std::string, size_t> value_count;  // values containing the token
                for (const auto& value : values) {
                    std::set<std::string> tokens;
                    for (const auto& token : text::tokenize(value)) tokens.insert(token);
                    for (const auto& token : tokens) ++value_count[token];
                }
                for (const auto& [token, count] : value_count) {
                    const double rel = static_cast<double>(count) / static_cast<double>(values.size());
                    if (rel < config.frequency_min) continue;
                    const auto& holders = token_columns[token];
                    int others = static_cast<int>(holders.size()) - (holders.count({table.name, col.name}) ? 1 : 0);
                    if (others > config.doc_freq_max) continue;
                    frequent.push_back(token);
                }
            }
            set.frequent_keywords = normalize_keywords(frequent);

            if (set.unique_keywords.empty() && set.frequent_keywords.empty()) {
                throw EmptyKeywordSet("column " + schema::format_node(set.attribute) + " yields no keywords");
            }

            IndexEntry entry;
            entry.keywords = std::move(set);
            entry.embedding = embed_keywords(entry.keywords, embedder);
            if (index.dimension == 0) {
                index.dimension = entry.embedding.size();
            } else if (entry.embedding.size() != index.dimension) {
                throw DimensionMismatch("embedder returned inconsistent dimensions");
            }
            index.entries.push_back(std::move(entry));
        }
    }
    return index;
}

std::vector<ScoredAttribute> score_attributes(const std::string& segment, const KeywordIndex& index,
                                              const Embedder& embedder, const RetrievalConfig& config) {
    if (index.entries.empty()) throw EmptyIndex("keyword index is empty");
    std::vector<double> query;
    try {
        query = unit_normalize(embedder(segment));
    } catch (const Error&) {
        throw;
    } catch (const std::exception& e) {
        throw EmbeddingError(std::string("embedding the query segment failed: ") + e.what());
    }

    std::vector<double> raw;
    raw.reserve(index.entries.size());
    for (const auto& entry : index.entries) {
        if (config.keyword_join == KeywordJoin::PerKeywordMax) {
            double best = -1.0;
            for (const auto& keyword : entry.keywords.all_keywords()) {
                best = std::max(best, cosine_similarity(query, unit_normalize(embedder(keyword))));
            }
            raw.push_back(best);
        } else {
            raw.push_back(cosine_similarity(query, entry.embedding));
        }
    }

    const std::vector<double> normalized = normalize_scores(raw);
    std::vector<ScoredAttribute> scored;
    scored.reserve(raw.size());
    for (size_t i = 0; i < raw.size(); ++i) {
        scored.push_back({index.entries[i].keywords.attribute, raw[i], normalized[i]});
    }
    std::stable_sort(scored.begin(), scored.end(), [](const ScoredAttribute& a, const ScoredAttribute& b) {
        if (a.normalized_score != b.normalized_score) return a.normalized_score > b.normalized_score;
        if (a.attribute.table != b.attribute.table) return a.attribute.table < b.attribute.table;
        return a.attribute.column < b.attribute.column;
    });
    return scored;
}

std::set<schema::AttributeNode> select_candidates(const std::vector<ScoredAttribute>& scored,
                                                  const RetrievalConfig& config) {
    if (scored.empty()) throw EmptyInput("select_candidates requires a non-empty score list");
    std::set<schema::AttributeNode> out;
    for (const auto& s : scored) {
        if (s.normalized_score >= config.tau) out.insert(s.attribute);
    }
    if (out.empty()) out.insert(scored.front().attribute);
    return out;
}

void save_keyword_index(const KeywordIndex& index, const std::filesystem::path& path) {
    nlohmann::json doc = nlohmann::json::array();
    for (const auto& entry : index.entries) {
        doc.push_back({{"table", entry.keywords.attribute.table},
                       {"column", entry.keywords.attribute.column},
                       {"unique_keywords", entry.keywords.unique_keywords},
                       {"frequent_keywords", entry.keywords.frequent_keywords},
                       {"embedding", entry.embedding}});
    }
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write keyword cache " + path.string());
    out << doc.dump(2) << "\n";
}

KeywordIndex load_keyword_index(const std::filesystem::path& path, const schema::SchemaSpec& spec) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open keyword cache " + path.string());
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw SyntaxError("malformed keyword cache " + path.string() + ": " + e.what());
    }
    if (!doc.is_array()) throw ValidationError("keyword cache must be a JSON array");

    KeywordIndex index;
    for (const auto& item : doc) {
        IndexEntry entry;
        const std::string table = item.at("table").get<std::string>();
        const std::string column = item.at("column").get<std::string>();
        const schema::ColumnDecl* decl = spec.find_column(table, column);
        if (!decl) {
            throw ValidationError("keyword cache entry " + table + "." + column +
                                  " does not match the schema spec");
        }
        entry.keywords.attribute = {column, table, decl->primary_key};
        entry.keywords.source_description = decl->description;
        entry.keywords.unique_keywords = item.at("unique_keywords").get<std::vector<std::string>>();
        entry.keywords.frequent_keywords = item.at("frequent_keywords").get<std::vector<std::string>>();
        entry.embedding = item.at("embedding").get<std::vector<double>>();
        if (index.dimension == 0) {
            index.dimension = entry.embedding.size();
        } else if (entry.embedding.size() != index.dimension) {
            throw DimensionMismatch("keyword cache mixes embedding dimensions");
        }
        index.entries.push_back(std::move(entry));
    }
    return index;
}

}  // namespace sgam::retrieval
