#include "sgam/qa_pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <regex>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "sgam/text_util.hpp"

namespace sgam::pipeline {

namespace {

using nlohmann::json;

std::string bucket_name(int hops) {
    if (hops <= 1) return "1-hop";
    if (hops == 2) return "2-hop";
    return ">=3-hop";
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& value) {
    std::filesystem::path p(value);
    return p.is_absolute() ? p : base / p;
}

void require_exists(const std::filesystem::path& path, const std::string& what) {
    if (!std::filesystem::exists(path)) {
        throw ConfigError(what + " does not exist: " + path.string());
    }
}

json parse_json_file(const std::filesystem::path& path, const std::string& what) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + what + " " + path.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw SyntaxError("malformed " + what + " " + path.string() + ": " + e.what());
    }
}

ProviderSpec parse_provider(const json& value, const std::filesystem::path& base, const std::string& where) {
    if (!value.is_object() || !value.contains("type")) {
        throw ConfigError(where + " must be an object with a \"type\"");
    }
    ProviderSpec spec;
    spec.type = value["type"].get<std::string>();
    if (spec.type == "mock") {
        spec.dimension = value.value("dimension", 64);
        spec.seed = value.value("seed", 1234ULL);
    } else if (spec.type == "scripted") {
        if (!value.contains("script")) throw ConfigError(where + " of type scripted needs a \"script\" path");
        spec.script = resolve(base, value["script"].get<std::string>());
        require_exists(spec.script, where + " script");
    } else if (spec.type == "http") {
        spec.http.base_url = value.value("base_url", "");
        spec.http.model = value.value("model", "");
        spec.http.api_key_env = value.value("api_key_env", "");
        spec.http.timeout_seconds = value.value("timeout_seconds", 60);
        spec.http.dimension = value.value("dimension", 1536);
        if (spec.http.base_url.empty()) throw ConfigError(where + " of type http needs a \"base_url\"");
    } else {
        throw ConfigError(where + " has unknown type \"" + spec.type + "\"");
    }
    return spec;
}

// Longest double- or single-quoted span.
std::string quoted_span(const std::string& text) {
    std::string best;
    for (char quote : {'"', '\''}) {
        size_t pos = 0;
        while (true) {
            size_t open = text.find(quote, pos);
            if (open == std::string::npos) break;
            size_t close = text.find(quote, open + 1);
            if (close == std::string::npos) break;
            std::string span = text.substr(open + 1, close - open - 1);
            if (span.size() > best.size()) best = span;
            pos = close + 1;
        }
    }
    return text::trim(best);
}

std::string strip_punct(const std::string& word) {
    size_t b = 0, e = word.size();
    auto is_edge = [](char c) {
        return c == '.' || c == ',' || c == '?' || c == '!' || c == ';' || c == ':' || c == '"' || c == '\'';
    };
    while (b < e && is_edge(word[b])) ++b;
    while (e > b && is_edge(word[e - 1])) --e;
    return word.substr(b, e - b);
}

// Longest run of capitalized or numeric words, excluding a run made of the
// sentence-initial word alone.
std::string capitalized_span(const std::string& text) {
    std::istringstream stream(text);
    std::vector<std::string> words;
    std::string w;
    while (stream >> w) words.push_back(strip_punct(w));

    std::vector<std::string> best;
    std::vector<std::string> run;
    size_t run_start = 0;
    auto qualifies = [](const std::string& word) {
        if (word.empty()) return false;
        if (std::isupper(static_cast<unsigned char>(word[0]))) return true;
        return std::all_of(word.begin(), word.end(),
                           [](char c) { return std::isdigit(static_cast<unsigned char>(c)); });
    };
    auto flush = [&]() {
        if (run.empty()) return;
        const bool sentence_initial_only = run.size() == 1 && run_start == 0;
        if (!sentence_initial_only) {
            const std::string joined = text::join(run, " ");
            if (joined.size() > text::join(best, " ").size()) best = run;
        }
        run.clear();
    };
    for (size_t i = 0; i < words.size(); ++i) {
        if (qualifies(words[i])) {
            if (run.empty()) run_start = i;
            run.push_back(words[i]);
        } else {
            flush();
        }
    }
    flush();
    return text::join(best, " ");
}

std::string after_is_span(const std::string& text) {
    const std::string needle = " is ";
    size_t pos = text.rfind(needle);
    if (pos == std::string::npos) return "";
    std::string tail = text.substr(pos + needle.size());
    tail = text::trim(tail);
    while (!tail.empty() &&
           (tail.back() == '.' || tail.back() == '?' || tail.back() == '!' || tail.back() == ',')) {
        tail.pop_back();
    }
    return text::trim(tail);
}

}  // namespace

DecomposedQuery parse_decomposition(const std::string& question, const std::string& response) {
    static const std::regex condition_re(R"(^Condition\s+\d+\s*:\s*)", std::regex::icase);
    static const std::regex main_re(R"(^Main\s+Question\s*:\s*)", std::regex::icase);

    DecomposedQuery out;
    out.raw_question = question;

    std::istringstream stream(response);
    std::string line;
    while (std::getline(stream, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const std::string trimmed = text::trim(line);
        if (trimmed.empty() || trimmed == "Answer:") continue;
        std::smatch match;
        if (std::regex_search(trimmed, match, condition_re)) {
            out.constraints.push_back(text::trim(match.suffix().str()));
        } else if (std::regex_search(trimmed, match, main_re)) {
            out.main_question = text::trim(match.suffix().str());
        } else {
            throw MalformedDecomposition("unrecognized line in decomposition response: \"" + trimmed +
                                         "\"\nfull response:\n" + response);
        }
    }
    if (out.main_question.empty()) {
        throw MalformedDecomposition("decomposition response lacks a \"Main Question:\" line:\n" + response);
    }
    return out;
}

std::string normalize_answer(const std::string& text) {
    std::string out;
    bool pending_space = false;
    for (char c : text) {
        if (std::isalnum(static_cast<unsigned char>(c))) {
            if (pending_space && !out.empty()) out.push_back(' ');
            out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
            pending_space = false;
        } else {
            pending_space = true;
        }
    }
    return out;
}

std::vector<QAItem> load_dataset_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open dataset " + path.string());
    std::vector<QAItem> items;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (text::trim(line).empty()) continue;
        json doc;
        try {
            doc = json::parse(line);
        } catch (const json::parse_error& e) {
            throw SyntaxError("dataset " + path.string() + " line " + std::to_string(line_no) + ": " + e.what(),
                              line_no, 1);
        }
        QAItem item;
        item.id = doc.value("id", "item-" + std::to_string(line_no));
        item.question = doc.at("question").get<std::string>();
        item.gold_answer = doc.at("gold_answer").get<std::string>();
        item.hops = doc.value("hops", 1);
        if (item.hops < 1) {
            throw ValidationError("dataset item " + item.id + " declares hops < 1");
        }
        if (doc.contains("case_id")) item.case_id = doc["case_id"].get<std::string>();
        items.push_back(std::move(item));
    }
    return items;
}

std::string EvalReport::to_json() const {
    json doc;
    doc["buckets"] = json::object();
    for (const auto& [name, bucket] : buckets) {
        doc["buckets"][name] = {
            {"correct", bucket.correct}, {"total", bucket.total}, {"accuracy", bucket.accuracy()}};
    }
    doc["items"] = json::array();
    for (const auto& item : items) {
        json entry = {{"id", item.id},
                      {"question", item.question},
                      {"gold_answer", item.gold_answer},
                      {"hops", item.hops},
                      {"correct", item.correct},
                      {"answer", item.answer},
                      {"facts", item.facts},
                      {"chains", item.chains},
                      {"constraints", item.constraints},
                      {"main_question", item.main_question}};
        if (!item.error.empty()) entry["error"] = item.error;
        doc["items"].push_back(std::move(entry));
    }
    return doc.dump(2);
}

std::string AnswerRecord::to_json() const {
    json doc;
    doc["question"] = question;
    doc["decomposition"] = {{"constraints", decomposition.constraints},
                            {"main_question", decomposition.main_question}};
    doc["filters"] = filters;
    doc["candidates"] = candidates;
    doc["raw_chains"] = raw_chains;
    doc["chains"] = chains;
    doc["plan"] = json::parse(plan_json);
    doc["facts"] = json::array();
    for (const auto& fact : facts) {
        doc["facts"].push_back({{"text", fact.text},
                                {"table", fact.provenance.table},
                                {"key_columns", fact.provenance.key_columns},
                                {"key_values", fact.provenance.key_values},
                                {"columns", fact.provenance.columns}});
    }
    doc["answer"] = text;
    return doc.dump(2);
}

std::string SqlRecord::to_json() const {
    json doc;
    doc["question"] = question;
    doc["candidates"] = candidates;
    doc["chains"] = chains;
    doc["sql"] = sql;
    return doc.dump(2);
}

PipelineConfig PipelineConfig::load(const std::filesystem::path& file) {
    const json doc = parse_json_file(file, "pipeline config");
    if (!doc.is_object()) throw ConfigError("pipeline config must be a JSON object");
    const std::filesystem::path base = file.parent_path();

    PipelineConfig config;
    for (const auto& [key, value] : doc.items()) {
        if (key == "schema") {
            config.schema_path = resolve(base, value.get<std::string>());
        } else if (key == "data_dir") {
            config.data_dir = resolve(base, value.get<std::string>());
        } else if (key == "keyword_cache") {
            config.keyword_cache = resolve(base, value.get<std::string>());
        } else if (key == "prompt_templates") {
            config.prompt_templates = resolve(base, value.get<std::string>());
        } else if (key == "fact_templates") {
            config.fact_templates = resolve(base, value.get<std::string>());
        } else if (key == "mode") {
            config.mode = value.get<std::string>();
        } else if (key == "case_key_column") {
            config.case_key_column = value.get<std::string>();
        } else if (key == "decompose") {
            config.decompose = value.get<bool>();
        } else if (key == "retrieval") {
            config.retrieval.tau = value.value("tau", 0.5);
            config.retrieval.frequency_min = value.value("frequency_min", 0.05);
            config.retrieval.doc_freq_max = value.value("doc_freq_max", 1);
            const std::string join = value.value("keyword_join", "joined");
            if (join == "joined") {
                config.retrieval.keyword_join = retrieval::KeywordJoin::Joined;
            } else if (join == "per_keyword_max") {
                config.retrieval.keyword_join = retrieval::KeywordJoin::PerKeywordMax;
            } else {
                throw ConfigError("retrieval.keyword_join must be \"joined\" or \"per_keyword_max\"");
            }
        } else if (key == "search") {
            config.search.max_hops = value.value("max_hops", 8);
            config.search.max_paths = value.value("max_paths", 256);
        } else if (key == "gateway") {
            config.max_in_flight = value.value("max_in_flight", 4);
        } else if (key == "embedding_provider") {
            config.embedding_provider = parse_provider(value, base, "embedding_provider");
        } else if (key == "chat_provider") {
            config.chat_provider = parse_provider(value, base, "chat_provider");
        } else {
            throw ConfigError("unknown pipeline config field \"" + key + "\"");
        }
    }

    if (config.mode != "answer" && config.mode != "sql") {
        throw ConfigError("mode must be \"answer\" or \"sql\"");
    }
    if (config.schema_path.empty()) throw ConfigError("pipeline config needs a \"schema\" path");
    require_exists(config.schema_path, "schema spec");
    if (config.prompt_templates.empty()) throw ConfigError("pipeline config needs a \"prompt_templates\" path");
    require_exists(config.prompt_templates, "prompt template file");
    if (config.mode == "answer") {
        if (config.data_dir.empty()) throw ConfigError("answer mode needs a \"data_dir\"");
        require_exists(config.data_dir, "data directory");
    }
    if (!config.fact_templates.empty()) require_exists(config.fact_templates, "fact template file");
    if (config.embedding_provider.type.empty()) config.embedding_provider.type = "mock";
    if (config.chat_provider.type.empty()) throw ConfigError("pipeline config needs a chat_provider");
    if (config.retrieval.tau < 0.0 || config.retrieval.tau > 1.0) {
        throw ConfigError("retrieval.tau must lie in [0, 1]");
    }
    return config;
}

namespace {

std::unique_ptr<gateway::EmbeddingProvider> make_embedding_provider(const ProviderSpec& spec) {
    std::unique_ptr<gateway::EmbeddingProvider> inner;
    if (spec.type == "mock") {
        inner = std::make_unique<gateway::MockEmbeddingProvider>(spec.dimension, spec.seed);
    } else if (spec.type == "http") {
        inner = std::make_unique<gateway::HttpEmbeddingProvider>(spec.http);
    } else {
        throw ConfigError("embedding provider type \"" + spec.type + "\" is not supported");
    }
    return std::make_unique<gateway::CachingEmbeddingProvider>(std::move(inner));
}

std::unique_ptr<gateway::ChatProvider> make_chat_provider(const ProviderSpec& spec) {
    if (spec.type == "scripted") {
        return std::make_unique<gateway::ScriptedChatProvider>(
            gateway::ScriptedChatProvider::from_file(spec.script));
    }
    if (spec.type == "http") {
        return std::make_unique<gateway::HttpChatProvider>(spec.http);
    }
    throw ConfigError("chat provider type \"" + spec.type + "\" is not supported");
}

void check_fact_template(const store::FactTemplate& tmpl, const schema::SchemaSpec& spec) {
    const schema::TableDecl* table = spec.find_table(tmpl.table);
    if (!table) throw ValidationError("fact template references unknown table " + tmpl.table);
    for (size_t i = 0; i < tmpl.pattern.size();) {
        if (tmpl.pattern[i] != '{') {
            ++i;
            continue;
        }
        auto close = tmpl.pattern.find('}', i);
        if (close == std::string::npos) break;
        const std::string column = tmpl.pattern.substr(i + 1, close - i - 1);
        if (!spec.find_column(tmpl.table, column)) {
            throw ValidationError("fact template for " + tmpl.table + " references unknown column {" + column +
                                  "}");
        }
        i = close + 1;
    }
}

}  // namespace

Engine Engine::create(const PipelineConfig& config) {
    return create(config, make_embedding_provider(config.embedding_provider),
                  make_chat_provider(config.chat_provider));
}

Engine Engine::create(const PipelineConfig& config, std::unique_ptr<gateway::EmbeddingProvider> embedding,
                      std::unique_ptr<gateway::ChatProvider> chat) {
    Engine engine;
    engine.config_ = config;
    engine.spec_ = schema::load_schema_spec_file(config.schema_path);
    engine.graph_ = schema::build_graph(engine.spec_);

    if (config.mode == "answer") {
        engine.corpus_ = store::load_csv_tables(config.data_dir, engine.spec_);
    }

    gateway::TemplateRegistry registry = gateway::TemplateRegistry::from_file(config.prompt_templates);
    engine.gateway_ = std::make_unique<gateway::Gateway>(std::move(embedding), std::move(chat),
                                                         std::move(registry), config.max_in_flight);

    if (!config.keyword_cache.empty() && std::filesystem::exists(config.keyword_cache)) {
        engine.index_ = retrieval::load_keyword_index(config.keyword_cache, engine.spec_);
    } else {
        retrieval::ColumnSamples samples;
        for (const auto& [name, table] : engine.corpus_) {
            for (size_t c = 0; c < table.columns.size(); ++c) {
                auto& bucket = samples[{name, table.columns[c]}];
                for (const auto& row : table.rows) bucket.push_back(row[c]);
            }
        }
        engine.index_ =
            retrieval::build_keyword_index(engine.spec_, samples, engine.embedder(), config.retrieval);
    }

    // Fact templates: one entry per table seeded with the schema column
    // descriptions; the template file overrides pattern and phrasing.
    std::map<std::string, store::FactTemplate> merged;
    for (const auto& table : engine.spec_.tables) {
        store::FactTemplate tmpl;
        tmpl.table = table.name;
        for (const auto& col : table.columns) {
            if (!col.description.empty()) tmpl.descriptions[col.name] = col.description;
        }
        merged[table.name] = std::move(tmpl);
    }
    if (!config.fact_templates.empty()) {
        for (auto& tmpl : store::load_fact_templates(config.fact_templates)) {
            check_fact_template(tmpl, engine.spec_);
            auto& target = merged[tmpl.table];
            target.table = tmpl.table;
            if (!tmpl.pattern.empty()) target.pattern = tmpl.pattern;
            for (auto& [column, phrase] : tmpl.descriptions) target.descriptions[column] = phrase;
        }
    }
    for (auto& [name, tmpl] : merged) engine.fact_templates_.push_back(std::move(tmpl));

    return engine;
}

retrieval::Embedder Engine::embedder() {
    return [this](const std::string& text) { return gateway_->embed(text); };
}

DecomposedQuery Engine::decompose_query(const std::string& question) {
    if (text::trim(question).empty()) throw EmptyInput("question must be non-empty");
    if (!config_.decompose) {
        DecomposedQuery passthrough;
        passthrough.raw_question = question;
        passthrough.main_question = question;
        return passthrough;
    }
    const gateway::ChatResponse response = gateway_->complete("decompose", {{"question", question}});
    return parse_decomposition(question, response.text);
}

std::vector<retrieval::ScoredAttribute> Engine::retrieve(const std::string& segment) {
    return retrieval::score_attributes(segment, index_, embedder(), config_.retrieval);
}

namespace {

// The case-key home: among tables declaring the case key as primary key,
// the one with the fewest primary keys (the most global anchor), ties broken
// lexicographically.
std::optional<schema::AttributeNode> case_key_home(const schema::SchemaGraph& graph,
                                                   const std::string& case_key) {
    std::optional<schema::AttributeNode> best;
    size_t best_keys = 0;
    for (const auto& [table, hierarchy] : graph.key_hierarchies()) {
        auto node = graph.find(table, case_key);
        if (!node || !node->is_primary_key) continue;
        if (!best || hierarchy.size() < best_keys || (hierarchy.size() == best_keys && table < best->table)) {
            best = node;
            best_keys = hierarchy.size();
        }
    }
    return best;
}

}  // namespace

store::ConstraintFilter Engine::map_constraint_to_filter(const std::string& constraint) {
    const std::string trimmed = text::trim(constraint);
    if (trimmed.empty()) throw UnmappableConstraint("constraint text is empty");

    static const std::regex case_re(R"(\bcase\s*(?:id|number|no\.?)?\s*(?:is|was|=|:)?\s*#?(\d+))",
                                    std::regex::icase);
    std::smatch match;
    if (std::regex_search(trimmed, match, case_re)) {
        if (auto home = case_key_home(graph_, config_.case_key_column)) {
            return {*home, store::ConstraintFilter::Comparator::Equals, match[1].str()};
        }
    }

    const auto scored = retrieve(trimmed);
    const schema::AttributeNode attribute = scored.front().attribute;

    for (const auto& candidate : {quoted_span(trimmed), capitalized_span(trimmed), after_is_span(trimmed)}) {
        if (!candidate.empty()) {
            return {attribute, store::ConstraintFilter::Comparator::Contains, candidate};
        }
    }

    // Model fallback: ask the attribute aligner for (fragment, column, table).
    if (gateway_->templates().has("attribute_select")) {
        const gateway::ChatResponse response =
            gateway_->complete("attribute_select", {{"question", trimmed}, {"schema_rows", schema_rows()}});
        const std::string& body = response.text;
        auto open = body.find('[');
        auto close = body.rfind(']');
        if (open != std::string::npos && close != std::string::npos && close > open) {
            json fragments;
            try {
                fragments = json::parse(body.substr(open, close - open + 1));
            } catch (const json::parse_error&) {
                fragments = json::array();
            }
            for (const auto& fragment : fragments) {
                if (!fragment.is_object()) continue;
                const std::string column = fragment.value("column_name", "");
                const std::string sheet = fragment.value("sheet_name", "");
                const std::string value = text::trim(fragment.value("fragment", ""));
                auto node = graph_.find(sheet, column);
                if (node && !value.empty()) {
                    return {*node, store::ConstraintFilter::Comparator::Contains, value};
                }
            }
        }
    }
    throw UnmappableConstraint("cannot derive an executable filter from constraint \"" + trimmed + "\"");
}

std::string Engine::schema_rows() const {
    std::ostringstream out;
    out << "sheet_name | column_name | key_words";
    for (const auto& entry : index_.entries) {
        out << "\n"
            << entry.keywords.attribute.table << " | " << entry.keywords.attribute.column << " | "
            << text::join(entry.keywords.all_keywords(), ", ");
    }
    return out.str();
}

AnswerRecord Engine::answer_question(const std::string& question) {
    if (config_.mode != "answer") {
        throw ConfigError("answer_question requires mode \"answer\" (configured mode is \"" + config_.mode +
                          "\")");
    }
    AnswerRecord record;
    record.question = question;
    record.decomposition = decompose_query(question);

    // Candidate attributes come from every query segment: each constraint
    // contributes its mapped filter's attribute, the main question its
    // thresholded retrieval set.
    std::vector<store::ConstraintFilter> filters;
    std::set<schema::AttributeNode> candidates;
    for (const auto& constraint : record.decomposition.constraints) {
        store::ConstraintFilter filter = map_constraint_to_filter(constraint);
        candidates.insert(filter.attribute);
        filters.push_back(std::move(filter));
    }
    const auto scored = retrieve(record.decomposition.main_question);
    for (const auto& attr : retrieval::select_candidates(scored, config_.retrieval)) candidates.insert(attr);

    std::vector<paths::DependencyPath> raw_paths;
    for (const auto& candidate : candidates) {
        record.candidates.push_back(schema::format_node(candidate));
        for (auto& path : paths::find_dependency_paths_detailed(graph_, candidate, config_.search).paths) {
            record.raw_chains.push_back(paths::format_reasoning_chain(path));
            raw_paths.push_back(std::move(path));
        }
    }

    const paths::JoinPlan plan = paths::build_join_plan(raw_paths, graph_);
    record.chains = paths::plan_chain_lines(plan);
    record.plan_json = paths::serialize_join_plan(plan);

    // A filter on a shared primary key constrains every plan table declaring
    // that key, not only the home table the mapper picked.
    std::vector<store::ConstraintFilter> expanded = filters;
    for (const auto& filter : filters) {
        if (!filter.attribute.is_primary_key) continue;
        for (const auto& group : plan.groups) {
            auto node = graph_.find(group.table, filter.attribute.column);
            if (!node || !node->is_primary_key || *node == filter.attribute) continue;
            bool present = false;
            for (const auto& existing : expanded) {
                if (existing.attribute == *node && existing.value == filter.value &&
                    existing.comparator == filter.comparator) {
                    present = true;
                    break;
                }
            }
            if (!present) expanded.push_back({*node, filter.comparator, filter.value});
        }
    }
    for (const auto& filter : expanded) record.filters.push_back(filter.describe());

    const store::CorpusView view = store::apply_constraints(corpus_, expanded);
    const auto records = store::execute_join_plan(view, plan);
    record.facts = store::extract_facts(records, fact_templates_, plan);
    if (record.facts.empty()) {
        throw NoFacts("no facts extracted for \"" + question + "\"; join plan was:\n" +
                      paths::format_reasoning_chain(plan));
    }

    std::vector<std::string> fact_texts;
    for (const auto& fact : record.facts) fact_texts.push_back(fact.text);
    const gateway::ChatResponse response = gateway_->complete(
        "answer", {{"question", question}, {"facts", text::join(fact_texts, "\n")}});
    record.text = response.text;
    return record;
}

SqlRecord Engine::generate_sql(const std::string& question) {
    if (config_.mode != "sql") {
        throw ConfigError("generate_sql requires mode \"sql\" (configured mode is \"" + config_.mode + "\")");
    }
    SqlRecord record;
    record.question = question;

    const gateway::ChatResponse selection =
        gateway_->complete("attribute_select", {{"question", question}, {"schema_rows", schema_rows()}});
    std::vector<schema::AttributeNode> candidates;
    {
        const std::string& body = selection.text;
        auto open = body.find('[');
        auto close = body.rfind(']');
        if (open == std::string::npos || close == std::string::npos || close <= open) {
            throw EmptyPaths("attribute selection response contains no fragment list:\n" + body);
        }
        json fragments;
        try {
            fragments = json::parse(body.substr(open, close - open + 1));
        } catch (const json::parse_error& e) {
            throw EmptyPaths(std::string("attribute selection response is unparseable: ") + e.what());
        }
        for (const auto& fragment : fragments) {
            if (!fragment.is_object()) continue;
            auto node = graph_.find(fragment.value("sheet_name", ""), fragment.value("column_name", ""));
            if (!node) continue;
            if (std::find(candidates.begin(), candidates.end(), *node) == candidates.end()) {
                candidates.push_back(*node);
            }
        }
    }
    if (candidates.empty()) throw EmptyPaths("attribute selection produced no usable candidates");

    int n = 1;
    for (const auto& candidate : candidates) {
        record.candidates.push_back(schema::format_node(candidate));
        for (const auto& path : paths::find_dependency_paths_detailed(graph_, candidate, config_.search).paths) {
            record.chains.push_back("Path " + std::to_string(n++) + ": " + paths::format_reasoning_chain(path));
        }
    }
    if (record.chains.empty()) throw EmptyPaths("no dependency paths found for the selected attributes");

    const gateway::ChatResponse response = gateway_->complete(
        "sql_generate", {{"question", question}, {"paths", text::join(record.chains, "\n")}});
    record.sql = response.text;
    return record;
}

ItemVerdict Engine::evaluate_one(const QAItem& item, JudgeMode judge) {
    ItemVerdict verdict;
    verdict.id = item.id;
    verdict.question = item.question;
    verdict.gold_answer = item.gold_answer;
    verdict.hops = item.hops;
    try {
        AnswerRecord record = answer_question(item.question);
        verdict.answer = record.text;
        verdict.chains = record.chains;
        verdict.constraints = record.decomposition.constraints;
        verdict.main_question = record.decomposition.main_question;
        for (const auto& fact : record.facts) verdict.facts.push_back(fact.text);
        if (judge == JudgeMode::NormalizedMatch) {
            const std::string gold = normalize_answer(item.gold_answer);
            const std::string answer = normalize_answer(record.text);
            verdict.correct = !gold.empty() && (answer == gold || answer.find(gold) != std::string::npos);
        } else {
            const gateway::ChatResponse response = gateway_->complete(
                "judge",
                {{"question", item.question}, {"gold", item.gold_answer}, {"answer", record.text}});
            const std::string head = text::to_lower(text::trim(response.text));
            verdict.correct = head.rfind("yes", 0) == 0;
        }
    } catch (const Error& e) {
        verdict.correct = false;
        verdict.error = e.what();
    }
    return verdict;
}

EvalReport Engine::evaluate(const std::vector<QAItem>& items, JudgeMode judge) {
    if (items.empty()) throw EmptyInput("evaluate requires a non-empty dataset");

    std::vector<ItemVerdict> verdicts(items.size());
    std::atomic<size_t> cursor{0};
    const size_t workers =
        std::min<size_t>(std::max(1, config_.max_in_flight), items.size());
    auto work = [&] {
        while (true) {
            const size_t i = cursor.fetch_add(1);
            if (i >= items.size()) break;
            verdicts[i] = evaluate_one(items[i], judge);
        }
    };
    if (workers <= 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(workers);
        for (size_t i = 0; i < workers; ++i) pool.emplace_back(work);
        for (auto& thread : pool) thread.join();
    }

    EvalReport report;
    for (size_t i = 0; i < items.size(); ++i) {
        auto& bucket = report.buckets[bucket_name(items[i].hops)];
        ++bucket.total;
        if (verdicts[i].correct) ++bucket.correct;
    }
    report.items = std::move(verdicts);
    return report;
}

}  // namespace sgam::pipeline
