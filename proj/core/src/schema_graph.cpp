#include "sgam/schema_graph.hpp"

#include <algorithm>
#include <fstream>
#include <queue>
#include <set>
#include <sstream>

#include <json.hpp>

#include "sgam/text_util.hpp"

namespace sgam::schema {

namespace {

using nlohmann::json;

constexpr std::string_view kForbiddenNameChars = ",[]";

void check_identifier(const std::string& value, const std::string& what) {
    if (value.empty()) throw ValidationError(what + " must be non-empty");
    if (value.find_first_of(kForbiddenNameChars) != std::string::npos) {
        throw ValidationError(what + " \"" + value + "\" contains a reserved character (comma or bracket)");
    }
}

// Maps a byte offset reported by the JSON parser to 1-based line/column.
std::pair<int, int> offset_to_line_col(std::string_view source, size_t offset) {
    int line = 1, col = 1;
    for (size_t i = 0; i < offset && i < source.size(); ++i) {
        if (source[i] == '\n') {
            ++line;
            col = 1;
        } else {
            ++col;
        }
    }
    return {line, col};
}

void reject_unknown_fields(const json& obj, std::initializer_list<std::string_view> known,
                           const std::string& where) {
    for (const auto& [key, value] : obj.items()) {
        if (std::find(known.begin(), known.end(), key) == known.end()) {
            throw ValidationError("unknown field \"" + key + "\" in " + where);
        }
    }
}

std::vector<std::string> string_array(const json& value, const std::string& where) {
    if (!value.is_array()) throw ValidationError(where + " must be an array of strings");
    std::vector<std::string> out;
    for (const auto& item : value) {
        if (!item.is_string()) throw ValidationError(where + " must contain only strings");
        out.push_back(item.get<std::string>());
    }
    return out;
}

std::pair<std::string, std::string> split_table_column(const std::string& ref, const std::string& where) {
    auto dot = ref.find('.');
    if (dot == std::string::npos || dot == 0 || dot + 1 == ref.size()) {
        throw ValidationError(where + " \"" + ref + "\" is not of the form TABLE.COLUMN");
    }
    return {ref.substr(0, dot), ref.substr(dot + 1)};
}

ColumnDecl parse_column(const json& value, const std::string& table_name) {
    if (!value.is_object()) throw ValidationError("column entry of table " + table_name + " must be an object");
    reject_unknown_fields(value, {"name", "primary_key", "description", "keywords"},
                          "column of table " + table_name);
    ColumnDecl col;
    if (!value.contains("name") || !value["name"].is_string()) {
        throw ValidationError("column of table " + table_name + " is missing a string \"name\"");
    }
    col.name = value["name"].get<std::string>();
    if (value.contains("primary_key")) {
        if (!value["primary_key"].is_boolean()) {
            throw ValidationError("primary_key of " + table_name + "." + col.name + " must be a boolean");
        }
        col.primary_key = value["primary_key"].get<bool>();
    }
    if (value.contains("description")) {
        if (!value["description"].is_string()) {
            throw ValidationError("description of " + table_name + "." + col.name + " must be a string");
        }
        col.description = value["description"].get<std::string>();
    }
    if (value.contains("keywords")) {
        const json& kw = value["keywords"];
        if (!kw.is_object()) {
            throw ValidationError("keywords of " + table_name + "." + col.name + " must be an object");
        }
        reject_unknown_fields(kw, {"unique", "frequent"}, "keywords of " + table_name + "." + col.name);
        if (kw.contains("unique")) {
            col.unique_keywords = string_array(kw["unique"], "keywords.unique of " + table_name + "." + col.name);
        }
        if (kw.contains("frequent")) {
            col.frequent_keywords =
                string_array(kw["frequent"], "keywords.frequent of " + table_name + "." + col.name);
        }
    }
    return col;
}

TableDecl parse_table(const json& value) {
    if (!value.is_object()) throw ValidationError("table entry must be an object");
    reject_unknown_fields(value, {"name", "columns", "key_hierarchy"}, "table entry");
    TableDecl table;
    if (!value.contains("name") || !value["name"].is_string()) {
        throw ValidationError("table entry is missing a string \"name\"");
    }
    table.name = value["name"].get<std::string>();
    if (value.contains("columns")) {
        if (!value["columns"].is_array()) {
            throw ValidationError("columns of table " + table.name + " must be an array");
        }
        for (const auto& col : value["columns"]) table.columns.push_back(parse_column(col, table.name));
    }
    if (value.contains("key_hierarchy")) {
        table.key_hierarchy = string_array(value["key_hierarchy"], "key_hierarchy of table " + table.name);
    }
    return table;
}

void validate_spec(const SchemaSpec& spec) {
    std::set<std::string> table_names;
    for (const auto& table : spec.tables) {
        check_identifier(table.name, "table name");
        if (!table_names.insert(table.name).second) {
            throw ValidationError("duplicate table \"" + table.name + "\"");
        }
        std::set<std::string> column_names;
        std::vector<std::string> pks;
        for (const auto& col : table.columns) {
            check_identifier(col.name, "column name in table " + table.name);
            if (!column_names.insert(col.name).second) {
                throw ValidationError("duplicate column \"" + col.name + "\" in table " + table.name);
            }
            if (col.primary_key) pks.push_back(col.name);
        }
        // The hierarchy must be a permutation of exactly the primary keys.
        std::vector<std::string> hierarchy = table.key_hierarchy;
        std::vector<std::string> sorted_pks = pks;
        std::vector<std::string> sorted_hierarchy = hierarchy;
        std::sort(sorted_pks.begin(), sorted_pks.end());
        std::sort(sorted_hierarchy.begin(), sorted_hierarchy.end());
        if (sorted_pks != sorted_hierarchy) {
            throw ValidationError("key_hierarchy of table " + table.name +
                                  " is not a permutation of its primary-key columns");
        }
    }
    std::set<std::tuple<std::string, std::string, std::string>> seen_context;
    for (const auto& edge : spec.context_edges) {
        if (!spec.find_table(edge.table)) {
            throw ValidationError("context edge references undeclared table \"" + edge.table + "\"");
        }
        if (!spec.find_column(edge.table, edge.from)) {
            throw ValidationError("context edge references undeclared column \"" + edge.from + "\" in table " +
                                  edge.table);
        }
        if (!spec.find_column(edge.table, edge.to)) {
            throw ValidationError("context edge references undeclared column \"" + edge.to + "\" in table " +
                                  edge.table);
        }
        if (edge.from == edge.to) {
            throw ValidationError("context edge endpoints must differ (" + edge.table + "." + edge.from + ")");
        }
        if (edge.label.empty()) {
            throw ValidationError("context edge " + edge.table + "." + edge.from + " -> " + edge.to +
                                  " has an empty label");
        }
        if (!seen_context.insert({edge.table, edge.from, edge.to}).second) {
            throw ValidationError("duplicate context edge " + edge.table + "." + edge.from + " -> " + edge.to);
        }
    }
    std::set<std::tuple<std::string, std::string, std::string, std::string>> seen_derive;
    for (const auto& edge : spec.derivation_edges) {
        if (!spec.find_column(edge.src_table, edge.src_column)) {
            throw ValidationError("derivation edge references undeclared column \"" + edge.src_table + "." +
                                  edge.src_column + "\"");
        }
        if (!spec.find_column(edge.dst_table, edge.dst_column)) {
            throw ValidationError("derivation edge references undeclared column \"" + edge.dst_table + "." +
                                  edge.dst_column + "\"");
        }
        if (edge.src_table == edge.dst_table) {
            throw ValidationError("derivation edge must cross tables (" + edge.src_table + "." + edge.src_column +
                                  " -> " + edge.dst_table + "." + edge.dst_column + ")");
        }
        if (edge.label.empty()) {
            throw ValidationError("derivation edge " + edge.src_table + "." + edge.src_column + " -> " +
                                  edge.dst_table + "." + edge.dst_column + " has an empty label");
        }
        if (!seen_derive.insert({edge.src_table, edge.src_column, edge.dst_table, edge.dst_column}).second) {
            throw ValidationError("duplicate derivation edge " + edge.src_table + "." + edge.src_column + " -> " +
                                  edge.dst_table + "." + edge.dst_column);
        }
    }
}

bool kind_before(const SchemaEdge& a, const SchemaEdge& b) {
    if (a.kind != b.kind) return static_cast<int>(a.kind) < static_cast<int>(b.kind);
    if (a.dst.table != b.dst.table) return a.dst.table < b.dst.table;
    return a.dst.column < b.dst.column;
}

}  // namespace

std::string_view edge_kind_name(EdgeKind kind) {
    switch (kind) {
        case EdgeKind::IntraContext: return "IntraContext";
        case EdgeKind::IntraKey: return "IntraKey";
        case EdgeKind::InterDerive: return "InterDerive";
        case EdgeKind::InterKey: return "InterKey";
    }
    return "?";
}

EdgeKind edge_kind_from_name(std::string_view name) {
    if (name == "IntraContext") return EdgeKind::IntraContext;
    if (name == "IntraKey") return EdgeKind::IntraKey;
    if (name == "InterDerive") return EdgeKind::InterDerive;
    if (name == "InterKey") return EdgeKind::InterKey;
    throw ValidationError("unknown edge kind \"" + std::string(name) + "\"");
}

const TableDecl* SchemaSpec::find_table(std::string_view name) const {
    for (const auto& table : tables) {
        if (table.name == name) return &table;
    }
    return nullptr;
}

const ColumnDecl* SchemaSpec::find_column(std::string_view table, std::string_view column) const {
    const TableDecl* t = find_table(table);
    if (!t) return nullptr;
    for (const auto& col : t->columns) {
        if (col.name == column) return &col;
    }
    return nullptr;
}

SchemaSpec load_schema_spec(std::string_view source) {
    json doc;
    try {
        doc = json::parse(source);
    } catch (const json::parse_error& e) {
        auto [line, col] = offset_to_line_col(source, e.byte > 0 ? e.byte - 1 : 0);
        std::ostringstream msg;
        msg << "malformed schema document at line " << line << ", column " << col << ": " << e.what();
        throw SyntaxError(msg.str(), line, col);
    }
    if (!doc.is_object()) throw ValidationError("schema document must be a JSON object");
    reject_unknown_fields(doc, {"tables", "context_edges", "derivation_edges"}, "schema document");

    SchemaSpec spec;
    if (doc.contains("tables")) {
        if (!doc["tables"].is_array()) throw ValidationError("\"tables\" must be an array");
        for (const auto& table : doc["tables"]) spec.tables.push_back(parse_table(table));
    }
    if (doc.contains("context_edges")) {
        if (!doc["context_edges"].is_array()) throw ValidationError("\"context_edges\" must be an array");
        for (const auto& value : doc["context_edges"]) {
            if (!value.is_object()) throw ValidationError("context edge entry must be an object");
            reject_unknown_fields(value, {"table", "from", "to", "label"}, "context edge");
            for (const char* field : {"table", "from", "to", "label"}) {
                if (!value.contains(field) || !value[field].is_string()) {
                    throw ValidationError(std::string("context edge is missing a string \"") + field + "\"");
                }
            }
            spec.context_edges.push_back({value["table"].get<std::string>(), value["from"].get<std::string>(),
                                          value["to"].get<std::string>(), value["label"].get<std::string>()});
        }
    }
    if (doc.contains("derivation_edges")) {
        if (!doc["derivation_edges"].is_array()) throw ValidationError("\"derivation_edges\" must be an array");
        for (const auto& value : doc["derivation_edges"]) {
            if (!value.is_object()) throw ValidationError("derivation edge entry must be an object");
            reject_unknown_fields(value, {"src", "dst", "label"}, "derivation edge");
            for (const char* field : {"src", "dst", "label"}) {
                if (!value.contains(field) || !value[field].is_string()) {
                    throw ValidationError(std::string("derivation edge is missing a string \"") + field + "\"");
                }
            }
            auto [src_table, src_column] =
                split_table_column(value["src"].get<std::string>(), "derivation edge src");
            auto [dst_table, dst_column] =
                split_table_column(value["dst"].get<std::string>(), "derivation edge dst");
            spec.derivation_edges.push_back(
                {src_table, src_column, dst_table, dst_column, value["label"].get<std::string>()});
        }
    }
    validate_spec(spec);
    return spec;
}

SchemaSpec load_schema_spec_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open schema spec file " + path.string());
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return load_schema_spec(buffer.str());
}

std::string serialize_schema_spec(const SchemaSpec& spec) {
    json doc;
    doc["tables"] = json::array();
    for (const auto& table : spec.tables) {
        json t;
        t["name"] = table.name;
        t["columns"] = json::array();
        for (const auto& col : table.columns) {
            json c;
            c["name"] = col.name;
            c["primary_key"] = col.primary_key;
            c["description"] = col.description;
            c["keywords"] = {{"unique", col.unique_keywords}, {"frequent", col.frequent_keywords}};
            t["columns"].push_back(std::move(c));
        }
        t["key_hierarchy"] = table.key_hierarchy;
        doc["tables"].push_back(std::move(t));
    }
    doc["context_edges"] = json::array();
    for (const auto& edge : spec.context_edges) {
        doc["context_edges"].push_back(
            {{"table", edge.table}, {"from", edge.from}, {"to", edge.to}, {"label", edge.label}});
    }
    doc["derivation_edges"] = json::array();
    for (const auto& edge : spec.derivation_edges) {
        doc["derivation_edges"].push_back({{"src", edge.src_table + "." + edge.src_column},
                                           {"dst", edge.dst_table + "." + edge.dst_column},
                                           {"label", edge.label}});
    }
    return doc.dump(2);
}

SchemaGraph SchemaGraph::unchecked(std::vector<AttributeNode> nodes, std::vector<SchemaEdge> edges,
                                   std::map<std::string, std::vector<std::string>> key_hierarchies) {
    SchemaGraph graph;
    graph.nodes_ = std::move(nodes);
    graph.edges_ = std::move(edges);
    graph.key_hierarchies_ = std::move(key_hierarchies);
    graph.finalize();
    return graph;
}

void SchemaGraph::finalize() {
    node_index_.clear();
    adjacency_.clear();
    for (size_t i = 0; i < nodes_.size(); ++i) {
        node_index_.emplace(std::make_pair(nodes_[i].table, nodes_[i].column), i);
        adjacency_[{nodes_[i].table, nodes_[i].column}];  // ensure empty entries exist
    }
    for (const auto& edge : edges_) {
        adjacency_[{edge.src.table, edge.src.column}].push_back(edge);
    }
    for (auto& [key, list] : adjacency_) {
        std::sort(list.begin(), list.end(), kind_before);
    }
    for (const auto& node : nodes_) {
        if (node.is_primary_key && !key_hierarchies_.count(node.table)) {
            // Tests may assemble graphs without hierarchies; fall back to a
            // lexicographic pseudo-hierarchy.
            std::vector<std::string> keys;
            for (const auto& n : nodes_) {
                if (n.table == node.table && n.is_primary_key) keys.push_back(n.column);
            }
            std::sort(keys.begin(), keys.end());
            key_hierarchies_[node.table] = std::move(keys);
        }
    }
}

bool SchemaGraph::contains(const AttributeNode& node) const {
    auto it = node_index_.find({node.table, node.column});
    return it != node_index_.end() && nodes_[it->second].is_primary_key == node.is_primary_key;
}

std::optional<AttributeNode> SchemaGraph::find(std::string_view table, std::string_view column) const {
    auto it = node_index_.find({std::string(table), std::string(column)});
    if (it == node_index_.end()) return std::nullopt;
    return nodes_[it->second];
}

const std::vector<SchemaEdge>& SchemaGraph::outgoing(const AttributeNode& node) const {
    auto it = adjacency_.find({node.table, node.column});
    if (it == adjacency_.end() || !contains(node)) {
        throw UnknownNode("node " + format_node(node) + " is not part of the graph");
    }
    return it->second;
}

bool SchemaGraph::has_edge(const AttributeNode& src, const AttributeNode& dst, EdgeKind kind) const {
    auto it = adjacency_.find({src.table, src.column});
    if (it == adjacency_.end()) return false;
    for (const auto& edge : it->second) {
        if (edge.kind == kind && edge.dst.table == dst.table && edge.dst.column == dst.column) return true;
    }
    return false;
}

const std::vector<std::string>& SchemaGraph::key_hierarchy(std::string_view table) const {
    static const std::vector<std::string> kEmpty;
    auto it = key_hierarchies_.find(std::string(table));
    return it == key_hierarchies_.end() ? kEmpty : it->second;
}

SchemaGraph build_graph(const SchemaSpec& spec) {
    validate_spec(spec);

    SchemaGraph graph;
    for (const auto& table : spec.tables) {
        if (table.key_hierarchy.empty()) {
            throw ValidationError("table " + table.name +
                                  " declares no primary key; attributes would have no terminal anchor");
        }
        graph.key_hierarchies_[table.name] = table.key_hierarchy;
        for (const auto& col : table.columns) {
            graph.nodes_.push_back({col.name, table.name, col.primary_key});
        }
    }

    auto node_of = [&](const std::string& table, const std::string& column) {
        const ColumnDecl* col = spec.find_column(table, column);
        return AttributeNode{column, table, col->primary_key};
    };

    std::set<std::tuple<std::string, std::string, std::string, std::string, EdgeKind>> seen;
    auto add_edge = [&](const AttributeNode& src, const AttributeNode& dst, EdgeKind kind, std::string label) {
        if (!seen.insert({src.table, src.column, dst.table, dst.column, kind}).second) {
            throw ValidationError("duplicate " + std::string(edge_kind_name(kind)) + " edge " + format_node(src) +
                                  " -> " + format_node(dst));
        }
        graph.edges_.push_back({src, dst, kind, std::move(label)});
    };

    // Intra-table key edges: non-key column -> most-local primary key, then
    // up the declared hierarchy key by key.
    for (const auto& table : spec.tables) {
        const std::string& local_key = table.key_hierarchy.front();
        for (const auto& col : table.columns) {
            if (!col.primary_key) {
                add_edge(node_of(table.name, col.name), node_of(table.name, local_key), EdgeKind::IntraKey,
                         "identified within " + table.name + " by " + local_key);
            }
        }
        for (size_t i = 0; i + 1 < table.key_hierarchy.size(); ++i) {
            add_edge(node_of(table.name, table.key_hierarchy[i]), node_of(table.name, table.key_hierarchy[i + 1]),
                     EdgeKind::IntraKey, table.key_hierarchy[i] + " resolves under " + table.key_hierarchy[i + 1]);
        }
    }

    for (const auto& edge : spec.context_edges) {
        add_edge(node_of(edge.table, edge.from), node_of(edge.table, edge.to), EdgeKind::IntraContext, edge.label);
    }

    // Inter-table key edges between same-named primary keys, both directions.
    std::map<std::string, std::vector<std::string>> pk_tables;  // column -> tables
    for (const auto& table : spec.tables) {
        for (const auto& col : table.columns) {
            if (col.primary_key) pk_tables[col.name].push_back(table.name);
        }
    }
    for (const auto& [column, tables] : pk_tables) {
        for (size_t i = 0; i < tables.size(); ++i) {
            for (size_t j = 0; j < tables.size(); ++j) {
                if (i == j) continue;
                add_edge(node_of(tables[i], column), node_of(tables[j], column), EdgeKind::InterKey,
                         tables[i] + " joins " + tables[j] + " on " + column);
            }
        }
    }

    for (const auto& edge : spec.derivation_edges) {
        add_edge(node_of(edge.src_table, edge.src_column), node_of(edge.dst_table, edge.dst_column),
                 EdgeKind::InterDerive, edge.label);
    }

    graph.finalize();
    return graph;
}

std::vector<Violation> validate_graph(const SchemaGraph& graph) {
    std::vector<Violation> out;
    auto report = [&](std::string rule, std::string message) {
        out.push_back({std::move(rule), std::move(message)});
    };

    std::set<std::pair<std::string, std::string>> identities;
    for (const auto& node : graph.nodes()) {
        if (node.column.empty() || node.table.empty()) {
            report("node-name", "node " + format_node(node) + " has an empty column or table name");
        } else if (node.column.find_first_of(kForbiddenNameChars) != std::string::npos ||
                   node.table.find_first_of(kForbiddenNameChars) != std::string::npos) {
            report("node-name", "node " + format_node(node) + " contains a reserved character");
        }
        if (!identities.insert({node.table, node.column}).second) {
            report("node-identity", "duplicate node identity " + format_node(node));
        }
    }

    std::set<std::tuple<std::string, std::string, std::string, std::string, EdgeKind>> triples;
    for (const auto& edge : graph.edges()) {
        const std::string desc =
            std::string(edge_kind_name(edge.kind)) + " edge " + format_node(edge.src) + " -> " + format_node(edge.dst);
        if (!graph.contains(edge.src)) report("edge-endpoint", desc + ": src is not a graph node");
        if (!graph.contains(edge.dst)) report("edge-endpoint", desc + ": dst is not a graph node");
        if (edge.label.empty()) report("edge-label", desc + ": label is empty");
        if (!triples.insert({edge.src.table, edge.src.column, edge.dst.table, edge.dst.column, edge.kind}).second) {
            report("edge-duplicate", "duplicate edge " + desc);
        }
        switch (edge.kind) {
            case EdgeKind::IntraContext:
                if (edge.src.table != edge.dst.table) {
                    report("intra-context-table", desc + ": endpoints must share a table");
                }
                break;
            case EdgeKind::IntraKey:
                if (edge.src.table != edge.dst.table) {
                    report("intra-key-table", desc + ": endpoints must share a table");
                }
                if (!edge.dst.is_primary_key) {
                    report("intra-key-destination", desc + ": destination must be a primary key");
                }
                break;
            case EdgeKind::InterKey:
                if (edge.src.table == edge.dst.table) {
                    report("inter-key-tables", desc + ": endpoints must be in distinct tables");
                }
                if (edge.src.column != edge.dst.column) {
                    report("inter-key-name", desc + ": endpoints must share a column name");
                }
                if (!edge.src.is_primary_key || !edge.dst.is_primary_key) {
                    report("inter-key-flags", desc + ": both endpoints must be primary keys");
                }
                if (!graph.has_edge(edge.dst, edge.src, EdgeKind::InterKey)) {
                    report("inter-key-symmetry", desc + ": reverse edge is missing");
                }
                break;
            case EdgeKind::InterDerive:
                if (edge.src.table == edge.dst.table) {
                    report("inter-derive-tables", desc + ": endpoints must be in distinct tables");
                }
                break;
        }
    }

    // Every non-key node must reach a primary key of its own table through
    // intra-table edges.
    for (const auto& node : graph.nodes()) {
        if (node.is_primary_key) continue;
        std::set<std::pair<std::string, std::string>> visited;
        std::queue<AttributeNode> frontier;
        frontier.push(node);
        visited.insert({node.table, node.column});
        bool anchored = false;
        while (!frontier.empty() && !anchored) {
            AttributeNode cur = frontier.front();
            frontier.pop();
            auto it = graph.contains(cur) ? &graph.outgoing(cur) : nullptr;
            if (!it) break;
            for (const auto& edge : *it) {
                if (edge.kind != EdgeKind::IntraContext && edge.kind != EdgeKind::IntraKey) continue;
                if (edge.dst.table != node.table) continue;
                if (edge.dst.is_primary_key) {
                    anchored = true;
                    break;
                }
                if (visited.insert({edge.dst.table, edge.dst.column}).second) frontier.push(edge.dst);
            }
        }
        if (!anchored) {
            report("unanchored-attribute",
                   "attribute " + format_node(node) + " has no path to a primary key of table " + node.table);
        }
    }

    return out;
}

std::vector<SchemaEdge> outgoing(const SchemaGraph& graph, const AttributeNode& node) {
    return graph.outgoing(node);
}

std::string format_node(const AttributeNode& node) { return node.column + "[" + node.table + "]"; }

std::pair<std::string, std::string> parse_node_ref(std::string_view ref) {
    if (ref.size() < 4 || ref.back() != ']') {
        throw SyntaxError("node reference \"" + std::string(ref) + "\" is not of the form COLUMN[TABLE]");
    }
    auto open = ref.find('[');
    if (open == std::string_view::npos || open == 0 || open + 2 > ref.size() - 1) {
        throw SyntaxError("node reference \"" + std::string(ref) + "\" is not of the form COLUMN[TABLE]");
    }
    std::string column(ref.substr(0, open));
    std::string table(ref.substr(open + 1, ref.size() - open - 2));
    if (column.empty() || table.empty()) {
        throw SyntaxError("node reference \"" + std::string(ref) + "\" is not of the form COLUMN[TABLE]");
    }
    return {column, table};
}

}  // namespace sgam::schema
