#pragma once

#include <compare>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sgam/errors.hpp"

namespace sgam::schema {

// A column identity. Nodes compare by (table, column); the primary-key flag
// is carried data, not identity.
struct AttributeNode {
    std::string column;
    std::string table;
    bool is_primary_key = false;

    friend bool operator==(const AttributeNode& a, const AttributeNode& b) {
        return a.column == b.column && a.table == b.table && a.is_primary_key == b.is_primary_key;
    }
    friend std::strong_ordering operator<=>(const AttributeNode& a, const AttributeNode& b) {
        if (auto c = a.table <=> b.table; c != 0) return c;
        if (auto c = a.column <=> b.column; c != 0) return c;
        return a.is_primary_key <=> b.is_primary_key;
    }
};

// Declared in the order outgoing() sorts edge classes.
enum class EdgeKind { IntraContext, IntraKey, InterDerive, InterKey };

std::string_view edge_kind_name(EdgeKind kind);
EdgeKind edge_kind_from_name(std::string_view name);

struct SchemaEdge {
    AttributeNode src;
    AttributeNode dst;
    EdgeKind kind = EdgeKind::IntraContext;
    std::string label;

    friend bool operator==(const SchemaEdge&, const SchemaEdge&) = default;
};

struct ColumnDecl {
    std::string name;
    bool primary_key = false;
    std::string description;
    std::vector<std::string> unique_keywords;
    std::vector<std::string> frequent_keywords;

    friend bool operator==(const ColumnDecl&, const ColumnDecl&) = default;
};

struct TableDecl {
    std::string name;
    std::vector<ColumnDecl> columns;
    // Primary keys ordered local -> global. Must be a permutation of the
    // table's primary-key columns.
    std::vector<std::string> key_hierarchy;

    friend bool operator==(const TableDecl&, const TableDecl&) = default;
};

struct ContextEdgeDecl {
    std::string table;
    std::string from;
    std::string to;
    std::string label;

    friend bool operator==(const ContextEdgeDecl&, const ContextEdgeDecl&) = default;
};

struct DerivationEdgeDecl {
    std::string src_table;
    std::string src_column;
    std::string dst_table;
    std::string dst_column;
    std::string label;

    friend bool operator==(const DerivationEdgeDecl&, const DerivationEdgeDecl&) = default;
};

// The serialized form of the curated schema knowledge. See README for the
// document grammar.
struct SchemaSpec {
    std::vector<TableDecl> tables;
    std::vector<ContextEdgeDecl> context_edges;
    std::vector<DerivationEdgeDecl> derivation_edges;

    const TableDecl* find_table(std::string_view name) const;
    const ColumnDecl* find_column(std::string_view table, std::string_view column) const;

    friend bool operator==(const SchemaSpec&, const SchemaSpec&) = default;
};

struct Violation {
    std::string rule;
    std::string message;
};

// Directed dependency graph over attribute nodes. Immutable once built; safe
// for unsynchronized concurrent reads.
class SchemaGraph {
public:
    SchemaGraph() = default;

    // Assembles a graph without running build rules. Used by tests and by
    // deserializers; validate_graph() is the safety net.
    static SchemaGraph unchecked(std::vector<AttributeNode> nodes, std::vector<SchemaEdge> edges,
                                 std::map<std::string, std::vector<std::string>> key_hierarchies = {});

    const std::vector<AttributeNode>& nodes() const { return nodes_; }
    const std::vector<SchemaEdge>& edges() const { return edges_; }
    const std::map<std::string, std::vector<std::string>>& key_hierarchies() const {
        return key_hierarchies_;
    }

    bool contains(const AttributeNode& node) const;
    // Looks a node up by identity; returns the stored node (authoritative
    // primary-key flag) or nullopt.
    std::optional<AttributeNode> find(std::string_view table, std::string_view column) const;

    // Outgoing edges of `node`, ordered by edge kind (IntraContext, IntraKey,
    // InterDerive, InterKey) then by (dst.table, dst.column).
    const std::vector<SchemaEdge>& outgoing(const AttributeNode& node) const;

    bool has_edge(const AttributeNode& src, const AttributeNode& dst, EdgeKind kind) const;

    // Primary keys of `table` ordered local -> global.
    const std::vector<std::string>& key_hierarchy(std::string_view table) const;

private:
    friend SchemaGraph build_graph(const SchemaSpec& spec);

    std::vector<AttributeNode> nodes_;
    std::vector<SchemaEdge> edges_;
    std::map<std::pair<std::string, std::string>, size_t> node_index_;  // (table, column)
    std::map<std::pair<std::string, std::string>, std::vector<SchemaEdge>> adjacency_;
    std::map<std::string, std::vector<std::string>> key_hierarchies_;

    void finalize();
};

// Parses the schema specification document. Throws SyntaxError on malformed
// JSON (with line/position) and ValidationError when a declaration is
// inconsistent (undeclared column references, bad key hierarchy, duplicates).
SchemaSpec load_schema_spec(std::string_view source);
SchemaSpec load_schema_spec_file(const std::filesystem::path& path);

// Inverse of load_schema_spec for the documented format.
std::string serialize_schema_spec(const SchemaSpec& spec);

// Builds the dependency graph: one node per declared column; intra-key edges
// from each non-key column to its table's most-local primary key and from
// each key to the next-more-global key; context edges as declared; inter-key
// edges in both directions between same-named primary keys of distinct
// tables; derivation edges as declared. Throws ValidationError when a table
// declares no primary key.
SchemaGraph build_graph(const SchemaSpec& spec);

// Structural invariant check. Returns violations instead of throwing; an
// empty list means the graph is valid.
std::vector<Violation> validate_graph(const SchemaGraph& graph);

// Ordered outgoing edges (see SchemaGraph::outgoing). Throws UnknownNode.
std::vector<SchemaEdge> outgoing(const SchemaGraph& graph, const AttributeNode& node);

// "COLUMN[TABLE]"
std::string format_node(const AttributeNode& node);

// Parses "COLUMN[TABLE]" back into an identity (primary-key flag resolved by
// the graph lookup at the call site). Throws SyntaxError.
std::pair<std::string, std::string> parse_node_ref(std::string_view ref);

}  // namespace sgam::schema
