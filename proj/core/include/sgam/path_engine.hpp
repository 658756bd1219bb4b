#pragma once

#include <optional>
#include <string>
#include <vector>

#include "sgam/schema_graph.hpp"

namespace sgam::paths {

// An attribute dependency chain: a simple directed path whose final node is a
// primary key.
struct DependencyPath {
    std::vector<schema::AttributeNode> nodes;
    std::vector<schema::SchemaEdge> edges;

    const schema::AttributeNode& head() const { return nodes.front(); }
    const schema::AttributeNode& terminal() const { return nodes.back(); }
    bool single_table() const;

    // Checks the structural invariants (connectivity, simplicity, key-final).
    // Throws ValidationError on violation.
    void validate() const;

    friend bool operator==(const DependencyPath&, const DependencyPath&) = default;
};

struct PlanGroup {
    std::string table;
    schema::AttributeNode terminal_key;
    // Union of path nodes excluding the terminal key, in first-appearance
    // order across the group's pruned paths.
    std::vector<schema::AttributeNode> attributes;
    std::vector<DependencyPath> pruned_paths;
};

struct JoinPlan {
    std::vector<PlanGroup> groups;
    // InterKey edges drive equi-joins between groups; InterDerive entries
    // record cross-table derivations that pruning removed.
    std::vector<schema::SchemaEdge> join_edges;
};

struct SearchLimits {
    int max_hops = 8;
    int max_paths = 256;
};

struct SearchResult {
    std::vector<DependencyPath> paths;
    int cut_at_max_hops = 0;
};

// Shortest directed distance from `from` to `key` using intra-table edges
// only; nullopt when unreachable. Throws UnknownNode / NotAKey.
std::optional<int> depth(const schema::SchemaGraph& graph, const schema::AttributeNode& from,
                         const schema::AttributeNode& key);

// The most globally joinable key of the attribute's table: the reachable
// primary key maximizing depth(), ties broken toward the more-global end of
// the declared hierarchy, then lexicographically. Throws NoReachableKey.
schema::AttributeNode terminal_key(const schema::SchemaGraph& graph, const schema::AttributeNode& attribute);

// Depth-first enumeration of dependency chains starting at `attribute`.
// Edges are tried in outgoing() order; InterKey edges are never traversed
// (joins are reconstructed by merge_paths), and a chain stops at the first
// terminal key it reaches except to follow derivation edges. Paths longer
// than limits.max_hops are cut and counted, not returned.
SearchResult find_dependency_paths_detailed(const schema::SchemaGraph& graph,
                                            const schema::AttributeNode& attribute,
                                            const SearchLimits& limits = {});
std::vector<DependencyPath> find_dependency_paths(const schema::SchemaGraph& graph,
                                                  const schema::AttributeNode& attribute,
                                                  int max_hops = SearchLimits{}.max_hops);

// Truncates a path at the destination of its last inter-table edge so the
// result lies within a single table. Identity for single-table paths.
DependencyPath prune_path(const DependencyPath& path);

struct PruneResult {
    DependencyPath pruned;
    std::vector<schema::SchemaEdge> dropped_inter_edges;
};
PruneResult prune_path_detailed(const DependencyPath& path);

// Groups pruned paths by (table, terminal key), dedups them, and connects
// groups whose terminal keys are join-linked. join_edges carries one InterKey
// edge per shared primary-key column of each linked group pair. Throws
// MixedTablePath when an input path spans tables.
JoinPlan merge_paths(const std::vector<DependencyPath>& pruned, const schema::SchemaGraph& graph);

// prune + merge, also recording InterDerive crossings dropped by pruning.
JoinPlan build_join_plan(const std::vector<DependencyPath>& raw, const schema::SchemaGraph& graph);

// "COLUMN[TABLE], COLUMN[TABLE], ..."
std::string format_reasoning_chain(const DependencyPath& path);
// Numbered "Path N: ..." lines: each group's pruned chains in group order,
// then one terminal-key join link per linked group pair.
std::string format_reasoning_chain(const JoinPlan& plan);
std::vector<std::string> plan_chain_lines(const JoinPlan& plan);

// JSON serialization of a plan (see README for the schema).
std::string serialize_join_plan(const JoinPlan& plan);

}  // namespace sgam::paths
