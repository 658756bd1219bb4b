#include "sgam/path_engine.hpp"

#include <algorithm>
#include <map>
#include <queue>
#include <set>
#include <sstream>

#include <json.hpp>

namespace sgam::paths {

namespace {

using schema::AttributeNode;
using schema::EdgeKind;
using schema::SchemaEdge;
using schema::SchemaGraph;

bool is_inter(EdgeKind kind) { return kind == EdgeKind::InterKey || kind == EdgeKind::InterDerive; }

// A node is terminal when it is its own table's most globally joinable key.
bool is_terminal(const SchemaGraph& graph, const AttributeNode& node) {
    if (!node.is_primary_key) return false;
    return terminal_key(graph, node) == node;
}

struct Searcher {
    const SchemaGraph& graph;
    const SearchLimits& limits;
    SearchResult result;
    std::vector<AttributeNode> stack_nodes;
    std::vector<SchemaEdge> stack_edges;
    std::set<std::pair<std::string, std::string>> on_path;
    std::map<std::pair<std::string, std::string>, bool> terminal_cache;

    bool terminal(const AttributeNode& node) {
        auto key = std::make_pair(node.table, node.column);
        auto it = terminal_cache.find(key);
        if (it != terminal_cache.end()) return it->second;
        bool value = node.is_primary_key && is_terminal(graph, node);
        terminal_cache.emplace(key, value);
        return value;
    }

    void emit() {
        if (static_cast<int>(result.paths.size()) >= limits.max_paths) {
            throw PathExplosion("path enumeration exceeded the cap of " + std::to_string(limits.max_paths) +
                                " paths from " + schema::format_node(stack_nodes.front()));
        }
        result.paths.push_back({stack_nodes, stack_edges});
    }

    void visit(const AttributeNode& node) {
        const bool at_terminal = terminal(node);
        if (at_terminal) emit();

        if (static_cast<int>(stack_edges.size()) >= limits.max_hops) {
            if (!at_terminal) ++result.cut_at_max_hops;
            return;
        }
        for (const auto& edge : graph.outgoing(node)) {
            if (edge.kind == EdgeKind::InterKey) continue;
            // Once anchored at a terminal key, only derivation edges may
            // extend the chain into the deriving table.
            if (at_terminal && !stack_edges.empty() && edge.kind != EdgeKind::InterDerive) continue;
            if (on_path.count({edge.dst.table, edge.dst.column})) continue;
            stack_nodes.push_back(edge.dst);
            stack_edges.push_back(edge);
            on_path.insert({edge.dst.table, edge.dst.column});
            visit(edge.dst);
            on_path.erase({edge.dst.table, edge.dst.column});
            stack_edges.pop_back();
            stack_nodes.pop_back();
        }
    }
};

std::vector<AttributeNode> table_keys(const SchemaGraph& graph, const std::string& table) {
    std::vector<AttributeNode> keys;
    for (const auto& node : graph.nodes()) {
        if (node.table == table && node.is_primary_key) keys.push_back(node);
    }
    return keys;
}

}  // namespace

bool DependencyPath::single_table() const {
    for (const auto& node : nodes) {
        if (node.table != nodes.front().table) return false;
    }
    return true;
}

void DependencyPath::validate() const {
    if (nodes.empty()) throw ValidationError("dependency path must contain at least one node");
    if (edges.size() + 1 != nodes.size()) {
        throw ValidationError("dependency path edge count does not match node count");
    }
    std::set<std::pair<std::string, std::string>> seen;
    for (const auto& node : nodes) {
        if (!seen.insert({node.table, node.column}).second) {
            throw ValidationError("dependency path repeats node " + schema::format_node(node));
        }
    }
    for (size_t i = 0; i < edges.size(); ++i) {
        if (!(edges[i].src == nodes[i]) || !(edges[i].dst == nodes[i + 1])) {
            throw ValidationError("dependency path edge " + std::to_string(i) +
                                  " does not connect consecutive nodes");
        }
    }
    if (!nodes.back().is_primary_key) {
        throw ValidationError("dependency path must end at a primary key, got " +
                              schema::format_node(nodes.back()));
    }
}

std::optional<int> depth(const SchemaGraph& graph, const AttributeNode& from, const AttributeNode& key) {
    if (!graph.contains(from)) throw UnknownNode("node " + schema::format_node(from) + " is not part of the graph");
    if (!graph.contains(key)) throw UnknownNode("node " + schema::format_node(key) + " is not part of the graph");
    if (!key.is_primary_key) throw NotAKey(schema::format_node(key) + " is not a primary key");
    if (from.table != key.table) throw NotAKey("depth is defined within one table");

    std::map<std::pair<std::string, std::string>, int> dist;
    std::queue<AttributeNode> frontier;
    frontier.push(from);
    dist[{from.table, from.column}] = 0;
    while (!frontier.empty()) {
        AttributeNode cur = frontier.front();
        frontier.pop();
        int d = dist[{cur.table, cur.column}];
        if (cur == key) return d;
        for (const auto& edge : graph.outgoing(cur)) {
            if (is_inter(edge.kind)) continue;
            auto id = std::make_pair(edge.dst.table, edge.dst.column);
            if (dist.count(id)) continue;
            dist[id] = d + 1;
            frontier.push(edge.dst);
        }
    }
    return std::nullopt;
}

AttributeNode terminal_key(const SchemaGraph& graph, const AttributeNode& attribute) {
    if (!graph.contains(attribute)) {
        throw UnknownNode("node " + schema::format_node(attribute) + " is not part of the graph");
    }
    const auto keys = table_keys(graph, attribute.table);
    if (keys.empty()) {
        throw NoReachableKey("table " + attribute.table + " has no primary key");
    }
    const auto& hierarchy = graph.key_hierarchy(attribute.table);
    auto hierarchy_rank = [&](const std::string& column) {
        for (size_t i = 0; i < hierarchy.size(); ++i) {
            if (hierarchy[i] == column) return static_cast<int>(i);
        }
        return -1;
    };

    std::optional<AttributeNode> best;
    int best_depth = -1;
    for (const auto& key : keys) {
        auto d = depth(graph, attribute, key);
        if (!d) continue;
        bool better = false;
        if (!best) {
            better = true;
        } else if (*d != best_depth) {
            better = *d > best_depth;
        } else {
            int rank_new = hierarchy_rank(key.column);
            int rank_old = hierarchy_rank(best->column);
            if (rank_new != rank_old) {
                better = rank_new > rank_old;  // more global wins
            } else {
                better = key.column < best->column;
            }
        }
        if (better) {
            best = key;
            best_depth = *d;
        }
    }
    if (!best) {
        throw NoReachableKey("no primary key of table " + attribute.table + " is reachable from " +
                             schema::format_node(attribute));
    }
    return *best;
}

SearchResult find_dependency_paths_detailed(const SchemaGraph& graph, const AttributeNode& attribute,
                                            const SearchLimits& limits) {
    if (!graph.contains(attribute)) {
        throw UnknownNode("node " + schema::format_node(attribute) + " is not part of the graph");
    }
    if (limits.max_hops < 1) throw ValidationError("max_hops must be >= 1");
    Searcher searcher{graph, limits, {}, {}, {}, {}, {}};
    searcher.stack_nodes.push_back(attribute);
    searcher.on_path.insert({attribute.table, attribute.column});
    searcher.visit(attribute);
    return std::move(searcher.result);
}

std::vector<DependencyPath> find_dependency_paths(const SchemaGraph& graph, const AttributeNode& attribute,
                                                  int max_hops) {
    SearchLimits limits;
    limits.max_hops = max_hops;
    return find_dependency_paths_detailed(graph, attribute, limits).paths;
}

PruneResult prune_path_detailed(const DependencyPath& path) {
    path.validate();
    std::optional<size_t> last_inter;
    for (size_t i = 0; i < path.edges.size(); ++i) {
        if (is_inter(path.edges[i].kind)) last_inter = i;
    }
    if (!last_inter) return {path, {}};

    PruneResult result;
    for (size_t i = 0; i < path.edges.size(); ++i) {
        if (is_inter(path.edges[i].kind)) result.dropped_inter_edges.push_back(path.edges[i]);
    }
    const size_t start = *last_inter + 1;  // node index of e*.dst
    result.pruned.nodes.assign(path.nodes.begin() + static_cast<long>(start), path.nodes.end());
    result.pruned.edges.assign(path.edges.begin() + static_cast<long>(start), path.edges.end());
    return result;
}

DependencyPath prune_path(const DependencyPath& path) { return prune_path_detailed(path).pruned; }

JoinPlan merge_paths(const std::vector<DependencyPath>& pruned, const SchemaGraph& graph) {
    for (const auto& path : pruned) {
        path.validate();
        if (!path.single_table()) {
            throw MixedTablePath("merge_paths expects pruned single-table paths, got " +
                                 format_reasoning_chain(path));
        }
    }

    std::map<std::pair<std::string, std::string>, PlanGroup> groups;  // (table, key column)
    for (const auto& path : pruned) {
        auto key = std::make_pair(path.terminal().table, path.terminal().column);
        auto [it, inserted] = groups.try_emplace(key);
        PlanGroup& group = it->second;
        if (inserted) {
            group.table = path.terminal().table;
            group.terminal_key = path.terminal();
        }
        if (std::find(group.pruned_paths.begin(), group.pruned_paths.end(), path) == group.pruned_paths.end()) {
            group.pruned_paths.push_back(path);
            for (const auto& node : path.nodes) {
                if (node == group.terminal_key) continue;
                if (std::find(group.attributes.begin(), group.attributes.end(), node) == group.attributes.end()) {
                    group.attributes.push_back(node);
                }
            }
        }
    }

    JoinPlan plan;
    for (auto& [key, group] : groups) plan.groups.push_back(std::move(group));

    // Groups whose terminal keys are join-linked are connected on every
    // primary-key column their tables share.
    std::set<std::tuple<std::string, std::string, std::string>> seen;  // (src.table, dst.table, column)
    for (size_t i = 0; i < plan.groups.size(); ++i) {
        for (size_t j = i + 1; j < plan.groups.size(); ++j) {
            const PlanGroup& a = plan.groups[i];
            const PlanGroup& b = plan.groups[j];
            if (!graph.has_edge(a.terminal_key, b.terminal_key, EdgeKind::InterKey)) continue;
            for (const auto& key : table_keys(graph, a.table)) {
                auto other = graph.find(b.table, key.column);
                if (!other || !other->is_primary_key) continue;
                if (!graph.has_edge(key, *other, EdgeKind::InterKey)) continue;
                if (!seen.insert({a.table, b.table, key.column}).second) continue;
                plan.join_edges.push_back({key, *other, EdgeKind::InterKey,
                                           a.table + " joins " + b.table + " on " + key.column});
            }
        }
    }
    return plan;
}

JoinPlan build_join_plan(const std::vector<DependencyPath>& raw, const SchemaGraph& graph) {
    std::vector<DependencyPath> pruned;
    std::vector<SchemaEdge> derive_records;
    for (const auto& path : raw) {
        PruneResult result = prune_path_detailed(path);
        pruned.push_back(std::move(result.pruned));
        for (const auto& edge : result.dropped_inter_edges) {
            if (edge.kind == EdgeKind::InterDerive) derive_records.push_back(edge);
        }
    }
    JoinPlan plan = merge_paths(pruned, graph);
    for (const auto& edge : derive_records) {
        bool present = false;
        for (const auto& existing : plan.join_edges) {
            if (existing.kind == edge.kind && existing.src == edge.src && existing.dst == edge.dst) {
                present = true;
                break;
            }
        }
        if (!present) plan.join_edges.push_back(edge);
    }
    return plan;
}

std::string format_reasoning_chain(const DependencyPath& path) {
    std::ostringstream out;
    for (size_t i = 0; i < path.nodes.size(); ++i) {
        if (i > 0) out << ", ";
        out << schema::format_node(path.nodes[i]);
    }
    return out.str();
}

std::vector<std::string> plan_chain_lines(const JoinPlan& plan) {
    std::vector<std::string> lines;
    for (const auto& group : plan.groups) {
        for (const auto& path : group.pruned_paths) lines.push_back(format_reasoning_chain(path));
    }
    std::set<std::pair<std::string, std::string>> terminals;
    for (const auto& group : plan.groups) {
        terminals.insert({group.terminal_key.table, group.terminal_key.column});
    }
    for (const auto& edge : plan.join_edges) {
        if (edge.kind != EdgeKind::InterKey) continue;
        if (!terminals.count({edge.src.table, edge.src.column}) ||
            !terminals.count({edge.dst.table, edge.dst.column})) {
            continue;
        }
        lines.push_back(schema::format_node(edge.src) + ", " + schema::format_node(edge.dst));
    }
    return lines;
}

std::string format_reasoning_chain(const JoinPlan& plan) {
    std::ostringstream out;
    int n = 1;
    for (const auto& line : plan_chain_lines(plan)) {
        out << "Path " << n++ << ": " << line << "\n";
    }
    return out.str();
}

std::string serialize_join_plan(const JoinPlan& plan) {
    nlohmann::json doc;
    doc["groups"] = nlohmann::json::array();
    for (const auto& group : plan.groups) {
        nlohmann::json g;
        g["table"] = group.table;
        g["terminal_key"] = schema::format_node(group.terminal_key);
        g["attributes"] = nlohmann::json::array();
        for (const auto& attr : group.attributes) g["attributes"].push_back(schema::format_node(attr));
        g["paths"] = nlohmann::json::array();
        for (const auto& path : group.pruned_paths) {
            nlohmann::json p = nlohmann::json::array();
            for (const auto& node : path.nodes) p.push_back(schema::format_node(node));
            g["paths"].push_back(std::move(p));
        }
        doc["groups"].push_back(std::move(g));
    }
    doc["join_edges"] = nlohmann::json::array();
    for (const auto& edge : plan.join_edges) {
        doc["join_edges"].push_back({{"src", schema::format_node(edge.src)},
                                     {"dst", schema::format_node(edge.dst)},
                                     {"kind", std::string(schema::edge_kind_name(edge.kind))}});
    }
    return doc.dump(2);
}

}  // namespace sgam::paths
