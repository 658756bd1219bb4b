#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "sgam/path_engine.hpp"
#include "sgam/schema_graph.hpp"

namespace sgam::store {

struct Table {
    std::string name;
    std::vector<std::string> columns;       // declared order
    std::vector<std::string> primary_keys;  // declared order
    std::vector<std::vector<std::string>> rows;

    size_t column_index(std::string_view column) const;
    bool has_column(std::string_view column) const;
};

using Corpus = std::map<std::string, Table>;

struct ConstraintFilter {
    enum class Comparator { Equals, Contains };

    schema::AttributeNode attribute;
    Comparator comparator = Comparator::Contains;
    std::string value;  // must be non-empty

    std::string describe() const;
};

// A filtered view: surviving row indices per table. Tables without a
// targeting filter keep all rows.
struct CorpusView {
    const Corpus* corpus = nullptr;
    std::map<std::string, std::vector<size_t>> surviving;

    const Table& table(const std::string& name) const;
    const std::vector<size_t>& rows_of(const std::string& name) const;
};

// Joined record: "TABLE.COLUMN" -> cell value for every group attribute and
// primary key.
using JoinedRecord = std::map<std::string, std::string>;

struct FactTemplate {
    std::string table;
    // Text with {COLUMN} placeholders; empty pattern means "use the generic
    // fallback", with `descriptions` still overriding column phrasing.
    std::string pattern;
    std::map<std::string, std::string> descriptions;
};

struct Fact {
    struct Provenance {
        std::string table;
        std::vector<std::string> key_columns;
        std::vector<std::string> key_values;
        std::vector<std::string> columns;  // non-key columns rendered
    };

    std::string text;
    Provenance provenance;
};

// RFC-4180 CSV: quoted fields, doubled quotes, newlines inside quotes,
// LF or CRLF records. Returns raw rows including the header.
std::vector<std::vector<std::string>> parse_csv(std::string_view text);

// Loads one CSV per declared table from `directory` (NAME.csv). Headers must
// match the declared columns (order-insensitive); cells are reordered to
// declared order and kept as strings. Throws MissingTableFile,
// HeaderMismatch, DuplicateKey.
Corpus load_csv_tables(const std::filesystem::path& directory, const schema::SchemaSpec& spec);

// Applies every filter to its target table (AND semantics). Equals compares
// after trimming surrounding whitespace; Contains is a case-insensitive
// substring test. Empty cells match nothing.
CorpusView apply_constraints(const Corpus& corpus, const std::vector<ConstraintFilter>& filters);

// Equi-joins the plan's groups pairwise, left to right in group order, on the
// key columns named by plan.join_edges (inner join). With no applicable join
// edge a pair degenerates to a cross join. Row order is deterministic: first
// group input order, then join order.
std::vector<JoinedRecord> execute_join_plan(const CorpusView& view, const paths::JoinPlan& plan);

// Renders one fact per (record, group). A table-specific template wins;
// otherwise the generic fallback "In case {CASEID}[, for vehicle NO.{VEHNO}]
// [, occupant NO.{OCCNO}], the <description> is: <value>, ..." over the
// group's non-key attributes. Facts are deduplicated and ordered by
// (table, key tuple). Empty cells render as "Unknown".
std::vector<Fact> extract_facts(const std::vector<JoinedRecord>& records,
                                const std::vector<FactTemplate>& templates, const paths::JoinPlan& plan);

// JSON map: table -> {pattern, descriptions: {column: phrase}}.
std::vector<FactTemplate> load_fact_templates(const std::filesystem::path& path);

}  // namespace sgam::store
