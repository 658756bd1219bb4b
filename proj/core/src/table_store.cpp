#include "sgam/table_store.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "sgam/text_util.hpp"

namespace sgam::store {

namespace {

using paths::JoinPlan;
using paths::PlanGroup;
using schema::EdgeKind;

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingTableFile("cannot open " + path.string());
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

std::string record_key(const std::string& table, const std::string& column) { return table + "." + column; }

}  // namespace

size_t Table::column_index(std::string_view column) const {
    for (size_t i = 0; i < columns.size(); ++i) {
        if (columns[i] == column) return i;
    }
    throw UnknownAttribute("table " + name + " has no column \"" + std::string(column) + "\"");
}

bool Table::has_column(std::string_view column) const {
    return std::find(columns.begin(), columns.end(), column) != columns.end();
}

std::string ConstraintFilter::describe() const {
    const char* op = comparator == Comparator::Equals ? "equals" : "contains";
    return schema::format_node(attribute) + " " + op + " \"" + value + "\"";
}

const Table& CorpusView::table(const std::string& name) const {
    auto it = corpus->find(name);
    if (it == corpus->end()) throw UnknownAttribute("table " + name + " is not loaded");
    return it->second;
}

const std::vector<size_t>& CorpusView::rows_of(const std::string& name) const {
    auto it = surviving.find(name);
    if (it == surviving.end()) throw UnknownAttribute("table " + name + " is not part of this view");
    return it->second;
}

std::vector<std::vector<std::string>> parse_csv(std::string_view text) {
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> row;
    std::string field;
    bool quoted = false;
    bool field_started = false;

    size_t i = 0;
    auto end_field = [&]() {
        row.push_back(field);
        field.clear();
        field_started = false;
    };
    auto end_row = [&]() {
        end_field();
        rows.push_back(row);
        row.clear();
    };

    while (i < text.size()) {
        char c = text[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field.push_back('"');
                    i += 2;
                } else {
                    quoted = false;
                    ++i;
                }
            } else {
                field.push_back(c);
                ++i;
            }
            continue;
        }
        switch (c) {
            case '"':
                if (!field_started && field.empty()) {
                    quoted = true;
                } else {
                    field.push_back('"');
                }
                field_started = true;
                ++i;
                break;
            case ',':
                end_field();
                ++i;
                break;
            case '\r':
                if (i + 1 < text.size() && text[i + 1] == '\n') {
                    end_row();
                    i += 2;
                } else {
                    field.push_back(c);
                    ++i;
                }
                break;
            case '\n':
                end_row();
                ++i;
                break;
            default:
                field.push_back(c);
                field_started = true;
                ++i;
        }
    }
    if (quoted) throw SyntaxError("unterminated quoted CSV field");
    if (field_started || !field.empty() || !row.empty()) end_row();
    return rows;
}

Corpus load_csv_tables(const std::filesystem::path& directory, const schema::SchemaSpec& spec) {
    Corpus corpus;
    for (const auto& decl : spec.tables) {
        const std::filesystem::path file = directory / (decl.name + ".csv");
        if (!std::filesystem::exists(file)) {
            throw MissingTableFile("no CSV file for table " + decl.name + " (expected " + file.string() + ")");
        }
        auto rows = parse_csv(read_file(file));
        if (rows.empty()) throw HeaderMismatch("table " + decl.name + ": CSV file has no header row");

        const std::vector<std::string>& header = rows.front();
        std::vector<std::string> declared;
        for (const auto& col : decl.columns) declared.push_back(col.name);

        std::vector<std::string> missing, extra;
        for (const auto& col : declared) {
            if (std::find(header.begin(), header.end(), col) == header.end()) missing.push_back(col);
        }
        for (const auto& col : header) {
            if (std::find(declared.begin(), declared.end(), col) == declared.end()) extra.push_back(col);
        }
        if (!missing.empty() || !extra.empty()) {
            std::string msg = "table " + decl.name + ": header mismatch";
            if (!missing.empty()) msg += "; missing columns: " + text::join(missing, ", ");
            if (!extra.empty()) msg += "; undeclared columns: " + text::join(extra, ", ");
            throw HeaderMismatch(msg);
        }

        // Map declared order -> CSV order.
        std::vector<size_t> source_index;
        for (const auto& col : declared) {
            source_index.push_back(static_cast<size_t>(
                std::find(header.begin(), header.end(), col) - header.begin()));
        }

        Table table;
        table.name = decl.name;
        table.columns = declared;
        for (const auto& col : decl.columns) {
            if (col.primary_key) table.primary_keys.push_back(col.name);
        }

        std::set<std::vector<std::string>> seen_keys;
        for (size_t r = 1; r < rows.size(); ++r) {
            const auto& raw = rows[r];
            if (raw.size() != header.size()) {
                throw SyntaxError("table " + decl.name + ": row " + std::to_string(r + 1) + " has " +
                                  std::to_string(raw.size()) + " fields, expected " +
                                  std::to_string(header.size()));
            }
            std::vector<std::string> row;
            row.reserve(declared.size());
            for (size_t c = 0; c < declared.size(); ++c) row.push_back(raw[source_index[c]]);

            std::vector<std::string> key;
            for (const auto& pk : table.primary_keys) key.push_back(row[table.column_index(pk)]);
            if (!table.primary_keys.empty() && !seen_keys.insert(key).second) {
                throw DuplicateKey("table " + decl.name + ": duplicate primary key (" + text::join(key, ", ") +
                                   ")");
            }
            table.rows.push_back(std::move(row));
        }
        corpus.emplace(decl.name, std::move(table));
    }
    return corpus;
}

CorpusView apply_constraints(const Corpus& corpus, const std::vector<ConstraintFilter>& filters) {
    for (const auto& filter : filters) {
        if (filter.value.empty()) throw ValidationError("filter value must be non-empty");
        auto it = corpus.find(filter.attribute.table);
        if (it == corpus.end() || !it->second.has_column(filter.attribute.column)) {
            throw UnknownAttribute("filter targets unknown attribute " + schema::format_node(filter.attribute));
        }
    }

    CorpusView view;
    view.corpus = &corpus;
    for (const auto& [name, table] : corpus) {
        std::vector<size_t> rows;
        for (size_t r = 0; r < table.rows.size(); ++r) {
            bool keep = true;
            for (const auto& filter : filters) {
                if (filter.attribute.table != name) continue;
                const std::string& cell = table.rows[r][table.column_index(filter.attribute.column)];
                if (cell.empty()) {
                    keep = false;
                    break;
                }
                const bool match = filter.comparator == ConstraintFilter::Comparator::Equals
                                       ? text::trim(cell) == text::trim(filter.value)
                                       : text::contains_ci(cell, filter.value);
                if (!match) {
                    keep = false;
                    break;
                }
            }
            if (keep) rows.push_back(r);
        }
        view.surviving.emplace(name, std::move(rows));
    }
    return view;
}

namespace {

JoinedRecord project(const Table& table, size_t row, const PlanGroup& group) {
    JoinedRecord record;
    for (const auto& attr : group.attributes) {
        record[record_key(table.name, attr.column)] = table.rows[row][table.column_index(attr.column)];
    }
    for (const auto& pk : table.primary_keys) {
        record[record_key(table.name, pk)] = table.rows[row][table.column_index(pk)];
    }
    record[record_key(table.name, group.terminal_key.column)] =
        table.rows[row][table.column_index(group.terminal_key.column)];
    return record;
}

}  // namespace

std::vector<JoinedRecord> execute_join_plan(const CorpusView& view, const JoinPlan& plan) {
    if (plan.groups.empty()) return {};

    std::set<std::string> group_tables;
    for (const auto& group : plan.groups) {
        view.table(group.table);  // throws when missing
        if (!group_tables.insert(group.table).second) {
            throw UnjoinableGroups("plan lists table " + group.table + " in more than one group");
        }
    }
    for (const auto& edge : plan.join_edges) {
        if (edge.kind != EdgeKind::InterKey) continue;
        for (const auto* node : {&edge.src, &edge.dst}) {
            if (!group_tables.count(node->table)) continue;
            if (!view.table(node->table).has_column(node->column)) {
                throw UnjoinableGroups("join edge references key column " + schema::format_node(*node) +
                                       " absent from table " + node->table);
            }
        }
    }

    // Seed with the first group's surviving rows.
    std::vector<JoinedRecord> acc;
    {
        const PlanGroup& first = plan.groups.front();
        const Table& table = view.table(first.table);
        for (size_t row : view.rows_of(first.table)) acc.push_back(project(table, row, first));
    }

    std::set<std::string> joined_tables = {plan.groups.front().table};
    for (size_t g = 1; g < plan.groups.size(); ++g) {
        const PlanGroup& group = plan.groups[g];
        const Table& table = view.table(group.table);

        // Equality predicates between the incoming group and any table
        // already joined, as named by the plan's InterKey edges.
        std::vector<std::pair<std::string, std::string>> predicates;  // (acc key, incoming column)
        for (const auto& edge : plan.join_edges) {
            if (edge.kind != EdgeKind::InterKey) continue;
            const schema::AttributeNode* incoming = nullptr;
            const schema::AttributeNode* settled = nullptr;
            if (edge.src.table == group.table && joined_tables.count(edge.dst.table)) {
                incoming = &edge.src;
                settled = &edge.dst;
            } else if (edge.dst.table == group.table && joined_tables.count(edge.src.table)) {
                incoming = &edge.dst;
                settled = &edge.src;
            } else {
                continue;
            }
            auto pred = std::make_pair(record_key(settled->table, settled->column), incoming->column);
            if (std::find(predicates.begin(), predicates.end(), pred) == predicates.end()) {
                predicates.push_back(pred);
            }
        }

        std::vector<JoinedRecord> next;
        for (const auto& left : acc) {
            for (size_t row : view.rows_of(group.table)) {
                bool match = true;
                for (const auto& [acc_key, column] : predicates) {
                    auto left_it = left.find(acc_key);
                    if (left_it == left.end()) {
                        throw UnjoinableGroups("join edge references key " + acc_key +
                                               " absent from the joined record");
                    }
                    const std::string& left_value = left_it->second;
                    const std::string& right_value = table.rows[row][table.column_index(column)];
                    if (left_value.empty() || right_value.empty() || left_value != right_value) {
                        match = false;
                        break;
                    }
                }
                if (!match) continue;
                JoinedRecord merged = left;
                for (auto& [key, value] : project(table, row, group)) merged[key] = value;
                next.push_back(std::move(merged));
            }
        }
        acc = std::move(next);
        joined_tables.insert(group.table);
    }
    return acc;
}

namespace {

std::string value_or_unknown(const std::string& value) { return value.empty() ? "Unknown" : value; }

std::string render_pattern(const FactTemplate& tmpl, const JoinedRecord& record, const std::string& table,
                           std::vector<std::string>* used_columns) {
    std::string out;
    const std::string& pattern = tmpl.pattern;
    for (size_t i = 0; i < pattern.size();) {
        if (pattern[i] == '{') {
            auto close = pattern.find('}', i);
            if (close == std::string::npos) {
                out.push_back(pattern[i++]);
                continue;
            }
            const std::string column = pattern.substr(i + 1, close - i - 1);
            auto it = record.find(record_key(table, column));
            if (it == record.end()) {
                throw TemplateColumnMissing("fact template for table " + table + " references column \"" + column +
                                            "\" not present in the joined record");
            }
            out += value_or_unknown(it->second);
            if (used_columns) used_columns->push_back(column);
            i = close + 1;
        } else {
            out.push_back(pattern[i++]);
        }
    }
    return out;
}

const FactTemplate* find_template(const std::vector<FactTemplate>& templates, const std::string& table) {
    for (const auto& tmpl : templates) {
        if (tmpl.table == table) return &tmpl;
    }
    return nullptr;
}

}  // namespace

std::vector<Fact> extract_facts(const std::vector<JoinedRecord>& records,
                                const std::vector<FactTemplate>& templates, const JoinPlan& plan) {
    struct Keyed {
        std::string table;
        std::vector<std::string> keys;
        Fact fact;
    };
    std::vector<Keyed> keyed;
    std::set<std::string> seen_texts;

    for (const auto& record : records) {
        for (const auto& group : plan.groups) {
            const FactTemplate* tmpl = find_template(templates, group.table);

            Fact fact;
            fact.provenance.table = group.table;
            // Key tuple for provenance and ordering: the group's key nodes as
            // exposed on the record.
            std::vector<std::string> key_values;
            std::vector<std::string> key_columns;
            auto add_key = [&](const schema::AttributeNode& node) {
                auto it = record.find(record_key(group.table, node.column));
                if (it == record.end()) return;
                if (std::find(key_columns.begin(), key_columns.end(), node.column) != key_columns.end()) return;
                key_columns.push_back(node.column);
                key_values.push_back(it->second);
            };
            for (const auto& attr : group.attributes) {
                if (attr.is_primary_key) add_key(attr);
            }
            add_key(group.terminal_key);
            fact.provenance.key_columns = key_columns;
            fact.provenance.key_values = key_values;

            if (tmpl && !tmpl->pattern.empty()) {
                fact.text = render_pattern(*tmpl, record, group.table, &fact.provenance.columns);
            } else {
                // Generic rendering: case/vehicle/occupant prefix, then one
                // clause per non-key attribute of the group.
                std::vector<std::string> parts;
                auto key_part = [&](const char* column, const std::string& phrase) {
                    auto it = record.find(record_key(group.table, column));
                    if (it != record.end()) parts.push_back(phrase + it->second);
                };
                key_part("CASEID", "In case ");
                key_part("VEHNO", "for vehicle NO.");
                key_part("OCCNO", "occupant NO.");

                bool any_attribute = false;
                for (const auto& attr : group.attributes) {
                    if (attr.is_primary_key) continue;
                    auto it = record.find(record_key(group.table, attr.column));
                    if (it == record.end()) continue;
                    std::string description = attr.column;
                    if (tmpl) {
                        auto d = tmpl->descriptions.find(attr.column);
                        if (d != tmpl->descriptions.end()) description = d->second;
                    }
                    parts.push_back("the " + description + " is: " + value_or_unknown(it->second));
                    fact.provenance.columns.push_back(attr.column);
                    any_attribute = true;
                }
                if (!any_attribute) continue;  // nothing worth stating
                fact.text = text::join(parts, ", ");
            }

            const std::string dedup_key = group.table + "\x1f" + text::join(key_values, "\x1f") + "\x1f" + fact.text;
            if (!seen_texts.insert(dedup_key).second) continue;
            keyed.push_back({group.table, key_values, std::move(fact)});
        }
    }

    std::stable_sort(keyed.begin(), keyed.end(), [](const Keyed& a, const Keyed& b) {
        if (a.table != b.table) return a.table < b.table;
        return a.keys < b.keys;
    });

    std::vector<Fact> facts;
    facts.reserve(keyed.size());
    for (auto& k : keyed) facts.push_back(std::move(k.fact));
    return facts;
}

std::vector<FactTemplate> load_fact_templates(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open fact template file " + path.string());
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw SyntaxError("malformed fact template file " + path.string() + ": " + e.what());
    }
    if (!doc.is_object()) throw ValidationError("fact template file must map table names to templates");

    std::vector<FactTemplate> templates;
    for (const auto& [table, entry] : doc.items()) {
        if (!entry.is_object()) throw ValidationError("fact template for table " + table + " must be an object");
        FactTemplate tmpl;
        tmpl.table = table;
        if (entry.contains("pattern")) tmpl.pattern = entry["pattern"].get<std::string>();
        if (entry.contains("descriptions")) {
            for (const auto& [column, phrase] : entry["descriptions"].items()) {
                tmpl.descriptions[column] = phrase.get<std::string>();
            }
        }
        templates.push_back(std::move(tmpl));
    }
    return templates;
}

}  // namespace sgam::store
