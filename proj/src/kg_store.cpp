#include "kgqa/kg_store.hpp"

#include <algorithm>
#include <cctype>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace kgqa {

namespace {

constexpr char kGraphMagic[8] = {'K', 'G', 'Q', 'A', 'G', 'R', 'P', 'H'};
constexpr std::uint32_t kGraphFormatVersion = 1;

std::string ascii_lower(std::string_view s) {
    std::string out(s);
    for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

bool starts_with(std::string_view s, std::string_view prefix) {
    return s.size() >= prefix.size() && s.substr(0, prefix.size()) == prefix;
}

std::vector<std::string_view> split_tabs(std::string_view line) {
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
        const std::size_t tab = line.find('\t', start);
        if (tab == std::string_view::npos) {
            fields.push_back(line.substr(start));
            break;
        }
        fields.push_back(line.substr(start, tab - start));
        start = tab + 1;
    }
    return fields;
}

template <typename T>
void write_pod(std::ostream& out, const T& value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const char* what) {
    T value{};
    in.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (!in) throw IoError(std::string("graph file truncated while reading ") + what);
    return value;
}

void write_string(std::ostream& out, const std::string& s) {
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in, const char* what) {
    const auto len = read_pod<std::uint32_t>(in, what);
    std::string s(len, '\0');
    in.read(s.data(), static_cast<std::streamsize>(len));
    if (!in) throw IoError(std::string("graph file truncated while reading ") + what);
    return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

std::string normalize_concept_uri(std::string_view uri) {
    std::string_view rest = uri;
    if (starts_with(rest, "/c/en/")) rest.remove_prefix(6);
    // Part-of-speech / sense suffix: everything from the next slash on.
    const std::size_t slash = rest.find('/');
    if (slash != std::string_view::npos) rest = rest.substr(0, slash);
    return ascii_lower(rest);
}

ParseOutcome parse_assertion_line(std::string_view line, std::size_t line_number) {
    if (line.empty()) {
        return ParseError{line_number, "empty line"};
    }
    const auto fields = split_tabs(line);
    if (fields.size() != 5) {
        return ParseError{line_number,
                          "expected 5 tab-separated fields, got " + std::to_string(fields.size())};
    }
    const std::string_view relation = fields[1];
    const std::string_view start = fields[2];
    const std::string_view end = fields[3];
    if (!starts_with(relation, "/r/")) {
        return ParseError{line_number, "relation does not begin with /r/"};
    }
    if (start.empty() || end.empty()) {
        return ParseError{line_number, "empty start or end concept"};
    }
    if (!starts_with(start, "/c/en/") || !starts_with(end, "/c/en/")) {
        return ParseSkip{};
    }

    double weight = 1.0;
    if (!fields[4].empty()) {
        nlohmann::json meta = nlohmann::json::parse(fields[4], nullptr, false);
        if (meta.is_discarded() || !meta.is_object()) {
            return ParseError{line_number, "unparseable JSON metadata"};
        }
        if (meta.contains("weight")) {
            if (!meta["weight"].is_number()) {
                return ParseError{line_number, "metadata weight is not a number"};
            }
            weight = meta["weight"].get<double>();
            if (weight < 0.0) {
                return ParseError{line_number, "negative weight"};
            }
        }
    }

    RawAssertion assertion;
    assertion.uri = std::string(fields[0]);
    assertion.relation = std::string(relation);
    assertion.start = std::string(start);
    assertion.end = std::string(end);
    assertion.weight = weight;
    return assertion;
}

// ---------------------------------------------------------------------------
// MergeTable
// ---------------------------------------------------------------------------

std::string normalize_relation_name(std::string_view relation) {
    if (starts_with(relation, "/r/")) relation.remove_prefix(3);
    return ascii_lower(relation);
}

MergeTable MergeTable::from_lines(const std::vector<std::string>& lines) {
    MergeTable table;
    std::unordered_map<std::string, RelationId> name_to_id;
    std::size_t line_no = 0;
    for (const auto& raw_line : lines) {
        ++line_no;
        std::string_view line = raw_line;
        if (line.empty() || line.front() == '#') continue;
        const std::size_t tab = line.find('\t');
        if (tab == std::string_view::npos) {
            throw DataError("merge table line " + std::to_string(line_no) + ": missing tab");
        }
        const std::string raw = ascii_lower(line.substr(0, tab));
        const std::string merged = ascii_lower(line.substr(tab + 1));
        if (raw.empty()) {
            throw DataError("merge table line " + std::to_string(line_no) + ": empty raw name");
        }
        if (merged == "drop") {
            table.raw_to_merged_[raw] = kDrop;
            continue;
        }
        auto it = name_to_id.find(merged);
        RelationId id;
        if (it == name_to_id.end()) {
            id = static_cast<RelationId>(table.merged_names_.size());
            if (id >= kMergedRelationCount) {
                throw DataError("merge table defines more than 17 merged relation types");
            }
            name_to_id.emplace(merged, id);
            table.merged_names_.push_back(merged);
        } else {
            id = it->second;
        }
        table.raw_to_merged_[raw] = id;
    }
    if (table.merged_names_.empty()) {
        throw DataError("merge table defines no merged relation types");
    }
    return table;
}

MergeTable MergeTable::load(const std::filesystem::path& path) {
    return from_lines(read_lines(path));
}

int MergeTable::merge(std::string_view raw_relation) const {
    const std::string name = normalize_relation_name(raw_relation);
    const auto it = raw_to_merged_.find(name);
    if (it != raw_to_merged_.end()) return it->second;
    // Already-merged names map to themselves.
    for (std::size_t i = 0; i < merged_names_.size(); ++i) {
        if (merged_names_[i] == name) return static_cast<int>(i);
    }
    return kDrop;
}

std::optional<RelationId> MergeTable::merged_id(std::string_view merged_name) const {
    const std::string name = ascii_lower(merged_name);
    for (std::size_t i = 0; i < merged_names_.size(); ++i) {
        if (merged_names_[i] == name) return static_cast<RelationId>(i);
    }
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// KnowledgeGraph
// ---------------------------------------------------------------------------

void KnowledgeGraph::check_node(NodeId id) const {
    if (id >= names_.size()) {
        throw ContractViolation("node id " + std::to_string(id) + " out of range (node count " +
                                std::to_string(names_.size()) + ")");
    }
}

const std::string& KnowledgeGraph::node_name(NodeId id) const {
    check_node(id);
    return names_[id];
}

std::optional<NodeId> KnowledgeGraph::find_node(std::string_view name) const {
    const auto it = name_to_id_.find(std::string(name));
    if (it == name_to_id_.end()) return std::nullopt;
    return it->second;
}

const std::vector<std::uint32_t>& KnowledgeGraph::out_edges(NodeId id) const {
    check_node(id);
    return out_[id];
}

const std::vector<std::uint32_t>& KnowledgeGraph::in_edges(NodeId id) const {
    check_node(id);
    return in_[id];
}

std::vector<NeighborEntry> KnowledgeGraph::neighbors(NodeId id, Direction direction) const {
    check_node(id);
    struct Row {
        NodeId neighbor;
        RelationId relation;
        double weight;
        int dir;  // 0 = out, 1 = in; tie order for Both
    };
    std::vector<Row> rows;
    if (direction == Direction::Out || direction == Direction::Both) {
        for (const auto e : out_[id]) {
            rows.push_back({edges_[e].dst, edges_[e].relation, edges_[e].weight, 0});
        }
    }
    if (direction == Direction::In || direction == Direction::Both) {
        for (const auto e : in_[id]) {
            // Self-loops already appear on the out side.
            if (direction == Direction::Both && edges_[e].src == id && edges_[e].dst == id) continue;
            rows.push_back({edges_[e].src, edges_[e].relation, edges_[e].weight, 1});
        }
    }
    std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
        if (a.neighbor != b.neighbor) return a.neighbor < b.neighbor;
        if (a.relation != b.relation) return a.relation < b.relation;
        return a.dir < b.dir;
    });
    std::vector<NeighborEntry> out;
    out.reserve(rows.size());
    for (const auto& r : rows) out.push_back({r.neighbor, r.relation, r.weight});
    return out;
}

GraphStats KnowledgeGraph::stats() const {
    GraphStats s;
    s.node_count = names_.size();
    s.edge_count = edges_.size();
    s.histogram.assign(kMergedRelationCount, 0);
    for (const auto& e : edges_) {
        if (e.relation < kMergedRelationCount) ++s.histogram[e.relation];
    }
    s.relation_type_count = static_cast<int>(
        std::count_if(s.histogram.begin(), s.histogram.end(), [](std::uint64_t c) { return c > 0; }));
    return s;
}

std::string GraphStats::to_report(const MergeTable& table) const {
    std::ostringstream out;
    out << "nodes\t" << node_count << "\n";
    out << "edges\t" << edge_count << "\n";
    out << "relation_types\t" << relation_type_count << "\n";
    const auto& names = table.merged_names();
    for (std::size_t i = 0; i < histogram.size() && i < names.size(); ++i) {
        out << "rel\t" << names[i] << "\t" << histogram[i] << "\n";
    }
    return out.str();
}

void KnowledgeGraph::build_adjacency() {
    out_.assign(names_.size(), {});
    in_.assign(names_.size(), {});
    for (std::uint32_t i = 0; i < edges_.size(); ++i) {
        out_[edges_[i].src].push_back(i);
        in_[edges_[i].dst].push_back(i);
    }
}

void KnowledgeGraph::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open graph file for writing: " + path.string());
    out.write(kGraphMagic, sizeof(kGraphMagic));
    write_pod<std::uint32_t>(out, kGraphFormatVersion);
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(relation_names_.size()));
    for (const auto& name : relation_names_) write_string(out, name);
    write_pod<std::uint64_t>(out, names_.size());
    for (const auto& name : names_) write_string(out, name);
    write_pod<std::uint64_t>(out, edges_.size());
    for (const auto& e : edges_) {
        write_pod<std::uint32_t>(out, e.src);
        write_pod<std::uint32_t>(out, e.dst);
        write_pod<std::uint16_t>(out, e.relation);
        write_pod<double>(out, e.weight);
    }
    if (!out) throw IoError("graph write failed: " + path.string());
}

KnowledgeGraph KnowledgeGraph::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open graph file: " + path.string());
    char magic[8] = {};
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kGraphMagic, sizeof(magic)) != 0) {
        throw IoError("not a graph file (bad magic): " + path.string());
    }
    const auto version = read_pod<std::uint32_t>(in, "version");
    if (version != kGraphFormatVersion) {
        throw IoError("unsupported graph format version " + std::to_string(version));
    }
    KnowledgeGraph g;
    const auto rel_count = read_pod<std::uint32_t>(in, "relation count");
    g.relation_names_.reserve(rel_count);
    for (std::uint32_t i = 0; i < rel_count; ++i) {
        g.relation_names_.push_back(read_string(in, "relation name"));
    }
    const auto node_count = read_pod<std::uint64_t>(in, "node count");
    g.names_.reserve(node_count);
    for (std::uint64_t i = 0; i < node_count; ++i) {
        g.names_.push_back(read_string(in, "node name"));
        g.name_to_id_.emplace(g.names_.back(), static_cast<NodeId>(i));
    }
    const auto edge_count = read_pod<std::uint64_t>(in, "edge count");
    g.edges_.reserve(edge_count);
    for (std::uint64_t i = 0; i < edge_count; ++i) {
        Edge e;
        e.src = read_pod<std::uint32_t>(in, "edge src");
        e.dst = read_pod<std::uint32_t>(in, "edge dst");
        e.relation = read_pod<std::uint16_t>(in, "edge relation");
        e.weight = read_pod<double>(in, "edge weight");
        if (e.src >= node_count || e.dst >= node_count) {
            throw IoError("graph file corrupt: edge endpoint out of range");
        }
        g.edges_.push_back(e);
    }
    g.build_adjacency();
    return g;
}

bool KnowledgeGraph::structurally_equal(const KnowledgeGraph& other) const {
    if (names_ != other.names_) return false;
    if (relation_names_ != other.relation_names_) return false;
    if (edges_.size() != other.edges_.size()) return false;
    for (std::size_t i = 0; i < edges_.size(); ++i) {
        const Edge& a = edges_[i];
        const Edge& b = other.edges_[i];
        if (a.src != b.src || a.dst != b.dst || a.relation != b.relation || a.weight != b.weight) {
            return false;
        }
    }
    return true;
}

// ---------------------------------------------------------------------------
// GraphBuilder
// ---------------------------------------------------------------------------

GraphBuilder::GraphBuilder(const MergeTable& table) : table_(&table) {
    graph_.relation_names_ = table.merged_names();
}

NodeId GraphBuilder::intern(const std::string& concept_name) {
    const auto it = graph_.name_to_id_.find(concept_name);
    if (it != graph_.name_to_id_.end()) return it->second;
    const NodeId id = static_cast<NodeId>(graph_.names_.size());
    graph_.names_.push_back(concept_name);
    graph_.name_to_id_.emplace(concept_name, id);
    return id;
}

bool GraphBuilder::add(const RawAssertion& assertion) {
    const int merged = table_->merge(assertion.relation);
    if (merged == MergeTable::kDrop) return false;
    const NodeId src = intern(normalize_concept_uri(assertion.start));
    const NodeId dst = intern(normalize_concept_uri(assertion.end));
    const RelationId rel = static_cast<RelationId>(merged);

    // Duplicate (src, dst, rel) edges keep the max weight.
    const std::uint64_t pair_key = (static_cast<std::uint64_t>(src) << 32) | dst;
    auto& slots = edge_index_[pair_key];
    for (const auto slot : slots) {
        Edge& e = graph_.edges_[slot];
        if (e.relation == rel) {
            e.weight = std::max(e.weight, assertion.weight);
            ++edges_processed_;
            return true;
        }
    }
    slots.push_back(static_cast<std::uint32_t>(graph_.edges_.size()));
    graph_.edges_.push_back({src, dst, rel, assertion.weight});
    ++edges_processed_;
    return true;
}

KnowledgeGraph GraphBuilder::finish() {
    graph_.build_adjacency();
    return std::move(graph_);
}

KnowledgeGraph build_graph_from_dump(std::istream& dump, const MergeTable& table,
                                     IngestSummary* summary) {
    GraphBuilder builder(table);
    IngestSummary local;
    std::string line;
    std::size_t line_no = 0;
    constexpr std::size_t kMaxRecordedErrors = 100;
    while (std::getline(dump, line)) {
        ++line_no;
        ++local.lines_read;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        ParseOutcome outcome = parse_assertion_line(line, line_no);
        if (std::holds_alternative<ParseSkip>(outcome)) {
            ++local.skipped_non_english;
            continue;
        }
        if (auto* err = std::get_if<ParseError>(&outcome)) {
            if (local.errors.size() < kMaxRecordedErrors) local.errors.push_back(*err);
            continue;
        }
        const auto& assertion = std::get<RawAssertion>(outcome);
        if (builder.add(assertion)) {
            ++local.assertions_kept;
        } else {
            ++local.dropped_relations;
        }
    }
    if (summary) *summary = local;
    return builder.finish();
}

}  // namespace kgqa
