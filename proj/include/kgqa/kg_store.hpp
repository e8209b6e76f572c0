#pragma once
// Knowledge-graph store: ConceptNet assertion ingestion, 42->17 relation
// merging, a dictionary-encoded immutable graph with adjacency indexes,
// and a versioned binary file format.
//
// Graph file layout (little-endian):
//   8 bytes   magic "KGQAGRPH"
//   u32       format version (1)
//   u32       merged relation name count, then length-prefixed names
//   u64       node count, then length-prefixed concept names (id order)
//   u64       edge count, then edges as (u32 src, u32 dst, u16 rel, f64 weight)
// Adjacency indexes are rebuilt on load; vocabulary order, edges and weights
// round-trip bit-exactly.

#include <cstdint>
#include <filesystem>
#include <istream>
#include <optional>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include "kgqa/common.hpp"

namespace kgqa {

using NodeId = std::uint32_t;
using RelationId = std::uint16_t;

constexpr int kMergedRelationCount = 17;
// Dedicated relation for context-node edges in working graphs.
constexpr RelationId kContextRelation = 17;

struct RawAssertion {
    std::string uri;
    std::string relation;  // "/r/..."
    std::string start;     // "/c/en/..."
    std::string end;
    double weight = 1.0;
};

// Result of parsing one dump line: an assertion, a silent skip
// (non-English endpoints), or a recoverable error with the line number.
struct ParseSkip {};

struct ParseError {
    std::size_t line_number = 0;
    std::string message;
};

using ParseOutcome = std::variant<RawAssertion, ParseSkip, ParseError>;

ParseOutcome parse_assertion_line(std::string_view line, std::size_t line_number);

// Strip "/c/en/" and any part-of-speech suffix, lowercase, keep underscores.
std::string normalize_concept_uri(std::string_view uri);

// ---------------------------------------------------------------------------
// MergeTable: raw relation name -> merged id (0..16) or DROP.
// ---------------------------------------------------------------------------

class MergeTable {
public:
    static constexpr int kDrop = -1;

    // File format: one "raw_name<TAB>merged_name|DROP" per line, '#' comments.
    static MergeTable load(const std::filesystem::path& path);
    static MergeTable from_lines(const std::vector<std::string>& lines);

    // Total over raw names: unknown and DROP both return kDrop. A name that
    // already equals a merged name maps to its own id (idempotence).
    int merge(std::string_view raw_relation) const;

    const std::vector<std::string>& merged_names() const { return merged_names_; }
    std::optional<RelationId> merged_id(std::string_view merged_name) const;
    std::size_t raw_entry_count() const { return raw_to_merged_.size(); }

private:
    std::unordered_map<std::string, int> raw_to_merged_;
    std::vector<std::string> merged_names_;
};

// Lowercase a raw relation name, stripping any leading "/r/".
std::string normalize_relation_name(std::string_view relation);

// ---------------------------------------------------------------------------
// KnowledgeGraph: immutable after build/load; concurrent reads are safe.
// ---------------------------------------------------------------------------

struct Edge {
    NodeId src = 0;
    NodeId dst = 0;
    RelationId relation = 0;
    double weight = 1.0;
};

struct NeighborEntry {
    NodeId neighbor = 0;
    RelationId relation = 0;
    double weight = 1.0;
};

enum class Direction { Out, In, Both };

struct GraphStats {
    std::uint64_t node_count = 0;
    std::uint64_t edge_count = 0;
    int relation_type_count = 0;             // distinct relation ids present
    std::vector<std::uint64_t> histogram;    // edge count per merged id

    std::string to_report(const MergeTable& table) const;
};

class KnowledgeGraph {
public:
    KnowledgeGraph() = default;

    std::size_t node_count() const { return names_.size(); }
    std::size_t edge_count() const { return edges_.size(); }

    const std::string& node_name(NodeId id) const;
    std::optional<NodeId> find_node(std::string_view name) const;
    const std::vector<std::string>& node_names() const { return names_; }
    const std::vector<Edge>& edges() const { return edges_; }

    // Complete, duplicate-free, ordered by (neighbor id, relation id);
    // Both lists out entries before in entries on full ties.
    std::vector<NeighborEntry> neighbors(NodeId id, Direction direction) const;

    // Edge indexes into edges() for BFS-style traversal.
    const std::vector<std::uint32_t>& out_edges(NodeId id) const;
    const std::vector<std::uint32_t>& in_edges(NodeId id) const;

    GraphStats stats() const;

    void save(const std::filesystem::path& path) const;
    static KnowledgeGraph load(const std::filesystem::path& path);

    bool structurally_equal(const KnowledgeGraph& other) const;

    friend class GraphBuilder;

private:
    void build_adjacency();
    void check_node(NodeId id) const;

    std::vector<std::string> names_;                       // id -> concept name
    std::unordered_map<std::string, NodeId> name_to_id_;
    std::vector<std::string> relation_names_;              // merged id -> name
    std::vector<Edge> edges_;
    std::vector<std::vector<std::uint32_t>> out_;          // node -> edge idxs
    std::vector<std::vector<std::uint32_t>> in_;
};

// ---------------------------------------------------------------------------
// GraphBuilder: streaming construction. Node ids are assigned in first-seen
// order; duplicate (src, dst, rel) edges keep the maximum weight.
// ---------------------------------------------------------------------------

class GraphBuilder {
public:
    explicit GraphBuilder(const MergeTable& table);

    // Returns false when the assertion's relation merges to DROP.
    bool add(const RawAssertion& assertion);

    KnowledgeGraph finish();

    std::size_t edges_processed() const { return edges_processed_; }

private:
    NodeId intern(const std::string& concept_name);

    const MergeTable* table_;
    KnowledgeGraph graph_;
    // (src << 32 | dst) -> edge slots, for duplicate-relation lookups.
    std::unordered_map<std::uint64_t, std::vector<std::uint32_t>> edge_index_;
    std::size_t edges_processed_ = 0;
};

// Parse + merge + build over a whole dump stream. Parse errors are collected
// (up to a cap) and reported; skips are counted.
struct IngestSummary {
    std::size_t lines_read = 0;
    std::size_t assertions_kept = 0;
    std::size_t skipped_non_english = 0;
    std::size_t dropped_relations = 0;
    std::vector<ParseError> errors;
};

KnowledgeGraph build_graph_from_dump(std::istream& dump, const MergeTable& table,
                                     IngestSummary* summary = nullptr);

}  // namespace kgqa
