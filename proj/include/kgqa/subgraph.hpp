#pragma once
// k-hop subgraph extraction (undirected reachability, directed edges kept)
// and the joint working graph: context node 0 plus the pruned KG subgraph,
// with node types and relevance features.

#include <map>
#include <set>
#include <string>
#include <vector>

#include "kgqa/kg_store.hpp"

namespace kgqa {

struct SubgraphSpec {
    int k = 2;             // hop radius; also the GNN layer count
    int max_nodes = 200;   // KG nodes kept after pruning (context node extra)

    void validate() const;
};

struct ExtractedSubgraph {
    std::vector<NodeId> nodes;           // ascending KG node ids
    std::vector<std::uint32_t> edges;    // indexes into kg.edges()
};

// All nodes within undirected distance <= k of any topic id, plus every KG
// edge with both endpoints inside. Empty topics yield an empty result.
ExtractedSubgraph extract_khop(const KnowledgeGraph& kg, const std::set<NodeId>& topic_ids, int k);

// Keeps every topic id, fills remaining slots by descending relevance with
// ties to the lower node id, then restricts to induced edges.
ExtractedSubgraph prune_to_cap(const KnowledgeGraph& kg, const ExtractedSubgraph& sub,
                               const std::map<NodeId, double>& relevance,
                               const std::set<NodeId>& topic_ids, int max_nodes);

enum class NodeType : std::uint8_t {
    Context = 0,
    QuestionConcept = 1,
    AnswerConcept = 2,
    Other = 3,
};

constexpr int kNodeTypeCount = 4;

struct WorkingEdge {
    int src = 0;  // local node indexes; 0 is the context node
    int dst = 0;
    RelationId relation = 0;
};

struct WorkingGraph {
    // Index 0 is the context node (kg_node_ids[0] is a sentinel).
    std::vector<NodeId> kg_node_ids;
    std::vector<std::string> node_names;  // names for embedding; [0] empty
    std::vector<NodeType> types;
    std::vector<double> relevance;        // [0] fixed at 1.0
    std::vector<WorkingEdge> edges;

    int node_count() const { return static_cast<int>(kg_node_ids.size()); }
    int kg_node_count() const { return node_count() - 1; }

    void check_invariants() const;
};

// Assembles the working graph: context edges (relation 17) from node 0 to
// every topic concept present, node types from the grounding tags with the
// answer tag winning, OTHER elsewhere.
WorkingGraph build_working_graph(const KnowledgeGraph& kg, const ExtractedSubgraph& pruned,
                                 const std::set<NodeId>& question_concepts,
                                 const std::set<NodeId>& answer_concepts,
                                 const std::map<NodeId, double>& relevance);

// Cache record serialization (line-delimited JSON keyed by example/choice).
std::string working_graph_to_json(const WorkingGraph& wg, const std::string& example_id,
                                  const std::string& choice_label);
WorkingGraph working_graph_from_json(const std::string& json_line, std::string* example_id,
                                     std::string* choice_label);

}  // namespace kgqa
