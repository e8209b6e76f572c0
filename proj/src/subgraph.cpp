#include "kgqa/subgraph.hpp"

#include <algorithm>
#include <deque>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

namespace kgqa {

void SubgraphSpec::validate() const {
    if (k < 1) throw ConfigError("subgraph k must be >= 1");
    if (max_nodes < 1) throw ConfigError("subgraph max_nodes must be >= 1");
}

ExtractedSubgraph extract_khop(const KnowledgeGraph& kg, const std::set<NodeId>& topic_ids, int k) {
    if (k < 0) throw ContractViolation("extract_khop: k must be >= 0");
    ExtractedSubgraph out;
    if (topic_ids.empty()) return out;

    std::unordered_map<NodeId, int> dist;
    std::deque<NodeId> frontier;
    for (const auto id : topic_ids) {
        if (id >= kg.node_count()) throw ContractViolation("extract_khop: topic id out of range");
        dist.emplace(id, 0);
        frontier.push_back(id);
    }
    while (!frontier.empty()) {
        const NodeId u = frontier.front();
        frontier.pop_front();
        const int d = dist[u];
        if (d >= k) continue;
        auto visit = [&](NodeId v) {
            if (dist.emplace(v, d + 1).second) frontier.push_back(v);
        };
        for (const auto e : kg.out_edges(u)) visit(kg.edges()[e].dst);
        for (const auto e : kg.in_edges(u)) visit(kg.edges()[e].src);
    }

    out.nodes.reserve(dist.size());
    for (const auto& [id, _] : dist) out.nodes.push_back(id);
    std::sort(out.nodes.begin(), out.nodes.end());

    std::unordered_set<NodeId> inside(out.nodes.begin(), out.nodes.end());
    std::unordered_set<std::uint32_t> edge_seen;
    for (const auto id : out.nodes) {
        for (const auto e : kg.out_edges(id)) {
            if (inside.count(kg.edges()[e].dst) && edge_seen.insert(e).second) {
                out.edges.push_back(e);
            }
        }
    }
    std::sort(out.edges.begin(), out.edges.end());
    return out;
}

ExtractedSubgraph prune_to_cap(const KnowledgeGraph& kg, const ExtractedSubgraph& sub,
                               const std::map<NodeId, double>& relevance,
                               const std::set<NodeId>& topic_ids, int max_nodes) {
    if (max_nodes < static_cast<int>(topic_ids.size())) {
        throw ContractViolation("prune_to_cap: max_nodes smaller than topic concept count");
    }
    if (sub.nodes.size() <= static_cast<std::size_t>(max_nodes)) return sub;

    std::vector<NodeId> others;
    others.reserve(sub.nodes.size());
    for (const auto id : sub.nodes) {
        if (!topic_ids.count(id)) others.push_back(id);
    }
    auto rel_of = [&](NodeId id) {
        const auto it = relevance.find(id);
        return it == relevance.end() ? 0.0 : it->second;
    };
    std::sort(others.begin(), others.end(), [&](NodeId a, NodeId b) {
        const double ra = rel_of(a);
        const double rb = rel_of(b);
        if (ra != rb) return ra > rb;
        return a < b;
    });

    ExtractedSubgraph out;
    out.nodes.assign(topic_ids.begin(), topic_ids.end());
    const std::size_t slots = static_cast<std::size_t>(max_nodes) - out.nodes.size();
    for (std::size_t i = 0; i < slots && i < others.size(); ++i) out.nodes.push_back(others[i]);
    std::sort(out.nodes.begin(), out.nodes.end());

    std::unordered_set<NodeId> inside(out.nodes.begin(), out.nodes.end());
    for (const auto e : sub.edges) {
        const Edge& edge = kg.edges()[e];
        if (inside.count(edge.src) && inside.count(edge.dst)) out.edges.push_back(e);
    }
    return out;
}

void WorkingGraph::check_invariants() const {
    const int n = node_count();
    if (n < 1) throw ContractViolation("working graph missing context node");
    if (types.size() != kg_node_ids.size() || relevance.size() != kg_node_ids.size() ||
        node_names.size() != kg_node_ids.size()) {
        throw ContractViolation("working graph field sizes disagree");
    }
    if (types[0] != NodeType::Context || relevance[0] != 1.0) {
        throw ContractViolation("node 0 must be the context node with relevance 1");
    }
    std::unordered_set<int> context_adjacent;
    for (const auto& e : edges) {
        if (e.src < 0 || e.src >= n || e.dst < 0 || e.dst >= n) {
            throw ContractViolation("working graph edge endpoint out of range");
        }
        if (e.relation > kContextRelation) {
            throw ContractViolation("working graph relation id out of range");
        }
        if (e.src == 0) context_adjacent.insert(e.dst);
    }
    for (int i = 1; i < n; ++i) {
        if ((types[i] == NodeType::QuestionConcept || types[i] == NodeType::AnswerConcept) &&
            !context_adjacent.count(i)) {
            throw ContractViolation("topic concept not adjacent to the context node");
        }
        if (relevance[i] < 0.0 || relevance[i] > 1.0) {
            throw ContractViolation("relevance outside [0,1]");
        }
    }
}

WorkingGraph build_working_graph(const KnowledgeGraph& kg, const ExtractedSubgraph& pruned,
                                 const std::set<NodeId>& question_concepts,
                                 const std::set<NodeId>& answer_concepts,
                                 const std::map<NodeId, double>& relevance) {
    WorkingGraph wg;
    wg.kg_node_ids.push_back(0);
    wg.node_names.emplace_back();
    wg.types.push_back(NodeType::Context);
    wg.relevance.push_back(1.0);

    std::unordered_map<NodeId, int> local;
    for (const auto id : pruned.nodes) {
        local.emplace(id, wg.node_count());
        wg.kg_node_ids.push_back(id);
        wg.node_names.push_back(kg.node_name(id));
        if (answer_concepts.count(id)) {
            wg.types.push_back(NodeType::AnswerConcept);  // answer tag wins
        } else if (question_concepts.count(id)) {
            wg.types.push_back(NodeType::QuestionConcept);
        } else {
            wg.types.push_back(NodeType::Other);
        }
        const auto it = relevance.find(id);
        double rel = it == relevance.end() ? 0.0 : it->second;
        rel = std::clamp(rel, 0.0, 1.0);
        wg.relevance.push_back(rel);
    }

    // Context edges to every topic concept that survived pruning.
    for (int i = 1; i < wg.node_count(); ++i) {
        if (wg.types[static_cast<std::size_t>(i)] == NodeType::QuestionConcept ||
            wg.types[static_cast<std::size_t>(i)] == NodeType::AnswerConcept) {
            wg.edges.push_back({0, i, kContextRelation});
        }
    }
    for (const auto e : pruned.edges) {
        const Edge& edge = kg.edges()[e];
        wg.edges.push_back({local.at(edge.src), local.at(edge.dst), edge.relation});
    }
    wg.check_invariants();
    return wg;
}

std::string working_graph_to_json(const WorkingGraph& wg, const std::string& example_id,
                                  const std::string& choice_label) {
    nlohmann::json j;
    j["example_id"] = example_id;
    j["choice_label"] = choice_label;
    j["kg_node_ids"] = std::vector<NodeId>(wg.kg_node_ids.begin() + 1, wg.kg_node_ids.end());
    j["node_names"] = std::vector<std::string>(wg.node_names.begin() + 1, wg.node_names.end());
    std::vector<int> types;
    for (std::size_t i = 1; i < wg.types.size(); ++i) types.push_back(static_cast<int>(wg.types[i]));
    j["types"] = types;
    j["relevance"] = std::vector<double>(wg.relevance.begin() + 1, wg.relevance.end());
    nlohmann::json edges = nlohmann::json::array();
    for (const auto& e : wg.edges) {
        edges.push_back({e.src, e.dst, static_cast<int>(e.relation)});
    }
    j["edges"] = edges;
    return j.dump();
}

WorkingGraph working_graph_from_json(const std::string& json_line, std::string* example_id,
                                     std::string* choice_label) {
    nlohmann::json j = nlohmann::json::parse(json_line, nullptr, false);
    if (j.is_discarded()) throw DataError("malformed working-graph cache line");
    if (example_id) *example_id = j.value("example_id", "");
    if (choice_label) *choice_label = j.value("choice_label", "");
    WorkingGraph wg;
    wg.kg_node_ids.push_back(0);
    wg.node_names.emplace_back();
    wg.types.push_back(NodeType::Context);
    wg.relevance.push_back(1.0);
    for (const auto& v : j["kg_node_ids"]) wg.kg_node_ids.push_back(v.get<NodeId>());
    for (const auto& v : j["node_names"]) wg.node_names.push_back(v.get<std::string>());
    for (const auto& v : j["types"]) wg.types.push_back(static_cast<NodeType>(v.get<int>()));
    for (const auto& v : j["relevance"]) wg.relevance.push_back(v.get<double>());
    for (const auto& e : j["edges"]) {
        wg.edges.push_back({e[0].get<int>(), e[1].get<int>(),
                            static_cast<RelationId>(e[2].get<int>())});
    }
    wg.check_invariants();
    return wg;
}

}  // namespace kgqa
