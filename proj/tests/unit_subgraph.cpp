#include <doctest.h>

#include "kgqa/subgraph.hpp"
#include "test_support.hpp"

using namespace kgqa;

namespace {

KnowledgeGraph random_graph(RandomSource& rng, int nodes, int edges) {
    MergeTable table = MergeTable::from_lines({"relatedto\trelatedto", "isa\tisa", "causes\tcauses"});
    GraphBuilder builder(table);
    const char* rels[3] = {"relatedto", "isa", "causes"};
    for (int e = 0; e < edges; ++e) {
        RawAssertion a;
        a.relation = rels[rng.below(3)];
        a.start = "/c/en/n" + std::to_string(rng.below(static_cast<std::uint64_t>(nodes)));
        a.end = "/c/en/n" + std::to_string(rng.below(static_cast<std::uint64_t>(nodes)));
        a.weight = 1.0;
        builder.add(a);
    }
    return builder.finish();
}

KnowledgeGraph star_graph(int leaves) {
    MergeTable table = MergeTable::from_lines({"isa\tisa"});
    GraphBuilder builder(table);
    for (int i = 0; i < leaves; ++i) {
        RawAssertion a;
        a.relation = "isa";
        a.start = "/c/en/center";
        a.end = "/c/en/leaf" + std::to_string(i);
        builder.add(a);
    }
    return builder.finish();
}

}  // namespace

TEST_CASE("extract_khop: zero hops, star fixture, empty topics") {
    const auto star = star_graph(5);
    const NodeId center = *star.find_node("center");
    const NodeId leaf0 = *star.find_node("leaf0");

    // k=0 keeps exactly the topic ids plus edges among them.
    const auto zero = extract_khop(star, {center, leaf0}, 0);
    CHECK(zero.nodes == std::vector<NodeId>{center, leaf0});
    REQUIRE(zero.edges.size() == 1);  // center -> leaf0 is induced

    // k=1 from the center reaches all leaves.
    const auto one = extract_khop(star, {center}, 1);
    CHECK(one.nodes.size() == 6);
    CHECK(one.edges.size() == 5);

    CHECK(extract_khop(star, {}, 2).nodes.empty());
}

TEST_CASE("extract_khop equals the relaxation oracle on random graphs") {
    RandomSource rng(414243);
    for (int trial = 0; trial < 40; ++trial) {
        const int nodes = 20 + static_cast<int>(rng.below(180));
        const int edges = 30 + static_cast<int>(rng.below(400));
        const auto g = random_graph(rng, nodes, edges);
        if (g.node_count() == 0) continue;
        std::set<NodeId> topics;
        const int n_topics = 1 + static_cast<int>(rng.below(3));
        for (int t = 0; t < n_topics; ++t) {
            topics.insert(static_cast<NodeId>(rng.below(g.node_count())));
        }
        for (int k = 0; k <= 4; ++k) {
            const auto sub = extract_khop(g, topics, k);
            const auto expected = kgqa::testing::relaxation_reachable(g, topics, k);
            const std::set<NodeId> got(sub.nodes.begin(), sub.nodes.end());
            CHECK(got == expected);
            // Induced-edge completeness and soundness.
            std::size_t expected_edges = 0;
            for (std::size_t e = 0; e < g.edge_count(); ++e) {
                const auto& edge = g.edges()[e];
                if (expected.count(edge.src) && expected.count(edge.dst)) ++expected_edges;
            }
            CHECK(sub.edges.size() == expected_edges);
            for (const auto e : sub.edges) {
                CHECK(got.count(g.edges()[e].src) == 1);
                CHECK(got.count(g.edges()[e].dst) == 1);
            }
        }
    }
}

TEST_CASE("extract_khop is monotone in k") {
    RandomSource rng(777);
    const auto g = random_graph(rng, 60, 150);
    std::set<NodeId> topics{static_cast<NodeId>(0)};
    std::set<NodeId> prev;
    for (int k = 0; k <= 4; ++k) {
        const auto sub = extract_khop(g, topics, k);
        const std::set<NodeId> cur(sub.nodes.begin(), sub.nodes.end());
        for (const auto id : prev) CHECK(cur.count(id) == 1);
        prev = cur;
    }
}

TEST_CASE("prune_to_cap keeps topics and ranks by relevance then id") {
    RandomSource rng(5150);
    const auto g = star_graph(6);
    const NodeId center = *g.find_node("center");
    const auto sub = extract_khop(g, {center}, 1);
    REQUIRE(sub.nodes.size() == 7);

    // Under the cap: unchanged.
    {
        const auto kept = prune_to_cap(g, sub, {}, {center}, 200);
        CHECK(kept.nodes == sub.nodes);
        CHECK(kept.edges == sub.edges);
    }

    // Cap 3 with known relevances: topic + the two highest-relevance leaves.
    {
        std::map<NodeId, double> rel;
        rel[*g.find_node("leaf0")] = 0.9;
        rel[*g.find_node("leaf1")] = 0.4;
        rel[*g.find_node("leaf2")] = 0.2;
        // leaves 3..5 default to 0
        const auto kept = prune_to_cap(g, sub, rel, {center}, 3);
        REQUIRE(kept.nodes.size() == 3);
        std::set<NodeId> kept_set(kept.nodes.begin(), kept.nodes.end());
        CHECK(kept_set.count(center) == 1);
        CHECK(kept_set.count(*g.find_node("leaf0")) == 1);
        CHECK(kept_set.count(*g.find_node("leaf1")) == 1);
        for (const auto e : kept.edges) {
            CHECK(kept_set.count(g.edges()[e].src) == 1);
            CHECK(kept_set.count(g.edges()[e].dst) == 1);
        }
    }

    // All-equal relevance: lowest ids kept.
    {
        std::map<NodeId, double> rel;
        const auto kept = prune_to_cap(g, sub, rel, {center}, 4);
        std::set<NodeId> kept_set(kept.nodes.begin(), kept.nodes.end());
        CHECK(kept_set.count(center) == 1);
        CHECK(kept_set.count(*g.find_node("leaf0")) == 1);
        CHECK(kept_set.count(*g.find_node("leaf1")) == 1);
        CHECK(kept_set.count(*g.find_node("leaf2")) == 1);
    }

    // Pruning never drops topics and never grows.
    {
        std::map<NodeId, double> rel;
        for (int cap = 1; cap <= 7; ++cap) {
            if (cap < 1) continue;
            const auto kept = prune_to_cap(g, sub, rel, {center}, cap);
            CHECK(kept.nodes.size() <= static_cast<std::size_t>(cap));
            CHECK(std::find(kept.nodes.begin(), kept.nodes.end(), center) != kept.nodes.end());
        }
    }
}

TEST_CASE("build_working_graph assembles context node, types, edges") {
    const auto g = star_graph(3);
    const NodeId center = *g.find_node("center");
    const NodeId leaf0 = *g.find_node("leaf0");

    // Empty subgraph: context node only.
    {
        ExtractedSubgraph empty;
        const auto wg = build_working_graph(g, empty, {}, {}, {});
        CHECK(wg.node_count() == 1);
        CHECK(wg.edges.empty());
        CHECK(wg.types[0] == NodeType::Context);
        CHECK(wg.relevance[0] == 1.0);
    }

    // One question + one answer concept: 3 nodes, 2 context edges + induced.
    {
        const auto sub = extract_khop(g, {center, leaf0}, 0);
        std::map<NodeId, double> rel{{center, 0.8}, {leaf0, 0.6}};
        const auto wg = build_working_graph(g, sub, {center}, {leaf0}, rel);
        CHECK(wg.node_count() == 3);
        int context_edges = 0;
        int kg_edges = 0;
        for (const auto& e : wg.edges) {
            if (e.src == 0) {
                ++context_edges;
                CHECK(e.relation == kContextRelation);
            } else {
                ++kg_edges;
            }
        }
        CHECK(context_edges == 2);
        CHECK(kg_edges == 1);  // center -> leaf0 induced
        CHECK(wg.node_names[1] == "center");
    }

    // Tagged both question and answer: answer wins.
    {
        const auto sub = extract_khop(g, {center}, 0);
        const auto wg = build_working_graph(g, sub, {center}, {center}, {});
        CHECK(wg.types[1] == NodeType::AnswerConcept);
    }
}

TEST_CASE("working graph JSON cache round-trips") {
    const auto g = star_graph(4);
    const NodeId center = *g.find_node("center");
    const auto sub = extract_khop(g, {center}, 1);
    std::map<NodeId, double> rel;
    for (const auto id : sub.nodes) rel[id] = 0.25 + 0.1 * static_cast<double>(id);
    const auto wg = build_working_graph(g, sub, {center}, {*g.find_node("leaf1")}, rel);

    const auto line = working_graph_to_json(wg, "ex42", "B");
    std::string id, label;
    const auto back = working_graph_from_json(line, &id, &label);
    CHECK(id == "ex42");
    CHECK(label == "B");
    CHECK(back.kg_node_ids == wg.kg_node_ids);
    CHECK(back.node_names == wg.node_names);
    CHECK(back.relevance == wg.relevance);
    REQUIRE(back.edges.size() == wg.edges.size());
    for (std::size_t i = 0; i < wg.edges.size(); ++i) {
        CHECK(back.edges[i].src == wg.edges[i].src);
        CHECK(back.edges[i].dst == wg.edges[i].dst);
        CHECK(back.edges[i].relation == wg.edges[i].relation);
    }
}
