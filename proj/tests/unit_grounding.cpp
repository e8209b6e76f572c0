#include <doctest.h>

#include <sstream>

#include "kgqa/grounding.hpp"
#include "test_support.hpp"

using namespace kgqa;

namespace {

KnowledgeGraph vocab_graph(const std::vector<std::string>& concepts) {
    MergeTable table = MergeTable::from_lines({"relatedto\trelatedto"});
    GraphBuilder builder(table);
    // Interning happens through edges; chain the concepts pairwise.
    for (std::size_t i = 0; i + 1 < concepts.size(); ++i) {
        RawAssertion a;
        a.relation = "relatedto";
        a.start = "/c/en/" + concepts[i];
        a.end = "/c/en/" + concepts[i + 1];
        builder.add(a);
    }
    return builder.finish();
}

Stopwords test_stopwords() {
    return Stopwords{"the", "a", "of", "is", "to", "in"};
}

}  // namespace

TEST_CASE("normalize_text applies the documented rule") {
    CHECK(normalize_text("").empty());
    CHECK(normalize_text("Electric Cars!") == std::vector<std::string>{"electric", "cars"});
    // Hand-applied oracle for a mixed fixture: punctuation to spaces, ASCII
    // lowercase, multi-space collapse.
    CHECK(normalize_text("  Don't re-enter; N2 (gas)! ") ==
          std::vector<std::string>{"don", "t", "re", "enter", "n2", "gas"});
}

TEST_CASE("extract_mentions finds exact vocabulary matches") {
    const auto kg = vocab_graph({"electric_car", "cat", "battery"});
    const auto stop = test_stopwords();

    CHECK(extract_mentions("", kg, stop).empty());

    const auto hit = extract_mentions("electric car", kg, stop);
    REQUIRE(hit.size() == 1);
    CHECK(*hit.begin() == *kg.find_node("electric_car"));
}

TEST_CASE("extract_mentions equals brute-force n-gram enumeration") {
    const std::vector<std::string> vocab = {
        "electric_car", "car",    "battery",   "battery_pack", "charge", "fast_charge",
        "cat",          "animal", "eat_food",  "food",         "run",    "electric",
        "power_plant",  "plant",  "green_energy", "energy",    "wheel",  "motor",
        "drive",        "road",   "long_road", "city",         "big_city", "light",
        "sun",          "solar_panel", "panel", "grid",        "house",  "roof"};
    const auto kg = vocab_graph(vocab);
    const auto stop = test_stopwords();
    const std::string sentence =
        "the electric car uses a battery pack to fast charge in the big city";

    // Independent oracle: enumerate every n-gram by index arithmetic over an
    // independently tokenized copy, with the same stopword/plural rules.
    std::vector<std::string> tokens;
    {
        std::istringstream ss(sentence);
        std::string t;
        while (ss >> t) tokens.push_back(t);  // sentence is already normalized
    }
    std::set<NodeId> expected;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        for (std::size_t n = 1; n <= 4 && i + n <= tokens.size(); ++n) {
            std::string name;
            for (std::size_t k = i; k < i + n; ++k) {
                if (k > i) name += '_';
                name += tokens[k];
            }
            if (n == 1 && stop.count(name)) continue;
            if (auto id = kg.find_node(name)) {
                expected.insert(*id);
            } else if (name.size() >= 2 && name.back() == 's') {
                if (auto id2 = kg.find_node(name.substr(0, name.size() - 1))) {
                    expected.insert(*id2);
                } else if (name.size() >= 3 && name[name.size() - 2] == 'e') {
                    if (auto id3 = kg.find_node(name.substr(0, name.size() - 2))) expected.insert(*id3);
                }
            }
        }
    }
    CHECK(extract_mentions(sentence, kg, stop) == expected);

    // Soundness: every mention's surface form occurs in the text.
    for (const auto id : extract_mentions(sentence, kg, stop)) {
        std::string surface = kg.node_name(id);
        for (auto& c : surface) {
            if (c == '_') c = ' ';
        }
        const bool present = sentence.find(surface) != std::string::npos ||
                             sentence.find(surface + "s") != std::string::npos;
        CHECK(present);
    }
}

TEST_CASE("extract_mentions folds plurals and is monotone in the vocabulary") {
    const auto stop = test_stopwords();
    const auto small = vocab_graph({"car", "cat"});
    const auto big = vocab_graph({"car", "cat", "battery", "wheel"});
    const std::string text = "cars and batteries on wheels";
    const auto small_hits = extract_mentions(text, small, stop);
    const auto big_hits = extract_mentions(text, big, stop);
    CHECK(small_hits.count(*small.find_node("car")) == 1);
    CHECK(big_hits.count(*big.find_node("battery")) == 1);  // "batteries" misses, fine
    // Vocabulary extension never removes a mention (by surface name).
    for (const auto id : small_hits) {
        const auto& name = small.node_name(id);
        bool found = false;
        for (const auto id2 : big_hits) {
            if (big.node_name(id2) == name) found = true;
        }
        CHECK(found);
    }
}

TEST_CASE("extract_mentions is deterministic") {
    const auto kg = vocab_graph({"electric_car", "battery", "cat"});
    const auto stop = test_stopwords();
    const std::string text = "the electric car battery";
    CHECK(extract_mentions(text, kg, stop) == extract_mentions(text, kg, stop));
}

TEST_CASE("parse_qa_record reads OpenBookQA jsonl") {
    const std::string line = R"({"id":"q1","question":{"stem":"What powers an electric car?",)"
                             R"("choices":[{"label":"A","text":"battery"},{"label":"B","text":"coal"},)"
                             R"({"label":"C","text":"wind"},{"label":"D","text":"cat"}]},"answerKey":"A",)"
                             R"("fact1":"batteries store energy"})";
    const auto rec = parse_qa_record(line, true);
    CHECK(rec.id == "q1");
    CHECK(rec.choices.size() == 4);
    CHECK(rec.gold == 0);
    CHECK(rec.fact1.has_value());

    // 3-choice record violates the 4-choice invariant.
    const std::string bad = R"({"id":"q2","question":{"stem":"x",)"
                            R"("choices":[{"label":"A","text":"a"},{"label":"B","text":"b"},)"
                            R"({"label":"C","text":"c"}]},"answerKey":"A"})";
    CHECK_THROWS_AS(parse_qa_record(bad, true), DataError);

    // Missing answer key in labeled mode.
    const std::string unlabeled = R"({"id":"q3","question":{"stem":"x",)"
                                  R"("choices":[{"label":"A","text":"a"},{"label":"B","text":"b"},)"
                                  R"({"label":"C","text":"c"},{"label":"D","text":"d"}]}})";
    CHECK_THROWS_AS(parse_qa_record(unlabeled, true), DataError);
    CHECK_FALSE(parse_qa_record(unlabeled, false).gold.has_value());
}

TEST_CASE("ground_example tags concepts, answer side winning") {
    const auto kg = vocab_graph({"electric_car", "battery", "coal", "energy"});
    const auto stop = test_stopwords();
    QaRecord rec;
    rec.id = "f1";
    rec.stem = "what stores energy in an electric car";
    rec.choices = {{"A", "battery"}, {"B", "coal"}, {"C", "energy"}, {"D", "sunlight"}};
    rec.gold = 0;

    const std::vector<std::string> no_facts;
    const std::vector<std::string> fused = {"s/A", "s/B", "s/C", "s/D"};
    const auto ge = ground_example(rec, kg, stop, no_facts, fused);

    REQUIRE(ge.choices.size() == 4);
    // Hand-enumerated: stem grounds {energy, electric_car}; choice A grounds
    // {battery}; choice C grounds {energy} which steals the tag from the
    // question side for that choice only.
    const NodeId energy = *kg.find_node("energy");
    const NodeId car = *kg.find_node("electric_car");
    const NodeId battery = *kg.find_node("battery");

    CHECK(ge.choices[0].answer_concepts == std::vector<NodeId>{battery});
    CHECK(ge.choices[0].question_concepts.size() == 2);

    const auto& c_q = ge.choices[2].question_concepts;
    CHECK(std::find(c_q.begin(), c_q.end(), energy) == c_q.end());
    CHECK(ge.choices[2].answer_concepts == std::vector<NodeId>{energy});
    CHECK(std::find(c_q.begin(), c_q.end(), car) != c_q.end());

    // Degenerate but legal: no vocabulary overlap at all.
    QaRecord empty_rec;
    empty_rec.id = "f2";
    empty_rec.stem = "zzz qqq";
    empty_rec.choices = {{"A", "www"}, {"B", "vvv"}, {"C", "uuu"}, {"D", "ttt"}};
    empty_rec.gold = 1;
    const auto ge2 = ground_example(empty_rec, kg, stop, no_facts, fused);
    for (const auto& c : ge2.choices) {
        CHECK(c.question_concepts.empty());
        CHECK(c.answer_concepts.empty());
    }
}

TEST_CASE("facts mode adds fact mentions to the question side") {
    const auto kg = vocab_graph({"electric_car", "battery", "lithium"});
    const auto stop = test_stopwords();
    QaRecord rec;
    rec.id = "f3";
    rec.stem = "what powers an electric car";
    rec.choices = {{"A", "battery"}, {"B", "x"}, {"C", "y"}, {"D", "z"}};
    rec.gold = 0;
    const std::vector<std::string> facts = {"lithium cells hold charge"};
    const std::vector<std::string> fused = {"s/A", "s/B", "s/C", "s/D"};
    const auto ge = ground_example(rec, kg, stop, facts, fused);
    const NodeId lithium = *kg.find_node("lithium");
    const auto& q = ge.choices[1].question_concepts;
    CHECK(std::find(q.begin(), q.end(), lithium) != q.end());
}
