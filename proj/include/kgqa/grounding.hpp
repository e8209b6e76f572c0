#pragma once
// Concept grounding: surface n-gram matching of question/choice text
// against the graph vocabulary. Matching rule: normalize (ASCII lowercase,
// punctuation to spaces, whitespace tokenize), then look up every n-gram
// up to max_ngram as an underscore-joined concept name; unigrams that are
// stopwords are excluded and a plural fold ("s"/"es" on the last token) is
// tried when the exact form misses.

#include <optional>
#include <set>
#include <string>
#include <unordered_set>
#include <vector>

#include "kgqa/kg_store.hpp"

namespace kgqa {

using Stopwords = std::unordered_set<std::string>;

Stopwords load_stopwords(const std::filesystem::path& path);

std::vector<std::string> normalize_text(std::string_view text);

struct MentionConfig {
    int max_ngram = 4;
    bool fold_plurals = true;
};

std::set<NodeId> extract_mentions(std::string_view text, const KnowledgeGraph& kg,
                                  const Stopwords& stopwords,
                                  const MentionConfig& cfg = {});

// ---------------------------------------------------------------------------
// QA records and grounded examples.
// ---------------------------------------------------------------------------

constexpr int kChoicesPerQuestion = 4;

struct Choice {
    std::string label;
    std::string text;
};

struct QaRecord {
    std::string id;
    std::string stem;
    std::vector<Choice> choices;
    std::optional<int> gold;           // index into choices
    std::optional<std::string> fact1;  // dataset-provided gold fact, if any
};

// One record of OpenBookQA-style line-delimited JSON:
//   {"id", "question": {"stem", "choices": [{"label","text"}]}, "answerKey"}
QaRecord parse_qa_record(const std::string& json_line, bool require_label);

std::vector<QaRecord> load_qa_file(const std::filesystem::path& path, bool require_label);

struct GroundedChoice {
    std::string label;
    std::string text;
    std::vector<NodeId> question_concepts;  // from stem (+ fused facts), minus choice hits
    std::vector<NodeId> answer_concepts;    // from the choice text
    std::string fused_context;              // text used for embedding / relevance
    std::vector<std::string> facts;         // facts fused for this example
};

struct GroundedExample {
    std::string id;
    std::string stem;
    std::vector<GroundedChoice> choices;  // exactly 4
    std::optional<int> gold;
};

// facts_texts: facts fused for this example (empty when facts mode is off).
// A concept found in both stem and choice is tagged answer-side.
GroundedExample ground_example(const QaRecord& record, const KnowledgeGraph& kg,
                               const Stopwords& stopwords,
                               const std::vector<std::string>& facts_texts,
                               const std::vector<std::string>& fused_per_choice,
                               const MentionConfig& cfg = {});

}  // namespace kgqa
