#include "kgqa/grounding.hpp"

#include <algorithm>
#include <cctype>

#include <json.hpp>

namespace kgqa {

Stopwords load_stopwords(const std::filesystem::path& path) {
    Stopwords words;
    for (auto& line : read_lines(path)) {
        if (line.empty() || line.front() == '#') continue;
        std::string w;
        for (char c : line) {
            if (!std::isspace(static_cast<unsigned char>(c))) {
                w += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
            }
        }
        if (!w.empty()) words.insert(w);
    }
    return words;
}

std::vector<std::string> normalize_text(std::string_view text) {
    std::string cleaned;
    cleaned.reserve(text.size());
    for (char c : text) {
        const unsigned char u = static_cast<unsigned char>(c);
        if (std::isalnum(u)) {
            cleaned += static_cast<char>(std::tolower(u));
        } else if (u < 0x80) {
            // ASCII punctuation and whitespace become separators.
            cleaned += ' ';
        } else {
            // Non-ASCII bytes pass through unchanged.
            cleaned += c;
        }
    }
    std::vector<std::string> tokens;
    std::size_t i = 0;
    while (i < cleaned.size()) {
        while (i < cleaned.size() && cleaned[i] == ' ') ++i;
        std::size_t start = i;
        while (i < cleaned.size() && cleaned[i] != ' ') ++i;
        if (i > start) tokens.push_back(cleaned.substr(start, i - start));
    }
    return tokens;
}

namespace {

// "s"/"es" fold on the final token of a joined name.
std::vector<std::string> plural_variants(const std::string& joined) {
    std::vector<std::string> variants;
    if (joined.size() >= 2 && joined.back() == 's') {
        variants.push_back(joined.substr(0, joined.size() - 1));
        if (joined.size() >= 3 && joined[joined.size() - 2] == 'e') {
            variants.push_back(joined.substr(0, joined.size() - 2));
        }
    }
    return variants;
}

}  // namespace

std::set<NodeId> extract_mentions(std::string_view text, const KnowledgeGraph& kg,
                                  const Stopwords& stopwords, const MentionConfig& cfg) {
    if (cfg.max_ngram < 1) throw ContractViolation("max_ngram must be >= 1");
    const auto tokens = normalize_text(text);
    std::set<NodeId> found;
    for (std::size_t start = 0; start < tokens.size(); ++start) {
        std::string joined;
        for (int n = 1; n <= cfg.max_ngram && start + n <= tokens.size(); ++n) {
            if (n > 1) joined += '_';
            joined += tokens[start + static_cast<std::size_t>(n) - 1];
            if (n == 1 && stopwords.count(joined)) continue;
            if (auto id = kg.find_node(joined)) {
                found.insert(*id);
            } else if (cfg.fold_plurals) {
                for (const auto& variant : plural_variants(joined)) {
                    if (auto vid = kg.find_node(variant)) {
                        found.insert(*vid);
                        break;
                    }
                }
            }
        }
    }
    return found;
}

QaRecord parse_qa_record(const std::string& json_line, bool require_label) {
    nlohmann::json j = nlohmann::json::parse(json_line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw DataError("malformed QA record: not JSON");
    QaRecord rec;
    rec.id = j.value("id", "");
    if (!j.contains("question") || !j["question"].is_object()) {
        throw DataError("QA record " + rec.id + ": missing question object");
    }
    const auto& q = j["question"];
    rec.stem = q.value("stem", "");
    if (!q.contains("choices") || !q["choices"].is_array()) {
        throw DataError("QA record " + rec.id + ": missing choices");
    }
    for (const auto& c : q["choices"]) {
        rec.choices.push_back({c.value("label", ""), c.value("text", "")});
    }
    if (rec.choices.size() != kChoicesPerQuestion) {
        throw DataError("QA record " + rec.id + ": expected 4 choices, got " +
                        std::to_string(rec.choices.size()));
    }
    if (j.contains("answerKey")) {
        const std::string key = j["answerKey"].get<std::string>();
        for (std::size_t i = 0; i < rec.choices.size(); ++i) {
            if (rec.choices[i].label == key) {
                rec.gold = static_cast<int>(i);
                break;
            }
        }
        if (!rec.gold) throw DataError("QA record " + rec.id + ": answerKey matches no choice");
    } else if (require_label) {
        throw DataError("QA record " + rec.id + ": missing answerKey in labeled mode");
    }
    if (j.contains("fact1") && j["fact1"].is_string()) {
        rec.fact1 = j["fact1"].get<std::string>();
    }
    return rec;
}

std::vector<QaRecord> load_qa_file(const std::filesystem::path& path, bool require_label) {
    std::vector<QaRecord> records;
    for (auto& line : read_lines(path)) {
        if (line.empty()) continue;
        records.push_back(parse_qa_record(line, require_label));
    }
    return records;
}

GroundedExample ground_example(const QaRecord& record, const KnowledgeGraph& kg,
                               const Stopwords& stopwords,
                               const std::vector<std::string>& facts_texts,
                               const std::vector<std::string>& fused_per_choice,
                               const MentionConfig& cfg) {
    if (record.choices.size() != kChoicesPerQuestion) {
        throw DataError("example " + record.id + ": expected 4 choices");
    }
    if (fused_per_choice.size() != record.choices.size()) {
        throw ContractViolation("fused_per_choice size mismatch");
    }

    std::set<NodeId> stem_side = extract_mentions(record.stem, kg, stopwords, cfg);
    for (const auto& fact : facts_texts) {
        const auto fact_mentions = extract_mentions(fact, kg, stopwords, cfg);
        stem_side.insert(fact_mentions.begin(), fact_mentions.end());
    }

    GroundedExample out;
    out.id = record.id;
    out.stem = record.stem;
    out.gold = record.gold;
    for (std::size_t ci = 0; ci < record.choices.size(); ++ci) {
        const auto& choice = record.choices[ci];
        GroundedChoice gc;
        gc.label = choice.label;
        gc.text = choice.text;
        gc.fused_context = fused_per_choice[ci];
        gc.facts = facts_texts;
        const auto answer = extract_mentions(choice.text, kg, stopwords, cfg);
        gc.answer_concepts.assign(answer.begin(), answer.end());
        for (const auto id : stem_side) {
            if (!answer.count(id)) gc.question_concepts.push_back(id);  // answer tag wins
        }
        out.choices.push_back(std::move(gc));
    }
    return out;
}

}  // namespace kgqa
